"""Shared domain types and their on-disk formats.

Datasets travel as JSONL (one sample per line); activation signatures travel
in a little-endian binary container (magic ``COLA``, version 1). Both formats
round-trip bit-exactly. All types are immutable after construction and safe
to share across threads.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DatasetParseError, FormatError, InsufficientDataError, ValidationError
from .tokenizer import DEFAULT_VOCAB_SIZE, encode

DOMAINS = frozenset({"language", "commonsense", "math", "code", "multilingual", "other"})
FORMATS = frozenset({"raw", "qd", "qa", "qa_erc"})

MAGIC = b"COLA"
CONTAINER_VERSION = 1


@dataclass(frozen=True)
class Sample:
    """One candidate calibration text with tokens and routing metadata."""

    id: str
    text: str
    tokens: tuple[int, ...] | None = None
    domain: str = "other"
    language: str = "en"
    difficulty: float | None = None
    format: str = "raw"

    def __post_init__(self):
        if not self.id:
            raise ValidationError("sample id must be a non-empty string")
        if self.tokens is not None:
            object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
            if len(self.tokens) < 1:
                raise ValidationError(f"sample {self.id!r}: tokens, when present, must be non-empty")
            if any(t < 0 for t in self.tokens):
                raise ValidationError(f"sample {self.id!r}: negative token ID")
        if self.domain not in DOMAINS:
            raise ValidationError(f"sample {self.id!r}: unknown domain {self.domain!r}")
        if self.format not in FORMATS:
            raise ValidationError(f"sample {self.id!r}: unknown format {self.format!r}")
        if self.difficulty is not None:
            d = float(self.difficulty)
            if math.isnan(d) or not 0.0 <= d <= 1.0:
                raise ValidationError(f"sample {self.id!r}: difficulty {self.difficulty} outside [0, 1]")
            object.__setattr__(self, "difficulty", d)

    @property
    def token_count(self) -> int:
        return 0 if self.tokens is None else len(self.tokens)

    def to_record(self) -> dict:
        rec: dict = {"id": self.id, "text": self.text}
        if self.tokens is not None:
            rec["tokens"] = list(self.tokens)
        rec["domain"] = self.domain
        rec["language"] = self.language
        if self.difficulty is not None:
            rec["difficulty"] = self.difficulty
        rec["format"] = self.format
        return rec

    @classmethod
    def from_record(cls, rec: Mapping) -> "Sample":
        if "id" not in rec or "text" not in rec:
            raise ValidationError("sample record needs 'id' and 'text' fields")
        tokens = rec.get("tokens")
        return cls(
            id=str(rec["id"]),
            text=str(rec["text"]),
            tokens=None if tokens is None else tuple(tokens),
            domain=rec.get("domain", "other"),
            language=rec.get("language", "en"),
            difficulty=rec.get("difficulty"),
            format=rec.get("format", "raw"),
        )


@dataclass(frozen=True)
class Dataset:
    """An ordered, immutable collection of samples with unique IDs."""

    name: str
    samples: tuple[Sample, ...]
    token_distribution_cache: dict[int, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        seen: set[str] = set()
        for s in self.samples:
            if s.id in seen:
                raise ValidationError(f"dataset {self.name!r}: duplicate sample id {s.id!r}")
            seen.add(s.id)
        if self.token_distribution_cache is not None:
            self._check_cached_distribution()

    def _check_cached_distribution(self):
        cache = self.token_distribution_cache
        total = sum(cache.values())
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"dataset {self.name!r}: cached token distribution sums to {total}")
        counts: dict[int, int] = {}
        n = 0
        for s in self.samples:
            for t in s.tokens or ():
                counts[t] = counts.get(t, 0) + 1
                n += 1
        if n == 0:
            raise ValidationError(f"dataset {self.name!r}: cached distribution but no tokens")
        for t, p in cache.items():
            if abs(p - counts.get(t, 0) / n) > 1e-9:
                raise ValidationError(
                    f"dataset {self.name!r}: cached probability for token {t} disagrees with recount"
                )
        if set(counts) - set(cache):
            raise ValidationError(f"dataset {self.name!r}: cached distribution missing tokens")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.samples)


def load_dataset(path: str | Path, name: str | None = None) -> Dataset:
    """Read a JSONL dataset. Sample order is preserved.

    Raises DatasetParseError naming the line for malformed JSON, invalid
    fields, or a duplicate id (the line of the later occurrence is cited).
    """
    path = Path(path)
    samples: list[Sample] = []
    seen: dict[str, int] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(str(path), lineno, f"invalid JSON: {exc.msg}") from exc
            try:
                sample = Sample.from_record(rec)
            except (ValidationError, TypeError) as exc:
                raise DatasetParseError(str(path), lineno, str(exc)) from exc
            if sample.id in seen:
                raise DatasetParseError(
                    str(path), lineno,
                    f"duplicate id {sample.id!r} (first seen on line {seen[sample.id]})",
                )
            seen[sample.id] = lineno
            samples.append(sample)
    return Dataset(name=name if name is not None else path.stem, samples=tuple(samples))


def save_dataset(d: Dataset, path: str | Path) -> None:
    """Write a dataset as JSONL, one sample per line."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for s in d.samples:
            fh.write(json.dumps(s.to_record(), sort_keys=True) + "\n")


def ensure_tokens(d: Dataset, vocab_size: int = DEFAULT_VOCAB_SIZE) -> Dataset:
    """Materialize missing token lists with the fallback tokenizer.

    Samples that already carry tokens are kept untouched; samples whose text
    yields no tokens are left without tokens (their token count stays 0).
    """
    out: list[Sample] = []
    changed = False
    for s in d.samples:
        if s.tokens is None:
            toks = encode(s.text, vocab_size)
            if toks:
                s = Sample(s.id, s.text, tuple(toks), s.domain, s.language, s.difficulty, s.format)
                changed = True
        out.append(s)
    return Dataset(d.name, tuple(out)) if changed else d


def token_distribution(d: Dataset, vocab_size: int) -> np.ndarray:
    """Empirical token distribution over [0, vocab_size).

    Entry t is count(t) / total_tokens; the result sums to 1 within 1e-9.
    """
    if vocab_size <= 0:
        raise ValueError(f"vocab_size must be positive, got {vocab_size}")
    counts = np.zeros(vocab_size, dtype=np.float64)
    total = 0
    for s in d.samples:
        for t in s.tokens or ():
            if t >= vocab_size:
                raise ValidationError(
                    f"dataset {d.name!r}: token ID {t} out of range for vocab_size {vocab_size}"
                )
            counts[t] += 1
            total += 1
    if total == 0:
        raise InsufficientDataError(f"dataset {d.name!r} has no tokens to count")
    return counts / total


@dataclass(frozen=True)
class ActivationMatrix:
    """Per-sample activation signatures, one row per sample.

    Row i concatenates the per-layer signature vectors in layer order, so the
    column count is sum(layer_dims). Data is float32 and read-only.
    """

    sample_ids: tuple[str, ...]
    layer_dims: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sample_ids", tuple(str(i) for i in self.sample_ids))
        object.__setattr__(self, "layer_dims", tuple(int(x) for x in self.layer_dims))
        if len(self.layer_dims) < 1 or any(x < 1 for x in self.layer_dims):
            raise ValidationError(f"layer_dims must be positive integers, got {self.layer_dims}")
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise ValidationError(f"activation data must be 2-D, got shape {data.shape}")
        n, width = data.shape
        if n != len(self.sample_ids):
            raise ValidationError(f"{n} rows but {len(self.sample_ids)} sample ids")
        if width != self.total_dim:
            raise ValidationError(f"{width} columns but layer_dims sum to {self.total_dim}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("activation data contains NaN or Inf")
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise ValidationError("activation sample ids must be unique")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def total_dim(self) -> int:
        return int(sum(self.layer_dims))

    @property
    def n_samples(self) -> int:
        return len(self.sample_ids)

    def layer_slice(self, layer: int) -> slice:
        """Column slice of the signature block for one layer."""
        if not 0 <= layer < len(self.layer_dims):
            raise IndexError(f"layer {layer} out of range for {len(self.layer_dims)} layers")
        start = int(sum(self.layer_dims[:layer]))
        return slice(start, start + self.layer_dims[layer])

    def row_index(self, ids: Sequence[str]) -> np.ndarray:
        """Row indices for the given sample ids; KeyError on a missing id."""
        lookup = {sid: i for i, sid in enumerate(self.sample_ids)}
        try:
            return np.array([lookup[i] for i in ids], dtype=np.intp)
        except KeyError as exc:
            raise KeyError(f"sample id {exc.args[0]!r} not present in activation store") from None


def _read_exact(fh, count: int, what: str) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise FormatError(f"truncated container: expected {count} bytes for {what}")
    return buf


def _write_header(fh, n: int, dims: Sequence[int]) -> None:
    fh.write(MAGIC)
    fh.write(struct.pack("<III", CONTAINER_VERSION, n, len(dims)))
    fh.write(struct.pack(f"<{len(dims)}I", *dims))


def _read_header(fh) -> tuple[int, tuple[int, ...]]:
    magic = _read_exact(fh, 4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, n, n_dims = struct.unpack("<III", _read_exact(fh, 12, "header"))
    if version != CONTAINER_VERSION:
        raise FormatError(f"unsupported container version {version}")
    dims = struct.unpack(f"<{n_dims}I", _read_exact(fh, 4 * n_dims, "layer dims"))
    return n, dims


def _write_records(fh, ids: Sequence[str], data: np.ndarray) -> None:
    for sid, row in zip(ids, data):
        raw = sid.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValidationError(f"sample id too long to serialize: {sid[:32]!r}...")
        fh.write(struct.pack("<H", len(raw)))
        fh.write(raw)
        fh.write(np.ascontiguousarray(row, dtype="<f4").tobytes())

def _read_records(fh, n: int, width: int) -> tuple[list[str], np.ndarray]:
    ids: list[str] = []
    data = np.empty((n, width), dtype=np.float32)
    for i in range(n):
        (id_len,) = struct.unpack("<H", _read_exact(fh, 2, "id length"))
        ids.append(_read_exact(fh, id_len, "id").decode("utf-8"))
        row = np.frombuffer(_read_exact(fh, 4 * width, "row data"), dtype="<f4")
        data[i] = row
    if fh.read(1):
        raise FormatError("trailing bytes after final record")
    return ids, data


def write_activations(m: ActivationMatrix, path: str | Path) -> None:
    """Serialize to the binary container. read(write(m)) is bit-exact."""
    with Path(path).open("wb") as fh:
        _write_header(fh, m.n_samples, m.layer_dims)
        _write_records(fh, m.sample_ids, m.data)


def read_activations(path: str | Path) -> ActivationMatrix:
    """Read a binary activation container; FormatError on any inconsistency."""
    with Path(path).open("rb") as fh:
        n, dims = _read_header(fh)
        if len(dims) < 1:
            raise FormatError("container has no layer dims")
        width = int(sum(dims))
        try:
            ids, data = _read_records(fh, n, width)
        except struct.error as exc:
            raise FormatError(f"corrupt record: {exc}") from exc
    try:
        return ActivationMatrix(tuple(ids), dims, data)
    except ValidationError as exc:
        raise FormatError(f"container contents invalid: {exc}") from exc


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of activation-space sample selection.

    One selected id per non-empty cluster; inertia is the clustering
    objective recomputed on the projected points.
    """

    selected_ids: tuple[str, ...]
    cluster_assignments: dict[str, int]
    centroids: np.ndarray
    inertia: float
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "selected_ids", tuple(self.selected_ids))
        centroids = np.ascontiguousarray(self.centroids, dtype=np.float64)
        if centroids.ndim != 2:
            raise ValidationError(f"centroids must be 2-D, got shape {centroids.shape}")
        centroids.flags.writeable = False
        object.__setattr__(self, "centroids", centroids)
        if self.inertia < 0:
            raise ValidationError(f"inertia must be non-negative, got {self.inertia}")
        non_empty = set(self.cluster_assignments.values())
        if len(self.selected_ids) != len(non_empty):
            raise ValidationError(
                f"{len(self.selected_ids)} selected ids for {len(non_empty)} non-empty clusters"
            )
        seen_clusters = set()
        for sid in self.selected_ids:
            if sid not in self.cluster_assignments:
                raise ValidationError(f"selected id {sid!r} has no cluster assignment")
            c = self.cluster_assignments[sid]
            if c in seen_clusters:
                raise ValidationError(f"cluster {c} has more than one selected id")
            seen_clusters.add(c)

    def to_json(self) -> str:
        """Canonical JSON encoding; identical inputs give identical bytes."""
        doc = {
            "selected_ids": list(self.selected_ids),
            "cluster_assignments": self.cluster_assignments,
            "centroids": [[float(v) for v in row] for row in self.centroids],
            "inertia": float(self.inertia),
            "seed": int(self.seed),
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SelectionResult":
        doc = json.loads(text)
        return cls(
            selected_ids=tuple(doc["selected_ids"]),
            cluster_assignments={str(k): int(v) for k, v in doc["cluster_assignments"].items()},
            centroids=np.array(doc["centroids"], dtype=np.float64).reshape(
                len(doc["centroids"]), -1
            ),
            inertia=float(doc["inertia"]),
            seed=int(doc["seed"]),
        )


_SCHEME_KINDS = frozenset(
    {"magnitude_prune", "wanda_prune", "reconstruct_prune", "rtn_quant", "scaled_quant"}
)


@dataclass(frozen=True)
class CompressionScheme:
    """A pruning or quantization configuration for one weight matrix."""

    kind: str
    sparsity: float | None = None
    block_pattern: tuple[int, int] | None = None
    bits: int | None = None
    group_size: int | None = None

    def __post_init__(self):
        if self.kind not in _SCHEME_KINDS:
            raise ValidationError(f"unknown compression kind {self.kind!r}")
        if self.sparsity is not None and not 0.0 <= self.sparsity <= 1.0:
            raise ValidationError(f"sparsity {self.sparsity} outside [0, 1]")
        if self.block_pattern is not None:
            n_zero, block_len = self.block_pattern
            object.__setattr__(self, "block_pattern", (int(n_zero), int(block_len)))
            if not 0 < n_zero < block_len:
                raise ValidationError(f"block pattern {self.block_pattern}: need 0 < n_zero < block_len")
            if self.sparsity is not None:
                raise ValidationError("sparsity and block_pattern are mutually exclusive")
        if self.bits is not None and self.bits < 2:
            raise ValidationError(f"bits must be >= 2, got {self.bits}")
        if self.group_size is not None and self.group_size < 1:
            raise ValidationError(f"group_size must be positive, got {self.group_size}")

    def to_dict(self) -> dict:
        doc: dict = {"kind": self.kind}
        if self.sparsity is not None:
            doc["sparsity"] = self.sparsity
        if self.block_pattern is not None:
            doc["block_pattern"] = list(self.block_pattern)
        if self.bits is not None:
            doc["bits"] = self.bits
        if self.group_size is not None:
            doc["group_size"] = self.group_size
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> "CompressionScheme":
        bp = doc.get("block_pattern")
        return cls(
            kind=doc.get("kind", ""),
            sparsity=doc.get("sparsity"),
            block_pattern=None if bp is None else (int(bp[0]), int(bp[1])),
            bits=doc.get("bits"),
            group_size=doc.get("group_size"),
        )


@dataclass(frozen=True)
class CapabilitySpec:
    """A target capability with an importance weight and reference dataset."""

    capability: str
    weight: float
    reference: Dataset

    def __post_init__(self):
        if self.weight < 0:
            raise ValidationError(f"capability {self.capability!r}: weight must be >= 0")
