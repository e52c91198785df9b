"""Run text samples through a causal LM and dump activation signatures.

For each sample the model runs one forward pass; the residual-stream hidden
state after each selected transformer block is pooled over token positions
(mean over non-padding positions, or the last non-padding position) and the
per-layer vectors are concatenated in ascending layer order into one float32
row. Rows are written in the dataset's sample order to the binary activation
container (magic ``COLA``, version 1, little-endian; u32 n, u32 L, L x u32
layer dims, then per record u16 id_len + UTF-8 id + f32 row), which is the
calibration toolkit's interchange format.

Samples that yield no usable tokens are skipped and reported; extraction
fails outright when more than 10% of the dataset is skipped.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

MAGIC = b"COLA"
CONTAINER_VERSION = 1
POOLINGS = ("mean", "last_token")
SKIP_FRACTION_LIMIT = 0.10


@dataclass(frozen=True)
class ExtractionSpec:
    model_id: str
    layer_indices: Sequence[int] | str = "all"
    pooling: str = "mean"
    max_length: int = 2048
    batch_size: int = 8

    def __post_init__(self):
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if self.max_length < 1:
            raise ValueError(f"max_length must be positive, got {self.max_length}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if isinstance(self.layer_indices, str):
            if self.layer_indices != "all":
                raise ValueError(f"layer_indices must be a list or 'all', got {self.layer_indices!r}")
        else:
            object.__setattr__(self, "layer_indices", tuple(int(i) for i in self.layer_indices))


@dataclass
class ExtractionReport:
    n_rows: int
    layer_dims: tuple[int, ...]
    skipped: list[tuple[str, str]] = field(default_factory=list)


def read_text_dataset(path: str | Path) -> list[tuple[str, str]]:
    """(id, text) pairs from a JSONL dataset, order preserved."""
    pairs: list[tuple[str, str]] = []
    seen: set[str] = set()
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from exc
            if "id" not in rec or "text" not in rec:
                raise ValueError(f"{path}:{lineno}: record needs 'id' and 'text'")
            sid = str(rec["id"])
            if sid in seen:
                raise ValueError(f"{path}:{lineno}: duplicate id {sid!r}")
            seen.add(sid)
            pairs.append((sid, str(rec["text"])))
    return pairs


def write_container(
    ids: Sequence[str], layer_dims: Sequence[int], rows: np.ndarray, path: str | Path
) -> None:
    rows = np.ascontiguousarray(rows, dtype="<f4")
    if rows.ndim != 2 or rows.shape[0] != len(ids) or rows.shape[1] != sum(layer_dims):
        raise ValueError(f"row block {rows.shape} inconsistent with ids/layer dims")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", CONTAINER_VERSION, len(ids), len(layer_dims)))
        fh.write(struct.pack(f"<{len(layer_dims)}I", *layer_dims))
        for sid, row in zip(ids, rows):
            raw = sid.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValueError(f"id too long to serialize: {sid[:32]!r}...")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(row.tobytes())


def _resolve_layers(spec: ExtractionSpec, n_layers: int) -> tuple[int, ...]:
    if spec.layer_indices == "all":
        return tuple(range(n_layers))
    indices = tuple(spec.layer_indices)
    bad = [i for i in indices if not 0 <= i < n_layers]
    if bad:
        raise ValueError(f"layer indices {bad} out of range for a {n_layers}-layer model")
    return indices


def _pool(hidden: torch.Tensor, mask: torch.Tensor, pooling: str) -> torch.Tensor:
    """Pool (batch, seq, dim) hidden states over non-padding positions."""
    if pooling == "mean":
        weights = mask.unsqueeze(-1).to(hidden.dtype)
        return (hidden * weights).sum(dim=1) / weights.sum(dim=1)
    last = mask.sum(dim=1).long() - 1
    return hidden[torch.arange(hidden.shape[0]), last]


def load_model(spec: ExtractionSpec):
    from transformers import AutoModelForCausalLM, AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(spec.model_id)
    if tokenizer.pad_token is None:
        tokenizer.pad_token = tokenizer.eos_token
    model = AutoModelForCausalLM.from_pretrained(spec.model_id)
    model.eval()
    return tokenizer, model


def extract(dataset_path: str | Path, spec: ExtractionSpec, out_path: str | Path) -> ExtractionReport:
    """Extract pooled per-layer activations for every sample in the dataset.

    Writes the container to out_path and returns a report with the skip
    list. Raises RuntimeError when more than 10% of samples were skipped.
    """
    samples = read_text_dataset(dataset_path)
    if not samples:
        raise ValueError(f"dataset {dataset_path} has no samples")
    tokenizer, model = load_model(spec)

    n_layers = int(model.config.num_hidden_layers)
    hidden_size = int(model.config.hidden_size)
    layers = _resolve_layers(spec, n_layers)
    layer_dims = tuple(hidden_size for _ in layers)

    torch.manual_seed(0)
    kept_ids: list[str] = []
    rows: list[np.ndarray] = []
    skipped: list[tuple[str, str]] = []

    for start in range(0, len(samples), spec.batch_size):
        batch = samples[start : start + spec.batch_size]
        try:
            enc = tokenizer(
                [text for _, text in batch],
                return_tensors="pt",
                padding=True,
                truncation=True,
                max_length=spec.max_length,
            )
        except Exception as exc:
            skipped.extend((sid, f"tokenization failed: {exc}") for sid, _ in batch)
            continue
        mask = enc["attention_mask"]
        usable = mask.sum(dim=1) > 0
        if not bool(usable.any()):
            skipped.extend((sid, "no tokens after tokenization") for sid, _ in batch)
            continue
        try:
            with torch.no_grad():
                out = model(**enc, output_hidden_states=True)
        except Exception as exc:
            skipped.extend((sid, f"forward pass failed: {exc}") for sid, _ in batch)
            continue
        # hidden_states[0] is the embedding output; block l lives at l + 1.
        pooled = [_pool(out.hidden_states[l + 1], mask, spec.pooling) for l in layers]
        signature = torch.cat(pooled, dim=1).to(torch.float32).cpu().numpy()
        for j, (sid, _) in enumerate(batch):
            if bool(usable[j]):
                kept_ids.append(sid)
                rows.append(signature[j])
            else:
                skipped.append((sid, "no tokens after tokenization"))

    if len(skipped) > SKIP_FRACTION_LIMIT * len(samples):
        details = "; ".join(f"{sid}: {reason}" for sid, reason in skipped[:5])
        raise RuntimeError(
            f"{len(skipped)}/{len(samples)} samples skipped (limit 10%): {details}"
        )
    block = np.stack(rows) if rows else np.empty((0, sum(layer_dims)), dtype=np.float32)
    write_container(kept_ids, layer_dims, block, out_path)
    return ExtractionReport(n_rows=len(kept_ids), layer_dims=layer_dims, skipped=skipped)
