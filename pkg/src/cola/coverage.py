"""Dataset-level coverage scoring and greedy pool selection.

A candidate dataset is scored against each target capability by combining
semantic similarity (cosine of mean sentence embeddings) with statistical
similarity (KL divergence between token distributions):

    combined = alpha * emb_sim + (1 - alpha) * exp(-kl)

The exp(-kl) mapping makes both terms similarities in [0, 1], so the score
is monotone in how well the candidate matches the reference. A strict mode
that adds the raw KL term instead is available via ``kl_mode="raw"``.
Selection over a pool is greedy forward selection on the weighted sum of
per-capability coverage of the growing union.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data_model import CapabilitySpec, Dataset, token_distribution
from .errors import DegenerateEmbeddingError, ShapeError, ValidationError
from .seeding import fnv1a_64
from .tokenizer import split_words

KL_MODES = ("exp-neg", "raw")


@dataclass(frozen=True)
class CoverageScore:
    """Coverage of one dataset against one capability reference."""

    emb_sim: float
    kl: float
    alpha: float
    combined: float
    kl_mode: str = "exp-neg"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha {self.alpha} outside [0, 1]")
        if self.kl < 0:
            raise ValidationError(f"KL divergence must be non-negative, got {self.kl}")
        if self.kl_mode not in KL_MODES:
            raise ValidationError(f"unknown kl_mode {self.kl_mode!r}")
        expected = combine(self.emb_sim, self.kl, self.alpha, self.kl_mode)
        if abs(expected - self.combined) > 1e-12:
            raise ValidationError(
                f"combined score {self.combined} does not match recomputation {expected}"
            )


def combine(emb_sim: float, kl: float, alpha: float, kl_mode: str = "exp-neg") -> float:
    if kl_mode == "exp-neg":
        return alpha * emb_sim + (1.0 - alpha) * math.exp(-kl)
    if kl_mode == "raw":
        return alpha * emb_sim + (1.0 - alpha) * kl
    raise ValidationError(f"unknown kl_mode {kl_mode!r}")


class HashingEmbedder:
    """Deterministic feature-hashed bag-of-tokens sentence embedder.

    Each word hashes (FNV-1a) to one of `dim` buckets with a sign taken from
    the hash's top bit; the bucket histogram is L2-normalized. Pure and
    model-free, so embeddings are reproducible everywhere. Any object with
    ``name``, ``dim`` and ``embed`` can stand in for it, which is how real
    sentence embedders plug in.
    """

    def __init__(self, dim: int = 256):
        if dim < 1:
            raise ValueError(f"dim must be positive, got {dim}")
        self.name = f"fnv-hash-{dim}"
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        words = split_words(text)
        if not words:
            # No separable words: hash the raw text as a single feature so
            # every nonempty input still maps to a unit vector.
            words = [text] if text else []
        for w in words:
            h = fnv1a_64(w.encode("utf-8"))
            sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
            vec[h % self.dim] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            if not text:
                raise DegenerateEmbeddingError("cannot embed empty text")
            # Signed buckets cancelled exactly; fall back to the whole text.
            h = fnv1a_64(text.encode("utf-8"))
            vec[h % self.dim] = 1.0
            return vec
        return vec / norm


def kl_divergence(p: np.ndarray, q: np.ndarray, epsilon: float = 1e-9) -> float:
    """Smoothed KL divergence sum(p' * ln(p'/q')) with p' = (p+eps)/norm."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ShapeError(f"distributions must be 1-D and same length, got {p.shape} vs {q.shape}")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    for name, vec in (("p", p), ("q", q)):
        total = float(vec.sum())
        if abs(total - 1.0) > 1e-6:
            raise ValidationError(f"{name} sums to {total}, not a distribution")
        if np.any(vec < 0):
            raise ValidationError(f"{name} has negative entries")
    ps = p + epsilon
    ps /= ps.sum()
    qs = q + epsilon
    qs /= qs.sum()
    val = float(np.sum(ps * np.log(ps / qs)))
    return max(val, 0.0)


def _mean_embedding(d: Dataset, provider) -> np.ndarray:
    if len(d) == 0:
        raise ValueError(f"dataset {d.name!r} is empty")
    total = np.zeros(provider.dim, dtype=np.float64)
    for s in d.samples:
        total += provider.embed(s.text)
    mean = total / len(d)
    if float(np.linalg.norm(mean)) == 0.0:
        raise DegenerateEmbeddingError(f"dataset {d.name!r}: mean embedding is the zero vector")
    return mean


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    if np.array_equal(u, v):
        return 1.0
    if np.array_equal(u, -v):
        return -1.0
    denom = float(np.linalg.norm(u)) * float(np.linalg.norm(v))
    if denom == 0.0:
        raise DegenerateEmbeddingError("cosine of a zero vector is undefined")
    return float(np.clip(float(np.dot(u, v)) / denom, -1.0, 1.0))


def emb_sim(s: Dataset, d_c: Dataset, provider, mode: str = "centroid") -> float:
    """Embedding similarity between two datasets.

    ``centroid`` (default) is the cosine of the mean embeddings. ``pairwise``
    is the mean cosine over all cross pairs; with unit-norm embeddings that
    equals dot(sum_s, sum_dc) / (|s| * |d_c|), so it stays O(n + m).
    """
    if mode == "centroid":
        return _cosine(_mean_embedding(s, provider), _mean_embedding(d_c, provider))
    if mode != "pairwise":
        raise ValueError(f"unknown emb_sim mode {mode!r}")
    if len(s) == 0 or len(d_c) == 0:
        raise ValueError("emb_sim requires nonempty datasets")
    sum_s = np.zeros(provider.dim, dtype=np.float64)
    for x in s.samples:
        e = provider.embed(x.text)
        sum_s += e / np.linalg.norm(e)
    sum_c = np.zeros(provider.dim, dtype=np.float64)
    for x in d_c.samples:
        e = provider.embed(x.text)
        sum_c += e / np.linalg.norm(e)
    return float(np.clip(np.dot(sum_s, sum_c) / (len(s) * len(d_c)), -1.0, 1.0))


def coverage(
    s: Dataset,
    cap: CapabilitySpec,
    provider,
    vocab_size: int,
    alpha: float,
    epsilon: float = 1e-9,
    kl_mode: str = "exp-neg",
) -> CoverageScore:
    """Score how well dataset `s` covers the capability's reference."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha {alpha} outside [0, 1]")
    sim = emb_sim(s, cap.reference, provider)
    kl = kl_divergence(
        token_distribution(s, vocab_size),
        token_distribution(cap.reference, vocab_size),
        epsilon,
    )
    return CoverageScore(sim, kl, alpha, combine(sim, kl, alpha, kl_mode), kl_mode)


@dataclass
class _DatasetStats:
    """Sufficient statistics so union coverage composes without re-scanning."""

    emb_sum: np.ndarray
    n_samples: int
    token_counts: np.ndarray
    total_tokens: int

    @classmethod
    def of(cls, d: Dataset, provider, vocab_size: int) -> "_DatasetStats":
        if len(d) == 0:
            raise ValueError(f"dataset {d.name!r} is empty")
        emb_sum = np.zeros(provider.dim, dtype=np.float64)
        for s in d.samples:
            emb_sum += provider.embed(s.text)
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
            raise ValidationError(f"dataset {d.name!r} has no tokens; materialize tokens first")
        return cls(emb_sum, len(d), counts, total)

    def merged(self, other: "_DatasetStats") -> "_DatasetStats":
        return _DatasetStats(
            self.emb_sum + other.emb_sum,
            self.n_samples + other.n_samples,
            self.token_counts + other.token_counts,
            self.total_tokens + other.total_tokens,
        )


def _score_stats(stats: _DatasetStats, cap_stats, weights, alpha, epsilon, kl_mode) -> float:
    mean = stats.emb_sum / stats.n_samples
    dist = stats.token_counts / stats.total_tokens
    total = 0.0
    for (ref_mean, ref_dist), w in zip(cap_stats, weights):
        if w == 0.0:
            continue
        sim = _cosine(mean, ref_mean)
        kl = kl_divergence(dist, ref_dist, epsilon)
        total += w * combine(sim, kl, alpha, kl_mode)
    return total


def select_datasets(
    pool: Sequence[Dataset],
    caps: Sequence[CapabilitySpec],
    budget: int,
    provider,
    vocab_size: int,
    alpha: float,
    epsilon: float = 1e-9,
    kl_mode: str = "exp-neg",
) -> list[tuple[Dataset, float]]:
    """Greedy forward selection of `budget` datasets from the pool.

    At each step the dataset maximizing the increase of
    sum_c w_c * coverage(union_so_far + candidate, c) is added, ties broken
    by pool order. Returns the picks in greedy order with marginal gains.
    """
    if len(pool) == 0:
        raise ValueError("pool is empty")
    if not 1 <= budget <= len(pool):
        raise ValueError(f"budget {budget} outside [1, {len(pool)}]")
    if not caps or sum(c.weight for c in caps) <= 0:
        raise ValidationError("at least one capability weight must be positive")

    pool_stats = [_DatasetStats.of(d, provider, vocab_size) for d in pool]
    cap_stats = []
    for cap in caps:
        ref = _DatasetStats.of(cap.reference, provider, vocab_size)
        cap_stats.append((ref.emb_sum / ref.n_samples, ref.token_counts / ref.total_tokens))
    weights = [float(c.weight) for c in caps]

    selected: list[tuple[Dataset, float]] = []
    remaining = list(range(len(pool)))
    union: _DatasetStats | None = None
    current_score = 0.0
    for _ in range(budget):
        best_idx = -1
        best_score = -math.inf
        for idx in remaining:
            candidate = pool_stats[idx] if union is None else union.merged(pool_stats[idx])
            score = _score_stats(candidate, cap_stats, weights, alpha, epsilon, kl_mode)
            if score > best_score:
                best_score = score
                best_idx = idx
        union = pool_stats[best_idx] if union is None else union.merged(pool_stats[best_idx])
        selected.append((pool[best_idx], best_score - current_score))
        current_score = best_score
        remaining.remove(best_idx)
    return selected


def concat_datasets(datasets: Sequence[Dataset], name: str) -> Dataset:
    """Concatenate datasets in order into one (ids must stay unique)."""
    samples: list = []
    for d in datasets:
        samples.extend(d.samples)
    return Dataset(name=name, samples=tuple(samples))
