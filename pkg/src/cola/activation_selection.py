"""Activation-space sample selection.

Signatures are projected to a low dimension with a seeded Gaussian random
projection (rows scaled by 1/sqrt(d), so pairwise distances are preserved in
the Johnson-Lindenstrauss sense), clustered with restarted k-means++/Lloyd,
and the member nearest each centroid becomes the representative of its
cluster. The projection matrix is regenerated bit-exactly from
(seed, reduced_dim, original_dim): it is drawn from numpy's Philox 4x64
counter-based generator as reduced_dim x original_dim float64 standard
normals in row-major order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import ActivationMatrix, SelectionResult
from .errors import ShapeError, ValidationError
from .seeding import make_rng

_PROJECTION_BRANCH = 11
_KMEANS_BRANCH = 12


@dataclass(frozen=True)
class ProjectionSpec:
    """Seeded Gaussian random projection from original_dim to reduced_dim."""

    original_dim: int
    reduced_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.original_dim < 1 or self.reduced_dim < 1:
            raise ValidationError("projection dims must be positive")
        if self.reduced_dim > self.original_dim:
            raise ValidationError(
                f"reduced_dim {self.reduced_dim} exceeds original_dim {self.original_dim}"
            )

    def matrix(self) -> np.ndarray:
        """The d x D standard-normal matrix R, regenerated from the seed."""
        rng = make_rng(self.seed, _PROJECTION_BRANCH)
        return rng.standard_normal((self.reduced_dim, self.original_dim))


@dataclass(frozen=True)
class KMeansConfig:
    k: int = 128
    max_iters: int = 300
    tol: float = 1e-6
    n_restarts: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError(f"k must be positive, got {self.k}")
        if self.max_iters < 1:
            raise ValidationError(f"max_iters must be positive, got {self.max_iters}")
        if self.tol < 0:
            raise ValidationError(f"tol must be non-negative, got {self.tol}")
        if self.n_restarts < 1:
            raise ValidationError(f"n_restarts must be positive, got {self.n_restarts}")


def project(m: ActivationMatrix, spec: ProjectionSpec) -> np.ndarray:
    """Row i of the result is (1/sqrt(d)) * R * a_i."""
    if spec.original_dim != m.total_dim:
        raise ShapeError(
            f"projection expects {spec.original_dim} columns, activations have {m.total_dim}"
        )
    points = m.data.astype(np.float64) @ spec.matrix().T / np.sqrt(spec.reduced_dim)
    if not np.all(np.isfinite(points)):
        raise ValidationError("projection produced non-finite values")
    return points


@dataclass(frozen=True)
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    # Per-restart inertia trace, recorded after each assignment step.
    histories: tuple[tuple[float, ...], ...]


def _sq_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # ||x - c||^2 without forming the n x k x d intermediate.
    sq = (
        np.sum(points**2, axis=1)[:, None]
        + np.sum(centroids**2, axis=1)[None, :]
        - 2.0 * points @ centroids.T
    )
    return np.maximum(sq, 0.0)


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = np.empty(k, dtype=np.intp)
    chosen[0] = rng.integers(n)
    best = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for j in range(1, k):
        total = float(best.sum())
        if total > 0.0:
            idx = int(rng.choice(n, p=best / total))
        else:
            # All remaining mass is on already-chosen points (duplicates);
            # fall back to the first index not selected yet.
            taken = set(int(c) for c in chosen[:j])
            idx = next(i for i in range(n) if i not in taken)
        chosen[j] = idx
        best = np.minimum(best, np.sum((points - points[idx]) ** 2, axis=1))
    return points[chosen].copy()


def _repair_empty(
    points: np.ndarray, assignments: np.ndarray, centroids: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Reseed each empty cluster to the point farthest from its own centroid."""
    k = centroids.shape[0]
    counts = np.bincount(assignments, minlength=k)
    empties = np.flatnonzero(counts == 0)
    if empties.size == 0:
        return assignments, centroids
    dist = np.sum((points - centroids[assignments]) ** 2, axis=1)
    for j in empties:
        far = int(np.argmax(dist))
        centroids[j] = points[far]
        assignments[far] = j
        dist[far] = -np.inf  # never reuse the same point for another repair
    return assignments, centroids


def _lloyd(points: np.ndarray, k: int, cfg: KMeansConfig, rng) -> tuple:
    centroids = _kmeans_pp_init(points, k, rng)
    assignments = np.zeros(points.shape[0], dtype=np.intp)
    history: list[float] = []
    prev = np.inf
    for _ in range(cfg.max_iters):
        sq = _sq_distances(points, centroids)
        assignments = np.argmin(sq, axis=1)
        inertia = float(sq[np.arange(points.shape[0]), assignments].sum())
        history.append(inertia)
        if np.isfinite(prev) and prev - inertia <= cfg.tol * prev:
            break
        prev = inertia
        for j in range(k):
            members = assignments == j
            if np.any(members):
                centroids[j] = points[members].mean(axis=0)
        assignments, centroids = _repair_empty(points, assignments, centroids)
    # Final pass so assignments, centroids and inertia are mutually consistent.
    sq = _sq_distances(points, centroids)
    assignments = np.argmin(sq, axis=1)
    inertia = float(sq[np.arange(points.shape[0]), assignments].sum())
    assignments, centroids = _repair_empty(points, assignments, centroids)
    inertia = float(np.sum((points - centroids[assignments]) ** 2))
    return assignments, centroids, inertia, tuple(history)


def kmeans(points: np.ndarray, cfg: KMeansConfig) -> KMeansResult:
    """Best of n_restarts runs of k-means++ initialized Lloyd iteration.

    Deterministic: restart r uses the Philox stream branched on
    (cfg.seed, r) and ties in the best-inertia comparison go to the lowest
    restart index. Empty clusters are repaired by reseeding to the farthest
    point, so all k clusters are non-empty on return when n >= k.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ShapeError(f"points must be 2-D, got shape {points.shape}")
    n = points.shape[0]
    if n < cfg.k:
        raise ValueError(f"cannot form {cfg.k} clusters from {n} points")
    if not np.all(np.isfinite(points)):
        raise ValidationError("points contain NaN or Inf")

    best: tuple | None = None
    histories: list[tuple[float, ...]] = []
    for r in range(cfg.n_restarts):
        rng = make_rng(cfg.seed, _KMEANS_BRANCH, r)
        assignments, centroids, inertia, history = _lloyd(points, cfg.k, cfg, rng)
        histories.append(history)
        if best is None or inertia < best[2]:
            best = (assignments, centroids, inertia)
    assignments, centroids, inertia = best
    return KMeansResult(assignments, centroids, inertia, tuple(histories))


def select_representatives(
    m: ActivationMatrix, proj: ProjectionSpec, cfg: KMeansConfig
) -> SelectionResult:
    """Project, cluster, and pick the member closest to each centroid.

    Ties on distance go to the lowest row index. Selected ids are ordered by
    cluster index.
    """
    if m.n_samples < cfg.k:
        raise ValueError(f"need at least k={cfg.k} samples, have {m.n_samples}")
    points = project(m, proj)
    result = kmeans(points, cfg)

    selected: list[str] = []
    for j in range(result.centroids.shape[0]):
        members = np.flatnonzero(result.assignments == j)
        if members.size == 0:
            continue
        dist = np.sum((points[members] - result.centroids[j]) ** 2, axis=1)
        selected.append(m.sample_ids[int(members[int(np.argmin(dist))])])

    assignments = {
        m.sample_ids[i]: int(result.assignments[i]) for i in range(m.n_samples)
    }
    return SelectionResult(
        selected_ids=tuple(selected),
        cluster_assignments=assignments,
        centroids=result.centroids,
        inertia=result.inertia,
        seed=cfg.seed,
    )
