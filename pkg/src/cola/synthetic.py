"""Synthetic activation and weight generators for harness experiments.

The activation generator plants well-separated blobs whose centers live on
interleaved channel sets (channel j belongs to blob j mod n_blobs), mimicking
samples from distinct capabilities that light up distinct channels in every
layer block. Pool proportions can be skewed so that rare blobs exist; a
balanced evaluation draw then rewards calibration selections that cover every
blob instead of mirroring pool frequencies. Weight banks built from the blob
center directions concentrate reconstruction error where that coverage
matters.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .compression import LinearLayer
from .data_model import ActivationMatrix
from .seeding import make_rng

_CENTER_BRANCH = 21
_POOL_BRANCH = 22
_LAYER_BRANCH = 23

DEFAULT_LAYER_DIMS = (128, 128, 128, 128)
DEFAULT_POOL_PROPORTIONS = (0.36, 0.25, 0.16, 0.10, 0.07, 0.037, 0.015, 0.008)
DEFAULT_CENTER_SCALE = 3.0
DEFAULT_NOISE = 0.6
DEFAULT_WEIGHT_MIX = 0.1


def blob_centers(n_blobs: int, dim: int, center_scale: float, seed: int) -> np.ndarray:
    """Blob centers on interleaved channels: channel j belongs to blob j mod n_blobs."""
    if dim % n_blobs != 0:
        raise ValueError(f"dim {dim} not divisible by n_blobs {n_blobs}")
    rng = make_rng(seed, _CENTER_BRANCH)
    owner = np.arange(dim) % n_blobs
    centers = np.zeros((n_blobs, dim))
    for b in range(n_blobs):
        chans = np.flatnonzero(owner == b)
        magnitudes = rng.uniform(0.5, 1.5, size=chans.size) * center_scale
        centers[b, chans] = magnitudes * rng.choice((-1.0, 1.0), size=chans.size)
    return centers


def make_blobs(
    n_points: int,
    centers: np.ndarray,
    noise: float,
    seed: int,
    proportions: Sequence[float] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw points around the given centers; returns (points, labels).

    With proportions, blob b receives round(n * p_b) points (remainders go
    to the largest fractions); otherwise the split is as even as possible.
    Rows are shuffled so blob membership is not encoded in row order.
    """
    k, dim = centers.shape
    if proportions is None:
        counts = np.full(k, n_points // k, dtype=int)
        counts[: n_points % k] += 1
    else:
        if len(proportions) != k:
            raise ValueError(f"{len(proportions)} proportions for {k} blobs")
        raw = np.asarray(proportions, dtype=np.float64) * n_points
        counts = np.floor(raw).astype(int)
        frac_order = np.argsort(-(raw - counts), kind="stable")
        for i in frac_order[: n_points - counts.sum()]:
            counts[i] += 1
    rng = make_rng(seed, _POOL_BRANCH)
    points = np.empty((n_points, dim))
    labels = np.empty(n_points, dtype=np.intp)
    row = 0
    for b in range(k):
        points[row : row + counts[b]] = centers[b] + noise * rng.standard_normal(
            (counts[b], dim)
        )
        labels[row : row + counts[b]] = b
        row += counts[b]
    perm = rng.permutation(n_points)
    return points[perm], labels[perm]


def make_blob_activations(
    n_samples: int,
    layer_dims: Sequence[int] = DEFAULT_LAYER_DIMS,
    n_blobs: int = 8,
    center_scale: float = DEFAULT_CENTER_SCALE,
    noise: float = DEFAULT_NOISE,
    seed: int = 0,
    proportions: Sequence[float] | None = None,
    id_prefix: str = "s",
    centers: np.ndarray | None = None,
) -> tuple[ActivationMatrix, np.ndarray]:
    """Blob-structured activation signatures; returns (matrix, blob labels).

    Pass explicit `centers` to draw several sets (e.g. a skewed pool and a
    balanced evaluation split) from the same underlying blobs.
    """
    dim = int(sum(layer_dims))
    if centers is None:
        centers = blob_centers(n_blobs, dim, center_scale, seed)
    elif centers.shape[1] != dim:
        raise ValueError(f"centers have {centers.shape[1]} dims, layer_dims sum to {dim}")
    points, labels = make_blobs(n_samples, centers, noise, seed, proportions)
    ids = tuple(f"{id_prefix}{i:05d}" for i in range(n_samples))
    return ActivationMatrix(ids, tuple(layer_dims), points.astype(np.float32)), labels


def make_layer_bank(
    n_layers: int, rows: int, cols: int, seed: int, name_prefix: str = "layer"
) -> list[LinearLayer]:
    """A bank of plain Gaussian-weight linear layers with a shared shape."""
    rng = make_rng(seed, _LAYER_BRANCH)
    return [
        LinearLayer(rng.standard_normal((rows, cols)), f"{name_prefix}{i:02d}")
        for i in range(n_layers)
    ]


def make_capability_bank(
    n_layers: int,
    rows: int,
    centers: np.ndarray,
    layer_dims: Sequence[int],
    weight_mix: float = DEFAULT_WEIGHT_MIX,
    seed: int = 0,
    name_prefix: str = "layer",
) -> list[LinearLayer]:
    """Linear layers whose rows mix the blob center directions.

    Layer i consumes activation block i mod L (matching the harness input
    convention); its rows are random combinations of that block's normalized
    center directions plus `weight_mix` isotropic residual, so reconstruction
    quality hinges on how well calibration data covers the blobs.
    """
    rng = make_rng(seed, _LAYER_BRANCH)
    starts = np.concatenate(([0], np.cumsum(layer_dims)))
    layers = []
    for i in range(n_layers):
        block = i % len(layer_dims)
        cols = int(layer_dims[block])
        sub = centers[:, starts[block] : starts[block] + cols]
        directions = sub / np.linalg.norm(sub, axis=1, keepdims=True)
        w = rng.standard_normal((rows, centers.shape[0])) @ directions
        w += weight_mix * rng.standard_normal((rows, cols))
        layers.append(LinearLayer(w, f"{name_prefix}{i:02d}"))
    return layers
