"""Desk-scale layer-wise compression harness.

Implements simplified pruning and quantization schemes against the shared
layer-wise reconstruction objective ||W X - W_hat X||_F, where X holds
calibration activations column-wise. The point is measuring how the choice
of calibration samples moves that error, not reproducing any production
compressor bit-for-bit:

- magnitude_prune: global smallest-|w| pruning (calibration-free baseline)
- wanda_prune: activation-aware scores |W_ij| * ||X_j||_2, per output row,
  optionally under an n:m block constraint (e.g. 4 zeros per 8 weights)
- reconstruct_prune: wanda mask followed by a per-row ridge-damped
  least-squares refit of the surviving weights
- rtn_quantize: symmetric round-to-nearest on a per-group grid
- scaled_quantize: per-input-channel activation scaling folded around rtn

Weight banks are stored in the same binary container as activations, with
layer_dims reinterpreted as a single (rows, cols) pair shared by all layers
in the file and each record holding one row-major flattened weight matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data_model import (
    ActivationMatrix,
    CompressionScheme,
    _read_header,
    _read_records,
    _write_header,
    _write_records,
)
from .errors import FormatError, NumericalError, ShapeError, ValidationError


@dataclass(frozen=True)
class LinearLayer:
    """A dense weight matrix, rows = output channels."""

    weights: np.ndarray
    name: str = ""

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise ValidationError(f"weights must be 2-D, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValidationError(f"layer {self.name!r}: weights contain NaN or Inf")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def cols(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class CalibrationBatch:
    """Layer inputs, one column per calibration position."""

    inputs: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(self.inputs, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] < 1:
            raise ValidationError(f"inputs must be 2-D with >= 1 column, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValidationError("calibration inputs contain NaN or Inf")
        x.flags.writeable = False
        object.__setattr__(self, "inputs", x)


def reconstruction_error(layer: LinearLayer, compressed: LinearLayer, batch: CalibrationBatch) -> float:
    """Frobenius norm of (W - W_hat) X."""
    if layer.weights.shape != compressed.weights.shape:
        raise ShapeError(
            f"weight shapes differ: {layer.weights.shape} vs {compressed.weights.shape}"
        )
    if layer.cols != batch.inputs.shape[0]:
        raise ShapeError(
            f"layer has {layer.cols} inputs but batch provides {batch.inputs.shape[0]}"
        )
    diff = (layer.weights - compressed.weights) @ batch.inputs
    return float(np.linalg.norm(diff))


def _prune_count(sparsity: float, size: int) -> int:
    # floor() with a tiny guard so ratios like 4/9 * 9 land on the integer.
    return int(np.floor(sparsity * size + 1e-9))


def magnitude_prune(layer: LinearLayer, sparsity: float) -> LinearLayer:
    """Zero the floor(sparsity * r * c) globally smallest-magnitude weights.

    Ties break toward lower (row, col) positions.
    """
    if not 0.0 <= sparsity <= 1.0:
        raise ValueError(f"sparsity {sparsity} outside [0, 1]")
    w = layer.weights.copy()
    n_prune = _prune_count(sparsity, w.size)
    if n_prune > 0:
        order = np.argsort(np.abs(w).ravel(), kind="stable")
        flat = w.ravel()
        flat[order[:n_prune]] = 0.0
    return LinearLayer(w, layer.name)


def _wanda_scores(layer: LinearLayer, batch: CalibrationBatch) -> np.ndarray:
    if layer.cols != batch.inputs.shape[0]:
        raise ShapeError(
            f"layer has {layer.cols} inputs but batch provides {batch.inputs.shape[0]}"
        )
    channel_norms = np.linalg.norm(batch.inputs, axis=1)
    return np.abs(layer.weights) * channel_norms[None, :]


def wanda_mask(
    layer: LinearLayer,
    batch: CalibrationBatch,
    sparsity: float | None = None,
    block_pattern: tuple[int, int] | None = None,
) -> np.ndarray:
    """Boolean mask of entries to zero, chosen by activation-aware score.

    Unstructured mode zeroes the floor(sparsity * cols) lowest-score entries
    of every output row. Block mode zeroes exactly n_zero entries in every
    contiguous block of block_len along the input dimension.
    """
    if (sparsity is None) == (block_pattern is None):
        raise ValueError("exactly one of sparsity and block_pattern is required")
    scores = _wanda_scores(layer, batch)
    r, c = scores.shape
    mask = np.zeros((r, c), dtype=bool)
    if block_pattern is not None:
        n_zero, block_len = block_pattern
        if not 0 < n_zero < block_len:
            raise ValueError(f"bad block pattern {block_pattern}")
        if c % block_len != 0:
            raise ValueError(f"input dim {c} not divisible by block length {block_len}")
        blocks = scores.reshape(r, c // block_len, block_len)
        order = np.argsort(blocks, axis=2, kind="stable")
        drop = order[:, :, :n_zero]
        mask3 = np.zeros_like(blocks, dtype=bool)
        np.put_along_axis(mask3, drop, True, axis=2)
        mask = mask3.reshape(r, c)
    else:
        if not 0.0 <= sparsity <= 1.0:
            raise ValueError(f"sparsity {sparsity} outside [0, 1]")
        k = _prune_count(sparsity, c)
        if k > 0:
            order = np.argsort(scores, axis=1, kind="stable")
            np.put_along_axis(mask, order[:, :k], True, axis=1)
    return mask


def wanda_prune(
    layer: LinearLayer,
    batch: CalibrationBatch,
    sparsity: float | None = None,
    block_pattern: tuple[int, int] | None = None,
) -> LinearLayer:
    """Activation-aware pruning: zero low |W_ij| * ||X_j|| entries."""
    mask = wanda_mask(layer, batch, sparsity, block_pattern)
    w = layer.weights.copy()
    w[mask] = 0.0
    return LinearLayer(w, layer.name)


def reconstruct_prune(
    layer: LinearLayer,
    batch: CalibrationBatch,
    sparsity: float | None = None,
    block_pattern: tuple[int, int] | None = None,
) -> LinearLayer:
    """Wanda mask plus per-row least-squares refit of surviving weights.

    Each row solves min_v ||v X_T - w0 X||_2 over its support T through
    ridge-damped normal equations with lambda = 0.01 * mean(diag(X X^T)).
    A refit row is kept only when it does not increase that row's
    reconstruction error on the calibration batch, so the result never does
    worse than masking alone.
    """
    mask = wanda_mask(layer, batch, sparsity, block_pattern)
    x = batch.inputs
    gram = x @ x.T
    damp = 0.01 * float(np.mean(np.diag(gram)))
    w0 = layer.weights
    w = w0.copy()
    w[mask] = 0.0
    for i in range(w0.shape[0]):
        keep = ~mask[i]
        if not keep.any() or mask[i].sum() == 0:
            continue
        a = gram[np.ix_(keep, keep)] + damp * np.eye(int(keep.sum()))
        b = gram[keep] @ w0[i]
        try:
            v = np.linalg.solve(a, b)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"row {i}: refit system singular after damping") from exc
        # Compare errors via the Gram form ||u X||^2 = u G u^T.
        u_fit = np.zeros_like(w0[i])
        u_fit[keep] = v
        u_fit -= w0[i]
        u_mask = w[i] - w0[i]
        if u_fit @ gram @ u_fit < u_mask @ gram @ u_mask:
            w[i, keep] = v
    return LinearLayer(w, layer.name)


def _group_shape(cols: int, group_size: int | None) -> int:
    g = cols if group_size is None else int(group_size)
    if g < 1:
        raise ValueError(f"group_size must be positive, got {g}")
    if cols % g != 0:
        raise ValueError(f"group_size {g} does not divide input dim {cols}")
    return g


def rtn_quantize(layer: LinearLayer, bits: int, group_size: int | None = None) -> LinearLayer:
    """Symmetric round-to-nearest quantization on a per-group grid.

    Each contiguous group of group_size weights within a row shares the
    scale max|w| / (2^(bits-1) - 1); entries become scale * q with integer
    q in [-(2^(bits-1)-1), 2^(bits-1)-1]. All-zero groups pass through.
    """
    if bits < 2:
        raise ValueError(f"bits must be >= 2, got {bits}")
    g = _group_shape(layer.cols, group_size)
    q_max = float(2 ** (bits - 1) - 1)
    grouped = layer.weights.reshape(layer.rows, layer.cols // g, g)
    scale = np.max(np.abs(grouped), axis=2, keepdims=True) / q_max
    safe = np.where(scale > 0.0, scale, 1.0)
    q = np.clip(np.rint(grouped / safe), -q_max, q_max)
    out = np.where(scale > 0.0, q * scale, 0.0)
    return LinearLayer(out.reshape(layer.rows, layer.cols), layer.name)


def quantization_scales(layer: LinearLayer, bits: int, group_size: int | None = None) -> np.ndarray:
    """Per-group scales used by rtn_quantize, shaped (rows, n_groups)."""
    g = _group_shape(layer.cols, group_size)
    grouped = layer.weights.reshape(layer.rows, layer.cols // g, g)
    return np.max(np.abs(grouped), axis=2) / float(2 ** (bits - 1) - 1)


def scaled_quantize(
    layer: LinearLayer, batch: CalibrationBatch, bits: int, group_size: int | None = None
) -> LinearLayer:
    """Activation-scaled quantization: rtn on W * diag(s), folded back.

    s_j = sqrt(||X_j||_2), floored at 1e-8 and normalized to unit geometric
    mean so the overall weight magnitude is preserved. With uniform
    activations this reduces exactly to rtn_quantize.
    """
    if layer.cols != batch.inputs.shape[0]:
        raise ShapeError(
            f"layer has {layer.cols} inputs but batch provides {batch.inputs.shape[0]}"
        )
    s = np.sqrt(np.linalg.norm(batch.inputs, axis=1))
    s = np.maximum(s, 1e-8)
    if np.all(s == s[0]):
        s = np.ones_like(s)
    else:
        s = s / np.exp(np.mean(np.log(s)))
    scaled = LinearLayer(layer.weights * s[None, :], layer.name)
    quant = rtn_quantize(scaled, bits, group_size)
    return LinearLayer(quant.weights / s[None, :], layer.name)


def apply_scheme(
    layer: LinearLayer, scheme: CompressionScheme, batch: CalibrationBatch | None
) -> LinearLayer:
    """Dispatch a CompressionScheme onto one layer."""
    kind = scheme.kind
    if kind == "magnitude_prune":
        if scheme.sparsity is None:
            raise ValidationError("magnitude_prune requires sparsity")
        return magnitude_prune(layer, scheme.sparsity)
    if kind in ("wanda_prune", "reconstruct_prune"):
        if batch is None:
            raise ValidationError(f"{kind} requires calibration activations")
        fn = wanda_prune if kind == "wanda_prune" else reconstruct_prune
        return fn(layer, batch, scheme.sparsity, scheme.block_pattern)
    if kind in ("rtn_quant", "scaled_quant"):
        if scheme.bits is None:
            raise ValidationError(f"{kind} requires bits")
        if kind == "rtn_quant":
            return rtn_quantize(layer, scheme.bits, scheme.group_size)
        if batch is None:
            raise ValidationError("scaled_quant requires calibration activations")
        return scaled_quantize(layer, batch, scheme.bits, scheme.group_size)
    raise ValidationError(f"unknown compression kind {kind!r}")


def write_layer_bank(layers: Sequence[LinearLayer], path: str | Path) -> None:
    """Store a bank of equally-shaped layers in the binary container.

    The header's layer_dims carry the (rows, cols) pair; each record is one
    layer's name plus its float32 row-major flattened weights.
    """
    if not layers:
        raise ValueError("layer bank is empty")
    r, c = layers[0].rows, layers[0].cols
    for layer in layers:
        if (layer.rows, layer.cols) != (r, c):
            raise ShapeError("all layers in a bank must share one shape")
    names = [layer.name for layer in layers]
    if len(set(names)) != len(names):
        raise ValidationError("layer names in a bank must be unique")
    data = np.stack([layer.weights.ravel() for layer in layers]).astype(np.float32)
    with Path(path).open("wb") as fh:
        _write_header(fh, len(layers), (r, c))
        _write_records(fh, names, data)


def read_layer_bank(path: str | Path) -> list[LinearLayer]:
    """Read a weight bank written by write_layer_bank."""
    with Path(path).open("rb") as fh:
        n, dims = _read_header(fh)
        if len(dims) != 2:
            raise FormatError(f"layer bank needs (rows, cols) dims, got {len(dims)} entries")
        r, c = int(dims[0]), int(dims[1])
        names, data = _read_records(fh, n, r * c)
    return [LinearLayer(row.reshape(r, c).astype(np.float64), name) for name, row in zip(names, data)]


def evaluate_calibration(
    layers: Sequence[LinearLayer],
    acts: ActivationMatrix,
    selection: Sequence[str],
    scheme: CompressionScheme,
    eval_acts: ActivationMatrix | CalibrationBatch,
) -> list[tuple[str, float]]:
    """Compress every layer on the selected samples, score on held-out data.

    Layer i draws its inputs from activation block (i mod L): calibration
    columns come from the selected sample rows, evaluation columns from all
    rows of eval_acts (or from a fixed CalibrationBatch shared by all
    layers). Returns (layer_name, reconstruction_error) in layer order.
    """
    if not layers:
        raise ValueError("no layers to evaluate")
    rows = acts.row_index(list(selection))
    if rows.size == 0:
        raise ValueError("selection is empty")
    n_blocks = len(acts.layer_dims)
    results: list[tuple[str, float]] = []
    for i, layer in enumerate(layers):
        block = i % n_blocks
        cols = acts.layer_slice(block)
        if acts.layer_dims[block] != layer.cols:
            raise ShapeError(
                f"layer {layer.name!r} expects {layer.cols} inputs, activation block "
                f"{block} provides {acts.layer_dims[block]}"
            )
        calib = CalibrationBatch(acts.data[rows][:, cols].T.astype(np.float64))
        if isinstance(eval_acts, CalibrationBatch):
            eval_batch = eval_acts
        else:
            eval_batch = CalibrationBatch(eval_acts.data[:, cols].T.astype(np.float64))
        compressed = apply_scheme(layer, scheme, calib)
        results.append((layer.name, reconstruction_error(layer, compressed, eval_batch)))
    return results
