"""Block-level diagnostics: outlier labeling, error reports, scale stats.

Blocks tile each row contiguously along columns, matching the quantizer
layout.  The outlier threshold follows a nearest-rank rule on absolute
values sorted descending: with k = floor(q * n), the threshold is the
(k+1)-th largest |t|, and a block is an outlier block iff it holds at
least one element strictly above it.  This makes "top 0.1%" exact and
reproducible: exactly k elements can exceed the threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .mxformats import QuantConfig, dequantize, quantize
from .tensorio import ensure_tensor
from .transforms import (
    RotationMatrix,
    RotationScope,
    RotationSpec,
    build_rotation,
    rotate_activations,
)


def _block_slices(arr: np.ndarray, block_size: int):
    """Pad to whole blocks; returns (rows, nb, bs) view and per-block counts."""
    rows, cols = arr.shape
    nb = -(-cols // block_size)
    padded = np.zeros((rows, nb * block_size), dtype=np.float64)
    padded[:, :cols] = arr
    counts = np.full(nb, block_size, dtype=np.int64)
    counts[-1] = cols - (nb - 1) * block_size
    return padded.reshape(rows, nb, block_size), counts


def outlier_threshold(t: np.ndarray, outlier_quantile: float) -> float:
    """(k+1)-th largest |t| with k = floor(q * n); nothing exceeds it at q=0."""
    arr = ensure_tensor(t)
    if not 0.0 <= outlier_quantile < 1.0:
        raise ValueError(f"outlier_quantile must be in [0, 1), got {outlier_quantile}")
    mags = np.abs(arr, dtype=np.float64).ravel()
    k = int(math.floor(outlier_quantile * mags.size))
    return float(np.partition(mags, mags.size - 1 - k)[mags.size - 1 - k])


@dataclass(frozen=True)
class BlockReport:
    """Per-block labels and errors for one tensor under one quant config.

    ``outlier_mask``/``amax`` are (rows, n_blocks); error arrays stay None
    until ``block_error_report`` fills them.  Ratio arrays compare against
    a second config when one was requested.
    """

    shape: tuple[int, int]
    block_size: int
    outlier_quantile: float
    threshold: float
    outlier_mask: np.ndarray
    amax: np.ndarray
    mse: np.ndarray | None = None
    relative_error_max: np.ndarray | None = None
    baseline_name: str | None = None
    mse_ratio: np.ndarray | None = None
    relative_error_max_ratio: np.ndarray | None = None

    @property
    def n_blocks(self) -> int:
        return int(self.outlier_mask.size)

    @property
    def outlier_count(self) -> int:
        return int(self.outlier_mask.sum())

    @property
    def regular_count(self) -> int:
        return self.n_blocks - self.outlier_count

    @property
    def regular_mse_mean(self) -> float:
        if self.mse is None:
            raise ValueError("error report not filled in; run block_error_report")
        if self.regular_count == 0:
            raise ValueError("no regular blocks to average over")
        return float(self.mse[~self.outlier_mask].mean())

    @property
    def regular_mse_log_mean(self) -> float:
        """log10 of the mean regular-block MSE; -inf when errors vanish."""
        mean = self.regular_mse_mean
        return math.log10(mean) if mean > 0.0 else -math.inf


def classify_blocks(
    t: np.ndarray, block_size: int, outlier_quantile: float = 0.001
) -> BlockReport:
    """Label every block Regular or Outlier; errors left for a later pass."""
    arr = ensure_tensor(t)
    if block_size < 1:
        raise ValueError(f"block_size must be >= 1, got {block_size}")
    thr = outlier_threshold(arr, outlier_quantile)
    blocks, _ = _block_slices(np.abs(arr, dtype=np.float64), block_size)
    amax = blocks.max(axis=2)
    return BlockReport(
        shape=arr.shape,
        block_size=block_size,
        outlier_quantile=outlier_quantile,
        threshold=thr,
        outlier_mask=amax > thr,
        amax=amax,
    )


def block_error_report(
    t: np.ndarray,
    cfg: QuantConfig,
    report: BlockReport,
    baseline: QuantConfig | None = None,
) -> BlockReport:
    """Fill per-block MSE and max relative error; optionally ratio vs baseline."""
    arr = ensure_tensor(t)
    if arr.shape != report.shape:
        raise ValueError(f"tensor shape {arr.shape} does not match report {report.shape}")
    if cfg.block_size != report.block_size:
        raise ValueError(
            f"config block size {cfg.block_size} does not match report {report.block_size}"
        )
    mse, rel = _per_block_errors(arr, cfg, report.block_size)
    out = replace(report, mse=mse, relative_error_max=rel)
    if baseline is not None:
        bmse, brel = _per_block_errors(arr, baseline, report.block_size)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = replace(
                out,
                baseline_name=f"{baseline.element.value}/{baseline.scale.value}",
                mse_ratio=mse / bmse,
                relative_error_max_ratio=rel / brel,
            )
    return out


def _per_block_errors(arr: np.ndarray, cfg: QuantConfig, block_size: int):
    deq = dequantize(quantize(arr, cfg)).astype(np.float64)
    err = arr.astype(np.float64) - deq
    sq, counts = _block_slices(err * err, block_size)
    mse = sq.sum(axis=2) / counts[None, :]
    mags = np.abs(arr, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(mags > 0.0, np.abs(err) / mags, 0.0)
    relb, _ = _block_slices(rel, block_size)
    return mse, relb.max(axis=2)


@dataclass(frozen=True)
class ThresholdCurve:
    thresholds: tuple[float, ...]
    fractions: tuple[float, ...]


def threshold_fractions(t: np.ndarray, thresholds) -> ThresholdCurve:
    """Exact share of elements with |t| strictly above each threshold."""
    arr = ensure_tensor(t)
    thr = [float(v) for v in thresholds]
    if any(b < a for a, b in zip(thr, thr[1:])):
        raise ValueError(f"thresholds must be ascending, got {thr}")
    mags = np.abs(arr, dtype=np.float64).ravel()
    fracs = tuple(float(np.mean(mags > v)) for v in thr)
    return ThresholdCurve(thresholds=tuple(thr), fractions=fracs)


@dataclass(frozen=True)
class RegularLossDelta:
    """log10 mean regular-block MSE before/after a rotation.

    Labels on both sides use the pre-rotation tensor's threshold; the
    rotated tensor's own quantile threshold is carried along for plots
    that want to relabel from scratch.
    """

    before: float
    after: float
    threshold: float
    rotated_threshold: float


def regular_block_loss_delta(
    t: np.ndarray,
    cfg: QuantConfig,
    rotation: RotationSpec | RotationMatrix,
    outlier_quantile: float = 0.001,
) -> RegularLossDelta:
    arr = ensure_tensor(t)
    pre = classify_blocks(arr, cfg.block_size, outlier_quantile)
    pre = block_error_report(arr, cfg, pre)
    if pre.regular_count == 0:
        raise ValueError("no regular blocks before rotation")

    rot = rotation if isinstance(rotation, RotationMatrix) else build_rotation(rotation)
    rotated = rotate_activations(arr, rot)
    post = classify_blocks(rotated, cfg.block_size, outlier_quantile)
    relabeled = replace(post, threshold=pre.threshold, outlier_mask=post.amax > pre.threshold)
    relabeled = block_error_report(rotated, cfg, relabeled)
    if relabeled.regular_count == 0:
        raise ValueError("no regular blocks after rotation")
    return RegularLossDelta(
        before=pre.regular_mse_log_mean,
        after=relabeled.regular_mse_log_mean,
        threshold=pre.threshold,
        rotated_threshold=post.threshold,
    )


def block_scale_distribution(t: np.ndarray, block_size: int) -> np.ndarray:
    """Per-block max-abs values, row-major, one entry per block."""
    arr = ensure_tensor(t)
    if block_size < 1:
        raise ValueError(f"block_size must be >= 1, got {block_size}")
    blocks, _ = _block_slices(np.abs(arr, dtype=np.float64), block_size)
    return blocks.max(axis=2).ravel()


def rotation_dim_sweep(
    t: np.ndarray, cfg: QuantConfig, dims, seed: int
) -> list[tuple[int, float]]:
    """Quantization MSE of the rotated tensor for each block-rotation dim.

    dims equal to the tensor width reduce to a global rotation.
    """
    arr = ensure_tensor(t)
    out = []
    for dim in dims:
        spec = RotationSpec(RotationScope.BLOCK_DIAGONAL, int(dim), seed=seed)
        y = rotate_activations(arr, build_rotation(spec))
        deq = dequantize(quantize(y, cfg)).astype(np.float64)
        err = y.astype(np.float64) - deq
        out.append((int(dim), float(np.mean(err * err))))
    return out
