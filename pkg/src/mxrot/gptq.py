"""GPTQ second-order weight compensation over block-quantized formats.

Input dimensions are quantized left to right.  Each dimension's rounding
residual, divided by the matching diagonal entry of the upper Cholesky
factor of the damped inverse Hessian, is subtracted from the dimensions
not yet processed.  Inside a lazy slab the compensation lands column by
column; the slab's accumulated residuals hit the rest of the matrix in
one matmul when the slab closes.

Weights arrive as (in_dim, out_dim) so the rows line up with the Hessian
width.  The returned QuantizedTensor holds the transposed (out_dim,
in_dim) layout: quantization blocks then run along input dimensions, one
shared scale per block_size consecutive input dims, frozen from the
current compensated values when the sweep first enters the block.

Hessian accumulation is binary64; weight updates are binary32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .mxformats import QuantConfig, QuantizedTensor, encode_scaled, scales_for_amax
from .tensorio import ensure_tensor


class SingularHessianError(np.linalg.LinAlgError):
    """Damped Hessian is not positive definite.

    The usual fixes are a larger damping_fraction or calibration data
    that actually exercises the input dimensions.
    """


@dataclass
class HessianAccumulator:
    """Running H = 2 * sum(X^T X) over calibration batches."""

    width: int
    H: np.ndarray | None = None
    n_samples: int = 0

    def __post_init__(self):
        if self.width < 1:
            raise ValueError(f"width must be >= 1, got {self.width}")
        if self.H is None:
            self.H = np.zeros((self.width, self.width), dtype=np.float64)
        else:
            self.H = np.asarray(self.H, dtype=np.float64)
            if self.H.shape != (self.width, self.width):
                raise ValueError(
                    f"H shape {self.H.shape} does not match width {self.width}"
                )
            if not np.allclose(self.H, self.H.T, atol=1e-10):
                raise ValueError("H must be symmetric")
        if self.n_samples < 0:
            raise ValueError(f"n_samples must be >= 0, got {self.n_samples}")


def accumulate_hessian(acc: HessianAccumulator, x_batch) -> HessianAccumulator:
    """Add a calibration batch (rows of activations) to the accumulator."""
    x = ensure_tensor(x_batch)
    if x.shape[1] != acc.width:
        raise ValueError(
            f"batch width {x.shape[1]} != Hessian width {acc.width}"
        )
    x64 = x.astype(np.float64)
    g = x64.T @ x64
    acc.H += g + g.T  # 2 X^T X, bitwise symmetric
    acc.n_samples += x.shape[0]
    return acc


@dataclass(frozen=True)
class GptqParams:
    damping_fraction: float = 0.01
    lazy_block: int = 128
    act_order: bool = False

    def __post_init__(self):
        if not self.damping_fraction > 0:
            raise ValueError(
                f"damping_fraction must be > 0, got {self.damping_fraction}"
            )
        if self.lazy_block < 1:
            raise ValueError(f"lazy_block must be >= 1, got {self.lazy_block}")


def _inverse_cholesky_upper(h: np.ndarray) -> np.ndarray:
    """Upper-triangular U with inv(h) == U.T @ U."""
    try:
        factor = linalg.cho_factor(h, lower=True)
        hinv = linalg.cho_solve(factor, np.eye(h.shape[0]))
        return linalg.cholesky(hinv, lower=False)
    except np.linalg.LinAlgError as exc:
        raise SingularHessianError(
            "damped Hessian is not positive definite; increase "
            "damping_fraction or provide richer calibration data"
        ) from exc


def gptq_quantize(
    w,
    acc: HessianAccumulator,
    cfg: QuantConfig,
    params: GptqParams = GptqParams(),
) -> QuantizedTensor:
    """Quantize weights (in_dim, out_dim) with Hessian-weighted compensation.

    With act_order the sweep visits input dims by descending Hessian
    diagonal; a block's scale still freezes at first touch, so columns of
    the block that a pending lazy update has not reached yet contribute
    slightly stale values, matching reference behavior.
    """
    w = ensure_tensor(w)
    n_in, n_out = w.shape
    if n_in != acc.width:
        raise ValueError(f"weight rows {n_in} != Hessian width {acc.width}")
    if acc.n_samples < 1:
        raise ValueError("accumulator holds no calibration samples")

    bs = cfg.block_size
    lazy = -(-params.lazy_block // bs) * bs  # whole blocks per slab
    diag = np.diag(acc.H)
    lam = params.damping_fraction * float(diag.mean())
    hd = acc.H + lam * np.eye(n_in)

    if params.act_order:
        perm = np.argsort(-diag, kind="stable").astype(np.intp)
    else:
        perm = np.arange(n_in, dtype=np.intp)
    inv_perm = np.empty(n_in, dtype=np.intp)
    inv_perm[perm] = np.arange(n_in, dtype=np.intp)

    u = _inverse_cholesky_upper(hd[np.ix_(perm, perm)])
    u32 = u.astype(np.float32)

    wp = np.ascontiguousarray(w[perm, :].T, dtype=np.float32)  # (out, in) permuted
    nb = -(-n_in // bs)
    codes = np.zeros((n_out, n_in), dtype=np.int8)
    scales = np.zeros((n_out, nb), dtype=np.float32)
    frozen = np.zeros(nb, dtype=bool)

    for i1 in range(0, n_in, lazy):
        i2 = min(i1 + lazy, n_in)
        w1 = wp[:, i1:i2]
        err1 = np.zeros((n_out, i2 - i1), dtype=np.float32)
        for i in range(i2 - i1):
            j = int(perm[i1 + i])
            b = j // bs
            if not frozen[b]:
                grp = wp[:, inv_perm[b * bs : min((b + 1) * bs, n_in)]]
                amax = np.abs(grp.astype(np.float64)).max(axis=1)
                scales[:, b] = scales_for_amax(amax, cfg)
                frozen[b] = True
            s = scales[:, b]
            y = w1[:, i].astype(np.float64) / s.astype(np.float64)
            c = encode_scaled(y, cfg.element)
            codes[:, j] = c
            deq = cfg.element.decode(c) * s
            err = ((w1[:, i] - deq).astype(np.float64) / u[i1 + i, i1 + i]).astype(
                np.float32
            )
            w1[:, i + 1 :] -= err[:, None] * u32[i1 + i, i1 + i + 1 : i2][None, :]
            err1[:, i] = err
        if i2 < n_in:
            wp[:, i2:] -= err1 @ u32[i1:i2, i2:]

    return QuantizedTensor(config=cfg, codes=codes, scales=scales)
