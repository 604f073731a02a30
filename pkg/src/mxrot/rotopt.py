"""Cayley gradient descent on (block) rotations against quantization MSE.

The objective is reconstruction error after fake quantization of the
rotated activations: L(R) = ||dq(q(X R)) - X R||^2 / numel(X).  The
gradient flows through the quantizer with a straight-through estimator:
rounding passes the full residual (which is the exact gradient almost
everywhere, since codes and scales are locally constant), while elements
clipped at the top of the code range pass nothing, so saturation cannot
dominate the search direction.

Each rotation block updates independently with the Cayley map
    R <- (I + (eta/2) A)^-1 (I - (eta/2) A) R,   A = G R^T - R G^T,
which preserves orthogonality exactly in exact arithmetic; solves run in
binary64 and blocks are stored back as binary32.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .mxformats import QuantConfig, dequantize, expand_scales, quantize
from .tensorio import ensure_tensor
from .transforms import RotationMatrix, rotate_activations


class StepTooLargeError(ValueError):
    """Cayley update became non-solvable; lower the step size."""


@dataclass(frozen=True)
class CayleyState:
    R: RotationMatrix
    step_size: float
    iteration: int = 0
    loss_history: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")


def quant_loss(x, R: RotationMatrix, cfg: QuantConfig) -> float:
    """Mean squared reconstruction error of the rotated activations."""
    x = ensure_tensor(x)
    y = rotate_activations(x, R)
    d = dequantize(quantize(y, cfg))
    err = y.astype(np.float64) - d.astype(np.float64)
    return float(np.mean(err * err))


def _grad_and_loss(x: np.ndarray, R: RotationMatrix, cfg: QuantConfig):
    """dL/dR per rotation block (binary64) and the current loss."""
    blocks = R.blocks(x.shape[1]).astype(np.float64)
    g = blocks.shape[1]
    xb = x.reshape(x.shape[0], -1, g).astype(np.float64)
    # batched per-block matmuls; (r, b, g) contracted as (b, r, g) @ (b, g, h)
    xbt = np.ascontiguousarray(xb.transpose(1, 0, 2))
    y = np.matmul(xbt, blocks).transpose(1, 0, 2).reshape(x.shape).astype(np.float32)

    q = quantize(y, cfg)
    resid = y.astype(np.float64) - dequantize(q).astype(np.float64)
    loss = float(np.mean(resid * resid))
    # clipped elements sit past the top code; they get no gradient
    top = cfg.element.max_code_value * expand_scales(q).astype(np.float64)
    resid[np.abs(y) > top] = 0.0

    dldy = (resid * (2.0 / y.size)).reshape(xb.shape)
    grad = np.matmul(xbt.transpose(0, 2, 1), dldy.transpose(1, 0, 2))
    return blocks, grad, loss


def ste_gradient(x, R: RotationMatrix, cfg: QuantConfig) -> np.ndarray:
    """Straight-through dL/dR, shape (n_blocks, dim, dim), binary64."""
    x = ensure_tensor(x)
    _, grad, _ = _grad_and_loss(x, R, cfg)
    return grad


def cayley_step(state: CayleyState, x, cfg: QuantConfig) -> CayleyState:
    """One descent step on every rotation block; appends the pre-step loss."""
    x = ensure_tensor(x)
    width = x.shape[1]
    blocks, grad, loss = _grad_and_loss(x, state.R, cfg)
    g = blocks.shape[1]

    a = grad @ blocks.transpose(0, 2, 1) - blocks @ grad.transpose(0, 2, 1)
    if np.all(a == 0.0):
        new_blocks = state.R.blocks(width)
    else:
        with np.errstate(over="ignore"):
            half = 0.5 * state.step_size * a
        lhs = np.eye(g) + half
        if not np.all(np.isfinite(lhs)):
            raise StepTooLargeError(
                f"non-finite Cayley update at step size {state.step_size}"
            )
        rhs = np.einsum("bgh,bhk->bgk", np.eye(g) - half, blocks)
        try:
            new_blocks = np.linalg.solve(lhs, rhs).astype(np.float32)
        except np.linalg.LinAlgError as exc:
            raise StepTooLargeError(
                f"singular Cayley update at step size {state.step_size}"
            ) from exc
    return replace(
        state,
        R=state.R.with_blocks(new_blocks),
        iteration=state.iteration + 1,
        loss_history=state.loss_history + (loss,),
    )


def optimize(
    x, cfg: QuantConfig, R: RotationMatrix, steps: int, step_size: float
) -> CayleyState:
    """Run a fixed number of Cayley steps from the given rotation."""
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    state = CayleyState(R=R, step_size=step_size)
    for _ in range(steps):
        state = cayley_step(state, x, cfg)
    return state
