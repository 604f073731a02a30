"""Orthogonal rotations and activation-smoothing transforms.

Rotations are built from Sylvester Hadamard matrices: R = (1/sqrt(g)) H_g D
with D a random +-1 diagonal drawn from a seeded Philox stream, so R is
orthogonal by construction.  A Global rotation is one dense N x N block; a
BlockDiagonal rotation applies an independent g x g block to each aligned
group of g input features.  Block i draws its diagonal from the Philox key
(seed, i), so block 0 of a block-diagonal rotation equals a Global rotation
of the same seed and size.

Everything is materialized as dense binary32 matrices.  There is no fast
transform here on purpose: the point is to cost rotations the way a fused
dense multiply does, 2*N*g multiply-adds per token (2*N^2 when global).

Smoothing follows the max-ratio rule: channel j gets
s_j = max|X[:, j]|^alpha / max|W[j, :]|^(1-alpha), with s_j = 1 wherever
either max is zero; activations divide by s, weights multiply by it, so
X diag(1/s) diag(s) W = X W exactly in real arithmetic.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .tensorio import ensure_tensor


class RotationScope(enum.Enum):
    GLOBAL = "global"
    BLOCK_DIAGONAL = "block"


@dataclass(frozen=True)
class RotationSpec:
    scope: RotationScope
    dim: int
    seed: int
    randomized: bool = True

    def __post_init__(self):
        if self.dim < 1 or self.dim & (self.dim - 1):
            raise ValueError(f"rotation dim must be a power of two, got {self.dim}")
        if not 0 <= int(self.seed) <= 2**64 - 1:
            raise ValueError(f"seed must fit in u64, got {self.seed}")


def hadamard(dim: int) -> np.ndarray:
    """Sylvester Hadamard matrix of a power-of-two dim, +-1 entries (int8)."""
    if dim < 1 or dim & (dim - 1):
        raise ValueError(f"Hadamard dim must be a power of two, got {dim}")
    h = np.array([[1]], dtype=np.int8)
    while h.shape[0] < dim:
        h = np.block([[h, h], [h, -h]]).astype(np.int8)
    return h


def _sign_diagonal(seed: int, block_index: int, dim: int) -> np.ndarray:
    key = np.array([seed, block_index], dtype=np.uint64)
    words = np.random.Philox(key=key).random_raw(dim)
    return (1.0 - 2.0 * (words >> np.uint64(63)).astype(np.float32)).astype(np.float32)


@dataclass(frozen=True)
class RotationMatrix:
    """A rotation bound to its spec.

    ``base`` is the normalized Hadamard (dim x dim, float32).  Blocks are
    realized on demand for a given tensor width; an optimizer can instead
    pin explicit per-block matrices via ``with_blocks``.
    """

    spec: RotationSpec
    base: np.ndarray
    explicit: np.ndarray | None = None  # (n_blocks, dim, dim) when pinned

    def n_blocks(self, width: int) -> int:
        g = self.spec.dim
        if self.spec.scope is RotationScope.GLOBAL:
            if width != g:
                raise ValueError(f"global rotation of dim {g} applied to width {width}")
            return 1
        if width % g:
            raise ValueError(f"block dim {g} does not divide tensor width {width}")
        return width // g

    def blocks(self, width: int) -> np.ndarray:
        """Dense per-block matrices, shape (n_blocks, dim, dim)."""
        nb = self.n_blocks(width)
        if self.explicit is not None:
            if self.explicit.shape[0] != nb:
                raise ValueError(
                    f"rotation pinned for {self.explicit.shape[0]} blocks, width {width} needs {nb}"
                )
            return self.explicit
        g = self.spec.dim
        out = np.empty((nb, g, g), dtype=np.float32)
        for i in range(nb):
            if self.spec.randomized:
                out[i] = self.base * _sign_diagonal(self.spec.seed, i, g)[None, :]
            else:
                out[i] = self.base
        return out

    def with_blocks(self, blocks: np.ndarray) -> "RotationMatrix":
        blocks = np.ascontiguousarray(blocks, dtype=np.float32)
        if blocks.ndim != 3 or blocks.shape[1:] != (self.spec.dim, self.spec.dim):
            raise ValueError(f"expected (n, {self.spec.dim}, {self.spec.dim}) blocks")
        return RotationMatrix(self.spec, self.base, blocks)

    def dense(self, width: int) -> np.ndarray:
        """Assemble the full width x width (block-diagonal) matrix."""
        blocks = self.blocks(width)
        g = self.spec.dim
        out = np.zeros((width, width), dtype=np.float32)
        for i in range(blocks.shape[0]):
            out[i * g:(i + 1) * g, i * g:(i + 1) * g] = blocks[i]
        return out


def build_rotation(spec: RotationSpec) -> RotationMatrix:
    base = hadamard(spec.dim).astype(np.float32) / np.float32(np.sqrt(spec.dim))
    return RotationMatrix(spec, base)


def rotate_activations(x: np.ndarray, rot: RotationMatrix) -> np.ndarray:
    """x R, mixing each row's features; width must match the rotation."""
    x = ensure_tensor(x, "activations")
    blocks = rot.blocks(x.shape[1])
    g = rot.spec.dim
    xb = x.reshape(x.shape[0], -1, g)
    out = np.einsum("rbg,bgh->rbh", xb, blocks, optimize=True)
    return out.reshape(x.shape).astype(np.float32, copy=False)


def rotate_weights(w: np.ndarray, rot: RotationMatrix) -> np.ndarray:
    """R^T w for weights with input-dim rows, so (xR)(R^T w) = x w."""
    w = ensure_tensor(w, "weights")
    blocks = rot.blocks(w.shape[0])
    g = rot.spec.dim
    wb = w.reshape(-1, g, w.shape[1])
    out = np.einsum("bgh,bgm->bhm", blocks, wb, optimize=True)
    return out.reshape(w.shape).astype(np.float32, copy=False)


@dataclass(frozen=True)
class SmoothSpec:
    alpha: float
    scales: np.ndarray  # (width,) float32, strictly positive


def smooth_scales(x_calib: np.ndarray, w: np.ndarray, alpha: float = 0.85) -> SmoothSpec:
    """Per-channel migration scales from activation/weight magnitudes."""
    x_calib = ensure_tensor(x_calib, "calibration activations")
    w = ensure_tensor(w, "weights")
    if x_calib.shape[1] != w.shape[0]:
        raise ValueError(
            f"channel mismatch: activations have {x_calib.shape[1]}, weights {w.shape[0]}"
        )
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    ax = np.abs(x_calib).max(axis=0).astype(np.float64)
    aw = np.abs(w).max(axis=1).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = ax**alpha / aw ** (1.0 - alpha)
    s = np.where((ax == 0.0) | (aw == 0.0), 1.0, s)
    return SmoothSpec(alpha=float(alpha), scales=s.astype(np.float32))


def apply_smoothing(
    x: np.ndarray, w: np.ndarray, spec: SmoothSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Fold scales into the pair: (x diag(1/s), diag(s) w)."""
    x = ensure_tensor(x, "activations")
    w = ensure_tensor(w, "weights")
    s = spec.scales
    if x.shape[1] != s.shape[0] or w.shape[0] != s.shape[0]:
        raise ValueError("smoothing scales do not match tensor widths")
    return (x / s[None, :]).astype(np.float32), (w * s[:, None]).astype(np.float32)


def online_rotation_flops(width: int, scope: RotationScope, dim: int | None = None) -> int:
    """Dense multiply-add count to rotate one token of the given width."""
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    if scope is RotationScope.GLOBAL:
        return 2 * width * width
    if dim is None or dim < 1:
        raise ValueError("block-diagonal FLOPs need the block dim")
    if width % dim:
        raise ValueError(f"block dim {dim} does not divide width {width}")
    return 2 * width * dim
