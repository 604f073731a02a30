"""4-bit element codecs with shared per-block scales.

Element codes
    FP4_E2M1: 1 sign bit, 2 exponent bits, 1 mantissa bit, exponent bias 1.
      Exponent 0 is subnormal (one step: 0 and 0.5), so the positive
      magnitudes are {0, 0.5, 1, 1.5, 2, 3, 4, 6}.  Code layout here is
      s e e m (bit 3 = sign); both zero codes decode to +0.0.
    INT4: symmetric integer codes -7..+7 (the -8 code is unused so the
      grid mirrors cleanly).

Block scales, shared by block_size consecutive elements within a row:
    POT_E8M0: 2^e with integer e = clamp(floor(log2 amax) - 2, -127, 127).
      The -2 is the top element binade for both element codes.  The floor
      rule deliberately lets a block maximum land above the top code and
      saturate, trading large-value fidelity for a tighter grid below.
    FP16: round-to-nearest-even binary16 of amax / max_code, clamped to
      the positive finite binary16 range.

All-zero blocks take the minimum scale and all-zero codes.  Rounding is
half-to-even everywhere; out-of-range magnitudes clip to the top code.

Format presets: MXFP4 (E2M1/PoT), MXINT4 (INT4/PoT), BFP4 (E2M1/FP16),
BINT4 (INT4/FP16), all with block_size 32.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .tensorio import ensure_tensor

_E2M1_POS = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0], dtype=np.float64)
_E2M1_MIDS = (_E2M1_POS[:-1] + _E2M1_POS[1:]) / 2.0
_E2M1_TABLE = np.concatenate([_E2M1_POS, -_E2M1_POS]).astype(np.float32)
_E2M1_TABLE[8] = 0.0  # negative zero decodes to +0.0

FP16_MAX = 65504.0
FP16_TINY = 2.0**-24  # smallest positive binary16 (subnormal)
POT_EXP_MIN = -127
POT_EXP_MAX = 127
_ELEM_TOP_BINADE = 2  # floor(log2 6) == floor(log2 7) == 2


class ElementKind(enum.Enum):
    FP4_E2M1 = "fp4_e2m1"
    INT4 = "int4"

    @property
    def max_code_value(self) -> float:
        return 6.0 if self is ElementKind.FP4_E2M1 else 7.0

    def decode(self, codes: np.ndarray) -> np.ndarray:
        """Map stored codes to their real element values (binary32)."""
        if self is ElementKind.FP4_E2M1:
            return _E2M1_TABLE[codes]
        return codes.astype(np.float32)


class ScaleKind(enum.Enum):
    POT_E8M0 = "pot_e8m0"
    FP16 = "fp16"


@dataclass(frozen=True)
class QuantConfig:
    element: ElementKind
    scale: ScaleKind
    block_size: int = 32

    def __post_init__(self):
        if self.block_size < 1:
            raise ValueError(f"block_size must be >= 1, got {self.block_size}")


PRESETS: dict[str, QuantConfig] = {
    "mxfp4": QuantConfig(ElementKind.FP4_E2M1, ScaleKind.POT_E8M0),
    "mxint4": QuantConfig(ElementKind.INT4, ScaleKind.POT_E8M0),
    "bfp4": QuantConfig(ElementKind.FP4_E2M1, ScaleKind.FP16),
    "bint4": QuantConfig(ElementKind.INT4, ScaleKind.FP16),
}


@dataclass(frozen=True)
class QuantizedTensor:
    config: QuantConfig
    codes: np.ndarray   # int8, (rows, cols)
    scales: np.ndarray  # float32, (rows, ceil(cols / block_size))

    def __post_init__(self):
        rows, cols = self.codes.shape
        nb = -(-cols // self.config.block_size)
        if self.scales.shape != (rows, nb):
            raise ValueError(
                f"scales shape {self.scales.shape} does not match "
                f"{rows}x{cols} codes with block_size {self.config.block_size}"
            )
        if not np.all(self.scales > 0):
            raise ValueError("scales must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return self.codes.shape


def e2m1_values() -> list[float]:
    """All 16 code values in code order (sign, exponent, mantissa)."""
    return [float(v) for v in _E2M1_TABLE]


def scales_for_amax(amax: np.ndarray, cfg: QuantConfig) -> np.ndarray:
    """Block scales (float32) for an array of per-block absolute maxima."""
    amax = np.asarray(amax, dtype=np.float64)
    if cfg.scale is ScaleKind.POT_E8M0:
        _, exp = np.frexp(amax)        # amax = m * 2^exp with m in [0.5, 1)
        e = exp - 1 - _ELEM_TOP_BINADE  # floor(log2 amax) - top binade
        e = np.where(amax == 0.0, POT_EXP_MIN, e)
        e = np.clip(e, POT_EXP_MIN, POT_EXP_MAX)
        return np.ldexp(np.float32(1.0), e.astype(np.int32))
    with np.errstate(over="ignore"):
        s16 = (amax / cfg.element.max_code_value).astype(np.float16)
    s = s16.astype(np.float32)
    s = np.where(s == 0.0, np.float32(FP16_TINY), s)
    s = np.where(np.isinf(s), np.float32(FP16_MAX), s)
    return s


def block_scale(block: np.ndarray, cfg: QuantConfig) -> float:
    """Shared scale for a single block of up to block_size values."""
    block = np.asarray(block, dtype=np.float64).ravel()
    if not 1 <= block.size <= cfg.block_size:
        raise ValueError(f"block length {block.size} outside [1, {cfg.block_size}]")
    if not np.all(np.isfinite(block)):
        raise ValueError("block contains non-finite values")
    return float(scales_for_amax(np.abs(block).max(), cfg))


def encode_scaled(y: np.ndarray, element: ElementKind) -> np.ndarray:
    """Round already-scaled values to the element grid, returning int8 codes.

    Rounds half-to-even (for E2M1, ties go to the even-mantissa neighbor)
    and clips magnitudes beyond the top code.
    """
    y = np.asarray(y, dtype=np.float64)
    if element is ElementKind.INT4:
        return np.clip(np.rint(y), -7.0, 7.0).astype(np.int8)
    a = np.abs(y)
    idx = np.searchsorted(_E2M1_MIDS, a, side="left")
    guard = np.minimum(idx, len(_E2M1_MIDS) - 1)
    tie = (idx < len(_E2M1_MIDS)) & (a == _E2M1_MIDS[guard])
    idx = idx + (tie & (idx % 2 == 1))
    neg = y < 0.0
    codes = np.where(idx == 0, 0, idx + 8 * neg)
    return codes.astype(np.int8)


def quantize(t: np.ndarray, cfg: QuantConfig) -> QuantizedTensor:
    """Quantize a tensor; blocks tile each row contiguously along columns."""
    arr = ensure_tensor(t)
    rows, cols = arr.shape
    bs = cfg.block_size
    nb = -(-cols // bs)
    padded = np.zeros((rows, nb * bs), dtype=np.float64)
    padded[:, :cols] = arr
    blocks = padded.reshape(rows, nb, bs)
    amax = np.abs(blocks).max(axis=2)
    scales = scales_for_amax(amax, cfg)
    y = blocks / scales[:, :, None].astype(np.float64)
    codes = encode_scaled(y, cfg.element).reshape(rows, nb * bs)[:, :cols]
    return QuantizedTensor(config=cfg, codes=codes, scales=scales)


def expand_scales(q: QuantizedTensor) -> np.ndarray:
    """Per-element scale array (float32, same shape as codes)."""
    rows, cols = q.codes.shape
    return np.repeat(q.scales, q.config.block_size, axis=1)[:, :cols]


def dequantize(q: QuantizedTensor) -> np.ndarray:
    """Reconstruct real values as binary32 products code_value * scale."""
    values = q.config.element.decode(q.codes)
    return values * expand_scales(q)


def qsnr(reference: np.ndarray, reconstruction: np.ndarray) -> float:
    """Quantization signal-to-noise ratio in dB; +inf when error is zero."""
    ref = np.asarray(reference, dtype=np.float64)
    rec = np.asarray(reconstruction, dtype=np.float64)
    if ref.shape != rec.shape:
        raise ValueError(f"shape mismatch {ref.shape} vs {rec.shape}")
    err = np.sum((ref - rec) ** 2)
    if err == 0.0:
        return math.inf
    sig = np.sum(ref**2)
    if sig == 0.0:
        return -math.inf
    return float(10.0 * np.log10(sig / err))


def pot_rounding_error_curve(
    x_min: float, x_max: float, n_points: int
) -> tuple[np.ndarray, np.ndarray]:
    """Relative error of snapping x to the nearest power of two.

    Samples n_points log-spaced x in [x_min, x_max] and returns (x, err)
    with err = |x - p| / x for p the linearly nearest power of two.  The
    error is 0 at powers of two and peaks at 1/3 at x = 3 * 2^k.
    """
    if not (0.0 < x_min < x_max and np.isfinite(x_max)):
        raise ValueError(f"need 0 < x_min < x_max finite, got [{x_min}, {x_max}]")
    if n_points < 2:
        raise ValueError(f"n_points must be >= 2, got {n_points}")
    x = np.logspace(np.log10(x_min), np.log10(x_max), n_points)
    m, exp = np.frexp(x)
    lo = np.ldexp(1.0, exp - 1)  # 2^floor(log2 x), exact for m in [0.5, 1)
    lo = np.where(m == 0.5, x, lo)
    err = np.minimum(x - lo, 2.0 * lo - x) / x
    return x, err
