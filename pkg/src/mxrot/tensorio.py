"""Tensor container, binary file format, and seeded synthetic generation.

Tensors are plain 2-D numpy arrays of binary32 values, C-ordered, with every
entry finite.  ``ensure_tensor`` is the validation chokepoint used by every
public entry point in the package.

File format (extension ``.mxtb``), little-endian throughout:

    offset  size  field
    0       4     magic ``MXTB``
    4       4     version, u32, must be 1
    8       8     rows, u64, >= 1
    16      8     cols, u64, >= 1
    24      ...   rows*cols float32 payload, row-major

No padding, no checksum.

Randomness: all draws come from numpy's Philox counter-based 64-bit bit
generator, consumed as raw 64-bit words (``random_raw``), so regeneration is
stable for a given seed.  Gaussian samples use the inverse-CDF transform:
u = ((word >> 11) + 0.5) * 2**-53 mapped through scipy's ndtri.  Streams are
split by keying Philox with (seed, stream_index); stream 0 carries the
Gaussian body, stream 1 the outlier-channel placement.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

MAGIC = b"MXTB"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


class TensorFormatError(ValueError):
    """Malformed tensor file; ``offset`` locates the first bad byte."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def ensure_tensor(t: np.ndarray, name: str = "tensor") -> np.ndarray:
    """Validate and return t as a C-ordered 2-D float32 array with finite entries."""
    arr = np.asarray(t)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must have at least one row and one column, got {arr.shape}")
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic activation-like matrix.

    A Gaussian(0, base_std) body with floor(outlier_channel_fraction * cols)
    columns scaled by outlier_gain.  The scaled columns form one contiguous,
    seed-chosen span (wrapping at the right edge), so a handful of hot
    channels lands in only one or two 32-wide blocks per row; scattering them
    uniformly would make a third of all blocks outlier blocks at fraction
    0.01, which is not the channel-concentrated shape this models.
    """

    rows: int
    cols: int
    base_std: float = 1.0
    outlier_channel_fraction: float = 0.0
    outlier_gain: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"rows and cols must be >= 1, got {self.rows}x{self.cols}")
        if not (self.base_std > 0.0 and np.isfinite(self.base_std)):
            raise ValueError(f"base_std must be positive and finite, got {self.base_std}")
        if not (0.0 <= self.outlier_channel_fraction <= 1.0):
            raise ValueError(
                f"outlier_channel_fraction must be in [0, 1], got {self.outlier_channel_fraction}"
            )
        if not (self.outlier_gain > 0.0 and np.isfinite(self.outlier_gain)):
            raise ValueError(f"outlier_gain must be positive and finite, got {self.outlier_gain}")
        if not (0 <= int(self.seed) <= 2**64 - 1):
            raise ValueError(f"seed must fit in u64, got {self.seed}")


def _raw64(seed: int, stream: int, count: int) -> np.ndarray:
    bg = np.random.Philox(key=np.array([seed, stream], dtype=np.uint64))
    return bg.random_raw(count)


def _standard_normal(seed: int, stream: int, count: int) -> np.ndarray:
    words = _raw64(seed, stream, count)
    u = ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


def outlier_columns(spec: SyntheticSpec) -> np.ndarray:
    """Indices of the gain-scaled columns: a contiguous seed-chosen span."""
    count = int(np.floor(spec.outlier_channel_fraction * spec.cols))
    if count == 0:
        return np.empty(0, dtype=np.int64)
    start = int(_raw64(spec.seed, 1, 1)[0] % np.uint64(spec.cols))
    return (start + np.arange(count, dtype=np.int64)) % spec.cols


def generate_synthetic(spec: SyntheticSpec) -> np.ndarray:
    """Deterministically generate the matrix described by spec."""
    body = _standard_normal(spec.seed, 0, spec.rows * spec.cols)
    t = (body * spec.base_std).reshape(spec.rows, spec.cols)
    hot = outlier_columns(spec)
    if hot.size:
        t[:, hot] *= spec.outlier_gain
    return ensure_tensor(t.astype(np.float32), "synthetic tensor")


def write_tensor(path: str | os.PathLike, t: np.ndarray) -> None:
    """Write t to path atomically (temp file in the same directory, then rename)."""
    arr = ensure_tensor(t)
    header = _HEADER.pack(MAGIC, VERSION, arr.shape[0], arr.shape[1])
    payload = arr.astype("<f4", copy=False).tobytes(order="C")
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    """Read a tensor file, validating structure and payload."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise TensorFormatError("truncated header", len(blob))
    magic, version, rows, cols = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version}", 4)
    if rows < 1 or cols < 1:
        raise TensorFormatError(f"degenerate shape {rows}x{cols}", 8)
    expected = _HEADER.size + 4 * rows * cols
    if len(blob) != expected:
        raise TensorFormatError(
            f"payload has {len(blob) - _HEADER.size} bytes, expected {4 * rows * cols}",
            min(len(blob), expected),
        )
    flat = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    bad = ~np.isfinite(flat)
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        raise TensorFormatError(
            f"non-finite value at element {first}", _HEADER.size + 4 * first
        )
    return flat.reshape(rows, cols).astype(np.float32)
