"""Fake-quantized linear-layer experiments over a method x format grid.

A method is smoothing -> rotation fusion -> activation quantization ->
weight quantization (plain rounding or Hessian-compensated), with the
reference output X @ W taken in binary32 before any transform.  Weights
quantize in transposed (out, in) layout so scale blocks run along the
input dimension, matching how the activations they multiply are blocked.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .gptq import GptqParams, HessianAccumulator, accumulate_hessian, gptq_quantize
from .mxformats import PRESETS, QuantConfig, dequantize, qsnr, quantize
from .rotopt import optimize as optimize_rotation
from .tensorio import SyntheticSpec, ensure_tensor, generate_synthetic, outlier_columns
from .transforms import (
    RotationScope,
    RotationSpec,
    SmoothSpec,
    apply_smoothing,
    build_rotation,
    online_rotation_flops,
    rotate_activations,
    rotate_weights,
    smooth_scales,
)

METHOD_NAMES = (
    "rtn",
    "smoothquant",
    "gptq",
    "quarot",
    "quarot_plus",
    "brq",
    "brq_spin",
)


@dataclass(frozen=True)
class OptimizeSpec:
    steps: int = 64
    step_size: float = 2.0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not self.step_size > 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")


@dataclass(frozen=True)
class MethodSpec:
    """One cell of the method matrix.

    ``act_cfg``/``weight_cfg`` of None mean that side passes through
    unquantized.  ``smoothing`` is either a migration strength (alpha,
    calibrated on the given activations) or a precomputed SmoothSpec.
    ``optimize_rotation`` refines the rotation on the activations before
    anything quantizes.
    """

    name: str
    rotation: RotationSpec | None = None
    smoothing: float | SmoothSpec | None = None
    compensator: str = "rtn"
    act_cfg: QuantConfig | None = None
    weight_cfg: QuantConfig | None = None
    optimize_rotation: OptimizeSpec | None = None

    def __post_init__(self):
        if self.compensator not in ("rtn", "gptq"):
            raise ValueError(f"compensator must be 'rtn' or 'gptq', got {self.compensator!r}")
        if isinstance(self.smoothing, float) and not 0.0 <= self.smoothing <= 1.0:
            raise ValueError(f"smoothing alpha must be in [0, 1], got {self.smoothing}")


def method_preset(
    name: str,
    *,
    width: int,
    seed: int,
    act_cfg: QuantConfig | None,
    weight_cfg: QuantConfig | None,
) -> MethodSpec:
    """The named method row, bound to a tensor width and rotation seed."""
    rot_global = RotationSpec(RotationScope.GLOBAL, width, seed=seed)
    rot_block = RotationSpec(RotationScope.BLOCK_DIAGONAL, 32, seed=seed)
    table = {
        "rtn": MethodSpec("rtn"),
        "smoothquant": MethodSpec("smoothquant", smoothing=0.85),
        "gptq": MethodSpec("gptq", compensator="gptq"),
        "quarot": MethodSpec("quarot", rotation=rot_global),
        "quarot_plus": MethodSpec("quarot_plus", rotation=rot_global, compensator="gptq"),
        "brq": MethodSpec("brq", rotation=rot_block, compensator="gptq"),
        "brq_spin": MethodSpec(
            "brq_spin",
            rotation=rot_block,
            compensator="gptq",
            optimize_rotation=OptimizeSpec(),
        ),
    }
    if name not in table:
        raise ValueError(f"unknown method {name!r}; valid: {', '.join(METHOD_NAMES)}")
    return replace(table[name], act_cfg=act_cfg, weight_cfg=weight_cfg)


def per_row_int4(width: int) -> QuantConfig:
    """Plain symmetric INT4 with one scale per row (amax / 7)."""
    return replace(PRESETS["bint4"], block_size=width)


def format_label(cfg: QuantConfig | None) -> str:
    if cfg is None:
        return "none"
    for name, preset in PRESETS.items():
        if cfg == preset:
            return name
    return f"{cfg.element.value}/{cfg.scale.value}/b{cfg.block_size}"


@dataclass(frozen=True)
class LayerResult:
    method: str
    act_format: str
    weight_format: str
    output_mse: float
    output_qsnr_db: float
    rotation_flops: int
    matmul_flops: int

    def __post_init__(self):
        if self.output_mse < 0:
            raise ValueError("output_mse must be >= 0")

    def to_record(self) -> dict:
        return {
            "method": self.method,
            "act_format": self.act_format,
            "weight_format": self.weight_format,
            "mse": self.output_mse,
            "qsnr_db": self.output_qsnr_db,
            "flops": {"rotation": self.rotation_flops, "matmul": self.matmul_flops},
        }


def _quantize_weights_rtn(w: np.ndarray, cfg: QuantConfig) -> np.ndarray:
    wq = dequantize(quantize(np.ascontiguousarray(w.T), cfg))
    return np.ascontiguousarray(wq.T)


def _quantize_weights_gptq(w: np.ndarray, x_cal: np.ndarray, cfg: QuantConfig) -> np.ndarray:
    acc = accumulate_hessian(HessianAccumulator(width=w.shape[0]), x_cal)
    q = gptq_quantize(w, acc, cfg, GptqParams())
    return np.ascontiguousarray(dequantize(q).T)


def run_layer(x: np.ndarray, w: np.ndarray, method: MethodSpec) -> LayerResult:
    """Execute one method cell; reference output is pre-transform X @ W."""
    x = ensure_tensor(x, "activations")
    w = ensure_tensor(w, "weights")
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"width mismatch: activations {x.shape} vs weights {w.shape}")
    reference = x @ w

    if method.smoothing is not None:
        spec = method.smoothing
        if not isinstance(spec, SmoothSpec):
            spec = smooth_scales(x, w, alpha=spec)
        x, w = apply_smoothing(x, w, spec)

    rotation_flops = 0
    if method.rotation is not None:
        rot = build_rotation(method.rotation)
        if method.optimize_rotation is not None and method.act_cfg is not None:
            opt = method.optimize_rotation
            rot = optimize_rotation(
                x, method.act_cfg, rot, steps=opt.steps, step_size=opt.step_size
            ).R
        x = rotate_activations(x, rot)
        w = rotate_weights(w, rot)
        dim = None if method.rotation.scope is RotationScope.GLOBAL else method.rotation.dim
        rotation_flops = x.shape[0] * online_rotation_flops(
            x.shape[1], method.rotation.scope, dim
        )

    xq = dequantize(quantize(x, method.act_cfg)) if method.act_cfg is not None else x

    if method.weight_cfg is None:
        wq = w
    elif method.compensator == "gptq":
        wq = _quantize_weights_gptq(w, xq, method.weight_cfg)
    else:
        wq = _quantize_weights_rtn(w, method.weight_cfg)

    y = xq @ wq
    err = y.astype(np.float64) - reference.astype(np.float64)
    return LayerResult(
        method=method.name,
        act_format=format_label(method.act_cfg),
        weight_format=format_label(method.weight_cfg),
        output_mse=float(np.mean(err * err)),
        output_qsnr_db=qsnr(reference, y),
        rotation_flops=rotation_flops,
        matmul_flops=2 * x.shape[0] * w.shape[0] * w.shape[1],
    )


def _thread_count(cells: int) -> int:
    raw = os.environ.get("MXROT_THREADS", "0")
    try:
        cap = int(raw)
    except ValueError:
        raise ValueError(f"MXROT_THREADS must be an integer, got {raw!r}")
    if cap < 0:
        raise ValueError(f"MXROT_THREADS must be >= 0, got {cap}")
    if cap == 0:
        cap = min(4, os.cpu_count() or 1)
    return max(1, min(cap, cells))


def run_matrix(
    x: np.ndarray,
    w: np.ndarray,
    methods,
    formats,
    seed: int = 0,
) -> list[LayerResult]:
    """Every method x format cell, deterministically ordered as given."""
    x = ensure_tensor(x, "activations")
    w = ensure_tensor(w, "weights")
    specs = []
    for m in methods:
        for f in formats:
            if isinstance(f, str):
                if f not in PRESETS:
                    raise ValueError(f"unknown format {f!r}; valid: {', '.join(PRESETS)}")
                cfg = PRESETS[f]
            else:
                cfg = f
            if isinstance(m, MethodSpec):
                specs.append(replace(m, act_cfg=cfg, weight_cfg=cfg))
            else:
                specs.append(
                    method_preset(
                        m, width=x.shape[1], seed=seed, act_cfg=cfg, weight_cfg=cfg
                    )
                )
    if not specs:
        return []
    workers = _thread_count(len(specs))
    if workers == 1:
        return [run_layer(x, w, s) for s in specs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: run_layer(x, w, s), specs))


def standard_layer_pair(
    seed: int,
    rows: int = 2048,
    cols: int = 1024,
    out_features: int = 1024,
    outlier_channel_fraction: float = 0.01,
    outlier_gain: float = 20.0,
) -> tuple[np.ndarray, np.ndarray]:
    """The desk-scale benchmark layer: hot-channel activations and a
    contribution-equalized weight matrix.

    Activations follow the synthetic outlier recipe.  Weights start as
    Gaussian(0, 1/sqrt(cols)), then the rows multiplying the hot input
    channels are divided by the gain: a trained layer does not amplify
    its highest-variance inputs, so each channel's contribution to the
    output stays comparable.  Without this equalization the hot channels
    would dominate the output and mask every block-level effect this
    suite exists to measure.
    """
    spec = SyntheticSpec(
        rows,
        cols,
        outlier_channel_fraction=outlier_channel_fraction,
        outlier_gain=outlier_gain,
        seed=seed,
    )
    x = generate_synthetic(spec)
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 1], dtype=np.uint64)))
    w = rng.standard_normal((cols, out_features)) / np.sqrt(cols)
    idx = outlier_columns(spec)
    if idx.size:
        w[idx, :] /= outlier_gain
    return x, w.astype(np.float32)
