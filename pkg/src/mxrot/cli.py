"""Command-line front end: tensor generation, codecs, block diagnostics,
Hessian-compensated weight quantization, rotation optimization, and the
method matrix.  Reports are JSON ({report_type, params, ...}) or flat
CSV; all file writes are atomic (temp file in place, then rename).

Exit codes: 0 success, 2 flag/usage error, 1 computation error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import os
import sys
import tempfile

import numpy as np

from .analysis import (
    block_error_report,
    block_scale_distribution,
    classify_blocks,
    regular_block_loss_delta,
    rotation_dim_sweep,
    threshold_fractions,
)
from .gptq import GptqParams, HessianAccumulator, accumulate_hessian, gptq_quantize
from .mxformats import (
    PRESETS,
    dequantize,
    pot_rounding_error_curve,
    qsnr,
    quantize,
)
from .pipeline import METHOD_NAMES, run_matrix
from .rotopt import optimize as rotopt_optimize
from .rotopt import quant_loss
from .tensorio import SyntheticSpec, generate_synthetic, read_tensor, write_tensor
from .transforms import (
    RotationScope,
    RotationSpec,
    build_rotation,
    online_rotation_flops,
    rotate_activations,
)


class _UsageError(Exception):
    """Bad flag combination discovered after parsing."""


# --- small plumbing ---


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _clean(v):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats -> null."""
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


def _write_json(path: str, report_type: str, params: dict, body: dict) -> None:
    doc = {"report_type": report_type, "params": _clean(params)}
    doc.update(_clean(body))
    _atomic_write(path, json.dumps(doc, indent=2) + "\n")


def _write_csv(path: str, header: list[str], rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else v for v in (_clean(list(row)))])
    _atomic_write(path, buf.getvalue())


def _emit(args, report_type: str, params: dict, body: dict, csv_spec=None) -> None:
    wrote = False
    if getattr(args, "report", None):
        _write_json(args.report, report_type, params, body)
        wrote = True
    if csv_spec is not None and getattr(args, "csv", None):
        header, rows = csv_spec
        _write_csv(args.csv, header, rows)
        wrote = True
    if not wrote:
        doc = {"report_type": report_type, "params": _clean(params)}
        doc.update(_clean(body))
        print(json.dumps(doc))


# --- flag parsing helpers ---


def _u64(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= v <= 2**64 - 1:
        raise argparse.ArgumentTypeError(f"seed must fit in u64, got {text}")
    return v


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated int list: {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: {text!r}")


def _name_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _format_cfg(args):
    cfg = PRESETS[args.format]
    bs = getattr(args, "block_size", None)
    if bs is not None:
        if bs < 1:
            raise _UsageError(f"--block-size must be >= 1, got {bs}")
        cfg = dataclasses.replace(cfg, block_size=bs)
    return cfg


def _add_format_flag(p, required=True):
    p.add_argument(
        "--format",
        required=required,
        choices=sorted(PRESETS),
        help="quantization format preset",
    )


def _add_rotation_flags(p):
    p.add_argument(
        "--rotation",
        "--rot",
        dest="rotation",
        choices=["none", "global", "block"],
        default="none",
        help="apply a rotation before the operation",
    )
    p.add_argument(
        "--rot-dim",
        type=int,
        default=None,
        help="rotation block dim (default: tensor width for global, 32 for block)",
    )
    p.add_argument("--seed", type=_u64, default=None, help="rotation sign seed")
    p.add_argument(
        "--no-random-signs",
        action="store_true",
        help="use the plain Hadamard without the random sign diagonal",
    )


def _rotation_spec(args, width: int) -> RotationSpec | None:
    if args.rotation == "none":
        return None
    if args.seed is None:
        raise _UsageError("--seed is required when --rotation is not none")
    dim = args.rot_dim if args.rot_dim is not None else (width if args.rotation == "global" else 32)
    scope = RotationScope.GLOBAL if args.rotation == "global" else RotationScope.BLOCK_DIAGONAL
    try:
        spec = RotationSpec(scope, dim, seed=args.seed, randomized=not args.no_random_signs)
    except ValueError as exc:
        raise _UsageError(f"--rot-dim: {exc}")
    if scope is RotationScope.GLOBAL and dim != width:
        raise _UsageError(f"--rot-dim {dim} does not match tensor width {width}")
    if width % dim:
        raise _UsageError(f"--rot-dim {dim} does not divide tensor width {width}")
    return spec


def _maybe_rotate(args, t: np.ndarray) -> tuple[np.ndarray, dict]:
    spec = _rotation_spec(args, t.shape[1])
    if spec is None:
        return t, {"rotation": "none"}
    params = {
        "rotation": args.rotation,
        "rot_dim": spec.dim,
        "seed": spec.seed,
        "random_signs": spec.randomized,
    }
    return rotate_activations(t, build_rotation(spec)), params


# --- subcommands ---


def _cmd_gen(args) -> int:
    spec = SyntheticSpec(
        rows=args.rows,
        cols=args.cols,
        base_std=args.base_std,
        outlier_channel_fraction=args.outlier_frac,
        outlier_gain=args.gain,
        seed=args.seed,
    )
    write_tensor(args.output, generate_synthetic(spec))
    print(f"wrote {args.output} ({args.rows}x{args.cols})")
    return 0


def _cmd_quantize(args) -> int:
    t = read_tensor(args.input)
    t, rot_params = _maybe_rotate(args, t)
    cfg = _format_cfg(args)
    deq = dequantize(quantize(t, cfg))
    err = t.astype(np.float64) - deq.astype(np.float64)
    params = {
        "input": args.input,
        "format": args.format,
        "block_size": cfg.block_size,
        **rot_params,
    }
    body = {
        "metrics": {
            "mse": float(np.mean(err * err)),
            "qsnr_db": qsnr(t, deq),
        }
    }
    if args.output:
        write_tensor(args.output, deq)
    _emit(args, "quantize", params, body)
    return 0


def _cmd_analyze(args) -> int:
    handler = {
        "blocks": _analyze_blocks,
        "thresholds": _analyze_thresholds,
        "sweep": _analyze_sweep,
        "scales": _analyze_scales,
        "potcurve": _analyze_potcurve,
        "lossdelta": _analyze_lossdelta,
    }[args.mode]
    return handler(args)


def _require_input(args) -> np.ndarray:
    if not args.input:
        raise _UsageError(f"--input is required for mode {args.mode}")
    return read_tensor(args.input)


def _analyze_blocks(args) -> int:
    if not args.format:
        raise _UsageError("--format is required for mode blocks")
    t = _require_input(args)
    t, rot_params = _maybe_rotate(args, t)
    cfg = _format_cfg(args)
    baseline = PRESETS[args.baseline] if args.baseline else None
    rep = classify_blocks(t, cfg.block_size, args.quantile)
    rep = block_error_report(t, cfg, rep, baseline=baseline)
    labels = np.where(rep.outlier_mask.ravel(), "Outlier", "Regular")
    params = {
        "input": args.input,
        "format": args.format,
        "block_size": cfg.block_size,
        "outlier_quantile": args.quantile,
        "baseline": args.baseline,
        **rot_params,
    }
    arrays = {
        "amax": rep.amax.ravel(),
        "outlier": rep.outlier_mask.ravel().astype(int),
        "mse": rep.mse.ravel(),
        "relative_error_max": rep.relative_error_max.ravel(),
    }
    if baseline is not None:
        arrays["mse_ratio"] = rep.mse_ratio.ravel()
        arrays["relative_error_max_ratio"] = rep.relative_error_max_ratio.ravel()
    body = {
        "threshold": rep.threshold,
        "counts": {"outlier": rep.outlier_count, "regular": rep.regular_count},
        "regular_mse_mean": rep.regular_mse_mean if rep.regular_count else None,
        "regular_mse_log10_mean": rep.regular_mse_log_mean if rep.regular_count else None,
        "arrays": arrays,
    }
    nb = rep.amax.shape[1]
    header = ["block", "row", "col_block", "amax", "label", "mse", "relative_error_max"]
    columns = [
        rep.amax.ravel(),
        labels,
        rep.mse.ravel(),
        rep.relative_error_max.ravel(),
    ]
    if baseline is not None:
        header += ["mse_ratio", "relative_error_max_ratio"]
        columns += [rep.mse_ratio.ravel(), rep.relative_error_max_ratio.ravel()]
    rows = (
        [i, i // nb, i % nb] + [col[i] for col in columns]
        for i in range(rep.n_blocks)
    )
    _emit(args, "blocks", params, body, csv_spec=(header, rows))
    return 0


def _analyze_thresholds(args) -> int:
    if not args.thresholds:
        raise _UsageError("--thresholds is required for mode thresholds")
    t = _require_input(args)
    t, rot_params = _maybe_rotate(args, t)
    curve = threshold_fractions(t, args.thresholds)
    params = {"input": args.input, **rot_params}
    body = {"arrays": {"thresholds": curve.thresholds, "fractions": curve.fractions}}
    rows = zip(curve.thresholds, curve.fractions)
    _emit(args, "thresholds", params, body, csv_spec=(["threshold", "fraction"], rows))
    return 0


def _analyze_sweep(args) -> int:
    if not args.format:
        raise _UsageError("--format is required for mode sweep")
    if not args.dims:
        raise _UsageError("--dims is required for mode sweep")
    if args.seed is None:
        raise _UsageError("--seed is required for mode sweep")
    t = _require_input(args)
    results = rotation_dim_sweep(t, _format_cfg(args), args.dims, args.seed)
    dims = [d for d, _ in results]
    mses = [m for _, m in results]
    params = {
        "input": args.input,
        "format": args.format,
        "dims": dims,
        "seed": args.seed,
    }
    body = {
        "arrays": {"dims": dims, "mse": mses},
        "argmin_dim": dims[int(np.argmin(mses))],
    }
    _emit(args, "sweep", params, body, csv_spec=(["dim", "mse"], zip(dims, mses)))
    return 0


def _analyze_scales(args) -> int:
    if args.block_size is None:
        raise _UsageError("--block-size is required for mode scales")
    t = _require_input(args)
    t, rot_params = _maybe_rotate(args, t)
    dist = block_scale_distribution(t, args.block_size)
    params = {"input": args.input, "block_size": args.block_size, **rot_params}
    body = {"arrays": {"amax": dist}}
    rows = ((i, v) for i, v in enumerate(dist))
    _emit(args, "scales", params, body, csv_spec=(["block", "amax"], rows))
    return 0


def _analyze_potcurve(args) -> int:
    xs, err = pot_rounding_error_curve(args.x_min, args.x_max, args.points)
    params = {"x_min": args.x_min, "x_max": args.x_max, "points": args.points}
    body = {"arrays": {"x": xs, "relative_error": err}}
    _emit(args, "potcurve", params, body, csv_spec=(["x", "relative_error"], zip(xs, err)))
    return 0


def _analyze_lossdelta(args) -> int:
    if not args.format:
        raise _UsageError("--format is required for mode lossdelta")
    if args.rotation == "none":
        raise _UsageError("--rotation must be global or block for mode lossdelta")
    t = _require_input(args)
    spec = _rotation_spec(args, t.shape[1])
    delta = regular_block_loss_delta(t, _format_cfg(args), spec, args.quantile)
    params = {
        "input": args.input,
        "format": args.format,
        "outlier_quantile": args.quantile,
        "rotation": args.rotation,
        "rot_dim": spec.dim,
        "seed": spec.seed,
        "random_signs": spec.randomized,
    }
    body = {
        "before_log10_mse": delta.before,
        "after_log10_mse": delta.after,
        "growth": delta.after - delta.before,
        "threshold": delta.threshold,
        "rotated_threshold": delta.rotated_threshold,
    }
    _emit(args, "lossdelta", params, body)
    return 0


def _cmd_gptq(args) -> int:
    w = read_tensor(args.weights)
    x = read_tensor(args.calib)
    if x.shape[1] != w.shape[0]:
        raise ValueError(
            f"calibration width {x.shape[1]} does not match weight rows {w.shape[0]}"
        )
    cfg = _format_cfg(args)
    acc = accumulate_hessian(HessianAccumulator(width=w.shape[0]), x)
    params_obj = GptqParams(
        damping_fraction=args.damping,
        lazy_block=args.lazy_block,
        act_order=args.act_order,
    )
    q = gptq_quantize(w, acc, cfg, params_obj)
    deq = np.ascontiguousarray(dequantize(q).T)
    err = w.astype(np.float64) - deq.astype(np.float64)
    params = {
        "weights": args.weights,
        "calib": args.calib,
        "format": args.format,
        "block_size": cfg.block_size,
        "damping": args.damping,
        "lazy_block": args.lazy_block,
        "act_order": args.act_order,
    }
    body = {
        "metrics": {
            "weight_mse": float(np.mean(err * err)),
            "weight_qsnr_db": qsnr(w, deq),
        }
    }
    if args.output:
        write_tensor(args.output, deq)
    _emit(args, "gptq", params, body)
    return 0


def _cmd_optimize(args) -> int:
    if args.rotation == "none":
        raise _UsageError("--rotation must be global or block for optimize")
    t = read_tensor(args.input)
    spec = _rotation_spec(args, t.shape[1])
    cfg = _format_cfg(args)
    rot = build_rotation(spec)
    initial = quant_loss(t, rot, cfg)
    state = rotopt_optimize(t, cfg, rot, steps=args.steps, step_size=args.lr)
    final = quant_loss(t, state.R, cfg)
    params = {
        "input": args.input,
        "format": args.format,
        "rotation": args.rotation,
        "rot_dim": spec.dim,
        "seed": spec.seed,
        "random_signs": spec.randomized,
        "steps": args.steps,
        "lr": args.lr,
    }
    body = {
        "initial_loss": initial,
        "final_loss": final,
        "improved": final < initial,
        "arrays": {"loss_history": list(state.loss_history)},
    }
    _emit(args, "optimize", params, body)
    return 0


def _cmd_matrix(args) -> int:
    for m in args.methods:
        if m not in METHOD_NAMES:
            raise _UsageError(f"unknown method {m!r}; valid: {', '.join(METHOD_NAMES)}")
    for f in args.formats:
        if f not in PRESETS:
            raise _UsageError(f"unknown format {f!r}; valid: {', '.join(sorted(PRESETS))}")
    x = read_tensor(args.activations)
    w = read_tensor(args.weights)
    results = run_matrix(x, w, args.methods, args.formats, seed=args.seed)
    params = {
        "activations": args.activations,
        "weights": args.weights,
        "methods": args.methods,
        "formats": args.formats,
        "seed": args.seed,
    }
    body = {"records": [r.to_record() for r in results]}
    header = [
        "method",
        "act_format",
        "weight_format",
        "mse",
        "qsnr_db",
        "rotation_flops",
        "matmul_flops",
    ]
    rows = (
        [
            r.method,
            r.act_format,
            r.weight_format,
            r.output_mse,
            r.output_qsnr_db,
            r.rotation_flops,
            r.matmul_flops,
        ]
        for r in results
    )
    _emit(args, "matrix", params, body, csv_spec=(header, rows))
    return 0


def _cmd_flops(args) -> int:
    if args.rotation == "block" and args.rot_dim is None:
        raise _UsageError("--rot-dim is required for block rotation flops")
    scope = RotationScope.GLOBAL if args.rotation == "global" else RotationScope.BLOCK_DIAGONAL
    dim = args.width if args.rotation == "global" else args.rot_dim
    per_token = online_rotation_flops(args.width, scope, dim)
    dense = 2 * args.width * args.width
    params = {"width": args.width, "rotation": args.rotation, "rot_dim": dim}
    body = {
        "rotation_flops_per_token": per_token,
        "global_rotation_flops_per_token": dense,
        "ratio_vs_global": per_token / dense,
    }
    _emit(args, "flops", params, body)
    return 0


# --- parser assembly ---


def _build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="mxrot",
        description="Block-scaled 4-bit quantization experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic tensor file", formatter_class=fmt)
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--base-std", type=float, default=1.0)
    p.add_argument("--outlier-frac", type=float, default=0.0, help="fraction of hot channels")
    p.add_argument("--gain", type=float, default=1.0, help="hot channel gain")
    p.add_argument("--seed", type=_u64, required=True)
    p.add_argument("-o", "--output", required=True, help="output .mxtb path")
    p.set_defaults(handler=_cmd_gen)

    p = sub.add_parser("quantize", help="roundtrip a tensor through a format", formatter_class=fmt)
    p.add_argument("-i", "--input", required=True)
    _add_format_flag(p)
    p.add_argument("--block-size", type=int, default=None, help="override preset block size")
    _add_rotation_flags(p)
    p.add_argument("--report", default=None, help="JSON report path")
    p.add_argument("-o", "--output", default=None, help="write the dequantized tensor here")
    p.set_defaults(handler=_cmd_quantize)

    p = sub.add_parser("analyze", help="block-level diagnostics", formatter_class=fmt)
    p.add_argument(
        "--mode",
        required=True,
        choices=["blocks", "thresholds", "sweep", "scales", "potcurve", "lossdelta"],
    )
    p.add_argument("-i", "--input", default=None)
    _add_format_flag(p, required=False)
    p.add_argument("--block-size", type=int, default=None, help="block size (scales mode) or preset override")
    p.add_argument("--quantile", type=float, default=0.001, help="outlier quantile")
    p.add_argument("--baseline", choices=sorted(PRESETS), default=None, help="second config for error ratios")
    p.add_argument("--thresholds", type=_float_list, default=None, help="ascending comma list")
    p.add_argument("--dims", type=_int_list, default=None, help="rotation dims, comma list")
    p.add_argument("--x-min", type=float, default=0.5)
    p.add_argument("--x-max", type=float, default=8.0)
    p.add_argument("--points", type=int, default=2001)
    _add_rotation_flags(p)
    p.add_argument("--report", default=None, help="JSON report path")
    p.add_argument("--csv", default=None, help="CSV output path")
    p.set_defaults(handler=_cmd_analyze)

    p = sub.add_parser("gptq", help="Hessian-compensated weight quantization", formatter_class=fmt)
    p.add_argument("--weights", required=True, help="(in, out) weight tensor file")
    p.add_argument("--calib", required=True, help="(tokens, in) calibration tensor file")
    _add_format_flag(p)
    p.add_argument("--block-size", type=int, default=None, help="override preset block size")
    p.add_argument("--damping", type=float, default=0.01, help="Hessian damping fraction")
    p.add_argument("--lazy-block", type=int, default=128, help="columns per deferred update slab")
    p.add_argument("--act-order", action="store_true", help="visit dims by descending Hessian diagonal")
    p.add_argument("--report", default=None, help="JSON report path")
    p.add_argument("-o", "--output", default=None, help="write dequantized weights here")
    p.set_defaults(handler=_cmd_gptq)

    p = sub.add_parser("optimize", help="Cayley-descent rotation tuning", formatter_class=fmt)
    p.add_argument("--input", required=True)
    _add_format_flag(p)
    p.add_argument("--block-size", type=int, default=None, help="override preset block size")
    _add_rotation_flags(p)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.1, help="Cayley step size")
    p.add_argument("--report", default=None, help="JSON report path")
    p.set_defaults(handler=_cmd_optimize)

    p = sub.add_parser("matrix", help="method x format experiment grid", formatter_class=fmt)
    p.add_argument("-x", "--activations", required=True)
    p.add_argument("-w", "--weights", required=True)
    p.add_argument("--methods", type=_name_list, required=True, help="comma list of method names")
    p.add_argument("--formats", type=_name_list, required=True, help="comma list of format presets")
    p.add_argument("--seed", type=_u64, required=True, help="rotation seed for the presets")
    p.add_argument("--report", default=None, help="JSON report path")
    p.add_argument("--csv", default=None, help="CSV output path")
    p.set_defaults(handler=_cmd_matrix)

    p = sub.add_parser("flops", help="online rotation cost per token", formatter_class=fmt)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--rotation", "--rot", dest="rotation", choices=["global", "block"], required=True)
    p.add_argument("--rot-dim", type=int, default=None)
    p.add_argument("--report", default=None, help="JSON report path")
    p.set_defaults(handler=_cmd_flops)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
