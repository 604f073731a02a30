"""One matplotlib figure per report.  Builders only plot fields present
in the report; nothing numeric is recomputed here."""

from __future__ import annotations

import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .reports import Report, ReportBundle, SchemaError, column, field

plt.rcParams["svg.hashsalt"] = "mxrotviz"

OUTLIER_COLOR = "#d62728"
REGULAR_COLOR = "#1f77b4"


def _attach_provenance(fig, report: Report, title: str) -> None:
    fig.suptitle(title, fontsize=11)
    if report.kind == "json":
        params = report.data.get("params", {})
        note = json.dumps(params, separators=(",", ":"))
    else:
        note = os.path.basename(report.source)
    if len(note) > 110:
        note = note[:107] + "..."
    fig.text(0.5, 0.005, note, ha="center", fontsize=6, color="0.4")


def _metric_bars(report: Report, names: list[str], title: str):
    fig, axes = plt.subplots(1, len(names), figsize=(3.0 * len(names), 3.0))
    for ax, name in zip(np.atleast_1d(axes), names):
        value = field(report, f"metrics.{name}")
        shown = 0.0 if value is None else value
        ax.bar([name], [shown], color=REGULAR_COLOR)
        ax.annotate(
            "null" if value is None else f"{value:.4g}",
            xy=(0, shown), ha="center", va="bottom",
        )
        ax.set_ylabel(name)
    _attach_provenance(fig, report, title)
    return fig


def _fig_quantize(report: Report):
    return _metric_bars(report, ["mse", "qsnr_db"], "quantize roundtrip")


def _fig_gptq(report: Report):
    return _metric_bars(report, ["weight_mse", "weight_qsnr_db"], "gptq weight roundtrip")


def _block_scatter(ax_mse, ax_rel, amax, mse, rel, is_outlier, threshold=None):
    amax = np.asarray(amax, dtype=float)
    mse = np.asarray(mse, dtype=float)
    rel = np.asarray(rel, dtype=float)
    mask = np.asarray(is_outlier, dtype=bool)
    for m, color, label in ((~mask, REGULAR_COLOR, "regular"), (mask, OUTLIER_COLOR, "outlier")):
        if m.any():
            ax_mse.scatter(amax[m], mse[m], s=6, color=color, label=label, alpha=0.6)
            ax_rel.scatter(amax[m], rel[m], s=6, color=color, alpha=0.6)
    if threshold is not None:
        ax_mse.axvline(threshold, color="0.3", linestyle="--", linewidth=0.8)
    ax_mse.set_xscale("log")
    ax_mse.set_yscale("log")
    ax_rel.set_xscale("log")
    ax_mse.set_xlabel("block amax")
    ax_mse.set_ylabel("block MSE")
    ax_rel.set_xlabel("block amax")
    ax_rel.set_ylabel("max relative error")
    ax_mse.legend(fontsize=7)


def _fig_blocks_json(report: Report):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    _block_scatter(
        ax1,
        ax2,
        field(report, "arrays.amax"),
        field(report, "arrays.mse"),
        field(report, "arrays.relative_error_max"),
        field(report, "arrays.outlier"),
        threshold=field(report, "threshold"),
    )
    _attach_provenance(fig, report, "per-block quantization error")
    return fig


def _fig_blocks_csv(report: Report):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    labels = column(report, "label")
    _block_scatter(
        ax1,
        ax2,
        column(report, "amax"),
        column(report, "mse"),
        column(report, "relative_error_max"),
        [v == "Outlier" for v in labels],
    )
    _attach_provenance(fig, report, "per-block quantization error")
    return fig


def _threshold_axes(ax, thresholds, fractions):
    ax.plot(thresholds, fractions, marker="o", markersize=3, color=REGULAR_COLOR)
    ax.set_xlabel("threshold")
    ax.set_ylabel("fraction of |t| above")


def _fig_thresholds_json(report: Report):
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    _threshold_axes(ax, field(report, "arrays.thresholds"), field(report, "arrays.fractions"))
    _attach_provenance(fig, report, "threshold exceedance curve")
    return fig


def _fig_thresholds_csv(report: Report):
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    _threshold_axes(ax, column(report, "threshold"), column(report, "fraction"))
    _attach_provenance(fig, report, "threshold exceedance curve")
    return fig


def _sweep_axes(ax, dims, mses, best_dim):
    ax.plot(dims, mses, marker="o", markersize=4, color=REGULAR_COLOR)
    ax.set_xscale("log", base=2)
    ax.set_xticks(dims, [str(d) for d in dims])
    ax.minorticks_off()
    i = dims.index(best_dim)
    ax.plot([best_dim], [mses[i]], marker="*", markersize=14, color=OUTLIER_COLOR, zorder=3)
    ax.set_xlabel("rotation block dim")
    ax.set_ylabel("MSE")


def _fig_sweep_json(report: Report):
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    dims = list(field(report, "arrays.dims"))
    _sweep_axes(ax, dims, list(field(report, "arrays.mse")), field(report, "argmin_dim"))
    _attach_provenance(fig, report, "rotation dim sweep")
    return fig


def _fig_sweep_csv(report: Report):
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    dims = column(report, "dim")
    mses = column(report, "mse")
    _sweep_axes(ax, dims, mses, dims[int(np.argmin(mses))])
    _attach_provenance(fig, report, "rotation dim sweep")
    return fig


def _hist_axes(ax, amax):
    amax = np.asarray(amax, dtype=float)
    positive = amax[amax > 0]
    if positive.size and positive.max() > positive.min():
        bins = np.geomspace(positive.min(), positive.max(), 40)
        ax.set_xscale("log")
    else:
        bins = 10
    ax.hist(positive, bins=bins, color=REGULAR_COLOR)
    ax.set_xlabel("block amax")
    ax.set_ylabel("blocks")


def _fig_scales_json(report: Report):
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    _hist_axes(ax, field(report, "arrays.amax"))
    _attach_provenance(fig, report, "block scale distribution")
    return fig


def _fig_scales_csv(report: Report):
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    _hist_axes(ax, column(report, "amax"))
    _attach_provenance(fig, report, "block scale distribution")
    return fig


def _pot_axes(ax, x, err):
    ax.plot(x, err, color=REGULAR_COLOR, linewidth=1.0)
    ax.axhline(1.0 / 3.0, color="0.6", linestyle=":", linewidth=0.8)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("value")
    ax.set_ylabel("relative rounding error")


def _fig_potcurve_json(report: Report):
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    _pot_axes(ax, field(report, "arrays.x"), field(report, "arrays.relative_error"))
    _attach_provenance(fig, report, "power-of-two scale rounding error")
    return fig


def _fig_potcurve_csv(report: Report):
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    _pot_axes(ax, column(report, "x"), column(report, "relative_error"))
    _attach_provenance(fig, report, "power-of-two scale rounding error")
    return fig


def _fig_lossdelta(report: Report):
    before = field(report, "before_log10_mse")
    after = field(report, "after_log10_mse")
    fig, ax = plt.subplots(figsize=(4.0, 3.2))
    ax.bar(
        ["before rotation", "after rotation"],
        [10.0**before, 10.0**after],
        color=[REGULAR_COLOR, OUTLIER_COLOR],
    )
    ax.set_yscale("log")
    ax.set_ylabel("regular-block MSE")
    growth = field(report, "growth")
    ax.set_title(f"log10 growth {growth:+.3f}", fontsize=9)
    _attach_provenance(fig, report, "regular-block loss before and after rotation")
    return fig


def _fig_optimize(report: Report):
    history = field(report, "arrays.loss_history")
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(range(len(history)), history, color=REGULAR_COLOR, linewidth=1.0)
    final = field(report, "final_loss")
    ax.axhline(final, color=OUTLIER_COLOR, linestyle="--", linewidth=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("quantization loss")
    _attach_provenance(fig, report, "rotation descent")
    return fig


def _matrix_axes(ax, methods, act_formats, mses, qsnrs):
    pts = [
        (q, m, f"{name}\n{fmt}")
        for name, fmt, m, q in zip(methods, act_formats, mses, qsnrs)
        if m is not None and q is not None
    ]
    for q, m, label in pts:
        ax.scatter([q], [m], s=25, color=REGULAR_COLOR)
        ax.annotate(label, (q, m), fontsize=6, xytext=(3, 3), textcoords="offset points")
    ax.set_yscale("log")
    ax.set_xlabel("QSNR (dB)")
    ax.set_ylabel("output MSE")


def _fig_matrix_json(report: Report):
    records = field(report, "records")
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    _matrix_axes(
        ax,
        [r.get("method") for r in records],
        [r.get("act_format") for r in records],
        [r.get("mse") for r in records],
        [r.get("qsnr_db") for r in records],
    )
    _attach_provenance(fig, report, "method and format matrix")
    return fig


def _fig_matrix_csv(report: Report):
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    _matrix_axes(
        ax,
        column(report, "method"),
        column(report, "act_format"),
        column(report, "mse"),
        column(report, "qsnr_db"),
    )
    _attach_provenance(fig, report, "method and format matrix")
    return fig


def _fig_flops(report: Report):
    block = field(report, "rotation_flops_per_token")
    dense = field(report, "global_rotation_flops_per_token")
    fig, ax = plt.subplots(figsize=(4.0, 3.2))
    ax.bar(["this rotation", "global"], [block, dense], color=[REGULAR_COLOR, "0.6"])
    ax.set_yscale("log")
    ax.set_ylabel("flops per token")
    ratio = field(report, "ratio_vs_global")
    ax.set_title(f"ratio vs global {ratio:.6g}", fontsize=9)
    _attach_provenance(fig, report, "online rotation cost")
    return fig


_BUILDERS = {
    ("quantize", "json"): _fig_quantize,
    ("gptq", "json"): _fig_gptq,
    ("blocks", "json"): _fig_blocks_json,
    ("blocks", "csv"): _fig_blocks_csv,
    ("thresholds", "json"): _fig_thresholds_json,
    ("thresholds", "csv"): _fig_thresholds_csv,
    ("sweep", "json"): _fig_sweep_json,
    ("sweep", "csv"): _fig_sweep_csv,
    ("scales", "json"): _fig_scales_json,
    ("scales", "csv"): _fig_scales_csv,
    ("potcurve", "json"): _fig_potcurve_json,
    ("potcurve", "csv"): _fig_potcurve_csv,
    ("lossdelta", "json"): _fig_lossdelta,
    ("optimize", "json"): _fig_optimize,
    ("matrix", "json"): _fig_matrix_json,
    ("matrix", "csv"): _fig_matrix_csv,
    ("flops", "json"): _fig_flops,
}


def build_figure(report: Report):
    """Matplotlib Figure for one report; SchemaError on missing fields."""
    builder = _BUILDERS.get((report.report_type, report.kind))
    if builder is None:
        raise SchemaError(
            f"{os.path.basename(report.source)}: no renderer for "
            f"{report.report_type} as {report.kind}"
        )
    fig = builder(report)
    fig.tight_layout(rect=(0, 0.03, 1, 0.94))
    return fig


def render(bundle: ReportBundle, out_dir: str) -> list[str]:
    """Write one SVG per report; filenames are content-addressed."""
    if len(bundle) == 0:
        raise ValueError("empty bundle: nothing to render")
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for report in bundle.reports:
        fig = build_figure(report)
        path = os.path.join(out_dir, report.figure_name)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(path)
    return paths
