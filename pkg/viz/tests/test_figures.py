"""Figure construction: plotted data mirrors the reports, errors name fields."""

from __future__ import annotations

import json
import os

import numpy as np
import pytest

from mxrotviz.figures import build_figure, render
from mxrotviz.reports import ReportBundle, SchemaError, load_bundle, load_report

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def fx(name):
    return load_report(os.path.join(FIXTURES, name))


def test_threshold_curve_is_nonincreasing():
    rep = fx("thresholds.json")
    fig = build_figure(rep)
    (line,) = fig.axes[0].lines
    y = line.get_ydata()
    assert len(y) == len(rep.data["arrays"]["thresholds"])
    assert all(a >= b for a, b in zip(y, y[1:]))
    np.testing.assert_allclose(y, rep.data["arrays"]["fractions"])


def test_sweep_xaxis_is_exactly_the_dims_with_min_marked():
    rep = fx("sweep.json")
    dims = rep.data["arrays"]["dims"]
    fig = build_figure(rep)
    ax = fig.axes[0]
    assert [t.get_text() for t in ax.get_xticklabels()] == [str(d) for d in dims]
    assert sorted(ax.get_xticks()) == sorted(dims)
    # second line holds the single marked minimum, at the report's argmin
    marker = ax.lines[1]
    assert list(marker.get_xdata()) == [rep.data["argmin_dim"]]
    i = dims.index(rep.data["argmin_dim"])
    assert list(marker.get_ydata()) == [rep.data["arrays"]["mse"][i]]


def test_sweep_csv_marks_smallest_plotted_value():
    rep = fx("sweep.csv")
    fig = build_figure(rep)
    line, marker = fig.axes[0].lines
    y = list(line.get_ydata())
    assert list(marker.get_ydata()) == [min(y)]


def test_lossdelta_bars_use_log_scale():
    rep = fx("lossdelta.json")
    fig = build_figure(rep)
    ax = fig.axes[0]
    assert ax.get_yscale() == "log"
    heights = sorted(p.get_height() for p in ax.patches)
    expect = sorted(
        (10.0 ** rep.data["before_log10_mse"], 10.0 ** rep.data["after_log10_mse"])
    )
    np.testing.assert_allclose(heights, expect)


def test_blocks_scatter_separates_outliers():
    rep = fx("blocks.json")
    fig = build_figure(rep)
    ax = fig.axes[0]
    n_points = sum(len(c.get_offsets()) for c in ax.collections)
    assert n_points == len(rep.data["arrays"]["amax"])
    assert rep.data["counts"]["outlier"] > 0
    labels = [c.get_label() for c in ax.collections]
    assert "outlier" in labels and "regular" in labels


def test_optimize_plots_full_history():
    rep = fx("optimize.json")
    fig = build_figure(rep)
    line = fig.axes[0].lines[0]  # lines[1] is the final-loss rule
    assert len(line.get_xdata()) == len(rep.data["arrays"]["loss_history"])


def test_matrix_annotates_every_record():
    rep = fx("matrix.json")
    fig = build_figure(rep)
    ax = fig.axes[0]
    n = len(rep.data["records"])
    assert len(ax.collections) == n
    assert len(ax.texts) == n


def test_missing_field_raises_schema_error_naming_it(tmp_path):
    doc = json.load(open(os.path.join(FIXTURES, "sweep.json")))
    del doc["arrays"]["mse"]
    p = tmp_path / "sweep.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(SchemaError, match="arrays.mse"):
        build_figure(load_report(str(p)))


def test_render_empty_bundle_is_an_error(tmp_path):
    with pytest.raises(ValueError, match="empty"):
        render(ReportBundle(reports=()), str(tmp_path))
    assert os.listdir(tmp_path) == []


def test_render_is_idempotent(tmp_path):
    bundle = load_bundle([os.path.join(FIXTURES, "potcurve.json")])
    first = render(bundle, str(tmp_path))
    second = render(bundle, str(tmp_path))
    assert first == second
    assert len(os.listdir(tmp_path)) == 1
