"""Report file loading: JSON reports carry their own report_type, CSV
tables are recognized by their exact header signature."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass


class UnknownReportError(ValueError):
    """File is not one of the known report schemas."""


class SchemaError(ValueError):
    """A known report is missing a required field."""


JSON_TYPES = frozenset(
    {
        "quantize",
        "blocks",
        "thresholds",
        "sweep",
        "scales",
        "potcurve",
        "lossdelta",
        "gptq",
        "optimize",
        "matrix",
        "flops",
    }
)

# exact header tuples written by the mxrot CLI
CSV_HEADERS: dict[tuple[str, ...], str] = {
    ("block", "row", "col_block", "amax", "label", "mse", "relative_error_max"): "blocks",
    (
        "block", "row", "col_block", "amax", "label", "mse", "relative_error_max",
        "mse_ratio", "relative_error_max_ratio",
    ): "blocks",
    ("threshold", "fraction"): "thresholds",
    ("dim", "mse"): "sweep",
    ("block", "amax"): "scales",
    ("x", "relative_error"): "potcurve",
    (
        "method", "act_format", "weight_format", "mse", "qsnr_db",
        "rotation_flops", "matmul_flops",
    ): "matrix",
}


@dataclass(frozen=True)
class Report:
    report_type: str
    source: str  # path the report was loaded from
    kind: str    # "json" or "csv"
    data: dict   # JSON document, or {"header": [...], "rows": [[...], ...]}
    digest: str  # short content hash, names the output figure

    @property
    def figure_name(self) -> str:
        return f"{self.report_type}_{self.digest}.svg"


@dataclass(frozen=True)
class ReportBundle:
    reports: tuple[Report, ...]

    def __len__(self) -> int:
        return len(self.reports)


def _digest(raw: bytes) -> str:
    return hashlib.sha1(raw).hexdigest()[:10]


def _parse_csv_cell(text: str):
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def load_report(path: str) -> Report:
    with open(path, "rb") as fh:
        raw = fh.read()
    name = os.path.basename(path)
    if path.endswith(".json"):
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise UnknownReportError(f"{name}: not valid JSON ({exc})")
        rt = doc.get("report_type") if isinstance(doc, dict) else None
        if rt not in JSON_TYPES:
            raise UnknownReportError(f"{name}: unknown report_type {rt!r}")
        return Report(rt, path, "json", doc, _digest(raw))
    if path.endswith(".csv"):
        rows = list(csv.reader(raw.decode("utf-8").splitlines()))
        if not rows:
            raise UnknownReportError(f"{name}: empty CSV")
        header = tuple(rows[0])
        rt = CSV_HEADERS.get(header)
        if rt is None:
            raise UnknownReportError(f"{name}: unknown CSV header {list(header)}")
        parsed = [[_parse_csv_cell(c) for c in row] for row in rows[1:]]
        return Report(rt, path, "csv", {"header": list(header), "rows": parsed}, _digest(raw))
    raise UnknownReportError(f"{name}: expected a .json or .csv report file")


def load_bundle(paths) -> ReportBundle:
    return ReportBundle(reports=tuple(load_report(p) for p in paths))


def field(report: Report, path: str):
    """Fetch a dotted field from a JSON report; missing -> SchemaError."""
    node = report.data
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            raise SchemaError(
                f"{os.path.basename(report.source)}: missing field {path!r}"
            )
        node = node[part]
    return node


def column(report: Report, name: str) -> list:
    """Fetch one column of a CSV report; missing -> SchemaError."""
    header = report.data["header"]
    if name not in header:
        raise SchemaError(
            f"{os.path.basename(report.source)}: missing field {name!r}"
        )
    i = header.index(name)
    return [row[i] for row in report.data["rows"]]
