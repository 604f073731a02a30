"""render_reports: turn mxrot report files into SVG figures.

Exit codes: 0 success, 2 usage error, 1 bad report file.
"""

from __future__ import annotations

import argparse
import sys

from .figures import render
from .reports import SchemaError, UnknownReportError, load_bundle


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="render_reports",
        description="Render mxrot JSON/CSV reports into SVG figures",
    )
    parser.add_argument("files", nargs="+", help="report files (.json / .csv)")
    parser.add_argument("-o", "--out-dir", default="figs", help="output directory")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        bundle = load_bundle(args.files)
        paths = render(bundle, args.out_dir)
    except (UnknownReportError, SchemaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
