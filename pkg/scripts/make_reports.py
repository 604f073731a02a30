#!/usr/bin/env python3
"""Generate one report of every type into an output directory.

Runs the CLI end to end at small scale: synthetic tensors, a quantize
roundtrip, every analyze mode, GPTQ, rotation optimization, the method
matrix, and the FLOP card.  The resulting files exercise every JSON and
CSV schema the package emits, so they double as rendering fixtures.

Usage: python3 scripts/make_reports.py [--out-dir reports]
"""

from __future__ import annotations

import argparse
import os
import sys

from mxrot.cli import main as cli


def run(args: list[str]) -> None:
    rc = cli(args)
    if rc != 0:
        raise SystemExit(f"command failed ({rc}): {' '.join(args)}")


def build_all(out: str) -> list[str]:
    os.makedirs(out, exist_ok=True)
    x = os.path.join(out, "acts.mxtb")
    w = os.path.join(out, "weights.mxtb")
    j = lambda name: os.path.join(out, name + ".json")
    c = lambda name: os.path.join(out, name + ".csv")

    run(["gen", "--rows", "256", "--cols", "128", "--outlier-frac", "0.02",
         "--gain", "20", "--seed", "1", "-o", x])
    run(["gen", "--rows", "128", "--cols", "64", "--seed", "2", "-o", w])

    run(["quantize", "-i", x, "--format", "mxfp4", "--report", j("quantize")])
    run(["analyze", "--mode", "blocks", "-i", x, "--format", "mxfp4",
         "--baseline", "bfp4", "--quantile", "0.005",
         "--report", j("blocks"), "--csv", c("blocks")])
    run(["analyze", "--mode", "thresholds", "-i", x,
         "--thresholds", "0.25,0.5,1,1.5,2,3,4,6,8,12,16,24",
         "--report", j("thresholds"), "--csv", c("thresholds")])
    run(["analyze", "--mode", "sweep", "-i", x, "--format", "mxfp4",
         "--dims", "8,16,32,64,128", "--seed", "9",
         "--report", j("sweep"), "--csv", c("sweep")])
    run(["analyze", "--mode", "scales", "-i", x, "--block-size", "32",
         "--report", j("scales"), "--csv", c("scales")])
    run(["analyze", "--mode", "potcurve", "--x-min", "0.5", "--x-max", "16",
         "--points", "801", "--report", j("potcurve"), "--csv", c("potcurve")])
    run(["analyze", "--mode", "lossdelta", "-i", x, "--format", "mxfp4",
         "--quantile", "0.005", "--rotation", "global", "--seed", "9",
         "--report", j("lossdelta")])
    run(["gptq", "--weights", w, "--calib", x, "--format", "mxfp4",
         "--report", j("gptq")])
    run(["optimize", "--input", x, "--format", "mxfp4", "--rotation", "block",
         "--rot-dim", "32", "--seed", "9", "--steps", "50", "--lr", "1.0",
         "--report", j("optimize")])
    run(["matrix", "-x", x, "-w", w, "--methods", "rtn,smoothquant,quarot,brq",
         "--formats", "mxfp4,bint4", "--seed", "9",
         "--report", j("matrix"), "--csv", c("matrix")])
    run(["flops", "--width", "4096", "--rotation", "block", "--rot-dim", "32",
         "--report", j("flops")])

    return sorted(
        os.path.join(out, f) for f in os.listdir(out) if f.endswith((".json", ".csv"))
    )


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="reports")
    args = ap.parse_args()
    files = build_all(args.out_dir)
    for f in files:
        print(f)
    print(f"{len(files)} report files in {args.out_dir}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
