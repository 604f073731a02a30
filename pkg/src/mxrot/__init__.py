"""Desk-scale study kit for block-scaled 4-bit quantization.

Submodules:
    tensorio    binary tensor container + seeded synthetic data
    mxformats   4-bit element codecs with shared block scales
    transforms  Hadamard rotations and activation smoothing
    gptq        second-order weight-quantization compensation
    rotopt      Cayley-step rotation optimization
    analysis    block/outlier/threshold diagnostics
    pipeline    end-to-end layer simulation and method grids
    cli         command-line harness emitting JSON/CSV reports
"""

__version__ = "0.1.0"
