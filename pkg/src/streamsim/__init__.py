"""Cycle-approximate simulator of a single-issue core with stream semantic
registers and streaming indirection, plus sparse-dense linear algebra
kernels and an eight-core cluster mode."""

__version__ = "0.1.0"
