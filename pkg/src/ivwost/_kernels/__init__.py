"""Compiled numba kernels."""
