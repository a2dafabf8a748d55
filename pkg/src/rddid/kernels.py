"""Kernel functions and scaled weight evaluation for local fitting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import BandwidthError, ConfigError

KERNEL_NAMES = ("uniform", "triangular", "epanechnikov")


@dataclass(frozen=True)
class KernelSpec:
    """A named symmetric kernel with support on [-1, 1]."""

    kind: str = "triangular"

    def __post_init__(self) -> None:
        if self.kind not in KERNEL_NAMES:
            raise ConfigError(
                f"unknown kernel {self.kind!r}; expected one of {KERNEL_NAMES}"
            )


def kernel_value(u, kernel: KernelSpec | str = "triangular"):
    """Evaluate the kernel at dimensionless offset(s) ``u``.

    Zero outside |u| <= 1; each kernel integrates to one. Accepts scalars
    or arrays and returns the matching shape.
    """
    kind = kernel.kind if isinstance(kernel, KernelSpec) else KernelSpec(kernel).kind
    arr = np.asarray(u, dtype=float)
    au = np.abs(arr)
    inside = au <= 1.0
    if kind == "uniform":
        out = 0.5 * inside
    elif kind == "triangular":
        out = (1.0 - au) * inside
    else:  # epanechnikov
        out = 0.75 * (1.0 - arr * arr) * inside
    if np.ndim(u) == 0:
        return float(out)
    return out


def scaled_weight(r, cutoff: float, h: float, kernel: KernelSpec | str = "triangular"):
    """Bandwidth-scaled kernel weight (1/h) K((r - cutoff) / h)."""
    if not h > 0:
        raise BandwidthError(f"bandwidth must be positive, got {h}")
    u = (np.asarray(r, dtype=float) - cutoff) / h
    w = kernel_value(u, kernel)
    return w / h
