"""Density kernels used by the matching algorithms.

All kernels take a distance (scalar or array) and a bandwidth ``sigma`` and
return a value in [0, 1] with ``h(0) = 1``. ``sigma`` may be a scalar or an
array broadcastable against ``d``.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .core import InputError

__all__ = [
    "Kernel",
    "gaussian_kernel",
    "gaussian_squared_kernel",
    "quadratic_kernel",
    "quadratic_kernel_as_printed",
    "kernel_values",
]


class Kernel(str, Enum):
    """Selectable density kernels.

    ``gaussian`` decays with the plain (unsquared) distance over ``2*sigma**2``;
    ``gaussian-squared`` is the conventional squared-exponential alternative.
    ``quadratic`` is the finite kernel ``max(0, 1 - (d/sigma)**2)``, continuous
    and zero at ``d = sigma``; ``quadratic-as-printed`` is the variant
    ``1 - d**2/sigma`` cut off at ``d < sigma`` (discontinuous at the cutoff
    unless ``sigma == 1``), kept for comparison runs.
    """

    GAUSSIAN = "gaussian"
    GAUSSIAN_SQUARED = "gaussian-squared"
    QUADRATIC = "quadratic"
    QUADRATIC_AS_PRINTED = "quadratic-as-printed"


def _check_sigma(sigma) -> np.ndarray:
    sig = np.asarray(sigma, dtype=np.float64)
    if np.any(sig <= 0):
        raise InputError("sigma must be positive")
    return sig


def gaussian_kernel(d, sigma):
    sig = _check_sigma(sigma)
    return np.exp(-np.asarray(d, dtype=np.float64) / (2.0 * sig**2))


def gaussian_squared_kernel(d, sigma):
    sig = _check_sigma(sigma)
    dd = np.asarray(d, dtype=np.float64)
    return np.exp(-(dd * dd) / (2.0 * sig**2))


def quadratic_kernel(d, sigma):
    """Finite quadratic kernel ``max(0, 1 - (d/sigma)**2)``.

    Normalized so ``h(0) = 1`` and ``h(sigma) = 0``; strictly decreasing on
    ``[0, sigma]`` and identically zero beyond.
    """
    sig = _check_sigma(sigma)
    r = np.asarray(d, dtype=np.float64) / sig
    return np.maximum(0.0, 1.0 - r * r)


def quadratic_kernel_as_printed(d, sigma):
    """Variant ``1 - d**2/sigma`` for ``d < sigma``, else 0."""
    sig = _check_sigma(sigma)
    dd = np.asarray(d, dtype=np.float64)
    return np.where(dd < sig, 1.0 - dd * dd / sig, 0.0)


_PROFILES = {
    Kernel.GAUSSIAN: gaussian_kernel,
    Kernel.GAUSSIAN_SQUARED: gaussian_squared_kernel,
    Kernel.QUADRATIC: quadratic_kernel,
    Kernel.QUADRATIC_AS_PRINTED: quadratic_kernel_as_printed,
}


def kernel_values(kernel: Kernel, d, sigma):
    """Evaluate the chosen kernel on distances ``d`` with bandwidth ``sigma``."""
    return _PROFILES[Kernel(kernel)](d, sigma)
