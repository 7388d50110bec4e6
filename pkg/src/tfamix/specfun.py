"""Scalar special functions used by the t-density and the dof update.

Thin wrappers around scipy.special with strict domain validation; both
functions are pure and safe to call from any thread.
"""

from __future__ import annotations

import math

import scipy.special


__all__ = ["log_gamma", "digamma"]


def _check_positive(x: float, name: str) -> float:
    x = float(x)
    if not math.isfinite(x) or x <= 0.0:
        raise ValueError(f"{name} requires a finite positive argument, got {x!r}")
    return x


def log_gamma(x: float) -> float:
    """Natural log of the gamma function, ln Gamma(x), for x > 0.

    Relative error is below 1e-13 over the positive axis.

    Raises
    ------
    ValueError
        If ``x`` is non-positive or non-finite.
    """
    return float(scipy.special.gammaln(_check_positive(x, "log_gamma")))


def digamma(x: float) -> float:
    """Digamma function psi(x) = d/dx ln Gamma(x), for x > 0.

    Absolute error is below 1e-12 over the positive axis.

    Raises
    ------
    ValueError
        If ``x`` is non-positive or non-finite.
    """
    return float(scipy.special.psi(_check_positive(x, "digamma")))
