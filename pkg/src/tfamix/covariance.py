"""Low-rank-plus-diagonal covariance algebra and the multivariate t density.

For Sigma = L L^T + diag(psi) with L of shape (p, q), all solves and
determinants go through the q x q core ``I + L^T Psi^-1 L`` (Woodbury),
so nothing here ever forms or factorizes a dense p x p matrix. The core's
Cholesky factor is cached once per (L, psi) pair because the E-step
evaluates n * K densities per cycle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .specfun import log_gamma


__all__ = [
    "CovarianceFactor",
    "build_cov_factor",
    "solve_sigma",
    "log_det_sigma",
    "mahalanobis",
    "log_t_density",
    "log_t_from_mahalanobis",
    "IllConditionedError",
]


class IllConditionedError(ValueError):
    """The q x q Woodbury core is not numerically positive definite."""


@dataclass(frozen=True)
class CovarianceFactor:
    """Cached factorization of Sigma = loadings loadings^T + diag(uniq).

    ``core_chol`` is the lower Cholesky factor of
    ``I_q + loadings^T diag(1/uniq) loadings`` and ``core_logdet`` its
    log-determinant; ``scaled_loadings`` holds ``diag(1/uniq) @ loadings``.
    """

    loadings: np.ndarray
    uniquenesses: np.ndarray
    scaled_loadings: np.ndarray
    core_chol: np.ndarray
    core_logdet: float

    @property
    def p(self) -> int:
        return self.uniquenesses.shape[0]

    @property
    def q(self) -> int:
        return self.loadings.shape[1]


def build_cov_factor(loadings: np.ndarray, uniquenesses: np.ndarray) -> CovarianceFactor:
    """Build the cached Woodbury factorization in O(p q^2 + q^3).

    Raises
    ------
    IllConditionedError
        If the q x q core fails its Cholesky factorization.
    """
    loadings = np.asarray(loadings, dtype=float)
    if loadings.ndim == 1:
        loadings = loadings.reshape(-1, 1)
    psi = np.asarray(uniquenesses, dtype=float)
    p, q = loadings.shape
    if psi.shape != (p,):
        raise ValueError("uniquenesses length does not match loadings rows")
    if np.any(psi <= 0.0):
        raise ValueError("uniquenesses must be positive")
    scaled = loadings / psi[:, None]
    core = loadings.T @ scaled
    core[np.diag_indices(q)] += 1.0
    try:
        chol = scipy.linalg.cholesky(core, lower=True) if q else np.zeros((0, 0))
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise IllConditionedError(f"Woodbury core not positive definite: {exc}") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol)))) if q else 0.0
    return CovarianceFactor(
        loadings=loadings,
        uniquenesses=psi,
        scaled_loadings=scaled,
        core_chol=chol,
        core_logdet=logdet,
    )


def _core_solve(cf: CovarianceFactor, w: np.ndarray) -> np.ndarray:
    if cf.q == 0:
        return w
    return scipy.linalg.cho_solve((cf.core_chol, True), w)


def solve_sigma(cf: CovarianceFactor, v: np.ndarray) -> np.ndarray:
    """Apply Sigma^-1 to ``v`` (shape (p,) or (m, p), row-wise) in O(p q)."""
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        w = cf.scaled_loadings.T @ v
        return v / cf.uniquenesses - cf.scaled_loadings @ _core_solve(cf, w)
    w = v @ cf.scaled_loadings
    return v / cf.uniquenesses - _core_solve(cf, w.T).T @ cf.scaled_loadings.T


def log_det_sigma(cf: CovarianceFactor) -> float:
    """ln det(Sigma) = sum(ln psi_j) + ln det(I_q + L^T Psi^-1 L)."""
    return float(np.sum(np.log(cf.uniquenesses))) + cf.core_logdet


def mahalanobis(y: np.ndarray, mean: np.ndarray, cf: CovarianceFactor) -> np.ndarray:
    """Quadratic form (y - mean)^T Sigma^-1 (y - mean), >= 0.

    ``y`` may be a single point of shape (p,) or a batch of shape (n, p);
    the result is a scalar or an (n,) array accordingly.
    """
    y = np.asarray(y, dtype=float)
    z = y - np.asarray(mean, dtype=float)
    single = z.ndim == 1
    z2 = z.reshape(1, -1) if single else z
    base = np.einsum("ij,ij->i", z2, z2 / cf.uniquenesses)
    if cf.q:
        w = z2 @ cf.scaled_loadings
        u = scipy.linalg.solve_triangular(cf.core_chol, w.T, lower=True)
        base = base - np.einsum("ji,ji->i", u, u)
    # guard tiny negative round-off; the form is PSD by construction
    delta = np.maximum(base, 0.0)
    return float(delta[0]) if single else delta


def log_t_from_mahalanobis(
    delta: np.ndarray, p: int, log_det: float, dof: float
) -> np.ndarray:
    """Multivariate t log-density given precomputed quadratic forms."""
    if dof <= 0:
        raise ValueError("dof must be positive")
    const = (
        log_gamma((dof + p) / 2.0)
        - log_gamma(dof / 2.0)
        - 0.5 * p * math.log(dof * math.pi)
        - 0.5 * log_det
    )
    return const - 0.5 * (dof + p) * np.log1p(np.asarray(delta) / dof)


def log_t_density(
    y: np.ndarray, mean: np.ndarray, cf: CovarianceFactor, dof: float
) -> np.ndarray:
    """Log density of the multivariate t with scale ``cf`` and ``dof``.

    Accepts a single point (p,) or a batch (n, p), mirroring
    :func:`mahalanobis`.
    """
    return log_t_from_mahalanobis(
        mahalanobis(y, mean, cf), cf.p, log_det_sigma(cf), dof
    )
