"""Profile-likelihood estimation of (uniquenesses, loadings).

With the loadings maximized out analytically, the factor-model
log-likelihood reduces to a function of psi alone:

    l_p(psi) = -(n_eff / 2) * ( p ln 2 pi + sum_j ln psi_j
               + sum_j S_jj / psi_j + sum_{i<=q} (ln theta_i - theta_i + 1) )

where theta_i are the top-q eigenvalues of Psi^{-1/2} S Psi^{-1/2}. The
maximizer does not depend on n_eff. Optimization runs in log psi with a
lower box at ln psi_floor via L-BFGS-B, so the whole update stays
matrix-free; the loadings are then recovered in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.optimize

from .eigensolver import ScatterOperator, top_eigenpairs_for_psi


__all__ = [
    "ProfileState",
    "profile_loglik",
    "profile_grad",
    "optimize_psi",
    "recover_lambda",
]

LBFGS_MEMORY = 10
# floor for eigenvalues entering the log term; the scatter is PSD so only
# round-off or rank deficiency can push theta this low
THETA_FLOOR = 1e-300
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ProfileState:
    """Result of one uniqueness optimization.

    ``objective`` is the profile log-likelihood at ``psi`` and
    ``grad_norm`` the inf-norm of the projected gradient in the log-psi
    optimization space. ``warning`` is set when the line search failed
    and the best iterate was returned.
    """

    psi: np.ndarray
    theta: np.ndarray
    vectors: np.ndarray
    objective: float
    grad_norm: float
    warning: Optional[str] = None


def _spectrum(
    psi: np.ndarray,
    op: ScatterOperator,
    q: int,
    eig_tol: float,
    seed: int,
    canonical: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    if q == 0:
        p = op.dim
        return np.zeros(0), np.zeros((p, 0))
    return top_eigenpairs_for_psi(op, psi, q, eig_tol, seed=seed, canonical=canonical)


def _objective_terms(
    psi: np.ndarray, scatter_diag: np.ndarray, theta: np.ndarray, p: int
) -> float:
    theta_safe = np.maximum(theta, THETA_FLOOR)
    return (
        p * LOG_2PI
        + float(np.sum(np.log(psi)))
        + float(np.sum(scatter_diag / psi))
        + float(np.sum(np.log(theta_safe) - theta + 1.0))
    )


def _unit_value_and_grad(
    psi: np.ndarray,
    scatter_diag: np.ndarray,
    theta: np.ndarray,
    vectors: np.ndarray,
    p: int,
) -> tuple[float, np.ndarray]:
    """Per-unit negative profile objective and its psi-gradient, sharing
    intermediates (hot path of the uniqueness optimizer)."""
    inv_psi = 1.0 / psi
    ratio = scatter_diag * inv_psi
    theta_safe = np.maximum(theta, THETA_FLOOR)
    value = 0.5 * (
        p * LOG_2PI
        + float(np.sum(np.log(psi)))
        + float(np.sum(ratio))
        + float(np.sum(np.log(theta_safe) - theta + 1.0))
    )
    inner = inv_psi - ratio * inv_psi
    if theta.size:
        inner = inner + (vectors**2 @ (theta - 1.0)) * inv_psi
    return value, 0.5 * inner


def profile_loglik(
    psi: np.ndarray,
    op: ScatterOperator,
    q: int,
    n_eff: float,
    eig_tol: float = 1e-10,
    seed: int = 0,
) -> float:
    """Profile log-likelihood at ``psi`` for a q-factor model.

    ``op`` supplies the weighted scatter; its trace term uses the cached
    scatter diagonal, so S is never formed densely.
    """
    psi = np.asarray(psi, dtype=float)
    theta, _ = _spectrum(psi, op, q, eig_tol, seed)
    return -0.5 * n_eff * _objective_terms(psi, op.scatter_diag, theta, op.dim)


def profile_grad(
    psi: np.ndarray,
    op: ScatterOperator,
    q: int,
    n_eff: float,
    eig_tol: float = 1e-10,
    seed: int = 0,
) -> np.ndarray:
    """Analytic gradient of :func:`profile_loglik` with respect to psi.

    Uses d theta_i / d psi_j = -theta_i v_ij^2 / psi_j from first-order
    eigenvalue perturbation of the whitened scatter.
    """
    psi = np.asarray(psi, dtype=float)
    theta, vectors = _spectrum(psi, op, q, eig_tol, seed)
    return _grad_from_spectrum(psi, op.scatter_diag, theta, vectors, n_eff)


def _grad_from_spectrum(
    psi: np.ndarray,
    scatter_diag: np.ndarray,
    theta: np.ndarray,
    vectors: np.ndarray,
    n_eff: float,
) -> np.ndarray:
    # divide twice so huge line-search probes of psi cannot overflow
    inner = 1.0 / psi - scatter_diag / psi / psi
    if theta.size:
        inner = inner + (vectors**2 @ (theta - 1.0)) / psi
    return -0.5 * n_eff * inner


def optimize_psi(
    init: np.ndarray,
    op: ScatterOperator,
    q: int,
    n_eff: float,
    psi_floor: float,
    eig_tol: float = 1e-10,
    inner_opt_tol: Optional[float] = None,
    inner_max_iter: int = 200,
    seed: int = 0,
) -> ProfileState:
    """Maximize the profile log-likelihood over psi >= psi_floor.

    Limited-memory quasi-Newton with gradient projection (L-BFGS-B) in
    log psi. Never aborts: a failed line search returns the best iterate
    with ``warning`` set, and the returned objective is never below the
    starting one (beyond round-off slack).
    """
    if n_eff <= 0.0:
        raise ValueError("n_eff must be positive")
    if inner_opt_tol is None:
        inner_opt_tol = 1e-7 * n_eff
    init = np.maximum(np.asarray(init, dtype=float), psi_floor)
    scatter_diag = op.scatter_diag
    p = op.dim

    # optimize the per-unit objective: the maximizer does not depend on
    # n_eff, and keeping the scalar out makes the iterate path exactly
    # invariant under rescaled weights
    def neg_obj(x: np.ndarray) -> tuple[float, np.ndarray]:
        psi = np.exp(x)
        theta, vectors = _spectrum(psi, op, q, eig_tol, seed, canonical=False)
        f, g_psi = _unit_value_and_grad(psi, scatter_diag, theta, vectors, p)
        return f, g_psi * psi

    x0 = np.log(init)
    f0, _ = neg_obj(x0)
    # the upper box only keeps exp() finite; no real iterate gets near it
    result = scipy.optimize.minimize(
        neg_obj,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=[(math.log(psi_floor), 700.0)] * p,
        options={
            "maxcor": LBFGS_MEMORY,
            "maxiter": inner_max_iter,
            "gtol": inner_opt_tol / n_eff,
            "ftol": 0.0,
        },
    )
    warning = None
    if result.status == 2:
        warning = f"uniqueness optimizer stopped early: {result.message}"
    x_hat = result.x
    if result.fun > f0 + 1e-10 * abs(f0):
        # defensive: L-BFGS-B line searches are monotone, so this only
        # fires on pathological round-off; keep the feasible start
        x_hat = x0
        warning = "uniqueness optimizer failed to improve on its start"

    psi_hat = np.maximum(np.exp(x_hat), psi_floor)
    theta, vectors = _spectrum(psi_hat, op, q, eig_tol, seed)
    objective = -0.5 * n_eff * _objective_terms(psi_hat, scatter_diag, theta, p)
    grad_log = (
        _grad_from_spectrum(psi_hat, scatter_diag, theta, vectors, n_eff) * psi_hat
    )
    at_floor = psi_hat <= psi_floor * (1.0 + 1e-12)
    projected = np.where(at_floor & (grad_log < 0.0), 0.0, grad_log)
    return ProfileState(
        psi=psi_hat,
        theta=theta,
        vectors=vectors,
        objective=float(objective),
        grad_norm=float(np.abs(projected).max(initial=0.0)),
        warning=warning,
    )


def recover_lambda(
    psi: np.ndarray, theta: np.ndarray, vectors: np.ndarray
) -> np.ndarray:
    """Closed-form loadings Psi^{1/2} V_q Delta from the top eigenpairs.

    ``Delta_ii = sqrt(max(theta_i - 1, 0))``, so columns with theta_i <= 1
    are exactly zero, and loadings^T Psi^-1 loadings = Delta^2 is diagonal
    by construction.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.size > 1 and np.any(np.diff(theta) > 1e-12 * max(theta[0], 1.0)):
        raise ValueError("theta must be sorted in descending order")
    delta = np.sqrt(np.maximum(theta - 1.0, 0.0))
    return np.sqrt(np.asarray(psi, dtype=float))[:, None] * (vectors * delta)
