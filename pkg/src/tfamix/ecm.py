"""Hybrid ECM loop for t-factor-analyzer mixtures.

One cycle runs: E-step posteriors (gamma, eta) -> conditional updates of
(weights, means) -> joint profile update of (uniquenesses, loadings) per
component -> degrees-of-freedom root per component. Each conditional
step uses the freshest parameters, but gamma and eta stay fixed within a
cycle, which is what makes the observed log-likelihood non-decreasing.

The E-step is a single vectorized pass (a deterministic ordered
reduction); the per-component factor updates run on the shared worker
pool, so results are identical for any thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
import scipy.optimize

from . import covariance
from ._threads import parallel_map
from .eigensolver import make_operator
from .model import (
    ComponentParams,
    Dataset,
    FitConfig,
    MixtureModel,
    Responsibilities,
    validate_model,
)
from .profile import optimize_psi, recover_lambda
from .specfun import digamma


__all__ = [
    "FitResult",
    "EcmError",
    "e_step",
    "cm_step_pi_mu",
    "cm_step_dof",
    "cm_step_factor",
    "observed_loglik",
    "fit",
    "make_result",
    "ascent_audit",
    "reset_ascent_audit",
]

# mass below max(q_k + 2, DEGENERATE_REL * n) triggers a component rescue
DEGENERATE_REL = 1e-6
MAX_RESCUES = 3
NU_RESET = 30.0

# per-fit ascent summaries, audited by the acceptance suite
_ASCENT_AUDIT: list[dict] = []


class EcmError(RuntimeError):
    """Fit could not proceed; carries the loglik trace seen so far."""

    def __init__(self, message: str, trace: Sequence[float] = ()):
        super().__init__(message)
        self.trace = tuple(trace)


@dataclass(frozen=True)
class FitResult:
    """Converged parameters plus posterior summaries.

    ``hard_assignment[i]`` is the argmax component index (0-based, ties
    to the lowest index), consistent with ``responsibilities.gamma``.
    """

    model: MixtureModel
    responsibilities: Responsibilities
    hard_assignment: np.ndarray
    warnings: tuple[str, ...] = ()


def _posteriors(y: np.ndarray, model: MixtureModel):
    """Vectorized E-step over all points and components.

    Returns (gamma, eta, point_loglik, loglik); point_loglik holds the
    per-observation mixture log-density, whose ordered sum is the
    observed log-likelihood.
    """
    n, p = y.shape
    K = model.n_components
    logd = np.empty((n, K))
    eta = np.empty((n, K))
    for k, comp in enumerate(model.components):
        cf = covariance.build_cov_factor(comp.loadings, comp.uniquenesses)
        delta = covariance.mahalanobis(y, comp.mean, cf)
        logd[:, k] = math.log(comp.weight) + covariance.log_t_from_mahalanobis(
            delta, p, covariance.log_det_sigma(cf), comp.dof
        )
        eta[:, k] = (comp.dof + p) / (comp.dof + delta)
    top = logd.max(axis=1)
    point_loglik = top + np.log(np.exp(logd - top[:, None]).sum(axis=1))
    if not np.all(np.isfinite(point_loglik)):
        raise EcmError("non-finite mixture density in the E-step")
    gamma = np.exp(logd - point_loglik[:, None])
    gamma /= gamma.sum(axis=1, keepdims=True)
    return gamma, eta, point_loglik, float(point_loglik.sum())


def e_step(data: Dataset, model: MixtureModel) -> tuple[Responsibilities, float]:
    """Posterior responsibilities, gamma-weights, and the observed loglik."""
    gamma, eta, _, loglik = _posteriors(data.y, model)
    return Responsibilities(gamma=gamma, eta=eta), loglik


def observed_loglik(data: Dataset, model: MixtureModel) -> float:
    """Observed-data log-likelihood; same code path as :func:`e_step`."""
    return _posteriors(data.y, model)[3]


def cm_step_pi_mu(
    data: Dataset, resp: Responsibilities
) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form weight and mean updates given the posteriors."""
    y = data.y
    n = y.shape[0]
    gamma, eta = resp.gamma, resp.eta
    mass = gamma.sum(axis=0)
    if np.any(mass < n * 1e-10):
        raise EcmError(f"empty component (mass {mass.min():.3g})")
    weights = mass / n
    weights = weights / weights.sum()
    w = gamma * eta
    means = (w.T @ y) / w.sum(axis=0)[:, None]
    return weights, means


def cm_step_dof(
    gamma_col: np.ndarray,
    eta_col: np.ndarray,
    p: int,
    bounds: tuple[float, float],
) -> float:
    """Degrees-of-freedom update by bracketed root finding.

    Solves the stationarity equation to 1e-8 absolute tolerance; when no
    sign change exists inside ``bounds``, the boundary with the smaller
    residual is returned (clamping is the defined behavior).
    """
    n_k = float(gamma_col.sum())
    if n_k <= 0:
        raise EcmError("dof update on a component with zero mass")
    c = float(gamma_col @ (np.log(eta_col) - eta_col)) / n_k

    def g(nu: float) -> float:
        half = nu / 2.0
        half_p = (nu + p) / 2.0
        return (
            -digamma(half)
            + math.log(half)
            + 1.0
            + c
            + digamma(half_p)
            - math.log(half_p)
        )

    lo, hi = bounds
    g_lo, g_hi = g(lo), g(hi)
    if g_lo == 0.0:
        return lo
    if g_hi == 0.0:
        return hi
    if g_lo * g_hi > 0.0:
        return lo if abs(g_lo) < abs(g_hi) else hi
    return float(scipy.optimize.brentq(g, lo, hi, xtol=1e-8))


def cm_step_factor(
    data: Dataset,
    gamma_col: np.ndarray,
    eta_col: np.ndarray,
    mean: np.ndarray,
    prev_psi: Optional[np.ndarray],
    q: int,
    config: FitConfig,
    psi_floor: Optional[float] = None,
) -> tuple[np.ndarray, np.ndarray, Optional[str]]:
    """Joint profile update of (loadings, uniquenesses) for one component.

    Warm-starts the uniqueness optimizer at ``prev_psi``; the first cycle
    (``prev_psi=None``) starts at half the weighted-scatter diagonal.
    Returns ``(loadings, uniquenesses, warning)``.
    """
    if psi_floor is None:
        psi_floor = config.resolve_psi_floor(data.y)
    op = make_operator(
        data.y,
        mean,
        gamma_col,
        eta_col,
        prev_psi if prev_psi is not None else np.ones(data.p),
    )
    init = 0.5 * op.scatter_diag if prev_psi is None else np.asarray(prev_psi, float)
    n_eff = float(gamma_col.sum())
    state = optimize_psi(
        init,
        op,
        q,
        n_eff,
        psi_floor=psi_floor,
        eig_tol=config.eig_tol,
        inner_opt_tol=config.inner_opt_tol,
        inner_max_iter=config.inner_max_iter,
        seed=config.seed,
    )
    loadings = recover_lambda(state.psi, state.theta, state.vectors)
    return loadings, state.psi, state.warning


def _normalize_q_vec(q_vec, K: int) -> tuple[int, ...]:
    if np.isscalar(q_vec):
        return (int(q_vec),) * K
    q_vec = tuple(int(q) for q in q_vec)
    if len(q_vec) != K:
        raise ValueError(f"q_vec length {len(q_vec)} != K={K}")
    return q_vec


def _rescue_components(
    model: MixtureModel,
    bad: list[int],
    y: np.ndarray,
    point_loglik: np.ndarray,
    psi_floor: float,
) -> MixtureModel:
    """Re-seed degenerate components at the worst-fit observations.

    The re-seeded component gets a half share of weight so that it can
    actually attract points at the next E-step; diffuse uniquenesses and
    near-Gaussian tails keep it broad.
    """
    n, p = y.shape
    K = model.n_components
    global_psi = np.maximum(y.var(axis=0), psi_floor)
    worst = np.argsort(point_loglik)[: len(bad)]
    comps = list(model.components)
    for j, k in enumerate(bad):
        q_k = comps[k].n_factors
        comps[k] = ComponentParams(
            weight=max((q_k + 2) / n, 0.5 / K),
            mean=y[worst[j]],
            loadings=np.zeros((p, q_k)),
            uniquenesses=global_psi,
            dof=NU_RESET,
            n_factors=q_k,
        )
    total = sum(c.weight for c in comps)
    comps = [replace(c, weight=c.weight / total) for c in comps]
    return replace(model, components=tuple(comps))


def fit(
    data: Dataset,
    K: int,
    q_vec,
    config: FitConfig,
    initial_model: MixtureModel,
) -> FitResult:
    """Run the ECM loop from ``initial_model`` to convergence.

    Stops when the loglik gain falls below ``tol * (1 + |loglik|)`` or at
    ``max_iter`` cycles. Components come back sorted by decreasing
    weight, with the responsibilities permuted to match. A component
    whose mass collapses is re-seeded at the worst-fit point (at most 3
    times per fit); each rescue restarts the recorded trace, since the
    ascent guarantee holds only between rescues.
    """
    from .selection import max_factors  # deferred: selection imports this module

    y = data.y
    n, p = y.shape
    q_vec = _normalize_q_vec(q_vec, K)
    if K < 1:
        raise ValueError("K must be at least 1")
    bound = max_factors(p)
    for q in q_vec:
        if not 1 <= q <= bound:
            raise ValueError(f"each q must lie in 1..{bound} for p={p}, got {q}")
    if initial_model.n_components != K or initial_model.p != p:
        raise ValueError("initial model does not match the requested K and p")
    psi_floor = config.resolve_psi_floor(y)
    warnings: list[str] = []
    if n < K * (max(q_vec) + 1):
        warnings.append(
            f"n={n} is small for K={K} components with up to {max(q_vec)} factors"
        )

    model = initial_model
    gamma, eta, point_ll, loglik = _posteriors(y, model)
    trace = [loglik]
    rescues = 0
    converged = False
    iterations = 0

    for cycle in range(1, config.max_iter + 1):
        # a component is degenerate when its soft mass collapses or when
        # too few rows carry non-negligible weight to support a rank-q
        # scatter (the factor update needs q + 2 effective points); a
        # rescue can itself re-starve, so loop until the posteriors are
        # clean or the rescue budget runs out
        while True:
            mass = gamma.sum(axis=0)
            w_all = gamma * eta
            eff_rows = (w_all >= 1e-12 * w_all.sum(axis=0)).sum(axis=0)
            bad = [
                k
                for k in range(K)
                if mass[k] < max(q_vec[k] + 2, DEGENERATE_REL * n)
                or eff_rows[k] < q_vec[k] + 2
            ]
            if not bad:
                break
            notes = ("; " + "; ".join(warnings)) if warnings else ""
            if not config.rescue_degenerate:
                raise EcmError(
                    f"degenerate component(s) {bad} at cycle {cycle}{notes}", trace
                )
            if rescues + len(bad) > MAX_RESCUES:
                raise EcmError(
                    f"persistent degenerate component(s) {bad} after "
                    f"{rescues} rescues{notes}",
                    trace,
                )
            rescues += len(bad)
            warnings.append(f"rescued degenerate component(s) {bad} at cycle {cycle}")
            model = _rescue_components(model, bad, y, point_ll, psi_floor)
            gamma, eta, point_ll, loglik = _posteriors(y, model)
            trace = [loglik]

        resp_mass = gamma.sum(axis=0)
        weights = resp_mass / n
        weights = weights / weights.sum()
        w = gamma * eta
        means = (w.T @ y) / w.sum(axis=0)[:, None]

        def update_factor(k: int):
            return cm_step_factor(
                data,
                gamma[:, k],
                eta[:, k],
                means[k],
                model.components[k].uniquenesses if cycle > 1 else None,
                q_vec[k],
                config,
                psi_floor=psi_floor,
            )
        try:
            factor_updates = parallel_map(update_factor, list(range(K)))
        except ValueError as exc:
            raise EcmError(f"factor update failed at cycle {cycle}: {exc}", trace)

        comps = []
        for k in range(K):
            loadings, psi, warn = factor_updates[k]
            if warn is not None:
                warnings.append(f"component {k}, cycle {cycle}: {warn}")
            if config.estimate_dof:
                dof = cm_step_dof(gamma[:, k], eta[:, k], p, config.dof_bounds)
            else:
                dof = model.components[k].dof
            comps.append(
                ComponentParams(
                    weight=weights[k],
                    mean=means[k],
                    loadings=loadings,
                    uniquenesses=psi,
                    dof=dof,
                    n_factors=q_vec[k],
                )
            )
        model = MixtureModel(components=tuple(comps), p=p)

        gamma, eta, point_ll, new_loglik = _posteriors(y, model)
        trace.append(new_loglik)
        iterations = cycle
        if abs(new_loglik - loglik) < config.tol * (1.0 + abs(new_loglik)):
            converged = True
            loglik = new_loglik
            break
        loglik = new_loglik

    order = sorted(range(K), key=lambda k: (-model.components[k].weight, k))
    model = MixtureModel(
        components=tuple(model.components[k] for k in order),
        p=p,
        loglik=loglik,
        trace=tuple(trace),
        converged=converged,
        iterations=iterations,
    )
    gamma = gamma[:, order]
    eta = eta[:, order]
    if not converged:
        warnings.append(f"stopped at max_iter={config.max_iter} without converging")

    violations = validate_model(model)
    if violations:
        raise EcmError("fit produced an invalid model: " + "; ".join(violations), trace)
    _record_ascent(trace)
    resp = Responsibilities(gamma=gamma, eta=eta)
    return FitResult(
        model=model,
        responsibilities=resp,
        hard_assignment=np.argmax(gamma, axis=1),
        warnings=tuple(warnings),
    )


def make_result(data: Dataset, model: MixtureModel) -> FitResult:
    """Posterior summaries of a fixed model (no parameter updates)."""
    resp, _ = e_step(data, model)
    return FitResult(
        model=model,
        responsibilities=resp,
        hard_assignment=np.argmax(resp.gamma, axis=1),
    )


def _record_ascent(trace: Sequence[float]) -> None:
    worst = 0.0
    for t in range(1, len(trace)):
        drop = (trace[t - 1] - trace[t]) / max(abs(trace[t - 1]), 1e-300)
        worst = max(worst, drop)
    _ASCENT_AUDIT.append({"cycles": len(trace) - 1, "worst_rel_drop": worst})


def ascent_audit() -> list[dict]:
    """Per-fit ascent summaries recorded since the last reset."""
    return list(_ASCENT_AUDIT)


def reset_ascent_audit() -> None:
    _ASCENT_AUDIT.clear()
