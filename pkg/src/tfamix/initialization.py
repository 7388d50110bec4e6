"""Multi-start initialization for the ECM engine.

Many short random starts plus one k-means start are run for a few
cycles; the best few by log-likelihood continue to convergence and the
highest final log-likelihood wins. All randomness flows from the config
seed through per-start child seeds, so the returned model is a pure
function of (data, K, q_vec, config).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from . import ecm
from ._threads import parallel_map
from .eigensolver import make_operator, top_eigenpairs
from .model import ComponentParams, Dataset, FitConfig, MixtureModel
from .profile import recover_lambda


__all__ = ["StartCandidate", "StartOrigin", "kmeans_start", "random_start", "em_em"]

NU_INIT = 30.0
KMEANS_MAX_ITER = 50
# small loading scale for random starts; the first cycle overwrites it
RANDOM_LOADING_SCALE = 0.1


class StartOrigin(str, Enum):
    RANDOM = "random"
    KMEANS = "kmeans"


@dataclass(frozen=True)
class StartCandidate:
    model: MixtureModel
    short_loglik: float
    origin: StartOrigin


def _child_seed(seed: int, *key: int) -> int:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(k) & 0xFFFFFFFF for k in key)]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def _kmeans_plus_plus(y: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = y.shape[0]
    centers = np.empty((K, y.shape[1]))
    centers[0] = y[rng.integers(n)]
    d2 = ((y - centers[0]) ** 2).sum(axis=1)
    for k in range(1, K):
        total = d2.sum()
        if total <= 0.0:
            centers[k] = y[rng.integers(n)]
            continue
        centers[k] = y[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((y - centers[k]) ** 2).sum(axis=1))
    return centers


def _lloyd(y: np.ndarray, centers: np.ndarray, max_iter: int) -> np.ndarray:
    """Lloyd iterations; returns hard assignments with no empty cluster."""
    K = centers.shape[0]
    centers = centers.copy()
    assign = np.full(y.shape[0], -1, dtype=int)
    reseeded = False
    for _ in range(max_iter):
        d2 = ((y[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        counts = np.bincount(new_assign, minlength=K)
        empty = np.flatnonzero(counts == 0)
        if empty.size and not reseeded:
            # one re-seed: park each empty center on the worst-served point
            reseeded = True
            dist_own = d2[np.arange(y.shape[0]), new_assign]
            order = np.argsort(dist_own)[::-1]
            for j, k in enumerate(empty):
                centers[k] = y[order[j]]
            continue
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for k in range(K):
            members = assign == k
            if members.any():
                centers[k] = y[members].mean(axis=0)
    # merge-smallest fallback: feed any still-empty cluster from the
    # smallest splittable one
    counts = np.bincount(assign, minlength=K)
    while (counts == 0).any():
        empty = int(np.flatnonzero(counts == 0)[0])
        donors = np.flatnonzero(counts >= 2)
        if donors.size == 0:
            raise ValueError("k-means cannot fill all clusters (K too large?)")
        donor = int(donors[np.argmin(counts[donors])])
        members = np.flatnonzero(assign == donor)
        center = y[members].mean(axis=0)
        farthest = members[np.argmax(((y[members] - center) ** 2).sum(axis=1))]
        assign[farthest] = empty
        counts = np.bincount(assign, minlength=K)
    return assign


def _component_from_cluster(
    rows: np.ndarray,
    weight: float,
    q: int,
    psi_floor: float,
    seed: int,
) -> ComponentParams:
    p = rows.shape[1]
    mean = rows.mean(axis=0)
    psi = np.maximum(rows.var(axis=0), psi_floor)
    q_eff = min(q, rows.shape[0], p)
    loadings = np.zeros((p, q))
    if q_eff >= 1:
        op = make_operator(
            rows, mean, np.ones(rows.shape[0]), np.ones(rows.shape[0]), psi
        )
        theta, vectors = top_eigenpairs(op, q_eff, tol=1e-10, seed=seed)
        loadings[:, :q_eff] = recover_lambda(psi, theta, vectors)
    return ComponentParams(
        weight=weight,
        mean=mean,
        loadings=loadings,
        uniquenesses=psi,
        dof=NU_INIT,
        n_factors=q,
    )


def kmeans_start(
    data: Dataset, K: int, q_vec, seed: int, psi_floor: float | None = None
) -> MixtureModel:
    """Data-driven start: k-means++ seeding, Lloyd's algorithm, then
    per-cluster moments and closed-form loadings."""
    y = data.y
    n, p = y.shape
    if K > n:
        raise ValueError(f"K={K} exceeds n={n}")
    q_vec = ecm._normalize_q_vec(q_vec, K)
    if psi_floor is None:
        psi_floor = FitConfig().resolve_psi_floor(y)
    rng = np.random.default_rng(_child_seed(seed, 1))
    centers = _kmeans_plus_plus(y, K, rng)
    assign = _lloyd(y, centers, KMEANS_MAX_ITER)
    comps = []
    for k in range(K):
        rows = y[assign == k]
        comps.append(
            _component_from_cluster(rows, rows.shape[0] / n, q_vec[k], psi_floor, seed)
        )
    return MixtureModel(components=tuple(comps), p=p)


def random_start(
    data: Dataset, K: int, q_vec, seed: int, psi_floor: float | None = None
) -> MixtureModel:
    """Random start: means drawn as distinct data points, global
    variances, small identifiable loadings, equal weights."""
    y = data.y
    n, p = y.shape
    if K > n:
        raise ValueError(f"K={K} exceeds n={n}")
    q_vec = ecm._normalize_q_vec(q_vec, K)
    if psi_floor is None:
        psi_floor = FitConfig().resolve_psi_floor(y)
    rng = np.random.default_rng(_child_seed(seed, 2))
    mean_rows = rng.choice(n, size=K, replace=False)
    psi = np.maximum(y.var(axis=0), psi_floor)
    comps = []
    for k in range(K):
        q = q_vec[k]
        # loadings = Psi^(1/2) V d with orthonormal V keep the
        # identifiability constraint exactly
        basis, _ = np.linalg.qr(rng.standard_normal((p, q)))
        loadings = np.sqrt(psi)[:, None] * basis * RANDOM_LOADING_SCALE
        comps.append(
            ComponentParams(
                weight=1.0 / K,
                mean=y[mean_rows[k]],
                loadings=loadings,
                uniquenesses=psi,
                dof=NU_INIT,
                n_factors=q,
            )
        )
    return MixtureModel(components=tuple(comps), p=p)


def em_em(data: Dataset, K: int, q_vec, config: FitConfig) -> MixtureModel:
    """Best model over the multi-start pool, run to full convergence."""
    if config.n_short_starts < 0:
        raise ValueError("n_short_starts must be non-negative")
    starts: list[tuple[StartOrigin, MixtureModel]] = []
    for i in range(config.n_short_starts):
        starts.append(
            (
                StartOrigin.RANDOM,
                random_start(data, K, q_vec, _child_seed(config.seed, 10, i)),
            )
        )
    starts.append(
        (StartOrigin.KMEANS, kmeans_start(data, K, q_vec, _child_seed(config.seed, 11)))
    )

    short_config = replace(config, max_iter=max(config.short_iters, 1))

    def run_short(item: tuple[StartOrigin, MixtureModel]):
        origin, model = item
        try:
            if config.short_iters >= 1:
                result = ecm.fit(data, K, q_vec, short_config, model)
                return StartCandidate(result.model, result.model.loglik, origin)
            return StartCandidate(model, ecm.observed_loglik(data, model), origin)
        except ecm.EcmError as exc:
            return exc

    outcomes = parallel_map(run_short, starts)
    candidates = [c for c in outcomes if isinstance(c, StartCandidate)]
    if not candidates:
        failures = "; ".join(
            f"{origin.value} start: {exc}" for (origin, _), exc in zip(starts, outcomes)
        )
        raise ecm.EcmError(f"all initialization starts failed: {failures}")

    n_retained = max(1, min(config.n_retained, len(candidates)))
    ranked = sorted(
        range(len(candidates)), key=lambda i: (-candidates[i].short_loglik, i)
    )
    retained = [candidates[i] for i in ranked[:n_retained]]

    def run_full(cand: StartCandidate):
        try:
            return ecm.fit(data, K, q_vec, config, cand.model)
        except ecm.EcmError as exc:
            return exc

    finals = parallel_map(run_full, retained)
    results = [r for r in finals if isinstance(r, ecm.FitResult)]
    if not results:
        failures = "; ".join(str(r) for r in finals)
        raise ecm.EcmError(f"all retained starts failed to converge: {failures}")
    best = max(range(len(results)), key=lambda i: (results[i].model.loglik, -i))
    return results[best].model
