"""BIC model selection over cluster counts and factor counts.

The factor count of every component is bounded by the requirement that
the low-rank-plus-diagonal structure actually reduces the free-parameter
count of a p x p scale matrix: (p - q)^2 > p + q, equivalently
q < p + (1 - sqrt(1 + 8p)) / 2. Grid cells are fitted independently with
child seeds derived from (seed, K, q_vec), so adding cells never
perturbs existing ones.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Iterable, Optional, Sequence

import numpy as np

from . import ecm, initialization
from ._threads import parallel_map, worker_count
from .model import Dataset, FitConfig, MixtureModel


__all__ = [
    "SelectionEntry",
    "SelectionTable",
    "max_factors",
    "count_params",
    "bic",
    "enumerate_q_vectors",
    "select",
    "table_to_csv",
    "table_to_json",
]

# exhaustive varied-q search is abandoned for a greedy one past this many cells
DEFAULT_CELL_CAP = 200

STATUS_CONVERGED = "converged"
STATUS_MAX_ITER = "max_iter"
STATUS_FAILED = "failed"


def max_factors(p: int) -> int:
    """Largest admissible factor count for dimension ``p``.

    Integer form of the strict bound q < p + (1 - sqrt(1 + 8p)) / 2,
    evaluated exactly as (p - q)^2 > p + q to avoid square-root rounding
    at boundary cases. Returns 0 when no q >= 1 is admissible.
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    best = 0
    for q in range(1, p + 1):
        if (p - q) ** 2 > p + q:
            best = q
    return best


def count_params(K: int, p: int, q_vec: Sequence[int]) -> int:
    """Free-parameter count: 2K - 1 + Kp + sum_k (p q_k + p - q_k(q_k-1)/2)."""
    q_vec = [int(q) for q in q_vec]
    if len(q_vec) != K:
        raise ValueError(f"q_vec length {len(q_vec)} != K={K}")
    bound = max_factors(p)
    for q in q_vec:
        if q > bound:
            raise ValueError(f"q={q} exceeds max_factors({p})={bound}")
    per_comp = sum(p * q + p - q * (q - 1) // 2 for q in q_vec)
    return 2 * K - 1 + K * p + per_comp


def bic(loglik: float, k_p: int, n: int) -> float:
    """Bayesian information criterion -2 ln L + k_p ln n (lower is better)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return -2.0 * loglik + k_p * math.log(n)


def enumerate_q_vectors(
    K: int,
    p: int,
    mode: str = "uniform",
    q_max_override: Optional[int] = None,
) -> list[tuple[int, ...]]:
    """Admissible factor-count vectors, sorted non-decreasing.

    ``uniform`` yields (q, ..., q); ``varied`` yields every multiset of
    size K (non-decreasing tuples), eliminating permutation duplicates.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    if mode not in ("uniform", "varied"):
        raise ValueError(f"mode must be 'uniform' or 'varied', got {mode!r}")
    q_max = max_factors(p)
    if q_max_override is not None:
        q_max = min(q_max, int(q_max_override))
    if q_max < 1:
        raise ValueError(
            f"no admissible factor count for p={p} (max_factors={max_factors(p)})"
        )
    if mode == "uniform":
        return [(q,) * K for q in range(1, q_max + 1)]
    return list(combinations_with_replacement(range(1, q_max + 1), K))


@dataclass(frozen=True)
class SelectionEntry:
    K: int
    q_vec: tuple[int, ...]
    loglik: float
    k_p: int
    bic: float
    status: str


@dataclass(frozen=True)
class SelectionTable:
    """Grid of fitted (K, q_vec) cells with the lowest-BIC entry marked.

    ``q_truncated`` records that the requested factor range was cut at
    the admissibility bound. ``best_result`` carries the winning fit; it
    is not serialized.
    """

    entries: tuple[SelectionEntry, ...]
    best_index: int
    q_truncated: bool = False
    best_result: Optional[ecm.FitResult] = field(default=None, compare=False)

    @property
    def best(self) -> SelectionEntry:
        return self.entries[self.best_index]


def _cell_seed(seed: int, K: int, q_vec: Sequence[int]) -> int:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, int(K), *(int(q) for q in q_vec)]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def _fit_cell(
    data: Dataset, K: int, q_vec: tuple[int, ...], config: FitConfig
) -> tuple[SelectionEntry, Optional[MixtureModel]]:
    cell_config = FitConfig.from_dict(
        {**config.to_dict(), "seed": _cell_seed(config.seed, K, q_vec)}
    )
    n = data.n
    try:
        model = initialization.em_em(data, K, q_vec, cell_config)
    except (ecm.EcmError, ValueError) as exc:
        entry = SelectionEntry(
            K=K,
            q_vec=q_vec,
            loglik=math.nan,
            k_p=count_params(K, data.p, q_vec),
            bic=math.inf,
            status=f"{STATUS_FAILED}: {exc}",
        )
        return entry, None
    k_p = count_params(K, data.p, q_vec)
    entry = SelectionEntry(
        K=K,
        q_vec=q_vec,
        loglik=model.loglik,
        k_p=k_p,
        bic=bic(model.loglik, k_p, n),
        status=STATUS_CONVERGED if model.converged else STATUS_MAX_ITER,
    )
    return entry, model


def _child_init() -> None:
    # one worker process per cell; no pools inside the children
    os.environ["MTFAD_THREADS"] = "1"


def _cell_task(args):
    data, K, q_vec, config = args
    before = len(ecm._ASCENT_AUDIT)
    entry, model = _fit_cell(data, K, q_vec, config)
    return entry, model, ecm._ASCENT_AUDIT[before:]


def _map_cells(
    data: Dataset, cells: Sequence[tuple[int, tuple[int, ...]]], config: FitConfig
) -> list[tuple[SelectionEntry, Optional[MixtureModel]]]:
    """Fit cells in (K, q_vec) order, one worker process per cell.

    Cells share nothing, so results (and the ascent audit merged back
    from the workers) are identical for any worker count.
    """
    workers = min(worker_count(), len(cells))
    if workers <= 1:
        return [_fit_cell(data, K, q_vec, config) for K, q_vec in cells]
    tasks = [(data, K, q_vec, config) for K, q_vec in cells]
    with ProcessPoolExecutor(max_workers=workers, initializer=_child_init) as pool:
        results = list(pool.map(_cell_task, tasks))
    out = []
    for entry, model, audit in results:
        ecm._ASCENT_AUDIT.extend(audit)
        out.append((entry, model))
    return out


def _greedy_varied_cells(
    data: Dataset,
    K: int,
    q_max: int,
    config: FitConfig,
) -> list[tuple[SelectionEntry, Optional[MixtureModel]]]:
    """Best uniform q first, then hill-climb +-1 per component."""
    uniform = [(q,) * K for q in range(1, q_max + 1)]
    fitted_uniform = parallel_map(lambda qv: _fit_cell(data, K, qv, config), uniform)
    results = dict(zip(uniform, fitted_uniform))

    def best_qv():
        return min(results, key=lambda qv: (results[qv][0].bic, qv))

    current = best_qv()
    while True:
        neighbors = set()
        for k in range(K):
            for step in (-1, 1):
                cand = list(current)
                cand[k] += step
                if 1 <= cand[k] <= q_max:
                    neighbors.add(tuple(sorted(cand)))
        new = [qv for qv in sorted(neighbors) if qv not in results]
        if not new:
            break
        for entry, model in parallel_map(
            lambda qv: _fit_cell(data, K, qv, config), new
        ):
            results[entry.q_vec] = (entry, model)
        improved = best_qv()
        if improved == current:
            break
        current = improved
    return [results[qv] for qv in sorted(results)]


def select(
    data: Dataset,
    K_range: Iterable[int],
    mode: str = "uniform",
    config: FitConfig = FitConfig(),
    q_max_override: Optional[int] = None,
    cell_cap: int = DEFAULT_CELL_CAP,
) -> SelectionTable:
    """Fit every (K, q_vec) cell and mark the lowest finite BIC.

    Failed cells are recorded with their error status and never abort
    the grid; the call errors only if every cell failed. Cells run on
    the shared worker pool and are assembled in (K, q_vec) order, so the
    table is identical for any thread count.
    """
    K_list = sorted(set(int(K) for K in K_range))
    if not K_list or K_list[0] < 1:
        raise ValueError("K_range must contain positive integers")
    q_bound = max_factors(data.p)
    q_truncated = q_max_override is not None and q_max_override > q_bound

    cells: list[tuple[int, tuple[int, ...]]] = []
    for K in K_list:
        for q_vec in enumerate_q_vectors(K, data.p, mode, q_max_override):
            cells.append((K, q_vec))

    fitted: list[tuple[SelectionEntry, Optional[MixtureModel]]]
    if mode == "varied" and len(cells) > cell_cap:
        q_max = min(q_bound, q_max_override) if q_max_override else q_bound
        fitted = []
        for K in K_list:
            fitted.extend(_greedy_varied_cells(data, K, q_max, config))
    else:
        fitted = _map_cells(data, cells, config)

    entries = tuple(entry for entry, _ in fitted)
    if all(not math.isfinite(e.bic) for e in entries):
        statuses = "; ".join(f"K={e.K} q={e.q_vec}: {e.status}" for e in entries)
        raise ecm.EcmError(f"every selection cell failed: {statuses}")
    best_index = min(
        range(len(entries)),
        key=lambda i: (entries[i].bic, entries[i].K, entries[i].q_vec),
    )
    best_model = fitted[best_index][1]
    best_result = ecm.make_result(data, best_model) if best_model is not None else None
    return SelectionTable(
        entries=entries,
        best_index=best_index,
        q_truncated=q_truncated,
        best_result=best_result,
    )


def table_to_csv(table: SelectionTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["K", "q_vec", "loglik", "k_p", "bic", "status", "best"])
    for i, e in enumerate(table.entries):
        writer.writerow(
            [
                e.K,
                "-".join(str(q) for q in e.q_vec),
                repr(e.loglik),
                e.k_p,
                repr(e.bic),
                e.status,
                int(i == table.best_index),
            ]
        )
    return buf.getvalue()


def table_to_json(table: SelectionTable, indent: int | None = 2) -> str:
    payload = {
        "entries": [
            {
                "K": e.K,
                "q_vec": list(e.q_vec),
                "loglik": e.loglik,
                "k_p": e.k_p,
                "bic": e.bic,
                "status": e.status,
            }
            for e in table.entries
        ],
        "best_index": table.best_index,
        "q_truncated": table.q_truncated,
    }
    return json.dumps(payload, indent=indent)
