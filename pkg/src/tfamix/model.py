"""Core domain types for t-factor-analyzer mixtures.

All containers are immutable value objects: array fields are copied on
construction and marked read-only, so instances can be shared freely
across threads. Serialization keeps full float precision (shortest
round-trip repr), so serialize -> deserialize is bit-exact for finite
values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np


__all__ = [
    "Dataset",
    "ComponentParams",
    "MixtureModel",
    "Responsibilities",
    "FitConfig",
    "validate_model",
    "model_to_json",
    "model_from_json",
    "identifiability_offdiag",
]

# Relative slack allowed for a single backward step in a loglik trace.
TRACE_SLACK = 1e-8
WEIGHT_SUM_TOL = 1e-12
IDENTIFIABILITY_TOL = 1e-8


def _frozen_array(values, dtype=float, ndim: int | None = None) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """Observation matrix with optional ground-truth labels.

    Parameters
    ----------
    y : ndarray, shape (n, p)
        Observations in rows; all entries must be finite.
    labels : ndarray of int, shape (n,), optional
        Ground-truth cluster labels in 1..L, used for evaluation only.
    feature_names : sequence of str, length p, optional
    """

    y: np.ndarray
    labels: Optional[np.ndarray] = None
    feature_names: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        y = _frozen_array(self.y, ndim=2)
        if y.shape[0] < 2 or y.shape[1] < 1:
            raise ValueError(f"need n >= 2 and p >= 1, got shape {y.shape}")
        if not np.all(np.isfinite(y)):
            raise ValueError("observations contain non-finite entries")
        object.__setattr__(self, "y", y)
        if self.labels is not None:
            labels = _frozen_array(self.labels, dtype=int, ndim=1)
            if labels.shape[0] != y.shape[0]:
                raise ValueError("labels length does not match number of rows")
            if labels.min() < 1 or labels.max() > y.shape[0]:
                raise ValueError("labels must lie in 1..L with L <= n")
            object.__setattr__(self, "labels", labels)
        if self.feature_names is not None:
            names = tuple(str(s) for s in self.feature_names)
            if len(names) != y.shape[1]:
                raise ValueError("feature_names length does not match p")
            object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.y.shape[1]


@dataclass(frozen=True)
class ComponentParams:
    """Parameter block of a single t-factor analyzer.

    The scale matrix of the component is ``loadings @ loadings.T +
    diag(uniquenesses)``; ``loadings.T @ diag(1/uniquenesses) @ loadings``
    must be diagonal (identifiability).
    """

    weight: float
    mean: np.ndarray
    loadings: np.ndarray
    uniquenesses: np.ndarray
    dof: float
    n_factors: int

    def __post_init__(self):
        object.__setattr__(self, "weight", float(self.weight))
        object.__setattr__(self, "dof", float(self.dof))
        object.__setattr__(self, "n_factors", int(self.n_factors))
        mean = _frozen_array(self.mean, ndim=1)
        loadings = _frozen_array(self.loadings)
        if loadings.ndim == 1:
            loadings = loadings.reshape(-1, 1) if self.n_factors == 1 else loadings
        if loadings.ndim != 2:
            raise ValueError("loadings must be a p x q matrix")
        uniq = _frozen_array(self.uniquenesses, ndim=1)
        p = mean.shape[0]
        if loadings.shape != (p, self.n_factors):
            raise ValueError(
                f"loadings shape {loadings.shape} != ({p}, {self.n_factors})"
            )
        if uniq.shape[0] != p:
            raise ValueError("uniquenesses length does not match p")
        loadings.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "loadings", loadings)
        object.__setattr__(self, "uniquenesses", uniq)

    @property
    def p(self) -> int:
        return self.mean.shape[0]

    def scale_matrix(self) -> np.ndarray:
        """Dense p x p scale matrix (diagnostics only; O(p^2) memory)."""
        return self.loadings @ self.loadings.T + np.diag(self.uniquenesses)


@dataclass(frozen=True)
class MixtureModel:
    """Ordered list of fitted components plus convergence metadata."""

    components: tuple[ComponentParams, ...]
    p: int
    loglik: float = math.nan
    trace: tuple[float, ...] = ()
    converged: bool = False
    iterations: int = 0

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "p", int(self.p))
        object.__setattr__(self, "loglik", float(self.loglik))
        object.__setattr__(self, "trace", tuple(float(v) for v in self.trace))
        object.__setattr__(self, "converged", bool(self.converged))
        object.__setattr__(self, "iterations", int(self.iterations))
        if not self.components:
            raise ValueError("a mixture needs at least one component")

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    def sorted_by_weight(self) -> "MixtureModel":
        """Components reordered by decreasing weight (stable on ties)."""
        order = sorted(
            range(len(self.components)), key=lambda k: (-self.components[k].weight, k)
        )
        return replace(self, components=tuple(self.components[k] for k in order))


@dataclass(frozen=True)
class Responsibilities:
    """Posterior summaries per observation and component.

    ``gamma[i, k]`` is the posterior probability that point i belongs to
    component k (rows sum to 1); ``eta[i, k]`` is the posterior mean of
    the latent gamma-weight, which downweights outlying points.
    """

    gamma: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        gamma = _frozen_array(self.gamma, ndim=2)
        eta = _frozen_array(self.eta, ndim=2)
        if gamma.shape != eta.shape:
            raise ValueError("gamma and eta shapes differ")
        if np.any(np.abs(gamma.sum(axis=1) - 1.0) > WEIGHT_SUM_TOL):
            raise ValueError("gamma rows must sum to 1")
        if np.any(eta <= 0.0):
            raise ValueError("eta entries must be positive")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "eta", eta)

    @property
    def n_components(self) -> int:
        return self.gamma.shape[1]


@dataclass(frozen=True)
class FitConfig:
    """Knobs of the ECM engine, initializer, and selection grid.

    ``psi_floor=None`` resolves at fit time to 1e-6 x the largest sample
    variance of the dataset. ``inner_opt_tol=None`` resolves to
    1e-7 x n_eff inside the per-component uniqueness optimization.
    """

    tol: float = 1e-6
    max_iter: int = 500
    n_short_starts: int = 20
    short_iters: int = 5
    n_retained: int = 3
    seed: int = 0
    psi_floor: Optional[float] = None
    dof_bounds: tuple[float, float] = (0.5, 200.0)
    eig_tol: float = 1e-10
    inner_opt_tol: Optional[float] = None
    inner_max_iter: int = 200
    rescue_degenerate: bool = True
    estimate_dof: bool = True

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        lo, hi = self.dof_bounds
        if not lo < hi:
            raise ValueError("dof_bounds must satisfy nu_min < nu_max")
        if self.psi_floor is not None and self.psi_floor <= 0:
            raise ValueError("psi_floor must be positive")

    def resolve_psi_floor(self, y: np.ndarray) -> float:
        if self.psi_floor is not None:
            return float(self.psi_floor)
        return 1e-6 * float(np.max(np.var(y, axis=0)))

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "dof_bounds" in d:
            d = dict(d, dof_bounds=tuple(d["dof_bounds"]))
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "tol": self.tol,
            "max_iter": self.max_iter,
            "n_short_starts": self.n_short_starts,
            "short_iters": self.short_iters,
            "n_retained": self.n_retained,
            "seed": self.seed,
            "psi_floor": self.psi_floor,
            "dof_bounds": list(self.dof_bounds),
            "eig_tol": self.eig_tol,
            "inner_opt_tol": self.inner_opt_tol,
            "inner_max_iter": self.inner_max_iter,
            "rescue_degenerate": self.rescue_degenerate,
            "estimate_dof": self.estimate_dof,
        }


def identifiability_offdiag(comp: ComponentParams) -> tuple[float, float]:
    """Off-diagonal and diagonal norms of loadings' Psi^-1 loadings.

    Returns ``(offdiag_norm, diag_norm)``; the identifiability constraint
    requires offdiag_norm <= 1e-8 * max(diag_norm, 1).
    """
    if comp.n_factors == 0:
        return 0.0, 0.0
    m = comp.loadings.T @ (comp.loadings / comp.uniquenesses[:, None])
    diag = np.diag(np.diag(m))
    off = m - diag
    return float(np.linalg.norm(off)), float(np.linalg.norm(diag))


def validate_model(model: MixtureModel) -> list[str]:
    """Check every type invariant; return one message per violation.

    An empty list means the model is valid. Diagnostic only: never raises
    for invariant violations.
    """
    from .selection import max_factors  # deferred: selection imports this module

    violations: list[str] = []
    weights = model.weights
    wsum = float(weights.sum())
    if abs(wsum - 1.0) > WEIGHT_SUM_TOL:
        violations.append(f"weights sum {wsum:.10g} != 1")
    q_bound = max_factors(model.p)
    for k, comp in enumerate(model.components):
        tag = f"component {k}"
        if not (0.0 < comp.weight <= 1.0):
            violations.append(f"{tag}: weight {comp.weight:.10g} outside (0, 1]")
        if comp.p != model.p:
            violations.append(f"{tag}: dimension {comp.p} != model p {model.p}")
        if not np.all(np.isfinite(comp.mean)):
            violations.append(f"{tag}: non-finite mean")
        if not np.all(np.isfinite(comp.loadings)):
            violations.append(f"{tag}: non-finite loadings")
        if np.any(comp.uniquenesses <= 0.0) or not np.all(
            np.isfinite(comp.uniquenesses)
        ):
            violations.append(f"{tag}: uniquenesses must be finite and positive")
        if not (math.isfinite(comp.dof) and comp.dof > 0.0):
            violations.append(f"{tag}: dof {comp.dof!r} must be finite and positive")
        if comp.n_factors > q_bound:
            violations.append(
                f"{tag}: n_factors {comp.n_factors} exceeds bound {q_bound} for p={model.p}"
            )
        off, diag = identifiability_offdiag(comp)
        if off > IDENTIFIABILITY_TOL * max(diag, 1.0):
            violations.append(
                f"{tag}: loadings not identifiable "
                f"(off-diagonal norm {off:.3g} vs diagonal {diag:.3g})"
            )
    trace = model.trace
    for t in range(1, len(trace)):
        slack = TRACE_SLACK * abs(trace[t - 1])
        if trace[t] < trace[t - 1] - slack:
            violations.append(
                f"trace decreases at step {t}: {trace[t - 1]:.10g} -> {trace[t]:.10g}"
            )
    return violations


def _component_to_dict(comp: ComponentParams) -> dict:
    return {
        "weight": comp.weight,
        "mean": comp.mean.tolist(),
        "loadings": comp.loadings.reshape(-1).tolist(),  # row-major
        "uniquenesses": comp.uniquenesses.tolist(),
        "dof": comp.dof,
        "n_factors": comp.n_factors,
    }


def _component_from_dict(d: dict) -> ComponentParams:
    p = len(d["mean"])
    q = int(d["n_factors"])
    loadings = np.array(d["loadings"], dtype=float).reshape(p, q)
    return ComponentParams(
        weight=d["weight"],
        mean=d["mean"],
        loadings=loadings,
        uniquenesses=d["uniquenesses"],
        dof=d["dof"],
        n_factors=q,
    )


def model_to_json(model: MixtureModel, indent: int | None = 2) -> str:
    """Serialize a model to JSON with full float precision."""
    payload = {
        "p": model.p,
        "loglik": model.loglik,
        "converged": model.converged,
        "iterations": model.iterations,
        "trace": list(model.trace),
        "components": [_component_to_dict(c) for c in model.components],
    }
    return json.dumps(payload, indent=indent)


def model_from_json(text: str) -> MixtureModel:
    d = json.loads(text)
    return MixtureModel(
        components=tuple(_component_from_dict(c) for c in d["components"]),
        p=d["p"],
        loglik=d["loglik"],
        trace=tuple(d.get("trace", ())),
        converged=d["converged"],
        iterations=d["iterations"],
    )
