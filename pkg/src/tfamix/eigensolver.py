"""Matrix-free partial eigendecomposition of the whitened weighted scatter.

The operator is A = Psi^{-1/2} S Psi^{-1/2} with S the weighted scatter
of centered rows; applying A costs O(n_rows * p) and no p x p matrix is
ever formed. The top-q eigenpairs come from a thick-restart Lanczos
iteration with full reorthogonalization; convergence is certified by
explicit residuals. A dense decomposition is the fallback (and, in the
tests, the oracle) for small dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


__all__ = [
    "ScatterOperator",
    "make_operator",
    "top_eigenpairs",
    "top_eigenpairs_for_psi",
    "EmptyComponentError",
    "EigensolverError",
]

DENSE_FALLBACK_DIM = 64
MAX_RESTARTS = 300
# relative row-weight threshold below which a point contributes nothing
ROW_DROP_REL = 1e-12


class EmptyComponentError(ValueError):
    """The component has no effective mass (sum of gamma * eta <= 0)."""


class EigensolverError(RuntimeError):
    """Lanczos failed to converge and no dense fallback is allowed."""


@dataclass(frozen=True)
class ScatterOperator:
    """Apply-only view of Psi^{-1/2} S Psi^{-1/2}.

    ``centered`` holds the rows (y_i - mean) whose weight gamma_i * eta_i
    is non-negligible, ``weights`` the matching weights, and
    ``total_weight`` the full weight sum (including dropped rows), which
    normalizes the scatter. ``scatter_diag`` caches diag(S) and
    ``rooted`` the rows pre-scaled by sqrt(weight / total); neither
    depends on psi, so re-whitening is free.
    """

    centered: np.ndarray
    weights: np.ndarray
    inv_sqrt_psi: np.ndarray
    total_weight: float
    scatter_diag: np.ndarray
    rooted: np.ndarray

    @property
    def dim(self) -> int:
        return self.centered.shape[1]

    @property
    def n_rows(self) -> int:
        return self.centered.shape[0]

    def apply(self, v: np.ndarray) -> np.ndarray:
        """A @ v for v of shape (p,) or (p, m), in O(n_rows * p * m)."""
        u = self.inv_sqrt_psi * v.T if v.ndim == 1 else self.inv_sqrt_psi[:, None] * v
        if v.ndim == 1:
            t = self.centered @ u
            r = (t * self.weights) @ self.centered / self.total_weight
            return self.inv_sqrt_psi * r
        t = self.centered @ u
        r = self.centered.T @ (t * self.weights[:, None]) / self.total_weight
        return self.inv_sqrt_psi[:, None] * r

    def with_psi(self, psi: np.ndarray) -> "ScatterOperator":
        """Same scatter, re-whitened by a new psi (shares data arrays)."""
        return replace(self, inv_sqrt_psi=1.0 / np.sqrt(np.asarray(psi, dtype=float)))

    def dense(self) -> np.ndarray:
        """Densely formed operator matrix (small p only)."""
        g = self.rooted * self.inv_sqrt_psi
        return g.T @ g


def make_operator(
    data: np.ndarray,
    mean: np.ndarray,
    gamma_col: np.ndarray,
    eta_col: np.ndarray,
    psi: np.ndarray,
) -> ScatterOperator:
    """Assemble the scatter operator for one mixture component.

    Raises
    ------
    EmptyComponentError
        If the total weight sum(gamma * eta) is not positive.
    """
    w = np.asarray(gamma_col, dtype=float) * np.asarray(eta_col, dtype=float)
    total = float(w.sum())
    if total <= 0.0:
        raise EmptyComponentError("component has zero effective weight")
    keep = w >= ROW_DROP_REL * total
    centered = np.asarray(data, dtype=float)[keep] - np.asarray(mean, dtype=float)
    w_keep = w[keep]
    diag = (w_keep @ centered**2) / total
    return ScatterOperator(
        centered=centered,
        weights=w_keep,
        inv_sqrt_psi=1.0 / np.sqrt(np.asarray(psi, dtype=float)),
        total_weight=total,
        scatter_diag=diag,
        rooted=centered * np.sqrt(w_keep / total)[:, None],
    )


def _fresh_direction(rng: np.random.Generator, basis: np.ndarray, j: int) -> np.ndarray:
    """Random unit vector orthogonal to the first j basis columns."""
    p = basis.shape[0]
    for _ in range(50):
        v = rng.standard_normal(p)
        v -= basis[:, :j] @ (basis[:, :j].T @ v)
        v -= basis[:, :j] @ (basis[:, :j].T @ v)
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            return v / norm
    raise EigensolverError("could not generate a direction orthogonal to the basis")


def _canonical_signs(vectors: np.ndarray) -> np.ndarray:
    if vectors.shape[1] == 0:
        return vectors.copy()
    rows = np.abs(vectors).argmax(axis=0)
    signs = np.sign(vectors[rows, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _exact_eigenpairs(
    rooted: np.ndarray, inv_sqrt_psi: np.ndarray, q: int, canonical: bool
) -> tuple[np.ndarray, np.ndarray]:
    """Full-space Rayleigh-Ritz (the m = min(p, n_rows) limit of the
    restarted iteration, where it is exact in one pass)."""
    g = rooted * inv_sqrt_psi
    if rooted.shape[0] >= rooted.shape[1]:
        evals, evecs = np.linalg.eigh(g.T @ g)
        # eigh sorts ascending; reverse and take the leading block
        theta = evals[::-1][:q].copy()
        vectors = evecs[:, ::-1][:, :q]
    else:
        # fewer rows than dimensions: work on the small Gram side via SVD
        _, s, vt = np.linalg.svd(g, full_matrices=False)
        theta = (s[:q] ** 2).copy()
        vectors = vt[:q].T
    return theta, _canonical_signs(vectors) if canonical else vectors.copy()


def top_eigenpairs(
    op: ScatterOperator,
    q: int,
    tol: float,
    seed: int = 0,
    max_restarts: int = MAX_RESTARTS,
) -> tuple[np.ndarray, np.ndarray]:
    """Top-q eigenpairs of the operator, eigenvalues descending.

    Returns ``(theta, vectors)`` with ``vectors`` orthonormal columns and
    explicit residuals ||A v - theta v|| <= tol * max(theta_1, 1). The
    starting vector is drawn from ``seed``, so the result is
    deterministic. On non-convergence a dense decomposition is used when
    p <= 64, otherwise :class:`EigensolverError` is raised.
    """
    return top_eigenpairs_for_psi(op, None, q, tol, seed, max_restarts=max_restarts)


def top_eigenpairs_for_psi(
    op: ScatterOperator,
    psi,
    q: int,
    tol: float,
    seed: int = 0,
    canonical: bool = True,
    max_restarts: int = MAX_RESTARTS,
) -> tuple[np.ndarray, np.ndarray]:
    """:func:`top_eigenpairs` of the operator re-whitened by ``psi``.

    Re-whitening shares the scatter data, so the uniqueness optimizer can
    probe many psi values without rebuilding anything. ``canonical=False``
    skips the sign normalization (the profile objective and gradient only
    see squared vector entries).
    """
    inv_sqrt_psi = (
        op.inv_sqrt_psi if psi is None else 1.0 / np.sqrt(np.asarray(psi, dtype=float))
    )
    p = op.dim
    rank_bound = min(p, op.n_rows)
    if not 1 <= q <= rank_bound:
        raise ValueError(f"need 1 <= q <= min(p, n_rows) = {rank_bound}, got {q}")
    m = min(max(2 * q + 2, 20), rank_bound)
    m = max(m, min(q + 2, p))
    if m >= rank_bound:
        # the subspace budget covers every reachable direction, so
        # restarting is vacuous; one exact pass replaces the iteration
        return _exact_eigenpairs(op.rooted, inv_sqrt_psi, q, canonical)
    if inv_sqrt_psi is not op.inv_sqrt_psi:
        op = replace(op, inv_sqrt_psi=inv_sqrt_psi)
    rng = np.random.default_rng(seed)

    basis = np.zeros((p, m))
    proj = np.zeros((m, m))
    v0 = rng.standard_normal(p)
    basis[:, 0] = v0 / np.linalg.norm(v0)
    j_start = 0
    breakdown_floor = 1e-14

    for _ in range(max_restarts):
        # expand columns j_start..m-1, keeping A V = V H + w e_m^T
        resid = np.zeros(p)
        beta = 0.0
        scale = 1.0
        for j in range(j_start, m):
            w = op.apply(basis[:, j])
            h = basis[:, : j + 1].T @ w
            w = w - basis[:, : j + 1] @ h
            g = basis[:, : j + 1].T @ w
            w = w - basis[:, : j + 1] @ g
            h += g
            proj[: j + 1, j] = h
            proj[j, : j + 1] = h
            beta = float(np.linalg.norm(w))
            scale = max(scale, float(np.abs(h).max(initial=0.0)))
            if j + 1 < m:
                if beta <= breakdown_floor * scale:
                    # invariant subspace found: continue in a fresh direction
                    basis[:, j + 1] = _fresh_direction(rng, basis, j + 1)
                    proj[j + 1, j] = 0.0
                    proj[j, j + 1] = 0.0
                else:
                    basis[:, j + 1] = w / beta
                    proj[j + 1, j] = beta
                    proj[j, j + 1] = beta
            else:
                resid = w

        evals, evecs = np.linalg.eigh((proj + proj.T) / 2.0)
        order = np.argsort(evals)[::-1]
        evals = evals[order]
        evecs = evecs[:, order]
        threshold = tol * max(evals[0], 1.0)

        bound = beta * np.abs(evecs[m - 1, :q])
        if np.all(bound <= threshold):
            vectors = basis @ evecs[:, :q]
            theta = evals[:q].copy()
            # certify with explicit residuals before accepting
            res = op.apply(vectors) - vectors * theta
            if float(np.abs(np.linalg.norm(res, axis=0)).max()) <= threshold:
                return theta, _canonical_signs(vectors) if canonical else vectors

        if m == p:
            # full-space Rayleigh-Ritz is exact; only roundoff can bring
            # us here, so fall through to the dense path below
            break

        # thick restart: keep the leading Ritz vectors plus the residual
        keep = max(min(q + 5, m - 2), 1)
        new_basis = np.zeros((p, m))
        new_basis[:, :keep] = basis @ evecs[:, :keep]
        if beta > breakdown_floor * scale:
            new_basis[:, keep] = resid / beta
        else:
            new_basis[:, keep] = _fresh_direction(rng, new_basis, keep)
        basis = new_basis
        proj = np.zeros((m, m))
        proj[np.diag_indices(keep)] = evals[:keep]
        j_start = keep

    if p <= DENSE_FALLBACK_DIM:
        return _exact_eigenpairs(op.rooted, op.inv_sqrt_psi, q, canonical)
    raise EigensolverError(
        f"Lanczos did not converge within {max_restarts} restarts (p={p}, q={q})"
    )
