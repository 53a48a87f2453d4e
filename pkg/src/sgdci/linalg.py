"""Dense linear algebra for small symmetric systems.

Everything here operates on explicitly stored d x d symmetric matrices with
d small (hundreds at most). The factorization is written out rather than
delegated so that the positive-definiteness decision applies one fixed pivot
rule: a pivot is accepted only if it exceeds 1e-12 times the largest diagonal
entry of the input. The factorization pivots on the largest remaining
diagonal of the Schur complement, which makes the rule rank-revealing: a
singular matrix concentrates its null directions in the trailing pivots
instead of smearing them across several columns, so genuine rank deficiency
(batch-means covariances with m <= d are singular by construction) is
separated from harmless round-off. The degeneracy studies depend on that
separation.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, NotPositiveDefinite

PIVOT_RTOL = 1e-12


class SymMatrix:
    """A real symmetric matrix stored in full.

    Construction symmetrizes the input as (A + A.T) / 2, which is exact in
    floating point, so ``entries[i, j] == entries[j, i]`` always holds.
    """

    __slots__ = ("entries",)

    def __init__(self, entries):
        a = np.asarray(entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
        if a.shape[0] < 1:
            raise DimensionMismatch("dimension must be at least 1")
        self.entries = 0.5 * (a + a.T)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def __repr__(self):
        return f"SymMatrix(dim={self.dim})"


class CholFactor:
    """Pivoted Cholesky factor: S[perm[i], perm[j]] == (L @ L.T)[i, j].

    ``lower`` is lower triangular with strictly positive diagonal and
    ``perm`` records the diagonal pivoting order. det(S) is the squared
    product of the diagonal regardless of the permutation.
    """

    __slots__ = ("lower", "perm")

    def __init__(self, lower: np.ndarray, perm=None):
        self.lower = lower
        self.perm = np.arange(lower.shape[0]) if perm is None else perm

    @property
    def dim(self) -> int:
        return self.lower.shape[0]


def cholesky(S: SymMatrix) -> CholFactor:
    """Factor S with diagonal pivoting, failing on any pivot <= tolerance.

    Each step pivots on the largest remaining Schur-complement diagonal and
    accepts it only above 1e-12 * max initial diagonal. Raises
    NotPositiveDefinite when the rule rejects a column; callers treat that
    as the degenerate-covariance signal.
    """
    a = S.entries
    d = S.dim
    maxdiag = float(np.max(np.diag(a)))
    if maxdiag <= 0.0:
        raise NotPositiveDefinite("matrix has no positive diagonal entry")
    tol = PIVOT_RTOL * maxdiag
    perm = np.arange(d)
    sdiag = np.diag(a).astype(float).copy()  # Schur diagonal, permuted order
    L = np.zeros((d, d))
    for j in range(d):
        k = j + int(np.argmax(sdiag[j:]))
        pivot = float(sdiag[k])
        if pivot <= tol:
            raise NotPositiveDefinite(
                f"pivot {pivot:.3e} at column {j} below tolerance {tol:.3e}"
            )
        if k != j:
            perm[[j, k]] = perm[[k, j]]
            sdiag[[j, k]] = sdiag[[k, j]]
            L[[j, k], :j] = L[[k, j], :j]
        ljj = np.sqrt(pivot)
        L[j, j] = ljj
        if j + 1 < d:
            rows = perm[j + 1 :]
            col = (a[rows, perm[j]] - L[j + 1 :, :j] @ L[j, :j]) / ljj
            L[j + 1 :, j] = col
            sdiag[j + 1 :] -= col * col
    return CholFactor(L, perm)


def quad_form_inv(S: SymMatrix, v) -> float:
    """Return v^T S^{-1} v through one triangular solve of the factor."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.shape[0] != S.dim:
        raise DimensionMismatch(
            f"vector of length {v.shape} against matrix of dim {S.dim}"
        )
    f = cholesky(S)
    L = f.lower
    vp = v[f.perm]
    # v^T S^{-1} v = || L^{-1} (P^T v) ||^2, forward substitution
    y = np.zeros_like(vp)
    for i in range(S.dim):
        y[i] = (vp[i] - L[i, :i] @ y[:i]) / L[i, i]
    return float(y @ y)


def det_sqrt(S: SymMatrix) -> float:
    """det(S)^{1/2} via the Cholesky diagonal; 0.0 when factorization fails.

    The zero return is load-bearing: degeneracy studies feed singular
    covariances through here on purpose.
    """
    try:
        L = cholesky(S).lower
    except NotPositiveDefinite:
        return 0.0
    return float(np.prod(np.diag(L)))
