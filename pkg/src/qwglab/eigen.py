"""Lowest eigenpairs of symmetric generalized pairs ``K x = lambda M x``.

The sparse path is shift-invert Lanczos (ARPACK through scipy) driven by a
single sparse LU factorization of ``K - sigma M``. The factorization is done
without off-diagonal pivoting so that the signs of ``diag(U)`` give the
inertia of ``K - sigma M`` (Sylvester). That count is used to make sure no
eigenvalue below the shift was skipped: if one was, the shift is lowered until
it sits below the whole spectrum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, splu

DENSE_LIMIT = 2000
# below this size ARPACK is not worth it
_SMALL_DIM = 64


class EigenSolveError(RuntimeError):
    """Raised when the iteration budget is exhausted or a factorization breaks down.

    ``partial`` holds an :class:`EigenResult` with whatever pairs did converge
    (possibly ``None``).
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass
class EigenResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    iterations: int
    converged: np.ndarray
    sigma: float = 0.0
    inertia_checked: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged))


def _matrices(pair):
    if isinstance(pair, tuple):
        K, M = pair
    else:
        K, M = pair.K, pair.M
    return sp.csc_matrix(K), sp.csc_matrix(M)


def _factor(A):
    """Pivot-free sparse LU of a symmetric matrix; returns (lu, negative count or None)."""
    try:
        lu = splu(
            A,
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
    except RuntimeError:  # exactly singular
        return None, None
    if np.array_equal(lu.perm_r, lu.perm_c):
        neg = int(np.count_nonzero(lu.U.diagonal() < 0.0))
    else:
        neg = None
    return lu, neg


def _normalize_signs(X):
    idx = np.argmax(np.abs(X), axis=0)
    signs = np.sign(X[idx, np.arange(X.shape[1])])
    signs[signs == 0] = 1.0
    return X * signs


def _rayleigh_ritz(K, M, X):
    """Re-diagonalize inside span(X); returns M-orthonormal vectors and values."""
    A = X.T @ (K @ X)
    B = X.T @ (M @ X)
    A = 0.5 * (A + A.T)
    B = 0.5 * (B + B.T)
    vals, C = sla.eigh(A, B)
    return vals, X @ C


def _residuals(K, M, vals, X):
    MX = M @ X
    R = K @ X - MX * vals
    return np.linalg.norm(R, axis=0), np.linalg.norm(MX, axis=0)


def _finish(K, M, vals, X, tol, iterations, sigma, inertia_checked, meta=None):
    vals, X = _rayleigh_ritz(K, M, X)
    X = _normalize_signs(X)
    res, mnorm = _residuals(K, M, vals, X)
    converged = res <= tol * (np.abs(vals) + 1.0) * mnorm
    return EigenResult(
        eigenvalues=vals,
        eigenvectors=X,
        residuals=res,
        iterations=iterations,
        converged=converged,
        sigma=float(sigma),
        inertia_checked=inertia_checked,
        meta=dict(meta or {}),
    )


def _dense_pairs(K, M, k):
    vals, X = sla.eigh(K.toarray(), M.toarray(), subset_by_index=[0, k - 1])
    return vals, X


def lowest_eigenpairs(pair, k, tol=1e-8, seed=0, sigma=None, maxiter=500):
    """The ``k`` algebraically smallest eigenpairs of ``(K, M)``.

    Parameters
    ----------
    pair : SparsePair or tuple
        Anything with ``K`` and ``M`` attributes, or a ``(K, M)`` tuple.
    k : int
        Number of pairs.
    tol : float
        Residual contract ``|K x - lambda M x| <= tol (|lambda| + 1) |M x|``.
    seed : int
        Seeds the Lanczos start vector.
    sigma : float, optional
        Shift. Should sit at or below the wanted cluster; it is lowered
        automatically when the inertia shows skipped eigenvalues.
    maxiter : int
        ARPACK restart budget.
    """
    K, M = _matrices(pair)
    n = K.shape[0]
    if K.shape != M.shape or K.shape[0] != K.shape[1]:
        raise ValueError("K and M must be square and of equal shape")
    if k < 1 or k > n:
        raise ValueError(f"k={k} outside [1, {n}]")
    sigma = 0.0 if sigma is None else float(sigma)

    if n <= _SMALL_DIM or k >= n - 1:
        vals, X = _dense_pairs(K, M, k)
        return _finish(K, M, vals, X, tol, 1, sigma, True, {"method": "dense"})

    lu, neg = _factor(K - sigma * M)
    lowered = 0
    # a nearest-to-sigma search can skip eigenvalues far below sigma;
    # lower the shift until the inertia says nothing lies below it
    step = max(1.0, abs(sigma))
    while lu is None or (neg is not None and neg > 0):
        sigma -= step
        step *= 2.0
        lowered += 1
        if lowered > 60:
            raise EigenSolveError("could not place the shift below the spectrum")
        lu, neg = _factor(K - sigma * M)

    counter = {"n": 0}

    def solve(b):
        counter["n"] += 1
        return lu.solve(np.asarray(b, dtype=float))

    OPinv = LinearOperator((n, n), matvec=solve, dtype=float)
    v0 = np.random.default_rng(seed).standard_normal(n)
    ncv = min(n, max(2 * k + 1, k + 8, 20))
    try:
        vals, X = eigsh(
            K,
            k=k,
            M=M,
            sigma=sigma,
            which="LM",
            OPinv=OPinv,
            v0=v0,
            ncv=ncv,
            maxiter=maxiter,
            tol=0.0,
        )
    except ArpackNoConvergence as exc:
        partial = None
        if len(exc.eigenvalues):
            partial = _finish(
                K, M, exc.eigenvalues, exc.eigenvectors, tol, counter["n"], sigma, neg is not None
            )
        raise EigenSolveError(f"ARPACK did not converge within {maxiter} restarts", partial) from exc

    order = np.argsort(vals)
    return _finish(
        K,
        M,
        vals[order],
        X[:, order],
        tol,
        counter["n"],
        sigma,
        neg is not None,
        {"method": "shift-invert-lanczos", "shift_lowered": lowered},
    )


def dense_eigen_reference(pair, max_dim=DENSE_LIMIT):
    """Full generalized spectrum by dense reduction, ascending."""
    K, M = _matrices(pair)
    n = K.shape[0]
    if n > max_dim:
        raise ValueError(f"dimension {n} exceeds the dense cap {max_dim}")
    return sla.eigh(K.toarray(), M.toarray(), eigvals_only=True)


def rayleigh_quotient(pair, x):
    K, M = _matrices(pair)
    x = np.asarray(x, dtype=float)
    den = float(x @ (M @ x))
    if not den > 0.0:
        raise ValueError("vector has zero M-norm")
    return float(x @ (K @ x)) / den
