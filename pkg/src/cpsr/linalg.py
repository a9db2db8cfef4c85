"""Thin SVD, pseudoinverse application and additive (Brand-style) SVD updates.

All routines work on dense ``numpy`` arrays and never mutate their inputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericalError

DEFAULT_SV_TOL = 1e-6


@dataclass(frozen=True)
class SvdFactors:
    """Truncated factorisation ``a ~= u @ diag(s) @ v.T``.

    ``u`` is ``(n, k)``, ``s`` is ``(k,)`` sorted non-increasing and ``v`` is
    ``(m, k)``. ``k`` may be zero when every singular value was dropped.
    """

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.s.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape[0], self.v.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.v.T


def _check_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.size == 0:
        raise NumericalError("empty input")
    if not np.all(np.isfinite(a)):
        raise NumericalError("non-finite")
    return a


def _truncate(u, s, vt, rank_limit, sv_tol):
    keep = min(rank_limit, s.shape[0])
    # s is sorted, so the first entry below tolerance ends the kept block
    below = np.nonzero((s < sv_tol) | (s <= 0.0))[0]
    if below.size:
        keep = min(keep, int(below[0]))
    u, v = u[:, :keep].copy(), vt[:keep].T.copy()
    # fix signs so the largest-magnitude entry of each left vector is positive
    if keep:
        idx = np.argmax(np.abs(u), axis=0)
        sign = np.sign(u[idx, np.arange(keep)])
        sign[sign == 0] = 1.0
        u *= sign
        v *= sign
    return SvdFactors(u, s[:keep].copy(), v)


def _svd(a):
    try:
        return np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError:
        pass
    # the divide-and-conquer driver occasionally fails; the QR-based one is slower but sturdier
    try:
        return scipy.linalg.svd(a, full_matrices=False, lapack_driver="gesvd")
    except np.linalg.LinAlgError as exc:
        raise NumericalError("svd did not converge") from exc


def thin_svd(a, rank_limit: int, sv_tol: float = DEFAULT_SV_TOL) -> SvdFactors:
    """Rank-limited thin SVD with an absolute singular-value floor."""
    if rank_limit < 1:
        raise ValueError("rank_limit must be >= 1")
    if sv_tol < 0:
        raise ValueError("sv_tol must be >= 0")
    a = _check_matrix(a)
    u, s, vt = _svd(a)
    return _truncate(u, s, vt, rank_limit, sv_tol)


def pinv_apply(f: SvdFactors, x) -> np.ndarray:
    """Apply the pseudoinverse ``V S^-1 U^T`` of the retained triplets to ``x``."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != f.u.shape[0]:
        raise ValueError(f"dimension mismatch: {x.shape[0]} != {f.u.shape[0]}")
    coef = f.u.T @ x
    if coef.ndim == 1:
        return f.v @ (coef / f.s)
    return f.v @ (coef / f.s[:, None])


def _complement_basis(basis, block, tol):
    """Orthonormal basis for the part of ``block``'s range orthogonal to ``basis``."""
    resid = block - basis @ (basis.T @ block)
    if resid.size == 0:
        return np.zeros((block.shape[0], 0))
    q, sv, _ = np.linalg.svd(resid, full_matrices=False)
    q = q[:, sv > tol]
    if q.shape[1] == 0:
        return q
    # second pass; a single projection leaks when resid is tiny
    q = q - basis @ (basis.T @ q)
    q, r = np.linalg.qr(q)
    return q[:, np.abs(np.diag(r)) > 0.5]


def _reorthonormalize(u, s, v):
    qu, ru = np.linalg.qr(u)
    qv, rv = np.linalg.qr(v)
    uc, sc, vct = np.linalg.svd((ru * s) @ rv.T)
    return qu @ uc, sc, qv @ vct.T


def incremental_svd_update(
    f: SvdFactors, delta, rank_limit: int, sv_tol: float = DEFAULT_SV_TOL
) -> SvdFactors:
    """Truncated SVD of ``U S V^T + delta`` without refactoring the full sum.

    The update extends the current left/right bases with the components of
    ``delta`` lying outside them, diagonalises the small core matrix and then
    truncates. Truncation happens after re-diagonalisation.
    """
    delta = _check_matrix(delta)
    if delta.shape != f.shape:
        raise ValueError(f"shape mismatch: {delta.shape} != {f.shape}")
    if rank_limit < 1:
        raise ValueError("rank_limit must be >= 1")

    scale = max(float(np.abs(delta).max()), float(f.s[0]) if f.rank else 0.0, 1e-300)
    tol = 64 * np.finfo(float).eps * scale * max(delta.shape)

    p = _complement_basis(f.u, delta, tol)
    q = _complement_basis(f.v, delta.T, tol)
    left = np.hstack([f.u, p])
    right = np.hstack([f.v, q])

    core = left.T @ delta @ right
    k = f.rank
    core[:k, :k] += np.diag(f.s)
    uc, sc, vct = _svd(core)
    out = _truncate(left @ uc, sc, (right @ vct.T).T, rank_limit, sv_tol)
    if out.rank == 0:
        return out
    u, s, v = _reorthonormalize(out.u, out.s, out.v)
    return _truncate(u, s, v.T, rank_limit, sv_tol)
