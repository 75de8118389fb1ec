"""Dense symmetric linear algebra used throughout the package.

Everything here operates on plain float64 ndarrays or on ``SymMatrix``,
a thin immutable wrapper that guarantees exact entrywise symmetry and
caches the (expensive) eigendecomposition.  Target sizes are modest
(d up to a few thousand), so matrices are always stored dense.

The eigen and QR factorizations are delegated to LAPACK via numpy;
``orthonormalize`` additionally pins a sign convention so that golden
tests see deterministic output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .errors import InputError, NumericalError


def _as_float_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise InputError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite entries")
    return arr


class SymMatrix:
    """Immutable dense symmetric matrix.

    Construction symmetrizes the input as (A + A^T)/2, which yields
    *exact* entrywise symmetry in IEEE arithmetic (addition commutes),
    and freezes the storage.  Positive semidefiniteness is not enforced
    here; it is checked lazily through the eigendecomposition by the
    callers that need it.

    ``block_bounds`` optionally records a block-diagonal structure as a
    list of (start, stop) index pairs.  It is metadata only: storage
    stays dense, but block-aware consumers (exact tail enumeration,
    fast quadratic forms) can exploit it.
    """

    __slots__ = ("_a", "dim", "block_bounds", "_eig")

    def __init__(self, entries, block_bounds=None):
        a = _as_float_matrix(entries)
        if a.shape[0] != a.shape[1]:
            raise InputError(f"matrix must be square, got shape {a.shape}")
        a = (a + a.T) / 2.0
        a.setflags(write=False)
        self._a = a
        self.dim = a.shape[0]
        if block_bounds is not None:
            block_bounds = tuple((int(s), int(t)) for s, t in block_bounds)
            if block_bounds[0][0] != 0 or block_bounds[-1][1] != self.dim or any(
                b[1] != c[0] for b, c in zip(block_bounds, block_bounds[1:])
            ):
                raise InputError("block_bounds must tile [0, dim) contiguously")
        self.block_bounds = block_bounds
        self._eig = None

    @property
    def entries(self) -> np.ndarray:
        """Read-only view of the dense storage."""
        return self._a

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self._a @ x

    @property
    def trace(self) -> float:
        return float(np.trace(self._a))

    @property
    def diagonal(self) -> np.ndarray:
        return np.diagonal(self._a)

    def eig(self) -> "EigenDecomp":
        """Cached eigendecomposition (safe to race: recompute is idempotent)."""
        if self._eig is None:
            self._eig = eig_sym(self)
        return self._eig

    @property
    def lambda_max(self) -> float:
        return self.eig().eigenvalues[0]

    def __repr__(self):
        return f"SymMatrix(dim={self.dim}, blocks={len(self.block_bounds) if self.block_bounds else 1})"


@dataclass(frozen=True)
class EigenDecomp:
    """Eigenvalues sorted descending and the matching orthonormal columns."""

    eigenvalues: np.ndarray  # shape (d,), descending
    eigenvectors: np.ndarray  # shape (d, d), column k pairs with eigenvalues[k]


def eig_sym(a) -> EigenDecomp:
    """Full eigendecomposition of a symmetric matrix.

    Returns eigenvalues in descending order with eigenvector columns
    reordered to match and signs fixed (largest-magnitude entry of each
    column positive) for cross-run determinism.
    """
    mat = a.entries if isinstance(a, SymMatrix) else _as_float_matrix(a)
    if mat.shape[0] != mat.shape[1]:
        raise InputError(f"matrix must be square, got shape {mat.shape}")
    if not np.allclose(mat, mat.T, rtol=0.0, atol=0.0):
        mat = (mat + mat.T) / 2.0
    try:
        w, v = np.linalg.eigh(mat)
    except np.linalg.LinAlgError as exc:
        off = float(np.abs(mat - np.diag(np.diagonal(mat))).max())
        raise NumericalError(
            f"symmetric eigensolver failed to converge (max off-diagonal {off:.3e})"
        ) from exc
    w = w[::-1].copy()
    v = v[:, ::-1]
    flip = np.where(v[np.abs(v).argmax(axis=0), np.arange(v.shape[1])] < 0.0, -1.0, 1.0)
    v = np.ascontiguousarray(v * flip)
    return EigenDecomp(eigenvalues=w, eigenvectors=v)


def orthonormalize(r) -> np.ndarray:
    """Orthonormal basis for the column span of ``r`` (d x s, s <= d).

    Householder QR (LAPACK) taking the thin Q factor.  Columns are
    rescaled so the first nonzero entry of each is positive ("nonzero"
    meaning above 1e-12 of the column's largest magnitude), which makes
    the output deterministic and hand-checkable.

    Raises ``InputError`` naming the first column whose component
    orthogonal to the previous columns has norm <= 1e-12, i.e. the
    column that makes ``r`` numerically rank deficient.
    """
    mat = _as_float_matrix(r, name="r")
    d, s = mat.shape
    if s > d:
        raise InputError(f"need tall matrix, got {d}x{s}")
    q, rr = np.linalg.qr(mat, mode="reduced")
    resid = np.abs(np.diagonal(rr))
    bad = np.nonzero(resid <= 1e-12)[0]
    if bad.size:
        k = int(bad[0])
        raise InputError(
            f"column {k} is linearly dependent on earlier columns "
            f"(projected norm {resid[k]:.3e} <= 1e-12)"
        )
    scale = np.abs(q).max(axis=0)
    first_nz = (np.abs(q) > 1e-12 * scale).argmax(axis=0)
    signs = np.where(q[first_nz, np.arange(s)] < 0.0, -1.0, 1.0)
    return q * signs


def orthonormalize_fast(r) -> np.ndarray:
    """Orthonormal basis for the columns of ``r`` via Cholesky QR.

    Computes Q = R (chol(R^T R))^{-T}, the thin-QR Q factor with the
    positive-diagonal convention; it spans the same space as
    :func:`orthonormalize` and matches it up to column signs, at a
    fraction of the cost for the small tall blocks the optimizer hot
    path produces (one triangular inversion plus a GEMM).  Requires
    well-conditioned columns (fine for random Gaussian blocks); falls
    back to Householder QR when the Gram matrix is not numerically
    positive definite.
    """
    mat = _as_float_matrix(r, name="r")
    gram = mat.T @ mat
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        return orthonormalize(mat)
    inv, info = lapack.dtrtri(chol, lower=1)
    if info != 0:
        return orthonormalize(mat)
    return mat @ inv.T


def srank(a) -> float:
    """Stable rank: sum of squared singular values over the largest one.

    Equals ||A||_F^2 / sigma_max^2; always in [1, rank(A)].
    """
    mat = a.entries if isinstance(a, SymMatrix) else _as_float_matrix(a)
    sig = np.linalg.svd(mat, compute_uv=False)
    smax = sig[0]
    if smax == 0.0:
        raise NumericalError("stable rank is undefined for the zero matrix")
    ratios = sig / smax
    return float(np.sum(ratios * ratios))


def intdim(a) -> float:
    """Intrinsic dimension of a PSD matrix: trace over operator norm."""
    sym = a if isinstance(a, SymMatrix) else SymMatrix(a)
    lam = sym.eig().eigenvalues
    lmax = lam[0]
    if lmax <= 0.0:
        raise NumericalError("intrinsic dimension is undefined for the zero matrix")
    if lam[-1] < -1e-9 * lmax:
        raise InputError(f"matrix is not PSD (lambda_min = {lam[-1]:.3e})")
    return float(sym.trace / lmax)
