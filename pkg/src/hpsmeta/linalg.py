"""Dense linear-algebra primitives used by every solver.

Matrices are plain 2-D float64 ``numpy`` arrays; :func:`as_matrix` validates
them at module boundaries.  Decompositions are delegated to LAPACK through
``numpy.linalg``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DegeneracyError

PINV_RTOL = 1e-12


def as_matrix(M, name="matrix"):
    """Return ``M`` as a finite 2-D float64 array or raise :class:`ArgumentError`."""
    A = np.asarray(M, dtype=np.float64)
    if A.ndim != 2:
        raise ArgumentError(f"{name} must be 2-D, got shape {A.shape}")
    if A.shape[0] < 1 or A.shape[1] < 1:
        raise ArgumentError(f"{name} must have at least one row and one column, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ArgumentError(f"{name} has non-finite entries")
    return A


@dataclass(frozen=True)
class TruncatedSVD:
    """Top-``s`` singular triplets: ``M ~ left @ diag(singular_values) @ right.T``."""

    left: np.ndarray
    singular_values: np.ndarray
    right: np.ndarray

    @property
    def rank(self):
        return self.singular_values.size

    def reconstruct(self):
        return (self.left * self.singular_values) @ self.right.T


def truncated_svd(M, s):
    """Top-``s`` singular triplets of ``M``.

    Parameters
    ----------
    M : array_like, shape (n, d)
    s : int
        Number of triplets to keep, ``1 <= s <= min(n, d)``.

    Returns
    -------
    TruncatedSVD
        ``left`` is ``(n, s)``, ``right`` is ``(d, s)``; both have orthonormal
        columns.  The reconstruction is a best rank-``s`` approximation of
        ``M`` in Frobenius norm.
    """
    A = as_matrix(M)
    if not (isinstance(s, (int, np.integer)) and 1 <= s <= min(A.shape)):
        raise ArgumentError(f"rank s={s!r} must be an integer in [1, {min(A.shape)}]")
    U, sv, Vt = np.linalg.svd(A, full_matrices=False)
    return TruncatedSVD(U[:, :s].copy(), sv[:s].copy(), Vt[:s].T.copy())


def best_rank_approximation(M, s):
    """``H_s(M)``: the rank-``s`` truncation of ``M``."""
    return truncated_svd(M, s).reconstruct()


def orthonormalize_rows(M):
    """Orthonormal basis (as rows) of the row span of a full-row-rank ``M``.

    Gram-Schmidt orientation: row ``i`` of the output is a positive multiple
    of the component of ``M[i]`` orthogonal to the earlier rows.
    """
    A = as_matrix(M)
    if A.shape[0] > A.shape[1]:
        raise ArgumentError(f"need rows <= cols, got shape {A.shape}")
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[0] == 0.0 or sv[-1] <= 1e-12 * sv[0]:
        raise DegeneracyError("matrix is numerically rank deficient")
    Q, R = np.linalg.qr(A.T)
    signs = np.where(np.diag(R) < 0, -1.0, 1.0)
    return (Q * signs).T


def spectral_norm(M):
    """Largest singular value of ``M``."""
    A = as_matrix(M)
    return float(np.linalg.svd(A, compute_uv=False)[0])


def pseudo_inverse(M, rtol=PINV_RTOL):
    """Moore-Penrose pseudo-inverse with singular values below ``rtol * sigma_max`` dropped."""
    A = as_matrix(M)
    U, sv, Vt = np.linalg.svd(A, full_matrices=False)
    keep = sv > rtol * sv[0] if sv[0] > 0 else np.zeros_like(sv, dtype=bool)
    inv = np.zeros_like(sv)
    inv[keep] = 1.0 / sv[keep]
    return (Vt.T * inv) @ U.T


def row_orthonormality_residual(B):
    """Frobenius norm of ``B B^T - I``."""
    B = np.asarray(B, dtype=np.float64)
    return float(np.linalg.norm(B @ B.T - np.eye(B.shape[0])))


def solve_psd_batch(G, q, rtol=PINV_RTOL):
    """Solve ``G[t] x[t] = q[t]`` for a stack of symmetric PSD systems.

    Uses the pseudo-inverse, so singular systems return the minimum-norm
    least-squares solution.  Returns ``(x, singular)`` where ``singular[t]``
    marks systems with an eigenvalue at or below ``rtol * lambda_max``.
    """
    G = np.asarray(G, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    lam, V = np.linalg.eigh(G)
    top = lam[..., -1:]
    keep = lam > rtol * np.where(top > 0, top, np.inf)
    inv = np.where(keep, 1.0 / np.where(keep, lam, 1.0), 0.0)
    coef = np.einsum("...ka,...k->...a", V, q) * inv
    x = np.einsum("...ka,...a->...k", V, coef)
    return x, ~np.all(keep, axis=-1)
