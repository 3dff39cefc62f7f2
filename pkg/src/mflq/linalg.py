"""Rank-aware linear algebra used by the Riccati and feasibility machinery.

Pseudo-inverses here are rank-revealing: singular values below a relative
cutoff are treated as exact zeros, and the retained rank travels with the
result so callers can flag near-degenerate weighting matrices instead of
silently inverting noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_RTOL = 1e-10

# Relative symmetry slack for matrices that are symmetric by construction but
# assembled through non-associative float products.
_SYM_RTOL = 1e-9


@dataclass(frozen=True)
class PinvResult:
    """Moore-Penrose pseudo-inverse together with its rank decision.

    ``smallest_retained`` is the smallest singular value kept above the
    cutoff (0.0 when the matrix is treated as zero), so callers can tell how
    close the rank decision was.
    """

    pinv: np.ndarray
    rank: int
    singular_values: np.ndarray
    cutoff: float

    @property
    def smallest_retained(self) -> float:
        if self.rank == 0:
            return 0.0
        return float(self.singular_values[self.rank - 1])


def pinv(M, rtol: float = DEFAULT_RTOL) -> PinvResult:
    """Pseudo-invert M, zeroing singular values below rtol * max_dim * s_max."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"pinv expects a matrix, got shape {M.shape}")
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    cutoff = rtol * max(M.shape) * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > cutoff))
    inv_s = np.zeros_like(s)
    inv_s[:rank] = 1.0 / s[:rank]
    P = (Vt.T * inv_s) @ U.T
    return PinvResult(pinv=P, rank=rank, singular_values=s, cutoff=cutoff)


def is_psd(M, tol: float = 0.0) -> tuple:
    """Decide positive semidefiniteness of a symmetric matrix.

    Returns (verdict, min_eigenvalue).  The verdict is True when the smallest
    eigenvalue is >= -tol.  Raises ValueError if M is visibly non-symmetric;
    the eigenvalues are taken from the symmetrized matrix.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"is_psd expects a square matrix, got shape {M.shape}")
    gap = np.linalg.norm(M - M.T)
    if gap > _SYM_RTOL * (1.0 + np.linalg.norm(M)):
        raise ValueError(
            f"is_psd expects a symmetric matrix (|M - M^T| = {gap:.3e})"
        )
    eigs = np.linalg.eigvalsh(0.5 * (M + M.T))
    lam_min = float(eigs[0])
    return lam_min >= -tol, lam_min


def range_residual(N, M, rtol: float = DEFAULT_RTOL) -> float:
    """Normalised obstruction to range(N) being contained in range(M).

    Computes ||(I - M M^+) N|| / (1 + ||N||) in the Frobenius norm; exact
    containment gives 0 and the normalisation keeps the residual bounded by
    1 regardless of scaling.
    """
    N = np.asarray(N, dtype=float)
    M = np.asarray(M, dtype=float)
    res = pinv(M, rtol=rtol)
    proj_out = N - M @ (res.pinv @ N)
    return float(np.linalg.norm(proj_out) / (1.0 + np.linalg.norm(N)))


def range_contained(N, M, tol: float = 1e-8, rtol: float = DEFAULT_RTOL) -> tuple:
    """Test range(N) ⊆ range(M); returns (verdict, residual)."""
    r = range_residual(N, M, rtol=rtol)
    return r <= tol, r


def projector(M, rtol: float = DEFAULT_RTOL) -> np.ndarray:
    """Orthogonal projector M^+ M onto the row space of M."""
    M = np.asarray(M, dtype=float)
    return pinv(M, rtol=rtol).pinv @ M
