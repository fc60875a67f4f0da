"""Dense symmetric linear algebra and thresholding primitives.

Vectors and matrices are plain float64 numpy arrays; symmetric matrices are
stored dense and mirrored explicitly where they are assembled.  Everything
here is a pure function of its arguments.  sgn(0) = 0 throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "CovarianceNotInvertible",
    "SpectrumReport",
    "soft_threshold",
    "hard_truncate",
    "project_l2_ball",
    "solve_spd",
    "spectrum",
    "symmetrize_from_upper",
    "check_finite",
]

DEFAULT_PIVOT_FLOOR = 1e-10


class CovarianceNotInvertible(Exception):
    """A symmetric solve hit a pivot below the configured floor.

    For the private estimators this is the small-sample regime: the noisy
    covariance is not positive definite, and no regularized fallback is
    attempted by design.
    """


@dataclass(frozen=True)
class SpectrumReport:
    min_eigenvalue: float
    max_eigenvalue: float
    is_positive_definite: bool


def check_finite(a: np.ndarray, name: str = "array") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def soft_threshold(u: np.ndarray, lam: float) -> np.ndarray:
    """Coordinate-wise shrink toward zero: sgn(u_i) * max(|u_i| - lam, 0)."""
    if lam < 0:
        raise ValueError(f"soft threshold must be nonnegative, got {lam}")
    u = np.asarray(u, dtype=np.float64)
    # + 0.0 normalizes -0.0 so killed entries compare equal to 0.0 exactly
    return np.sign(u) * np.maximum(np.abs(u) - lam, 0.0) + 0.0


def hard_truncate(v: np.ndarray, k_keep: int) -> np.ndarray:
    """Keep the k_keep largest-magnitude entries, zero the rest.

    Ties are broken by keeping the lower index (stable sort on -|v|).
    """
    v = np.asarray(v, dtype=np.float64)
    d = v.shape[0]
    if not 0 <= k_keep <= d:
        raise ValueError(f"k_keep must be in [0, {d}], got {k_keep}")
    if k_keep == d:
        return v.copy()
    order = np.argsort(-np.abs(v), kind="stable")
    out = np.zeros_like(v)
    keep = order[:k_keep]
    out[keep] = v[keep]
    return out


def project_l2_ball(v: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto the centered l2 ball of the given radius."""
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    v = np.asarray(v, dtype=np.float64)
    nrm = float(np.linalg.norm(v))
    if nrm <= radius:
        return v.copy()
    return v * (radius / nrm)


def symmetrize_from_upper(a: np.ndarray) -> np.ndarray:
    """Mirror the upper triangle (diagonal included) onto the lower."""
    a = np.asarray(a, dtype=np.float64)
    return np.triu(a) + np.triu(a, 1).T


def solve_spd(
    a: np.ndarray, b: np.ndarray, min_eig_floor: float = DEFAULT_PIVOT_FLOOR
) -> np.ndarray:
    """Solve A x = b for symmetric positive definite A via Cholesky.

    Raises CovarianceNotInvertible if the factorization fails or any pivot
    (squared diagonal of the Cholesky factor) falls below min_eig_floor.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected square matrix, got shape {a.shape}")
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12 * (1.0 + np.abs(a).max())):
        raise ValueError("matrix is not symmetric")
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise CovarianceNotInvertible(
            f"covariance is not positive definite: {exc}"
        ) from exc
    pivots = np.diag(chol) ** 2
    if pivots.min() < min_eig_floor:
        raise CovarianceNotInvertible(
            f"smallest pivot {pivots.min():.3e} below floor {min_eig_floor:.3e}"
        )
    y = np.linalg.solve(chol, b)
    return np.linalg.solve(chol.T, y)


def spectrum(a: np.ndarray) -> SpectrumReport:
    """Extreme eigenvalues of a symmetric matrix."""
    a = np.asarray(a, dtype=np.float64)
    eigs = np.linalg.eigvalsh(a)
    lo, hi = float(eigs[0]), float(eigs[-1])
    return SpectrumReport(lo, hi, lo > 0.0)
