"""Symmetric eigendecomposition and PSD matrix square root (float64)."""
import numpy as np

from .. import kernels
from ..errors import ConvergenceError, DimensionError, NotPSDError, SymmetryError

SYM_RTOL = 1e-9
NEG_EIG_RTOL = 1e-6
JACOBI_TOL = 1e-14
MAX_SWEEPS = 60


def _check_symmetric(a):
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DimensionError("matrix contains NaN or Inf")
    scale = max(np.abs(a).max(), 1e-300) if a.size else 1.0
    if np.abs(a - a.T).max(initial=0.0) > SYM_RTOL * scale:
        raise SymmetryError("matrix is not symmetric within tolerance")


def sym_eig(a, max_sweeps=MAX_SWEEPS):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues ascending and
    eigenvectors as orthonormal columns, so ``a == V @ diag(w) @ V.T``.
    """
    a = np.asarray(a, dtype=np.float64)
    _check_symmetric(a)
    n = a.shape[0]
    if n == 0:
        return np.zeros(0), np.zeros((0, 0))
    a = np.ascontiguousarray(0.5 * (a + a.T))
    w, v, sweeps = kernels.jacobi_eigh(a, JACOBI_TOL, max_sweeps)
    if sweeps < 0:
        raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")
    idx = np.argsort(w, kind="stable")
    return np.asarray(w)[idx], np.ascontiguousarray(np.asarray(v)[:, idx])


def sqrtm_psd(a):
    """Symmetric PSD square root; tiny negative eigenvalues are clamped."""
    w, v = sym_eig(a)
    if w.size == 0:
        return np.zeros((0, 0))
    top = np.abs(w).max()
    if w[0] < -NEG_EIG_RTOL * top:
        raise NotPSDError(f"eigenvalue {w[0]:.3e} is materially negative")
    r = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return 0.5 * (r + r.T)


def trace_sqrt_psd(a):
    """Trace of ``sqrtm_psd(a)`` without forming the root."""
    w, _ = sym_eig(a)
    if w.size == 0:
        return 0.0
    if w[0] < -NEG_EIG_RTOL * np.abs(w).max():
        raise NotPSDError(f"eigenvalue {w[0]:.3e} is materially negative")
    return float(np.sqrt(np.clip(w, 0.0, None)).sum())
