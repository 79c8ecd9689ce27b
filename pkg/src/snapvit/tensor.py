"""Dense linear algebra used by the pruning pipeline.

Tensors are plain ``numpy.ndarray`` values. Everything that touches curvature
or the search distribution runs in float64.
"""

import math

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionError, SingularityError

# Pade [6/6] coefficients: c_k = (2m-k)! m! / ((2m)! k! (m-k)!)
_PADE_ORDER = 6
_PADE = [
    math.factorial(2 * _PADE_ORDER - k) * math.factorial(_PADE_ORDER)
    / (math.factorial(2 * _PADE_ORDER) * math.factorial(k) * math.factorial(_PADE_ORDER - k))
    for k in range(_PADE_ORDER + 1)
]


def matmul(a, b):
    """Matrix product of ``a`` (m x k) and ``b`` (k x n)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b


def _square(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} expects a square matrix, got shape {a.shape}")
    return a


def cholesky_lower(h):
    """Lower Cholesky factor; raises SingularityError when ``h`` is not PD."""
    h = _square(h, "cholesky")
    try:
        return np.linalg.cholesky(h)
    except np.linalg.LinAlgError as exc:
        raise SingularityError(f"matrix is not positive definite: {exc}") from None


def cholesky_inverse(h):
    """Inverse of a symmetric positive definite matrix via its Cholesky factor."""
    low = cholesky_lower(h)
    eye = np.eye(low.shape[0])
    low_inv = solve_triangular(low, eye, lower=True)
    inv = low_inv.T @ low_inv
    return 0.5 * (inv + inv.T)


def matrix_exp(a):
    """Matrix exponential by scaling and squaring with a Pade [6/6] approximant.

    The number of squarings is the smallest ``s`` with ``||a / 2**s||_1 < 0.5``.
    """
    a = _square(a, "matrix_exp")
    n = a.shape[0]
    eye = np.eye(n)
    if not a.any():
        return eye
    norm = np.abs(a).sum(axis=0).max()
    s = 0
    if norm >= 0.5:
        s = int(math.ceil(math.log2(norm / 0.5)))
        if norm / 2.0**s >= 0.5:
            s += 1
    x = a / 2.0**s

    power = eye
    num = _PADE[0] * eye
    den = _PADE[0] * eye
    for k in range(1, _PADE_ORDER + 1):
        power = power @ x
        term = _PADE[k] * power
        num = num + term
        den = den + term if k % 2 == 0 else den - term
    out = np.linalg.solve(den, num)
    for _ in range(s):
        out = out @ out
    return out


def _sym_eig(s, name):
    s = _square(s, name)
    if not np.allclose(s, s.T, rtol=1e-10, atol=1e-12):
        raise DimensionError(f"{name} expects a symmetric matrix")
    return np.linalg.eigh(0.5 * (s + s.T))


def sym_logm(s):
    """Matrix logarithm of a symmetric positive definite matrix."""
    w, v = _sym_eig(s, "sym_logm")
    if w.min() <= 0:
        raise SingularityError(f"matrix is not positive definite (min eigenvalue {w.min():.3e})")
    out = (v * np.log(w)) @ v.T
    return 0.5 * (out + out.T)


def sym_expm(s):
    """Matrix exponential of a symmetric matrix through its eigendecomposition."""
    w, v = _sym_eig(s, "sym_expm")
    out = (v * np.exp(w)) @ v.T
    return 0.5 * (out + out.T)


def floor_eigenvalues(s, floor=1e-6):
    """Symmetrise ``s`` and clip its spectrum from below at ``floor``."""
    w, v = _sym_eig(s, "floor_eigenvalues")
    out = (v * np.maximum(w, floor)) @ v.T
    return 0.5 * (out + out.T)
