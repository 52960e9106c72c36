"""Dense linear-algebra helpers used by every other module.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 and shape
``(rows, cols)``. Every public function validates that its inputs are finite
2-D arrays; nothing here mutates its arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ShapeError


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Coerce ``m`` to a finite float64 2-D array.

    Raises:
        ShapeError: if ``m`` is not two-dimensional.
        ValueError: if any entry is NaN or infinite.
    """
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax_rows(z) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction."""
    z = as_matrix(z, "z")
    if z.shape[1] == 0:
        return z.copy()
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def l2_normalize_rows(m) -> np.ndarray:
    """Scale each nonzero row to unit Euclidean norm; zero rows pass through."""
    m = as_matrix(m, "m")
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    out = m.copy()
    nz = norms > 0
    out[nz] /= norms[nz, None]
    # Renormalizing an already-unit row must be a no-op bit for bit.
    unit = nz & (np.abs(norms - 1.0) <= 4 * np.finfo(np.float64).eps)
    out[unit] = m[unit]
    return out


@dataclass(frozen=True)
class GaussianFit:
    mean: float
    std: float
    sample_count: int

    def quantile(self, p: float) -> float:
        return self.mean + normal_quantile(p) * self.std


def gaussian_fit(samples: Sequence[float]) -> GaussianFit:
    """Maximum-likelihood univariate Gaussian (variance divides by m, not m-1)."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("gaussian_fit needs at least one sample")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples contain non-finite values")
    mean = math.fsum(x) / x.size
    if x.size == 1 or np.all(x == x[0]):
        # exact for constant samples; fsum can otherwise leave a 1-ulp residue
        return GaussianFit(float(x[0]), 0.0, int(x.size))
    var = math.fsum((x - mean) ** 2) / x.size
    mean = min(max(mean, float(x.min())), float(x.max()))
    return GaussianFit(mean, math.sqrt(var), int(x.size))


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


# Acklam's rational approximation to the inverse normal CDF (rel. error ~1e-9).
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _acklam(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    if p > 1.0 - _P_LOW:
        q = math.sqrt(-2.0 * math.log1p(-p))
        return -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    q = p - 0.5
    r = q * q
    return (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
        (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)


def normal_quantile(p: float) -> float:
    """Standard-normal quantile z with Phi(z) = p, accurate to ~1e-12 in the body.

    A rational first guess is polished with one Halley step against
    ``erfc``-based Phi.
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"normal_quantile requires 0 < p < 1, got {p}")
    if p == 0.5:
        return 0.0
    x = _acklam(p)
    e = normal_cdf(x) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


@dataclass(frozen=True)
class PowerIteration:
    value: float
    iterations: int
    converged: bool


def _power_from(g: np.ndarray, m: np.ndarray, v: np.ndarray, max_iters: int, tol: float) -> PowerIteration:
    est = 0.0
    for it in range(1, max_iters + 1):
        w = g @ v
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return PowerIteration(0.0, it, True)
        new = math.sqrt(nw)
        v = w / nw
        if est > 0.0 and abs(new - est) <= tol * new:
            return PowerIteration(float(np.linalg.norm(m @ v)), it, True)
        est = new
    return PowerIteration(float(np.linalg.norm(m @ v)), max_iters, False)


def power_iteration(m, max_iters: int = 200, tol: float = 1e-10) -> PowerIteration:
    """Largest singular value of ``m`` via power iteration on ``m.T @ m``.

    Runs from the normalized all-ones vector and from a fixed pseudo-random
    vector and keeps the larger estimate, so a start that happens to be
    orthogonal to the top singular vector cannot stall on a smaller one.
    Non-convergence is reported through ``converged`` rather than raised.
    """
    m = as_matrix(m, "m")
    if m.size == 0:
        raise ShapeError("spectral_norm needs a nonempty matrix")
    g = m.T @ m
    cols = m.shape[1]
    ones = np.ones(cols) / math.sqrt(cols)
    probe = np.random.default_rng(0x5EED).standard_normal(cols)
    probe /= np.linalg.norm(probe)
    a = _power_from(g, m, ones, max_iters, tol)
    b = _power_from(g, m, probe, max_iters, tol)
    best = a if a.value >= b.value else b
    return PowerIteration(best.value, max(a.iterations, b.iterations), a.converged and b.converged)


def spectral_norm(m, max_iters: int = 200, tol: float = 1e-10) -> float:
    return power_iteration(m, max_iters, tol).value
