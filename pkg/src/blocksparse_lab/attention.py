"""Dense attention oracle, density measure and the logit-variance proxy.

The logit variance V(X) is the mean over query rows of the population
variance of the scaled logits ``Q K^T / sqrt(d')``. It can be evaluated
directly from the logits or in closed form from the token moments::

    V(X) = tr(M S M^T (S + mu^T mu)) / d'

with ``M = W_Q W_K^T``, ``mu`` the mean token and ``S`` the (1/n) token
covariance. The two routes are kept independent so each can check the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .numerics import as_matrix, softmax_rows, spectral_norm

# Slack for prefix-mass comparisons: a cumulative float sum that should land
# exactly on tau (e.g. eight 0.1 entries) may fall short by a few ulps.
MASS_SLACK = 1e-12
STOCHASTIC_TOL = 1e-9


@dataclass(frozen=True)
class LayerParams:
    """Query/key projections for one attention head."""

    layer_id: int
    head_id: int
    w_q: np.ndarray
    w_k: np.ndarray

    def __post_init__(self):
        w_q = as_matrix(self.w_q, "w_q")
        w_k = as_matrix(self.w_k, "w_k")
        if w_q.shape != w_k.shape:
            raise ShapeError(f"w_q {w_q.shape} and w_k {w_k.shape} differ")
        if w_q.shape[1] < 1:
            raise ShapeError("head dimension must be at least 1")
        object.__setattr__(self, "w_q", w_q)
        object.__setattr__(self, "w_k", w_k)

    @property
    def d(self) -> int:
        return self.w_q.shape[0]

    @property
    def d_prime(self) -> int:
        return self.w_q.shape[1]

    @property
    def m(self) -> np.ndarray:
        """Bilinear form ``W_Q W_K^T`` (recomputed on access, never cached)."""
        return self.w_q @ self.w_k.T


@dataclass(frozen=True)
class StabilityBoundParams:
    r_bound: float = 1.0
    delta: float = 0.05
    c_const: float = 1.0

    def __post_init__(self):
        if not self.r_bound > 0:
            raise ValueError("r_bound must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not self.c_const > 0:
            raise ValueError("c_const must be positive")


def project(x, layer: LayerParams) -> tuple[np.ndarray, np.ndarray]:
    x = as_matrix(x, "x")
    if x.shape[1] != layer.d:
        raise ShapeError(f"x has {x.shape[1]} columns, layer expects d={layer.d}")
    return x @ layer.w_q, x @ layer.w_k


def logits(q, k, d_prime: int) -> np.ndarray:
    q = as_matrix(q, "q")
    k = as_matrix(k, "k")
    if q.shape[1] != d_prime or k.shape[1] != d_prime:
        raise ShapeError(f"q {q.shape} / k {k.shape} do not match d'={d_prime}")
    return (q @ k.T) / math.sqrt(d_prime)


def dense_attention(q, k, v) -> np.ndarray:
    q = as_matrix(q, "q")
    k = as_matrix(k, "k")
    v = as_matrix(v, "v")
    if v.shape[0] != k.shape[0]:
        raise ShapeError(f"v has {v.shape[0]} rows but there are {k.shape[0]} keys")
    return softmax_rows(logits(q, k, q.shape[1])) @ v


def check_row_stochastic(a: np.ndarray, tol: float = STOCHASTIC_TOL) -> None:
    if np.any(a < 0):
        raise ContractError("attention map has negative entries")
    err = np.abs(a.sum(axis=1) - 1.0)
    if err.size and err.max() > tol:
        raise ContractError(f"attention rows do not sum to 1 (max deviation {err.max():.3e})")


def _check_tau(tau: float) -> None:
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")


def prefix_counts(a: np.ndarray, tau: float) -> np.ndarray:
    """Per-row length of the shortest descending prefix whose mass reaches ``tau``.

    Ties are broken by ascending column index (stable sort on the negated row).
    """
    order = np.argsort(-a, axis=1, kind="stable")
    csum = np.cumsum(np.take_along_axis(a, order, axis=1), axis=1)
    reached = csum >= tau - MASS_SLACK
    # a row whose total falls short (only possible within STOCHASTIC_TOL) needs everything
    return np.where(reached.any(axis=1), reached.argmax(axis=1) + 1, a.shape[1])


def attention_density(a, tau: float) -> float:
    """Mean over rows of (shortest prefix covering ``tau`` of the row mass) / n."""
    a = as_matrix(a, "a")
    _check_tau(tau)
    check_row_stochastic(a)
    n = a.shape[1]
    return float(prefix_counts(a, tau).mean() / n)


def logit_variance_direct(z) -> float:
    z = as_matrix(z, "z")
    if z.shape[1] < 1:
        raise ShapeError("logits need at least one column")
    return float(np.var(z, axis=1).mean())


def logit_variance_trace(x, layer: LayerParams) -> float:
    x = as_matrix(x, "x")
    if x.shape[1] != layer.d:
        raise ShapeError(f"x has {x.shape[1]} columns, layer expects d={layer.d}")
    n = x.shape[0]
    mu = x.mean(axis=0, keepdims=True)
    xc = x - mu
    sigma = (xc.T @ xc) / n
    m = layer.m
    second = sigma + mu.T @ mu
    return float(np.trace(m @ sigma @ m.T @ second) / layer.d_prime)


def stability_bound(layer: LayerParams, n: int, params: StabilityBoundParams) -> float:
    """Right-hand side of the layer-wise stability bound, up to the constant C.

    Natural log is used; a different base only rescales C.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    log_term = math.log(layer.d / params.delta)
    if log_term <= 0:
        raise ValueError(f"log(d/delta) = {log_term:.3g} is not positive")
    m_norm = spectral_norm(layer.m)
    lead = layer.d * m_norm ** 2 / layer.d_prime
    return lead * params.c_const * params.r_bound ** 4 * (
        math.sqrt(log_term / n) + log_term / n)
