"""Online block selection: coarse estimate, block recall, the rho rule, masks.

The rho rule compares the profiled sparsity ``s`` with a threshold ``theta``::

    rho = min(recall, budget)   if s > theta
    rho = max(recall, budget)   otherwise

Under ``AS_WRITTEN`` the budget is ``s`` itself. Under ``DENSITY`` it is the
profiled keep ratio ``d_hat = 1 - s``, which is the same unit as rho.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .attention import MASS_SLACK
from .errors import ContractError, ShapeError
from .numerics import as_matrix, softmax_rows
from .partitioning import CoClusterResult
from .profiling import ScheduleEntry

DEFAULT_THETA = 0.1


class RhoSemantics(str, Enum):
    AS_WRITTEN = "as-written"
    DENSITY = "density"


@dataclass(frozen=True)
class CoarseEstimate:
    values: np.ndarray
    d_prime: int

    @property
    def k_q(self) -> int:
        return self.values.shape[0]

    @property
    def k_k(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class BlockMask:
    k_q: int
    k_k: int
    selected: tuple[tuple[int, ...], ...]
    rho: float

    def as_bool(self) -> np.ndarray:
        out = np.zeros((self.k_q, self.k_k), dtype=bool)
        for i, row in enumerate(self.selected):
            out[i, list(row)] = True
        return out

    def to_json(self) -> dict:
        return {"k_q": self.k_q, "k_k": self.k_k, "rho": self.rho,
                "selected": [list(r) for r in self.selected]}

    @classmethod
    def from_json(cls, d: dict) -> "BlockMask":
        return cls(int(d["k_q"]), int(d["k_k"]),
                   tuple(tuple(int(j) for j in r) for r in d["selected"]), float(d["rho"]))


@dataclass(frozen=True)
class SelectionDecision:
    recall_ratio: float
    budget: float
    theta: float
    rho: float
    semantics: RhoSemantics


def coarse_estimate(result: CoClusterResult, d_prime: int) -> CoarseEstimate:
    c_q = result.query_partition.centroids
    c_k = result.key_partition.centroids
    if c_q.shape[1] != c_k.shape[1]:
        raise ShapeError(f"centroid dims differ: {c_q.shape} vs {c_k.shape}")
    return CoarseEstimate(c_q @ c_k.T, d_prime)


def block_recall(est: CoarseEstimate, tau: float) -> float:
    """Mean fraction of key blocks per query block needed to cover ``tau`` of the
    softmax-normalized (1/sqrt(d') scaled) estimated mass."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    probs = softmax_rows(est.values / math.sqrt(est.d_prime))
    total = 0
    for row in probs:
        ranked = sorted(range(len(row)), key=lambda j: (-row[j], j))
        acc = 0.0
        count = len(row)
        for c, j in enumerate(ranked, start=1):
            acc += row[j]
            if acc >= tau - MASS_SLACK:
                count = c
                break
        total += count
    return total / (probs.shape[0] * probs.shape[1])


def select_rho(recall_ratio: float, entry: ScheduleEntry, theta: float = DEFAULT_THETA,
               semantics: RhoSemantics | str = RhoSemantics.AS_WRITTEN,
               k_k: int | None = None) -> SelectionDecision:
    """Apply the threshold rule; the result is clamped to ``[1/k_k, 1]``."""
    semantics = RhoSemantics(semantics)
    if not 0.0 < recall_ratio <= 1.0:
        raise ValueError(f"recall_ratio must lie in (0, 1], got {recall_ratio}")
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    budget = entry.sparsity if semantics is RhoSemantics.AS_WRITTEN else entry.d_hat
    if entry.sparsity > theta:
        rho = min(recall_ratio, budget)
    else:
        rho = max(recall_ratio, budget)
    floor = 1.0 / k_k if k_k else 0.0
    rho = min(1.0, max(rho, floor))
    if rho <= 0.0:
        # only reachable without k_k and with a zero budget
        rho = recall_ratio
    return SelectionDecision(recall_ratio, budget, theta, rho, semantics)


def blocks_for(rho: float, k_k: int) -> int:
    # rho * k_k can miss an integer by an ulp (e.g. (1/3) * 3)
    return min(k_k, max(1, math.ceil(rho * k_k - 1e-9)))


def build_mask(est: CoarseEstimate, rho: float) -> BlockMask:
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    keep = blocks_for(rho, est.k_k)
    order = np.argsort(-est.values, axis=1, kind="stable")[:, :keep]
    selected = tuple(tuple(sorted(int(j) for j in row)) for row in order)
    return BlockMask(est.k_q, est.k_k, selected, float(rho))


def token_mask(result: CoClusterResult, mask: BlockMask) -> np.ndarray:
    """Boolean (n_q, n_k) matrix of query/key pairs the block mask allows."""
    lq = result.query_partition.labels
    lk = result.key_partition.labels
    if mask.k_q != result.query_partition.k or mask.k_k != result.key_partition.k:
        raise ShapeError("mask block counts do not match the partitions")
    return mask.as_bool()[lq[:, None], lk[None, :]]


def sparse_attention(q, k, v, result: CoClusterResult, mask: BlockMask) -> np.ndarray:
    """Exact softmax attention restricted to the key blocks selected for each query's block."""
    q = as_matrix(q, "q")
    k = as_matrix(k, "k")
    v = as_matrix(v, "v")
    allowed = token_mask(result, mask)
    if v.shape[0] != k.shape[0]:
        raise ShapeError(f"v has {v.shape[0]} rows but there are {k.shape[0]} keys")
    if not allowed.any(axis=1).all():
        raise ContractError("a query has no allowed keys under this mask")
    z = (q @ k.T) / math.sqrt(q.shape[1])
    z = np.where(allowed, z, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=1, keepdims=True)) @ v
