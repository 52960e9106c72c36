"""Matched-budget attention recall, PSNR and error norms."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .attention import MASS_SLACK, check_row_stochastic
from .errors import ShapeError
from .numerics import as_matrix
from .partitioning import CoClusterResult
from .selection import CoarseEstimate

DEFAULT_MASS_FRACTION = 0.5


@dataclass(frozen=True)
class ReferencePairSet:
    """Minimal set of highest-mass (query, key) pairs covering ``mass_fraction`` of the total."""

    query_idx: np.ndarray
    key_idx: np.ndarray
    mass_fraction: float
    total_mass_covered: float

    def __len__(self) -> int:
        return len(self.query_idx)

    @property
    def pairs(self) -> set[tuple[int, int]]:
        return set(zip(self.query_idx.tolist(), self.key_idx.tolist()))


@dataclass(frozen=True)
class RecallReport:
    method_name: str
    budget_pairs: int
    covered_fraction: float
    k_q: int
    k_k: int
    seed: int

    def to_json(self) -> dict:
        return {"method": self.method_name, "budget": self.budget_pairs,
                "covered_fraction": self.covered_fraction, "k_q": self.k_q,
                "k_k": self.k_k, "seed": self.seed}


@dataclass(frozen=True)
class QualityReport:
    psnr_db: float
    max_abs_err: float
    rel_fro_err: float

    def to_json(self) -> dict:
        psnr = "inf" if math.isinf(self.psnr_db) else self.psnr_db
        return {"psnr_db": psnr, "max_abs_err": self.max_abs_err, "rel_fro_err": self.rel_fro_err}


def reference_pairs(a, mass_fraction: float = DEFAULT_MASS_FRACTION) -> ReferencePairSet:
    a = as_matrix(a, "a")
    if not 0.0 < mass_fraction <= 1.0:
        raise ValueError(f"mass_fraction must lie in (0, 1], got {mass_fraction}")
    check_row_stochastic(a)
    flat = a.ravel()
    # stable sort of the row-major ravel keeps equal entries in (i, j) order
    order = np.argsort(-flat, kind="stable")
    csum = np.cumsum(flat[order])
    target = mass_fraction * flat.sum()
    hit = np.flatnonzero(csum >= target - MASS_SLACK * a.shape[0])
    count = int(hit[0]) + 1 if hit.size else flat.size
    chosen = order[:count]
    qi, kj = np.divmod(chosen, a.shape[1])
    return ReferencePairSet(qi, kj, mass_fraction, float(csum[count - 1]))


def _block_pairs(ref: ReferencePairSet, result: CoClusterResult) -> tuple[np.ndarray, np.ndarray]:
    lq = result.query_partition.labels
    lk = result.key_partition.labels
    if len(ref) and (ref.query_idx.max() >= len(lq) or ref.key_idx.max() >= len(lk)):
        raise ValueError("reference pair index outside the partitioned token range")
    return lq[ref.query_idx], lk[ref.key_idx]


def induced_budget(ref: ReferencePairSet, result: CoClusterResult) -> int:
    """Number of distinct block pairs touched by the reference token pairs."""
    bq, bk = _block_pairs(ref, result)
    return len(set(zip(bq.tolist(), bk.tolist())))


def top_block_pairs(est: CoarseEstimate, budget: int) -> set[tuple[int, int]]:
    flat = est.values.ravel()
    order = np.argsort(-flat, kind="stable")[:budget]
    bq, bk = np.divmod(order, est.k_k)
    return set(zip(bq.tolist(), bk.tolist()))


def recall_at_budget(a, ref: ReferencePairSet, result: CoClusterResult, est: CoarseEstimate,
                     budget: int, method_name: str = "", seed: int | None = None,
                     selected_pairs: Iterable[tuple[int, int]] | None = None) -> RecallReport:
    """Fraction of reference pairs whose block pair is among the top ``budget`` estimates.

    ``a`` is accepted for symmetry with the reference computation; coverage is
    a function of the reference set alone. ``selected_pairs`` overrides the
    estimate-driven selection.
    """
    k_q, k_k = result.query_partition.k, result.key_partition.k
    if est.values.shape != (k_q, k_k):
        raise ShapeError(f"estimate {est.values.shape} does not match partitions ({k_q}, {k_k})")
    if budget < 1:
        raise ValueError("budget must be at least 1")
    if budget > k_q * k_k:
        raise ValueError(f"budget {budget} exceeds the {k_q * k_k} available block pairs")
    chosen = set(selected_pairs) if selected_pairs is not None else top_block_pairs(est, budget)
    bq, bk = _block_pairs(ref, result)
    sel = np.zeros((k_q, k_k), dtype=bool)
    for i, j in chosen:
        sel[i, j] = True
    covered = float(sel[bq, bk].mean()) if len(ref) else 1.0
    return RecallReport(method_name, int(budget), covered, k_q, k_k,
                        result.seed if seed is None else seed)


def psnr(reference, test) -> QualityReport:
    ref = as_matrix(reference, "reference")
    tst = as_matrix(test, "test")
    if ref.shape != tst.shape:
        raise ShapeError(f"shape mismatch: {ref.shape} vs {tst.shape}")
    diff = ref - tst
    max_abs = float(np.abs(diff).max()) if diff.size else 0.0
    ref_norm = float(np.linalg.norm(ref))
    rel = float(np.linalg.norm(diff)) / ref_norm if ref_norm > 0 else (0.0 if max_abs == 0 else math.inf)
    if max_abs == 0.0:
        return QualityReport(math.inf, 0.0, rel)
    mse = float(np.mean(diff ** 2))
    peak = float(np.abs(ref).max())
    value = 10.0 * math.log10(peak ** 2 / mse) if peak > 0 else -math.inf
    return QualityReport(value, max_abs, rel)
