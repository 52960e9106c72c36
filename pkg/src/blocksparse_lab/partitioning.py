"""Query/key block partitioning: bidirectional co-clustering and a K-means baseline.

Co-clustering alternates two half-steps. Keys are grouped by the direction
of their affinity to the current query centroids, then queries by the
direction of their affinity to the freshly updated key centroids. Affinity
rows are L2-normalized and compared with Euclidean distance; centroids are
always kept in raw token space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import as_matrix, l2_normalize_rows

DEFAULT_I_MAX = 2


@dataclass(frozen=True)
class Partition:
    labels: np.ndarray
    centroids: np.ndarray
    k: int

    def members(self, block: int) -> np.ndarray:
        return np.flatnonzero(self.labels == block)

    def groups(self) -> frozenset:
        """Label-name-free view of the partition, for comparing two partitions."""
        return frozenset(frozenset(self.members(b).tolist()) for b in range(self.k)
                         if np.any(self.labels == b))

    def to_json(self, seed: int | None = None) -> dict:
        return {"k": int(self.k), "labels": [int(v) for v in self.labels], "seed": seed}


@dataclass(frozen=True)
class CoClusterResult:
    query_partition: Partition
    key_partition: Partition
    iterations_run: int
    seed: int


def sq_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def assign(points: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-center labels (lowest index on ties) and each point's squared distance."""
    dist = sq_distances(points, centers)
    labels = np.argmin(dist, axis=1)
    return labels, dist[np.arange(len(points)), labels]


def repair_empty(labels: np.ndarray, own_dist: np.ndarray, k: int) -> np.ndarray:
    """Give every empty block the token farthest from its own center.

    Only tokens whose block has other members are eligible, so repairing
    one block never empties another. Ties go to the lowest token index.
    """
    labels = labels.copy()
    own_dist = own_dist.copy()
    counts = np.bincount(labels, minlength=k)
    for b in np.flatnonzero(counts == 0):
        eligible = counts[labels] > 1
        cand = np.where(eligible, own_dist, -np.inf)
        t = int(np.argmax(cand))
        counts[labels[t]] -= 1
        labels[t] = b
        counts[b] = 1
        own_dist[t] = 0.0
    return labels


def block_means(x: np.ndarray, labels: np.ndarray, k: int, previous: np.ndarray) -> np.ndarray:
    out = previous.copy()
    for b in range(k):
        idx = labels == b
        if idx.any():
            out[b] = x[idx].mean(axis=0)
    return out


def _sample_rows(rng: np.random.Generator, x: np.ndarray, k: int) -> np.ndarray:
    return x[np.sort(rng.choice(x.shape[0], size=k, replace=False))].copy()


def affinity_step(tokens: np.ndarray, own_centroids: np.ndarray,
                  other_centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One half-step: assign ``tokens`` by normalized affinity to ``other_centroids``.

    Returns (labels before repair, squared distance to the assigned block).
    """
    p = l2_normalize_rows(tokens @ other_centroids.T)
    p_bar = l2_normalize_rows(own_centroids @ other_centroids.T)
    return assign(p, p_bar)


def cocluster(q, k, k_q: int, k_k: int, i_max: int = DEFAULT_I_MAX, seed: int = 0) -> CoClusterResult:
    """Jointly partition queries into ``k_q`` and keys into ``k_k`` blocks."""
    q = as_matrix(q, "q")
    k = as_matrix(k, "k")
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"query dim {q.shape[1]} != key dim {k.shape[1]}")
    if not 1 <= k_q <= q.shape[0]:
        raise ValueError(f"k_q={k_q} must lie in [1, {q.shape[0]}]")
    if not 1 <= k_k <= k.shape[0]:
        raise ValueError(f"k_k={k_k} must lie in [1, {k.shape[0]}]")
    if i_max < 1:
        raise ValueError("i_max must be at least 1")

    rng = np.random.default_rng(seed)
    c_q = _sample_rows(rng, q, k_q)
    c_k = _sample_rows(rng, k, k_k)
    for _ in range(i_max):
        labels_k, dist = affinity_step(k, c_k, c_q)
        labels_k = repair_empty(labels_k, dist, k_k)
        c_k = block_means(k, labels_k, k_k, c_k)

        labels_q, dist = affinity_step(q, c_q, c_k)
        labels_q = repair_empty(labels_q, dist, k_q)
        c_q = block_means(q, labels_q, k_q, c_q)

    return CoClusterResult(
        query_partition=Partition(labels_q, c_q, k_q),
        key_partition=Partition(labels_k, c_k, k_k),
        iterations_run=i_max,
        seed=seed,
    )


def kmeans(tokens, k: int, iters: int = 10, seed: int = 0) -> Partition:
    """Plain Lloyd iterations in raw token space."""
    x = as_matrix(tokens, "tokens")
    if not 1 <= k <= x.shape[0]:
        raise ValueError(f"k={k} must lie in [1, {x.shape[0]}]")
    if iters < 1:
        raise ValueError("iters must be at least 1")
    rng = np.random.default_rng(seed)
    c = _sample_rows(rng, x, k)
    for _ in range(iters):
        labels, dist = assign(x, c)
        labels = repair_empty(labels, dist, k)
        new_c = block_means(x, labels, k, c)
        converged = np.array_equal(new_c, c)
        c = new_c
        if converged:
            break
    return Partition(labels, c, k)


def kmeans_pair(q, k, k_q: int, k_k: int, iters: int = 10, seed: int = 0) -> CoClusterResult:
    """Independent K-means on each side, packaged like a co-clustering result."""
    qp = kmeans(q, k_q, iters, seed)
    kp = kmeans(k, k_k, iters, seed + 1)
    return CoClusterResult(qp, kp, iters, seed)


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(a, b) -> float:
    """Normalized mutual information, normalized by the mean of the two entropies."""
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.size != b.size:
        raise ValueError(f"label lengths differ: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError("labelings must be nonempty")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    joint = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(joint, (ai, bi), 1.0)
    ha = _entropy(joint.sum(axis=1))
    hb = _entropy(joint.sum(axis=0))
    if ha == 0.0 and hb == 0.0:
        return 1.0
    if ha == 0.0 or hb == 0.0:
        return 0.0
    pj = joint / a.size
    pa = pj.sum(axis=1, keepdims=True)
    pb = pj.sum(axis=0, keepdims=True)
    nz = pj > 0
    mi = float((pj[nz] * np.log(pj[nz] / (pa @ pb)[nz])).sum())
    return min(1.0, max(0.0, mi / ((ha + hb) / 2.0)))
