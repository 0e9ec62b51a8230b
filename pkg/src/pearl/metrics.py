"""Cosine retrieval and neighborhood/ranking metrics.

Every metric is an exact computation (no sampling, no approximate search).
Neighbor ranking is deterministic: descending cosine similarity with ties
broken by ascending pool index.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .preprocessing import ZERO_NORM_TOL, unit_rows


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """a.b / (|a||b|), or 0.0 when either norm is below 1e-12."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < ZERO_NORM_TOL or nb < ZERO_NORM_TOL:
        return 0.0
    return float(a @ b / (na * nb))


def similarity_matrix(queries: np.ndarray, pool: np.ndarray) -> np.ndarray:
    """(n_q, n_pool) cosine similarities; near-zero rows contribute 0."""
    return unit_rows(queries) @ unit_rows(pool).T


@dataclass(frozen=True)
class NeighborList:
    """Ranked neighbors per query: pool indices and their similarities."""

    indices: np.ndarray  # (n_q, K) int64
    sims: np.ndarray  # (n_q, K) float64

    @property
    def K(self) -> int:
        return self.indices.shape[1]


def top_k_neighbors(
    queries: np.ndarray,
    pool: np.ndarray,
    K: int,
    exclude_self: bool = False,
    backend: str | None = None,
) -> NeighborList:
    """Exact top-K cosine retrieval of pool rows for each query row.

    ``exclude_self`` treats queries and pool as the same physical set and
    removes each query's own row (leave-one-out).
    """
    pool = np.asarray(pool)
    if K > pool.shape[0]:
        raise ValueError(f"K={K} exceeds pool size {pool.shape[0]}")
    sims = similarity_matrix(queries, pool)
    idx, vals = kernels.topk_from_similarity(sims, K, exclude_self, backend)
    return NeighborList(indices=idx, sims=vals)


def _neighbor_label_hits(
    neighbors: NeighborList, query_labels, pool_labels, K: int
) -> np.ndarray:
    if K > neighbors.K:
        raise ValueError(f"K={K} exceeds neighbor list length {neighbors.K}")
    query_labels = np.asarray(query_labels)
    pool_labels = np.asarray(pool_labels)
    return pool_labels[neighbors.indices[:, :K]] == query_labels[:, None]


def purity_at_k(neighbors: NeighborList, query_labels, pool_labels, K: int) -> float:
    """Mean fraction of the top-K neighbors sharing the query's label."""
    hits = _neighbor_label_hits(neighbors, query_labels, pool_labels, K)
    return float(hits.mean())


def hit_at_k(neighbors: NeighborList, query_labels, pool_labels, K: int) -> float:
    """Fraction of queries with at least one same-label neighbor in the top K."""
    hits = _neighbor_label_hits(neighbors, query_labels, pool_labels, K)
    return float(hits.any(axis=1).mean())


def mrr_at_k(neighbors: NeighborList, query_labels, pool_labels, K: int) -> float:
    """Mean 1/rank of the first same-label neighbor within the top K, with a
    contribution of 0 for queries that have none."""
    hits = _neighbor_label_hits(neighbors, query_labels, pool_labels, K)
    any_hit = hits.any(axis=1)
    first = hits.argmax(axis=1)
    recip = np.where(any_hit, 1.0 / (first + 1.0), 0.0)
    return float(recip.mean())


def separation_delta(x: np.ndarray, labels, backend: str | None = None) -> float:
    """Mean intra-class cosine minus mean inter-class cosine over all
    unordered pairs (exact enumeration)."""
    labels = np.asarray(labels)
    if np.unique(labels).size < 2:
        raise ValueError("separation requires at least two classes")
    intra_sum, n_intra, inter_sum, n_inter = kernels.separation_sums(
        unit_rows(x), labels, backend
    )
    if n_intra == 0:
        raise ValueError("no intra-class pair")
    if n_inter == 0:
        raise ValueError("no inter-class pair")
    return float(intra_sum / n_intra - inter_sum / n_inter)


def knn_predict(
    neighbors: NeighborList, pool_labels, K: int, weighting: str = "uniform"
) -> np.ndarray:
    """Predict each query's label from its top-K neighbors.

    "uniform" takes the modal neighbor label; "distance" weights each vote by
    max(similarity, 0). Ties go to the smallest class id.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if weighting not in ("uniform", "distance"):
        raise ValueError(f"unknown weighting {weighting!r}")
    pool_labels = np.asarray(pool_labels)
    votes = pool_labels[neighbors.indices[:, :K]]
    n_classes = int(pool_labels.max()) + 1 if pool_labels.size else 1
    if weighting == "uniform":
        weights = np.ones_like(neighbors.sims[:, :K])
    else:
        weights = np.maximum(neighbors.sims[:, :K], 0.0)
    out = np.empty(votes.shape[0], dtype=np.int64)
    for i in range(votes.shape[0]):
        score = np.bincount(votes[i], weights=weights[i], minlength=n_classes)
        # only labels that appear among the neighbors are candidates (matters
        # when every similarity clamps to zero); unique() sorts, and argmax
        # takes the first maximum, so ties go to the smallest class id
        cands = np.unique(votes[i])
        out[i] = int(cands[np.argmax(score[cands])])
    return out


def f1_per_class(predicted, actual, class_id: int) -> float:
    """F1 score treating ``class_id`` as the positive class; 0 when undefined."""
    predicted = np.asarray(predicted)
    actual = np.asarray(actual)
    tp = int(np.sum((predicted == class_id) & (actual == class_id)))
    fp = int(np.sum((predicted == class_id) & (actual != class_id)))
    fn = int(np.sum((predicted != class_id) & (actual == class_id)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)
