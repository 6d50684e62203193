"""
Exact cosine retrieval over an embedding table.

Scores are elementwise product sums, so score(a, b) == score(b, a) bit for bit.
Ranking: score descending, then local id ascending; the query is never returned.
"""
from __future__ import annotations

from typing import Dict, List, Mapping, Tuple

import numpy as np

from ..errors import ValidationError
from ..metrics.core import inc_knn_queries
from .tables import EmbeddingTable


def scores_against(matrix: np.ndarray, row: np.ndarray) -> np.ndarray:
    return (matrix * row).sum(axis=1)


def knn_indices(matrix: np.ndarray, query: int, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Top-k (local ids, scores) for row `query`, excluding it."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    n = matrix.shape[0]
    scores = scores_against(matrix, matrix[query])
    ids = np.arange(n)
    order = np.lexsort((ids, -scores))
    order = order[order != query][: min(k, n - 1)]
    return order, scores[order]


def knn_within(matrix: np.ndarray, query: int, candidates: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Top-k (row ids, scores) for row `query` among the rows `candidates`, excluding the query."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    cand = np.asarray(candidates, dtype=np.int64)
    cand = cand[cand != query]
    scores = scores_against(matrix[cand], matrix[query])
    order = np.lexsort((cand, -scores))[:k]
    return cand[order], scores[order]


def knn(table: EmbeddingTable, query_id: str, k: int) -> List[Tuple[str, float]]:
    q = table.index_of(query_id)
    idx, scores = knn_indices(table.matrix, q, k)
    inc_knn_queries()
    return [(table.external_ids[i], float(s)) for i, s in zip(idx.tolist(), scores.tolist())]


class NeighborCache:
    """Memoised top-k neighbor lists per row of one table."""

    def __init__(self, table: EmbeddingTable, k: int):
        self.table = table
        self.k = int(k)
        self._cache: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}

    def get(self, row: int) -> Tuple[np.ndarray, np.ndarray]:
        hit = self._cache.get(row)
        if hit is None:
            hit = knn_indices(self.table.matrix, row, self.k)
            self._cache[row] = hit
        return hit


def score_predictions(
    cache: NeighborCache, triggers: Mapping[int, float]
) -> Tuple[np.ndarray, np.ndarray]:
    """Union of trigger neighbors scored trigger_weight * cosine, max per item.

    Returns (local ids, scores) ranked by score desc, local id asc.
    """
    best: Dict[int, float] = {}
    for row in sorted(triggers):
        w = float(triggers[row])
        idx, sc = cache.get(row)
        for i, s in zip(idx.tolist(), sc.tolist()):
            v = w * s
            if i not in best or v > best[i]:
                best[i] = v
    if not best:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    ids = np.fromiter(best.keys(), dtype=np.int64, count=len(best))
    scores = np.fromiter(best.values(), dtype=np.float64, count=len(best))
    order = np.lexsort((ids, -scores))
    return ids[order], scores[order]


def recommend_for_user(
    table: EmbeddingTable,
    triggers: Mapping[str, float],
    k: int,
    neighbors: int = 20,
) -> Tuple[List[Tuple[str, float]], int]:
    """Top-k items for a user's weighted trigger items, and the count of unknown triggers skipped."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    rows: Dict[int, float] = {}
    skipped = 0
    for ext, w in triggers.items():
        if not table.has(ext):
            skipped += 1
            continue
        rows[table.index_of(ext)] = float(w)
    ids, scores = score_predictions(NeighborCache(table, neighbors), rows)
    inc_knn_queries(len(rows))
    return [(table.external_ids[i], float(s)) for i, s in zip(ids[:k].tolist(), scores[:k].tolist())], skipped
