"""
Per (node type, head) ring buffer of detached embedding snapshots.

Rows are copied on insert and never linked to a tape, so a parameter update
between a write and a later read leaves the stored rows untouched. Oldest
entries are evicted first once the capacity is reached.
"""
from __future__ import annotations

from typing import Tuple

import numpy as np

from ..errors import EmptyPoolError, ShapeError, ValidationError
from ..graph.sampling import RngLike, as_rng


class NegativePool:
    def __init__(self, capacity: int, dim: int, node_type: str = "", head: int = 0):
        if capacity < 1:
            raise ValidationError("pool capacity must be >= 1")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self.node_type = node_type
        self.head = head
        self._ids = np.zeros(self.capacity, dtype=np.int64)
        self._rows = np.zeros((self.capacity, self.dim), dtype=np.float64)
        self._size = 0
        self._cursor = 0

    def __len__(self) -> int:
        return self._size

    def add(self, ids: np.ndarray, rows: np.ndarray) -> None:
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        rows = np.array(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != self.dim:
            raise ShapeError("update_negative_pool", (self.capacity, self.dim), rows.shape)
        if rows.shape[0] != ids.shape[0]:
            raise ShapeError("update_negative_pool", ids.shape, rows.shape)
        for i in range(ids.shape[0]):
            self._ids[self._cursor] = ids[i]
            self._rows[self._cursor] = rows[i]
            self._cursor = (self._cursor + 1) % self.capacity
            self._size = min(self._size + 1, self.capacity)

    def entries(self) -> Tuple[np.ndarray, np.ndarray]:
        """(ids, rows) oldest first; copies."""
        if self._size < self.capacity:
            order = np.arange(self._size)
        else:
            order = (np.arange(self.capacity) + self._cursor) % self.capacity
        return self._ids[order].copy(), self._rows[order].copy()

    def sample(self, n: int, rng: RngLike) -> Tuple[np.ndarray, np.ndarray]:
        if self._size == 0:
            raise EmptyPoolError(f"negative pool ({self.node_type!r}, head {self.head}) is empty")
        ids, rows = self.entries()
        idx = as_rng(rng).integers(0, self._size, size=int(n))
        return ids[idx], rows[idx]


def update_negative_pool(pool: NegativePool, ids: np.ndarray, rows: np.ndarray) -> NegativePool:
    pool.add(ids, rows)
    return pool


def sample_pool_negatives(pool: NegativePool, n_neg: int, rng: RngLike) -> Tuple[np.ndarray, np.ndarray]:
    """Uniform draws with replacement: (node ids, embedding rows)."""
    if n_neg < 1:
        raise ValidationError("n_neg must be >= 1")
    return pool.sample(n_neg, rng)
