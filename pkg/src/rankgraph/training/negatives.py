from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Set

import numpy as np

from ..autodiff.tensor import Tensor, detach
from ..errors import ValidationError
from ..graph.sampling import EdgeBatch, RngLike, as_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class InBatchNegatives:
    """Per-anchor negative ids (positive-side node type); `short[i]` flags anchors that got fewer than asked."""
    ids: List[np.ndarray]
    short: np.ndarray

    @property
    def total(self) -> int:
        return int(sum(len(x) for x in self.ids))


def sample_in_batch_negatives(
    batch: EdgeBatch,
    n_neg: int,
    rng: RngLike,
    neighbors: Optional[Mapping[int, Set[int]]] = None,
) -> InBatchNegatives:
    """Negatives for anchor (u, v) come from the other pairs' destinations.

    v itself and every true neighbor of u under the batch relation are excluded.
    Draws are uniform without replacement; when fewer than `n_neg` candidates
    remain the anchor gets all of them and is flagged short.
    """
    if len(batch) < 2:
        raise ValidationError("in-batch negatives need at least 2 pairs")
    if n_neg < 1:
        raise ValidationError("n_neg must be >= 1")
    gen = as_rng(rng)
    pool = np.unique(batch.dst)
    out: List[np.ndarray] = []
    short = np.zeros(len(batch), dtype=bool)
    for i, (u, v) in enumerate(zip(batch.src.tolist(), batch.dst.tolist())):
        excluded = set(neighbors.get(u, ())) if neighbors is not None else set()
        excluded.add(v)
        cands = np.array([c for c in pool.tolist() if c not in excluded], dtype=np.int64)
        if cands.size <= n_neg:
            picked = cands
            short[i] = cands.size < n_neg
        else:
            picked = cands[gen.choice(cands.size, size=n_neg, replace=False)]
        out.append(picked)
    if short.any():
        logger.debug(f"{int(short.sum())} of {len(batch)} anchors in {batch.relation!r} got fewer in-batch negatives")
    return InBatchNegatives(out, short)


def semantic_negatives(head_rows: Sequence[Tensor], anchor_head: int, detached: bool = False) -> List[Tensor]:
    """The positive's embeddings from every head other than the anchor's."""
    if len(head_rows) < 2:
        return []
    return [detach(t) if detached else t for h, t in enumerate(head_rows) if h != anchor_head]
