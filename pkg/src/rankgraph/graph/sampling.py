from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from ..errors import ValidationError
from .schema import TypeRef
from .store import HeteroGraph

RngLike = Union[int, np.random.Generator]


def as_rng(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(int(rng))


@dataclass(frozen=True)
class EdgeBatch:
    """Positive training pairs drawn from one relation."""
    relation: str
    relation_id: int
    src: np.ndarray
    dst: np.ndarray
    weights: np.ndarray

    @property
    def pairs(self) -> List[Tuple[int, int]]:
        return list(zip(self.src.tolist(), self.dst.tolist()))

    def __len__(self) -> int:
        return int(self.src.shape[0])


def sample_edge_batch(
    g: HeteroGraph,
    relations: Sequence[TypeRef],
    batch_size: int,
    rng: RngLike,
) -> Dict[str, EdgeBatch]:
    """Draw `batch_size` edges per relation with replacement, proportional to weight.

    Relations are sampled in the order given from one stream, so a fixed seed
    reproduces every batch.
    """
    if batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    gen = as_rng(rng)
    out: Dict[str, EdgeBatch] = {}
    for ref in relations:
        rel = g.relation(ref)
        e = g.edges[rel.name]
        total = float(e.weight.sum()) if len(e) else 0.0
        if len(e) == 0 or total <= 0:
            raise ValidationError(f"relation {rel.name!r} has no edges to sample")
        idx = gen.choice(len(e), size=batch_size, replace=True, p=e.weight / total)
        out[rel.name] = EdgeBatch(
            relation=rel.name,
            relation_id=rel.relation_id,
            src=e.src[idx].copy(),
            dst=e.dst[idx].copy(),
            weights=e.weight[idx].copy(),
        )
    return out
