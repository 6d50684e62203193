"""Two-hop co-engagement projection.

For nodes u, v of a relation's source type, w(u, v) = sum over shared
destinations m of w(u, m) * w(v, m), i.e. the off-diagonal of A @ A.T, for
every pair sharing at least one destination (so w may be 0). Each node keeps
its `top_k` strongest partners with w >= min_weight (ties by ascending partner
id); the kept set is symmetrised by union. Used for semantic edges and
for serving's homogeneous subgraph projection.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..errors import SchemaError, ValidationError
from ..logs.run_log import log_event
from .schema import TypeRef
from .store import HeteroGraph, RelationEdges, merge_edges


def co_engagement(g: HeteroGraph, via_relation: TypeRef, top_k: int, min_weight: float) -> RelationEdges:
    if top_k < 1:
        raise ValidationError("top_k must be >= 1")
    rel = g.relation(via_relation)
    a = g.out_adjacency(rel.relation_id)
    e = g.edges[rel.name]
    n = a.shape[0]
    # a pair exists once two nodes share a destination, zero-weight edges included
    hits = sp.csr_matrix((np.ones(len(e)), (e.src, e.dst)), shape=a.shape)
    shared = sp.triu(hits @ hits.T, k=1).tocoo()
    if shared.nnz == 0:
        return merge_edges(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0), n)
    upper_r, upper_c = shared.row.astype(np.int64), shared.col.astype(np.int64)
    # exact symmetry: both directions carry the upper-triangle weight
    upper_w = np.asarray((a @ a.T).tocsr()[upper_r, upper_c], dtype=np.float64).reshape(-1)
    rows = np.concatenate([upper_r, upper_c])
    cols = np.concatenate([upper_c, upper_r])
    w = np.concatenate([upper_w, upper_w])
    keep = w >= min_weight
    rows, cols, w = rows[keep], cols[keep], w[keep]
    if rows.size == 0:
        return merge_edges(rows, cols, w, n)
    order = np.lexsort((cols, -w, rows))
    rows, cols, w = rows[order], cols[order], w[order]
    starts = np.searchsorted(rows, rows, side="left")
    rank = np.arange(rows.size) - starts
    chosen = rank < top_k
    r, c, cw = rows[chosen], cols[chosen], w[chosen]
    # union with the mirrored selection, then dedupe (weights are symmetric)
    src = np.concatenate([r, c])
    dst = np.concatenate([c, r])
    wt = np.concatenate([cw, cw])
    key = src * n + dst
    _, first = np.unique(key, return_index=True)
    return merge_edges(src[first], dst[first], wt[first], n)


def derive_semantic_edges(
    g: HeteroGraph,
    via_relation: TypeRef,
    new_relation_name: str,
    top_k: int,
    min_weight: float = 0.0,
) -> HeteroGraph:
    """Return a new graph with a semantic relation over the via-relation's source type."""
    try:
        rel = g.relation(via_relation)
    except SchemaError as e:
        raise SchemaError(f"unknown via relation {via_relation!r}") from e
    if top_k < 1:
        raise ValidationError("top_k must be >= 1")
    edges = co_engagement(g, rel.relation_id, top_k, min_weight)
    out = g.with_relation(new_relation_name, rel.src_type, "semantic", edges)
    log_event(
        "graph", "semantic_edges",
        via=rel.name, relation=new_relation_name, edges=len(edges), top_k=top_k, min_weight=min_weight,
    )
    return out
