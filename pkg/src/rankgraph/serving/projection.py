"""Homogeneous subgraph extraction (item-item, user-user) by co-engagement projection."""
from __future__ import annotations

import json
import os

from ..errors import ValidationError
from ..graph.schema import GraphSchema, NodeTypeSchema, RelationSchema, TypeRef, schema_to_dict
from ..graph.semantic import co_engagement
from ..graph.store import HeteroGraph, RelationEdges, write_edge_file
from ..logs.run_log import log_event


def project_subgraph(
    g: HeteroGraph, endpoint_type: TypeRef, via_relation: TypeRef, top_k: int, min_weight: float = 0.0
) -> RelationEdges:
    """Co-engagement edges among `endpoint_type` nodes through `via_relation` (endpoint_type -> B)."""
    rel = g.relation(via_relation)
    t = g.schema.node_type(endpoint_type)
    if rel.src_type != t.type_id:
        raise ValidationError(
            f"relation {rel.name!r} starts at {g.type_name(rel.src_type)!r}, not {t.name!r}"
        )
    return co_engagement(g, rel.relation_id, top_k, min_weight)


def projection_schema(g: HeteroGraph, endpoint_type: TypeRef, relation_name: str) -> GraphSchema:
    """Single-type schema under which a projection edge file ingests back."""
    t = g.schema.node_type(endpoint_type)
    return GraphSchema(
        node_types=[NodeTypeSchema(type_id=0, name=t.name, block_dims=list(t.block_dims))],
        relations=[RelationSchema(relation_id=0, name=relation_name, src_type=0, dst_type=0, kind="semantic")],
    ).check()


def write_projection(
    g: HeteroGraph,
    edges: RelationEdges,
    endpoint_type: TypeRef,
    relation_name: str,
    path: str,
) -> int:
    """Edge file at `path` plus its schema at `<path>.schema.json`; returns the edge count."""
    type_name = g.type_name(endpoint_type)
    rows = (
        (relation_name, g.ids.external(type_name, s), g.ids.external(type_name, d), w)
        for s, d, w in zip(edges.src.tolist(), edges.dst.tolist(), edges.weight.tolist())
    )
    n = write_edge_file(path, rows)
    with open(f"{path}.schema.json", "w", encoding="utf-8") as f:
        json.dump(schema_to_dict(projection_schema(g, endpoint_type, relation_name)), f, indent=2, sort_keys=True)
        f.write("\n")
    log_event("serving", "subgraph_written", node_type=type_name, relation=relation_name, edges=n,
              path=os.path.basename(path))
    return n
