"""
The network: feature encoder, relational message passing and output heads.

Every function takes parameters as a name -> Tensor mapping, so the same code
runs on tape-watched tensors during training and on constants at serving time.

Message passing for a node i of type t and incoming relation r:
    a_r = f_r( sum_j w_ij / sum_j w_ij * (W_r h_j) )      (zero if i has no r-neighbors)
    h_i' = M_t( concat_r a_r ++ pairwise products )
The self-loop relation is one of the incoming relations, so it contributes W_self h_i.
M_t is affine + relu except in the last layer, whose mixer output feeds the
heads directly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from ..autodiff import ops
from ..autodiff.tensor import Tensor
from ..config.loader import ModelConfig
from ..errors import ShapeError, ValidationError
from ..graph.features import FeatureStore
from ..graph.schema import GraphSchema
from ..graph.store import HeteroGraph

Params = Mapping[str, Tensor]
LayerState = Dict[str, Tensor]


def mlp(x: Tensor, params: Params, prefix: str, depth: int) -> Tensor:
    """Affine layers `<prefix>.<k>` with relu between them (none after the last)."""
    for k in range(depth):
        x = ops.affine(x, params[f"{prefix}.{k}.weight"], params[f"{prefix}.{k}.bias"])
        if k < depth - 1:
            x = ops.relu(x)
    return x


def mix_input(blocks: Sequence[Tensor]) -> Tensor:
    """concat(blocks) ++ concat(b_i * b_j for i < j)."""
    if not blocks:
        raise ValidationError("mix_features needs at least one block")
    for b in blocks[1:]:
        if b.shape != blocks[0].shape:
            raise ShapeError("mix_features", blocks[0].shape, b.shape)
    parts = list(blocks)
    for i in range(len(blocks)):
        for j in range(i + 1, len(blocks)):
            parts.append(ops.hadamard(blocks[i], blocks[j]))
    return parts[0] if len(parts) == 1 else ops.concat_cols(parts)


def mix_features(
    blocks: Sequence[Tensor], weight: Tensor, bias: Optional[Tensor], activate: bool = True
) -> Tensor:
    out = ops.affine(mix_input(blocks), weight, bias)
    return ops.relu(out) if activate else out


def encode_node_features(
    store: FeatureStore,
    schema: GraphSchema,
    type_name: str,
    params: Params,
    node_ids: Optional[np.ndarray] = None,
) -> Tensor:
    t = schema.node_type(type_name)
    outs = []
    for j in range(t.n_features):
        x = store.block(t.name, j)
        if node_ids is not None:
            x = x[np.asarray(node_ids, dtype=np.int64)]
        outs.append(mlp(Tensor(x), params, f"encoder.{t.name}.block{j}", 2))
    return mix_features(outs, params[f"encoder.{t.name}.mixer.weight"], params[f"encoder.{t.name}.mixer.bias"])


@dataclass(frozen=True)
class RelationPlan:
    """Constant per-relation message routing: edge endpoints and normalised weights."""
    name: str
    src_type: str
    dst_type: str
    src: np.ndarray
    dst: np.ndarray
    norm_weight: np.ndarray
    n_dst: int
    # (n_dst, 1) 1.0 where the node has at least one weighted in-neighbor
    live: np.ndarray


class GraphPlan:
    def __init__(self, g: HeteroGraph):
        self.schema = g.schema
        self.num_nodes = dict(g.num_nodes)
        self.relations: Dict[str, RelationPlan] = {}
        for rel in g.schema.relations:
            e = g.edges[rel.name]
            n_dst = g.num_nodes[g.type_name(rel.dst_type)]
            deg = np.bincount(e.dst, weights=e.weight, minlength=n_dst).astype(np.float64)
            live = deg > 0
            inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=live)
            self.relations[rel.name] = RelationPlan(
                name=rel.name,
                src_type=g.type_name(rel.src_type),
                dst_type=g.type_name(rel.dst_type),
                src=e.src,
                dst=e.dst,
                norm_weight=e.weight * inv[e.dst],
                n_dst=n_dst,
                live=live.astype(np.float64).reshape(-1, 1),
            )


def aggregate(plan: RelationPlan, h_src: Tensor, w_r: Tensor) -> Tensor:
    """C_r A_r (H_src W_r): weighted mean of transformed in-neighbor states."""
    transformed = ops.affine(h_src, w_r)
    msgs = ops.gather_rows(transformed, plan.src)
    return ops.scatter_add_rows(msgs, plan.dst, plan.n_dst, plan.norm_weight)


def rgcn_layer(
    plan: GraphPlan,
    state: LayerState,
    params: Params,
    layer: int,
    dims: ModelConfig,
) -> LayerState:
    depth = 2 if dims.relation_hidden > 0 else 1
    per_type: Dict[str, List[Tensor]] = {t.name: [] for t in plan.schema.node_types}
    for rel in plan.schema.relations:
        rp = plan.relations[rel.name]
        if rp.src_type not in state:
            raise ValidationError(f"relation {rel.name!r} references type {rp.src_type!r} absent from the layer state")
        agg = aggregate(rp, state[rp.src_type], params[f"layer{layer}.{rel.name}.relation_weight"])
        a = mlp(agg, params, f"layer{layer}.{rel.name}.mlp", depth)
        if not rp.live.all():
            a = ops.hadamard(a, Tensor(np.broadcast_to(rp.live, a.shape)))
        per_type[rp.dst_type].append(a)
    # the last mixer stays linear: a relu there can zero a whole row before the heads
    last = layer == dims.num_layers - 1
    out: LayerState = {}
    for t in plan.schema.node_types:
        if t.name not in state:
            raise ValidationError(f"layer state is missing node type {t.name!r}")
        out[t.name] = mix_features(
            per_type[t.name],
            params[f"layer{layer}.mixer.{t.name}.weight"],
            params[f"layer{layer}.mixer.{t.name}.bias"],
            activate=not last,
        )
    return out


def apply_heads(h: Tensor, params: Params, num_heads: int) -> List[Tensor]:
    return [
        ops.row_l2_normalize(ops.affine(h, params[f"head{k}.weight"], params[f"head{k}.bias"]))
        for k in range(num_heads)
    ]


def forward_all(
    g: HeteroGraph,
    store: FeatureStore,
    params: Params,
    dims: ModelConfig,
    plan: Optional[GraphPlan] = None,
) -> Dict[str, List[Tensor]]:
    """Per node type, one (n_t x d_out) unit-row matrix per head, for every node."""
    if dims.num_layers < 1:
        raise ValidationError("num_layers must be >= 1")
    plan = plan or GraphPlan(g)
    state: LayerState = {
        t.name: encode_node_features(store, g.schema, t.name, params) for t in g.schema.node_types
    }
    for layer in range(dims.num_layers):
        state = rgcn_layer(plan, state, params, layer, dims)
    return {name: apply_heads(h, params, dims.num_heads) for name, h in state.items()}


def forward(
    g: HeteroGraph,
    store: FeatureStore,
    params: Params,
    dims: ModelConfig,
    node_ids: Mapping[str, Sequence[int]],
    plan: Optional[GraphPlan] = None,
) -> Dict[str, List[Tensor]]:
    full = forward_all(g, store, params, dims, plan)
    return {
        name: [ops.gather_rows(head, np.asarray(ids, dtype=np.int64)) for head in full[name]]
        for name, ids in node_ids.items()
    }
