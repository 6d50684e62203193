"""
Contrastive training loop.

What it does:
- Each step draws a weighted edge batch per trained relation, freezes every
  random choice into a `StepPlan` (anchors, positives, in-batch negative ids,
  pool snapshot rows), then evaluates `step_loss` on a fresh tape, runs the
  reverse pass and applies one Adam update.
- Negatives per anchor = in-batch ids + pool draws + the positive's other-head
  rows, concatenated into one set (cosine against the anchor's head).
- With `symmetric`, every pair is also used with the destination as anchor;
  its in-batch exclusions come from in-neighbors.
- After the update, the step's endpoint embeddings (pre-update, detached) are
  pushed into the per (type, head) pools.

Where it is used:
- `rankgraph train`, and `rankgraph grad-check` through `step_loss`.
"""
from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

import numpy as np
import pandas as pd

from ..autodiff import ops
from ..autodiff.grad import backward
from ..autodiff.tensor import Tape, Tensor, checked
from ..config.loader import RankGraphConfig, derive_seed
from ..errors import EmptyPoolError, NonFiniteError, TrainingAborted, ValidationError
from ..graph.features import FeatureStore
from ..graph.sampling import EdgeBatch, sample_edge_batch
from ..graph.store import HeteroGraph
from ..logs.run_log import log_event
from ..metrics.core import inc_negatives, record_train_step, set_pool_size
from ..model.network import GraphPlan, Params, forward_all
from ..model.params import ModelParams, init_params
from .losses import combined_loss, cosine_rows, infonce_terms, triplet_terms
from .negatives import sample_in_batch_negatives, semantic_negatives
from .optim import AdamMoments, adam_from_config
from .pool import NegativePool, sample_pool_negatives

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnchorGroup:
    """One relation in one direction: anchors of `anchor_type`, positives of `pos_type`."""
    relation: str
    anchor_type: str
    pos_type: str
    anchor_ids: np.ndarray
    pos_ids: np.ndarray
    in_batch: List[np.ndarray]
    # per head: (B, n_neg, d_out) constant pool rows, or None while the pool is empty
    pool_rows: List[Optional[np.ndarray]]


@dataclass(frozen=True)
class StepPlan:
    groups: List[AnchorGroup]
    num_heads: int
    semantic: bool
    detach_semantic: bool


@dataclass
class StepOutput:
    loss: Tensor
    triplet: float
    infonce: float
    embeddings: Dict[str, List[Tensor]]


def _negative_slots(group: AnchorGroup, head: int, plan: StepPlan) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    """Bank layout for one (group, head): slot index matrix (B, S), mask, and part order."""
    b = group.anchor_ids.shape[0]
    per_anchor: List[List[int]] = [[] for _ in range(b)]
    offset = 0
    parts: List[str] = []
    n_in = sum(len(x) for x in group.in_batch)
    if n_in:
        parts.append("in_batch")
        for i, ids in enumerate(group.in_batch):
            per_anchor[i].extend(range(offset, offset + len(ids)))
            offset += len(ids)
    rows = group.pool_rows[head]
    if rows is not None:
        parts.append("pool")
        n = rows.shape[1]
        for i in range(b):
            per_anchor[i].extend(range(offset + i * n, offset + (i + 1) * n))
        offset += b * n
    if plan.semantic and plan.num_heads >= 2:
        parts.append("semantic")
        for _ in range(plan.num_heads - 1):
            for i in range(b):
                per_anchor[i].append(offset + i)
            offset += b
    width = max(1, max(len(x) for x in per_anchor))
    slots = np.zeros((b, width), dtype=np.int64)
    mask = np.zeros((b, width), dtype=bool)
    for i, lst in enumerate(per_anchor):
        slots[i, : len(lst)] = lst
        mask[i, : len(lst)] = True
    return slots, mask, parts


def step_loss(
    g: HeteroGraph,
    store: FeatureStore,
    params: Params,
    cfg: RankGraphConfig,
    plan: StepPlan,
    graph_plan: Optional[GraphPlan] = None,
) -> StepOutput:
    """Combined loss of a frozen step sample for any parameter set."""
    emb = forward_all(g, store, params, cfg.model, graph_plan)
    trip_parts: List[Tensor] = []
    nce_parts: List[Tensor] = []
    for group in plan.groups:
        b = group.anchor_ids.shape[0]
        for h in range(plan.num_heads):
            slots, mask, parts = _negative_slots(group, h, plan)
            keep = np.flatnonzero(mask.any(axis=1))
            if keep.size == 0:
                continue
            anchors = ops.gather_rows(emb[group.anchor_type][h], group.anchor_ids)
            positives = ops.gather_rows(emb[group.pos_type][h], group.pos_ids)
            bank: List[Tensor] = []
            if "in_batch" in parts:
                flat = np.concatenate([x for x in group.in_batch if len(x)])
                bank.append(ops.gather_rows(emb[group.pos_type][h], flat))
            if "pool" in parts:
                rows = group.pool_rows[h]
                bank.append(Tensor(rows.reshape(-1, rows.shape[2])))
            if "semantic" in parts:
                heads = [ops.gather_rows(emb[group.pos_type][k], group.pos_ids) for k in range(plan.num_heads)]
                bank.extend(semantic_negatives(heads, h, plan.detach_semantic))
            bank_t = bank[0] if len(bank) == 1 else ops.concat_rows(bank)
            s = slots.shape[1]
            if keep.size < b:
                slots, mask = slots[keep], mask[keep]
                anchors = ops.gather_rows(anchors, keep)
                positives = ops.gather_rows(positives, keep)
            n_keep = keep.size
            neg = ops.gather_rows(bank_t, slots.reshape(-1))
            rep = ops.gather_rows(anchors, np.repeat(np.arange(n_keep), s))
            cos_an = ops.reshape(cosine_rows(rep, neg), (n_keep, s))
            cos_ap = cosine_rows(anchors, positives)
            trip_parts.append(triplet_terms(cos_ap, cos_an, mask, cfg.loss.margin))
            nce_parts.append(infonce_terms(cos_ap, cos_an, mask, cfg.loss.temperature))
    if not trip_parts:
        raise ValidationError("no anchor in the step has any negative")
    trip = trip_parts[0] if len(trip_parts) == 1 else ops.concat_rows(trip_parts)
    nce = nce_parts[0] if len(nce_parts) == 1 else ops.concat_rows(nce_parts)
    loss = combined_loss(trip, nce, cfg.loss.alpha, cfg.loss.beta)
    return StepOutput(
        loss=loss,
        triplet=float(trip.values.mean()),
        infonce=float(nce.values.mean()),
        embeddings=emb,
    )


@dataclass
class StepRecord:
    step: int
    loss: float
    triplet: float
    infonce: float
    seconds: float


@dataclass
class TrainResult:
    params: ModelParams
    history: List[StepRecord] = field(default_factory=list)

    @property
    def initial_loss(self) -> float:
        return self.history[0].loss if self.history else float("nan")

    @property
    def final_loss(self) -> float:
        return self.history[-1].loss if self.history else float("nan")


def resolve_relations(g: HeteroGraph, names: Optional[List[str]]) -> List[str]:
    if names:
        rels = [g.relation(n).name for n in names]
    else:
        rels = [r.name for r in g.schema.trainable_relations() if g.num_edges(r.name) > 0]
    if not rels:
        raise ValidationError("graph has no trainable relation with edges")
    for name in rels:
        if g.num_edges(name) == 0:
            raise ValidationError(f"relation {name!r} has no edges to train on")
    return rels


class Trainer:
    def __init__(
        self,
        g: HeteroGraph,
        store: FeatureStore,
        cfg: RankGraphConfig,
        seed: int,
        params: Optional[ModelParams] = None,
    ):
        store.validate(g.schema, g.num_nodes)
        self.g = g
        self.store = store
        self.cfg = cfg
        self.seed = int(seed)
        self.graph_plan = GraphPlan(g)
        self.relations = resolve_relations(g, cfg.train.relations)
        self.params = params or init_params(g.schema, cfg.model, derive_seed(seed, "model"))
        self.params.check_schema(g.schema)
        self.moments = AdamMoments.zeros_like(dict(self.params.named_arrays()))
        self.step_count = 0
        self.rng = np.random.default_rng(derive_seed(seed, "training"))
        self.pools: Dict[Tuple[str, int], NegativePool] = {
            (t.name, h): NegativePool(cfg.loss.pool_capacity, cfg.model.d_out, t.name, h)
            for t in g.schema.node_types
            for h in range(cfg.model.num_heads)
        }
        self._neighbors: Dict[Tuple[str, bool], Dict[int, Set[int]]] = {}
        self._warm_logged: Set[Tuple[str, int]] = set()

    def _neighbor_sets(self, relation: str, reverse: bool) -> Dict[int, Set[int]]:
        key = (relation, reverse)
        if key not in self._neighbors:
            self._neighbors[key] = self.g.adjacency_sets(relation, reverse=reverse)
        return self._neighbors[key]

    def _group(self, batch: EdgeBatch, reverse: bool) -> AnchorGroup:
        rel = self.g.relation(batch.relation)
        src_t, dst_t = self.g.type_name(rel.src_type), self.g.type_name(rel.dst_type)
        if reverse:
            batch = EdgeBatch(batch.relation, batch.relation_id, batch.dst, batch.src, batch.weights)
            src_t, dst_t = dst_t, src_t
        loss_cfg = self.cfg.loss
        in_batch = sample_in_batch_negatives(
            batch, loss_cfg.n_neg, self.rng, self._neighbor_sets(batch.relation, reverse)
        )
        inc_negatives("in_batch", in_batch.total)
        pool_rows: List[Optional[np.ndarray]] = []
        for h in range(self.cfg.model.num_heads):
            pool = self.pools[(dst_t, h)]
            try:
                _, rows = sample_pool_negatives(pool, len(batch) * loss_cfg.n_neg, self.rng)
                pool_rows.append(rows.reshape(len(batch), loss_cfg.n_neg, rows.shape[1]))
                inc_negatives("pool", len(batch) * loss_cfg.n_neg)
            except EmptyPoolError:
                if (dst_t, h) not in self._warm_logged:
                    self._warm_logged.add((dst_t, h))
                    log_event("training", "pool_warmup", node_type=dst_t, head=h, step=self.step_count + 1)
                pool_rows.append(None)
        if loss_cfg.semantic_negatives and self.cfg.model.num_heads >= 2:
            inc_negatives("semantic", len(batch) * (self.cfg.model.num_heads - 1))
        return AnchorGroup(
            relation=batch.relation,
            anchor_type=src_t,
            pos_type=dst_t,
            anchor_ids=batch.src,
            pos_ids=batch.dst,
            in_batch=in_batch.ids,
            pool_rows=pool_rows,
        )

    def plan_step(self) -> StepPlan:
        batches = sample_edge_batch(self.g, self.relations, self.cfg.train.batch_size, self.rng)
        groups: List[AnchorGroup] = []
        for name in self.relations:
            groups.append(self._group(batches[name], reverse=False))
            if self.cfg.train.symmetric:
                groups.append(self._group(batches[name], reverse=True))
        return StepPlan(
            groups=groups,
            num_heads=self.cfg.model.num_heads,
            semantic=self.cfg.loss.semantic_negatives,
            detach_semantic=self.cfg.loss.detach_semantic,
        )

    def _update_pools(self, plan: StepPlan, emb: Dict[str, List[Tensor]]) -> None:
        seen: Dict[str, List[np.ndarray]] = {}
        for group in plan.groups:
            seen.setdefault(group.anchor_type, []).append(group.anchor_ids)
            seen.setdefault(group.pos_type, []).append(group.pos_ids)
        for type_name, chunks in seen.items():
            ids = np.unique(np.concatenate(chunks))
            for h in range(plan.num_heads):
                pool = self.pools[(type_name, h)]
                pool.add(ids, emb[type_name][h].values[ids])
                set_pool_size(type_name, h, len(pool))

    def step(self) -> StepRecord:
        started = time.perf_counter()
        plan = self.plan_step()
        step_no = self.step_count + 1
        tape = Tape()
        try:
            if self.cfg.train.checked:
                with checked(), tape:
                    tensors = self.params.watch(tape)
                    out = step_loss(self.g, self.store, tensors, self.cfg, plan, self.graph_plan)
            else:
                with tape:
                    tensors = self.params.watch(tape)
                    out = step_loss(self.g, self.store, tensors, self.cfg, plan, self.graph_plan)
        except NonFiniteError as e:
            log_event("training", "abort", step=step_no, reason=str(e))
            raise TrainingAborted(step_no, {"loss": float("nan")}) from e
        total = float(out.loss.values[0, 0])
        components = {"loss": total, "triplet": out.triplet, "infonce": out.infonce}
        if not all(math.isfinite(v) for v in components.values()):
            log_event("training", "abort", step=step_no, **components)
            raise TrainingAborted(step_no, components)
        try:
            grads = backward(tape, out.loss)
        except NonFiniteError as e:
            log_event("training", "abort", step=step_no, reason=str(e), **components)
            raise TrainingAborted(step_no, components) from e
        grad_arrays = {name: grads[t.node_id].values for name, t in tensors.items()}
        new_arrays, self.moments = adam_from_config(
            dict(self.params.named_arrays()), grad_arrays, self.moments, step_no, self.cfg.optimizer
        )
        self.params = self.params.replace(new_arrays)
        self.step_count = step_no
        self._update_pools(plan, out.embeddings)
        seconds = time.perf_counter() - started
        record_train_step(total, out.triplet, out.infonce, seconds)
        if step_no == 1 or step_no % self.cfg.train.log_every == 0:
            log_event("training", "step", step=step_no, **components)
        return StepRecord(step_no, total, out.triplet, out.infonce, seconds)

    def run(self, steps: int) -> TrainResult:
        history = [self.step() for _ in range(int(steps))]
        if history:
            logger.info(
                f"Trained {len(history)} steps: loss {history[0].loss:.4f} -> {history[-1].loss:.4f}"
            )
        return TrainResult(self.params, history)


def train(
    g: HeteroGraph,
    store: FeatureStore,
    cfg: RankGraphConfig,
    seed: int,
    steps: Optional[int] = None,
    params: Optional[ModelParams] = None,
) -> TrainResult:
    trainer = Trainer(g, store, cfg, seed, params)
    return trainer.run(cfg.train.steps if steps is None else steps)


def write_loss_log(history: List[StepRecord], path: str) -> None:
    """`step<TAB>loss<TAB>triplet<TAB>infonce`, one line per step, no header."""
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    df = pd.DataFrame(
        {
            "step": [r.step for r in history],
            "loss": [r.loss for r in history],
            "triplet": [r.triplet for r in history],
            "infonce": [r.infonce for r in history],
        },
        columns=["step", "loss", "triplet", "infonce"],
    )
    df.to_csv(path, sep="\t", header=False, index=False, float_format="%.17g", lineterminator="\n")


def read_loss_log(path: str) -> pd.DataFrame:
    if os.path.getsize(path) == 0:
        return pd.DataFrame(columns=["step", "loss", "triplet", "infonce"])
    return pd.read_csv(
        path, sep="\t", header=None, names=["step", "loss", "triplet", "infonce"], float_precision="round_trip"
    )
