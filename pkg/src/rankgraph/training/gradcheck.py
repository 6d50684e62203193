"""
Model self-test: finite-difference check of the full training loss.

The built-in fixture is a 10-node graph (5 users, 5 items), two declared
relations (`click` user->item with reverse `clicked_by`, and `follows`
user->user), two heads, and pools pre-filled so in-batch, pool and semantic
negatives all enter the loss.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from ..autodiff.grad import grad_check
from ..config.loader import LossConfig, ModelConfig, RankGraphConfig, TrainConfig, derive_seed
from ..graph.features import FeatureStore
from ..graph.schema import schema_from_dict
from ..graph.store import HeteroGraph, IdDictionary, build_graph
from .trainer import StepPlan, Trainer, step_loss

logger = logging.getLogger(__name__)

TOLERANCE = 1e-4


@dataclass
class GradCheckResult:
    max_error: float
    parameters: int
    scalars: int
    sources: List[str]
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error <= TOLERANCE


def fixture_graph(seed: int) -> Tuple[HeteroGraph, FeatureStore]:
    rng = np.random.default_rng(derive_seed(seed, "gradcheck.graph"))
    schema = schema_from_dict(
        {
            "node_types": [{"name": "user", "feature_blocks": [3]}, {"name": "item", "feature_blocks": [2, 2]}],
            "relations": [
                {"name": "click", "src": "user", "dst": "item", "reverse": "clicked_by"},
                {"name": "follows", "src": "user", "dst": "user"},
            ],
        }
    ).finalize()
    ids = IdDictionary(["user", "item"])
    for i in range(5):
        ids.get_or_add("user", f"u{i}")
        ids.get_or_add("item", f"i{i}")
    click = [(u, (u + k) % 5, float(rng.uniform(0.5, 2.0))) for u in range(5) for k in (0, 1)]
    follows = [(u, (u + 1) % 5, float(rng.uniform(0.5, 2.0))) for u in range(5)]
    raw: Dict[str, Tuple[List[int], List[int], List[float]]] = {
        "click": ([c[0] for c in click], [c[1] for c in click], [c[2] for c in click]),
        "follows": ([f[0] for f in follows], [f[1] for f in follows], [f[2] for f in follows]),
    }
    g = build_graph(schema, ids, raw)
    store = FeatureStore(
        {
            "user": [rng.normal(size=(5, 3))],
            "item": [rng.normal(size=(5, 2)), rng.normal(size=(5, 2))],
        }
    )
    return g, store


def fixture_config() -> RankGraphConfig:
    return RankGraphConfig(
        model=ModelConfig(d=4, d_out=3, num_layers=2, num_heads=2, encoder_hidden=4),
        loss=LossConfig(n_neg=2, pool_capacity=8, semantic_negatives=True),
        train=TrainConfig(batch_size=4, symmetric=True),
    )


def fixture_plan(seed: int) -> Tuple[HeteroGraph, FeatureStore, RankGraphConfig, Trainer, StepPlan]:
    g, store = fixture_graph(seed)
    cfg = fixture_config()
    trainer = Trainer(g, store, cfg, seed)
    rng = np.random.default_rng(derive_seed(seed, "gradcheck.pool"))
    for (type_name, _), pool in sorted(trainer.pools.items()):
        rows = rng.normal(size=(4, cfg.model.d_out))
        rows /= np.sqrt((rows * rows).sum(axis=1, keepdims=True))
        pool.add(rng.integers(0, g.num_nodes[type_name], size=4), rows)
    return g, store, cfg, trainer, trainer.plan_step()


def run_grad_check(seed: int, epsilon: float = 1e-5) -> GradCheckResult:
    started = time.perf_counter()
    g, store, cfg, trainer, plan = fixture_plan(seed)
    sources = []
    if any(len(x) for grp in plan.groups for x in grp.in_batch):
        sources.append("in_batch")
    if any(r is not None for grp in plan.groups for r in grp.pool_rows):
        sources.append("pool")
    if plan.semantic and plan.num_heads >= 2:
        sources.append("semantic")

    def loss_fn(tensors):
        return step_loss(g, store, tensors, cfg, plan, trainer.graph_plan).loss

    params = trainer.params
    err = grad_check(loss_fn, dict(params.named_arrays()), epsilon)
    result = GradCheckResult(err, len(params), params.num_scalars(), sources, time.perf_counter() - started)
    logger.info(
        f"grad-check: max relative error {err:.3e} over {result.scalars} scalars "
        f"({', '.join(sources)}) in {result.seconds:.1f}s"
    )
    return result
