import functools
import os

import numpy as np

from src.rankgraph.config.loader import load_config
from src.rankgraph.eval.recall import eval_edge_recall, eval_engagement_recall, random_table
from src.rankgraph.eval.synthetic import generate_synthetic
from src.rankgraph.model.network import forward_all
from src.rankgraph.serving.tables import export_embeddings
from src.rankgraph.training.trainer import train

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "config")
SEED = 7


@functools.lru_cache(maxsize=None)
def _trained(profile):
    cfg = load_config(os.path.join(CONFIG_DIR, profile))
    ds = generate_synthetic(cfg.synthetic, SEED)
    g = ds.graph()
    result = train(g, ds.features, cfg, SEED)
    return cfg, ds, g, result


def test_default_profile_learns_next_period_edges():
    cfg, ds, g, result = _trained("rankgraph.yaml")
    assert len(result.history) <= 1000
    assert result.final_loss < 0.5 * result.initial_loss
    head = cfg.edge_recall.head
    tables = {t: export_embeddings(result.params, g, ds.features, t, head) for t in ("user", "item")}
    report = eval_edge_recall(tables, ds.graph("edges_next"), cfg.edge_recall, SEED)
    chance = report.details["random_baseline"]["10"]
    assert report.recall[10] >= 5 * chance, (report.recall, chance)


def test_heads_stay_apart_after_training_with_semantic_negatives():
    cfg, ds, g, result = _trained("rankgraph.yaml")
    assert cfg.loss.semantic_negatives
    out = forward_all(g, ds.features, result.params.tensors(), cfg.model)
    e = g.edges["click"]
    cross = np.mean(
        [(out[t][0].values * out[t][1].values).sum(axis=1).mean() for t in ("user", "item")]
    )
    positive = np.mean(
        [
            (out["user"][h].values[e.src] * out["item"][h].values[e.dst]).sum(axis=1).mean()
            for h in range(cfg.model.num_heads)
        ]
    )
    assert cross < positive


def test_engagement_profile_beats_random_embeddings():
    cfg, ds, g, result = _trained("engagement.yaml")
    eng = cfg.engagement_recall
    table = export_embeddings(result.params, g, ds.features, "item", eng.head)
    trained = eval_engagement_recall(table, ds.interactions, eng)
    rnd = eval_engagement_recall(random_table(table, SEED), ds.interactions, eng)
    assert trained.recall[100] >= 3 * rnd.recall[100], (trained.recall, rnd.recall)
    values = [trained.recall[k] for k in eng.ks]
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert len(trained.details["eval_hours"]) == eng.eval_hours
