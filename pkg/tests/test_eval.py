import os

import numpy as np
import pandas as pd
import pytest

from src.rankgraph.config.loader import EdgeRecallConfig, EngagementRecallConfig, SyntheticConfig
from src.rankgraph.errors import ValidationError
from src.rankgraph.eval.interactions import read_interaction_log, validate_log, write_interaction_log
from src.rankgraph.eval.recall import (
    eval_edge_recall,
    eval_engagement_recall,
    random_baseline_recall,
    random_table,
)
from src.rankgraph.eval.synthetic import generate_synthetic, write_synthetic
from src.rankgraph.graph.features import load_features
from src.rankgraph.graph.schema import load_schema, schema_from_dict
from src.rankgraph.graph.store import IdDictionary, build_graph, ingest_edges, load_ids
from src.rankgraph.serving.tables import EmbeddingTable

FP = b"\x01" * 32


def _paired_graph(n):
    schema = schema_from_dict(
        {"node_types": [{"name": "user", "feature_blocks": [1]}, {"name": "item", "feature_blocks": [1]}],
         "relations": [{"name": "click", "src": "user", "dst": "item", "reverse": "clicked_by"}]}
    )
    ids = IdDictionary(["user", "item"])
    for i in range(n):
        ids.get_or_add("user", f"u{i}")
        ids.get_or_add("item", f"a{i}")
    return build_graph(schema, ids, {"click": (list(range(n)), list(range(n)), [1.0] * n)})


def test_random_baseline():
    assert random_baseline_recall(11, 5) == pytest.approx(0.5)
    assert random_baseline_recall(3, 10) == 1.0
    with pytest.raises(ValidationError):
        random_baseline_recall(1, 1)


@pytest.mark.parametrize("pool,chance", [("partner_type", 1 / 5), ("shared", 1 / 9)])
def test_edge_recall_perfect_embeddings(pool, chance):
    n = 5
    g = _paired_graph(n)
    eye = np.eye(n)
    tables = {
        "user": EmbeddingTable("user", 0, eye, [f"u{i}" for i in range(n)], FP),
        "item": EmbeddingTable("item", 0, eye, [f"a{i}" for i in range(n)], FP),
    }
    report = eval_edge_recall(tables, g, EdgeRecallConfig(sample_size=100, ks=[1, 5], pool=pool), seed=0)
    assert report.recall == {1: 1.0, 5: 1.0}
    assert report.details["candidates"] == 2 * n
    assert report.to_dict()["random_baseline"]["1"] == pytest.approx(chance)


@pytest.mark.parametrize("pool", ["partner_type", "shared"])
def test_edge_recall_random_embeddings_match_analytic_expectation(pool):
    n, k = 20, 5
    g = _paired_graph(n)
    like_u = EmbeddingTable("user", 0, np.zeros((n, 16)), [f"u{i}" for i in range(n)], FP)
    like_i = EmbeddingTable("item", 0, np.zeros((n, 16)), [f"a{i}" for i in range(n)], FP)
    cfg = EdgeRecallConfig(sample_size=1000, ks=[k], pool=pool)
    reports = [
        eval_edge_recall(
            {"user": random_table(like_u, 2 * s), "item": random_table(like_i, 2 * s + 1)}, g, cfg, seed=s
        )
        for s in range(50)
    ]
    expected = k / n if pool == "partner_type" else k / (2 * n - 1)
    assert float(np.mean([r.recall[k] for r in reports])) == pytest.approx(expected, abs=0.05)
    assert reports[0].to_dict()["random_baseline"][str(k)] == pytest.approx(expected)


@pytest.mark.parametrize("pool", ["partner_type", "shared"])
def test_edge_recall_is_monotone_and_complete_at_full_depth(pool):
    n = 6
    g = _paired_graph(n)
    rng = np.random.default_rng(4)
    like = np.zeros((n, 8))
    tables = {
        "user": random_table(EmbeddingTable("user", 0, like, [f"u{i}" for i in range(n)], FP), rng),
        "item": random_table(EmbeddingTable("item", 0, like, [f"a{i}" for i in range(n)], FP), rng),
    }
    m = 2 * n
    report = eval_edge_recall(tables, g, EdgeRecallConfig(ks=list(range(1, m)), pool=pool), seed=0)
    values = [report.recall[k] for k in range(1, m)]
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert report.recall[m - 1] == 1.0
    if pool == "partner_type":
        # each partner type holds n candidates, so depth n already covers them
        assert report.recall[n] == 1.0


def test_edge_recall_partner_type_pool_ignores_same_type_crowding():
    n = 4
    g = _paired_graph(n)
    users, items = np.zeros((n, n + 1)), np.zeros((n, n + 1))
    for i in range(n):
        users[i, 0], users[i, i + 1] = 1.0, 0.05
        items[i, 0], items[i, i + 1] = 0.8, 0.6
    users /= np.linalg.norm(users, axis=1, keepdims=True)
    tables = {
        "user": EmbeddingTable("user", 0, users, [f"u{i}" for i in range(n)], FP),
        "item": EmbeddingTable("item", 0, items, [f"a{i}" for i in range(n)], FP),
    }
    # users sit closer to each other than to any item
    shared = eval_edge_recall(tables, g, EdgeRecallConfig(ks=[1], pool="shared"), seed=0)
    typed = eval_edge_recall(tables, g, EdgeRecallConfig(ks=[1], pool="partner_type"), seed=0)
    assert shared.recall[1] == 0.5
    assert typed.recall[1] == 1.0


def test_edge_recall_missing_node_is_named():
    g = _paired_graph(3)
    tables = {
        "user": EmbeddingTable("user", 0, np.eye(3), ["u0", "u1", "u2"], FP),
        "item": EmbeddingTable("item", 0, np.eye(3)[:2], ["a0", "a1"], FP),
    }
    with pytest.raises(ValidationError) as exc:
        eval_edge_recall(tables, g, EdgeRecallConfig(ks=[1]), seed=0)
    assert "item:a2" in str(exc.value)


def _item_table():
    s = np.sqrt(1 - 0.99**2)
    m = np.array(
        [
            [1.0, 0.0, 0.0, 0.0],
            [0.99, s, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.99, s],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    return EmbeddingTable("item", 0, m, [f"i{i}" for i in range(6)], FP)


def _log(weight=1.0):
    rows = [
        (8, "u1", "i0", "click"),
        (9, "u1", "ghost", "click"),
        (11, "u1", "i1", "click"),
        (9, "u2", "i2", "click"),
        (12, "u2", "i5", "click"),
        (9, "u3", "i4", "click"),
    ]
    df = pd.DataFrame(rows, columns=["hour", "user_id", "item_id", "interaction_type"])
    df["weight"] = weight
    return validate_log(df)


ENG = EngagementRecallConfig(
    eval_hour=10, eval_hours=1, window=5, neighbors=3, horizon_start=1, horizon_end=2, ks=[1, 3],
    type_weights={"click": 1.0},
)


def test_engagement_recall_hits_and_misses():
    report = eval_engagement_recall(_item_table(), _log(), ENG)
    # u1's trigger i0 predicts i1 first (hit); u2's horizon item i5 is orthogonal to i2 (miss)
    assert report.recall == {1: 0.5, 3: 0.5}
    assert report.details["users"] == 2
    assert report.details["excluded_users"] == 1
    assert report.details["triggers_skipped"] == 1


def test_engagement_recall_is_invariant_to_weight_scale_and_threads():
    base = eval_engagement_recall(_item_table(), _log(1.0), ENG)
    scaled = eval_engagement_recall(_item_table(), _log(7.5), ENG, threads=3)
    assert scaled.recall == base.recall


def test_engagement_recall_needs_ground_truth():
    cfg = ENG.model_copy(update={"eval_hour": 20})
    with pytest.raises(ValidationError):
        eval_engagement_recall(_item_table(), _log(), cfg)


def test_engagement_recall_default_eval_hour():
    cfg = ENG.model_copy(update={"eval_hour": None})
    report = eval_engagement_recall(_item_table(), _log(), cfg)
    assert report.details["eval_hour"] == 12 - 2


def test_engagement_recall_averages_over_the_eval_hours():
    report = eval_engagement_recall(_item_table(), _log(), ENG.model_copy(update={"eval_hours": 2}))
    # hour 9: only u1 has ground truth (i1 at 11) and i0 ranks it first; hour 10 scores 0.5
    assert report.details["per_hour"] == {"9": {"1": 1.0, "3": 1.0}, "10": {"1": 0.5, "3": 0.5}}
    assert report.recall == {1: 0.75, 3: 0.75}
    assert report.details["eval_hours"] == [9, 10]
    assert report.details["users"] == 2 and report.details["user_hours"] == 3
    assert report.details["triggers_skipped"] == 2
    # hours without ground truth are skipped, not averaged in as zero
    late = eval_engagement_recall(_item_table(), _log(), ENG.model_copy(update={"eval_hours": 2, "eval_hour": 12}))
    assert late.details["eval_hours"] == [11]
    assert late.recall == {1: 0.0, 3: 0.0}


def test_interaction_log_rejects_non_positive_weight(tmp_path):
    with pytest.raises(ValidationError):
        validate_log(_log(0.0))
    path = str(tmp_path / "log.tsv")
    write_interaction_log(_log(0.1), path)
    back = read_interaction_log(path)
    assert back["weight"].tolist() == [0.1] * 6
    assert back["hour"].tolist() == sorted(back["hour"].tolist())


def test_synthetic_is_seeded_and_planted():
    cfg = SyntheticConfig()
    a = generate_synthetic(cfg, 11)
    b = generate_synthetic(cfg, 11)
    assert a.edges == b.edges and a.edges_next == b.edges_next
    assert a.interactions.equals(b.interactions)
    assert a.edges != a.edges_next
    n_in, n_out = cfg.n_items // cfg.communities, cfg.n_items - cfg.n_items // cfg.communities
    expected = n_in * cfg.p_in / (n_in * cfg.p_in + n_out * cfg.p_out)
    assert expected > 0.9
    assert a.intra_fraction() == pytest.approx(expected, abs=0.05)
    assert a.intra_fraction("edges_next") == pytest.approx(expected, abs=0.05)


def test_synthetic_requires_p_in_above_p_out():
    with pytest.raises(ValidationError):
        generate_synthetic(SyntheticConfig(p_in=0.05, p_out=0.05), 0)


def test_synthetic_files_ingest(tmp_path):
    cfg = SyntheticConfig(n_users=30, n_items=20, communities=3, log_hours=10)
    ds = generate_synthetic(cfg, 1)
    paths = write_synthetic(ds, str(tmp_path / "data"))
    for p in paths.values():
        assert os.path.exists(p)
    schema = load_schema(paths["schema"])
    g = ingest_edges(paths["edges"], schema, load_ids(paths["ids"], schema))
    assert g.num_edges("click") == len(ds.edges)
    # edgeless nodes survive ingest and line up with the in-memory graph
    assert g.num_nodes == {"user": cfg.n_users, "item": cfg.n_items}
    assert g.summary() == ds.graph().summary()
    store = load_features(paths["features"], g)
    assert store.block("item", 1).shape == (g.num_nodes["item"], cfg.item_dims[1])
    log = read_interaction_log(paths["interactions"])
    assert len(log) == len(ds.interactions)
    comm = pd.read_csv(paths["communities"], sep="\t", dtype={"external_id": str})
    assert len(comm) == cfg.n_users + cfg.n_items
