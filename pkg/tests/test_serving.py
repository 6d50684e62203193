import json

import numpy as np
import pandas as pd
import pytest

from src.rankgraph.config.loader import ModelConfig
from src.rankgraph.errors import FingerprintMismatch, ParseError, SchemaError, ValidationError
from src.rankgraph.graph.schema import schema_from_dict
from src.rankgraph.graph.semantic import derive_semantic_edges
from src.rankgraph.graph.store import IdDictionary, build_graph, ingest_edges
from src.rankgraph.model.params import init_params
from src.rankgraph.serving.clustering import save_clusters, spherical_kmeans
from src.rankgraph.serving.projection import project_subgraph, write_projection
from src.rankgraph.serving.retrieval import knn, knn_indices, recommend_for_user
from src.rankgraph.serving.tables import EmbeddingTable, export_embeddings, load_table, save_table
from src.rankgraph.serving.tokens import (
    export_graph_tokens,
    export_user_token_sequences,
    read_graph_tokens,
    token_id,
)
from src.rankgraph.training.gradcheck import fixture_graph

FP = bytes(range(32))


def _unit_rows(n, d, seed):
    x = np.random.default_rng(seed).normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _table(matrix, prefix="i", fingerprint=FP):
    return EmbeddingTable("item", 0, matrix, [f"{prefix}{i}" for i in range(len(matrix))], fingerprint)


# retrieval


def test_knn_two_nodes_returns_the_other():
    t = _table(np.array([[1.0, 0.0], [0.0, 1.0]]))
    for k in (1, 5):
        assert [nid for nid, _ in knn(t, "i0", k)] == ["i1"]


def test_knn_duplicate_row_scores_one_and_ranks_first():
    m = np.array([[0.6, 0.8], [1.0, 0.0], [0.6, 0.8], [0.0, 1.0]])
    res = knn(_table(m), "i0", 3)
    assert res[0] == ("i2", pytest.approx(1.0))


def test_knn_matches_full_sort_oracle():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(2, 501))
        # small integer directions give exact duplicate rows, so ties get exercised
        m = rng.integers(-2, 3, size=(n, 3)).astype(np.float64)
        m[~m.any(axis=1)] = [1.0, 0.0, 0.0]
        m /= np.linalg.norm(m, axis=1, keepdims=True)
        t = _table(m)
        k = int(rng.integers(1, 21))
        for q in rng.integers(0, n, size=3).tolist():
            scores = (m * m[q]).sum(axis=1)
            oracle = sorted((i for i in range(n) if i != q), key=lambda i: (-scores[i], i))[:k]
            got = [t.index_of(nid) for nid, _ in knn(t, f"i{q}", k)]
            assert got == oracle



def test_knn_ties_break_by_local_id_and_unknown_id_errors():
    m = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]])
    idx, _ = knn_indices(m, 0, 3)
    assert idx.tolist() == [1, 2, 3]
    with pytest.raises(ValidationError):
        knn(_table(m), "nope", 3)


def test_recommend_for_user_weights_triggers_and_skips_unknown():
    m = np.array([[1.0, 0.0], [0.0, 1.0], [0.8, 0.6], [0.6, 0.8]])
    t = _table(m)
    recs, skipped = recommend_for_user(t, {"i0": 1.0, "i1": 2.0, "ghost": 5.0}, k=4, neighbors=3)
    assert skipped == 1
    scores = dict(recs)
    # i3 is closest to the heavier trigger i1: 2 * 0.8
    assert recs[0][0] == "i3" and scores["i3"] == pytest.approx(1.6)
    assert scores["i2"] == pytest.approx(max(0.8, 2 * 0.6))


# clustering


def test_kmeans_k_equals_n_gives_singletons():
    m = _unit_rows(6, 4, 2)
    model = spherical_kmeans(m, 6, 20, seed=0)
    assert sorted(model.assignment.tolist()) == list(range(6))
    assert model.inertia == pytest.approx(0.0, abs=1e-12)


def test_kmeans_single_cluster_is_normalized_mean():
    m = _unit_rows(20, 3, 3)
    model = spherical_kmeans(m, 1, 10, seed=0)
    mean = m.mean(axis=0)
    np.testing.assert_allclose(model.centroids[0], mean / np.linalg.norm(mean), atol=1e-12)
    assert (model.assignment == 0).all()


def test_kmeans_inertia_never_rises():
    for seed in range(20):
        model = spherical_kmeans(_unit_rows(60 + 7 * seed, 5, seed), 2 + seed % 6, 50, seed=seed)
        assert all(b <= a + 1e-12 for a, b in zip(model.history, model.history[1:]))
        np.testing.assert_allclose(np.linalg.norm(model.centroids, axis=1), 1.0)



def test_kmeans_empty_cluster_keeps_previous_centroid():
    m = np.tile([1.0, 0.0], (3, 1))
    model = spherical_kmeans(m, 2, 5, seed=0)
    # ties go to centroid 0, so centroid 1 never gains a member
    assert model.assignment.tolist() == [0, 0, 0]
    np.testing.assert_array_equal(model.centroids, m[:2])
    assert model.converged


def test_kmeans_separates_antipodal_bundles():
    rng = np.random.default_rng(5)
    base = np.array([1.0, 0.0, 0.0])
    a = base + 0.05 * rng.normal(size=(30, 3))
    b = -base + 0.05 * rng.normal(size=(30, 3))
    m = np.vstack([a, b])
    m /= np.linalg.norm(m, axis=1, keepdims=True)
    truth = np.array([0] * 30 + [1] * 30)
    model = spherical_kmeans(m, 2, 20, seed=0)
    assert np.array_equal(model.assignment, truth) or np.array_equal(model.assignment, 1 - truth)
    assert model.converged


def test_kmeans_rejects_bad_k(tmp_path):
    m = _unit_rows(3, 2, 0)
    with pytest.raises(ValidationError):
        spherical_kmeans(m, 4, 10, 0)
    with pytest.raises(ValidationError):
        spherical_kmeans(m, 0, 10, 0)
    model = spherical_kmeans(m, 2, 10, 0)
    path = str(tmp_path / "clusters.tsv")
    save_clusters(model, _table(m), path)
    df = pd.read_csv(path, sep="\t")
    assert df["external_id"].tolist() == ["i0", "i1", "i2"]
    summary = json.loads(open(f"{path}.json").read())
    assert sum(summary["sizes"]) == 3 and summary["k"] == 2


# projection

SCHEMA = {
    "node_types": [{"name": "user", "feature_blocks": [1]}, {"name": "item", "feature_blocks": [1]}],
    "relations": [{"name": "click", "src": "user", "dst": "item", "reverse": "clicked_by"}],
}


def test_projection_matches_brute_force(tmp_path):
    p = tmp_path / "e.tsv"
    p.write_text("click\tu1\ta1\t1\nclick\tu2\ta1\t1\n")
    g = ingest_edges(str(p), schema_from_dict(SCHEMA))
    users = project_subgraph(g, "user", "click", top_k=10)
    assert list(zip(users.src.tolist(), users.dst.tolist(), users.weight.tolist())) == [(0, 1, 1.0), (1, 0, 1.0)]
    items = project_subgraph(g, "item", "clicked_by", top_k=10)
    assert len(items) == 0
    with pytest.raises(ValidationError):
        project_subgraph(g, "item", "click", top_k=10)
    with pytest.raises(SchemaError):
        project_subgraph(g, "user", "unknown", top_k=10)


def _top_k_oracle(dense, shared, top_k, min_weight):
    n = dense.shape[0]
    kept = set()
    for u in range(n):
        partners = sorted((v for v in range(n) if v != u and shared[u, v] and dense[u, v] >= min_weight),
                          key=lambda v: (-dense[u, v], v))
        for v in partners[:top_k]:
            kept.add((u, v))
            kept.add((v, u))
    return sorted((u, v, dense[u, v]) for u, v in kept)


def test_projection_oracle_on_random_graphs(tmp_path):
    rng = np.random.default_rng(8)
    for trial in range(10):
        n_u, n_i = int(rng.integers(2, 26)), int(rng.integers(1, 25))
        ids = IdDictionary(["user", "item"])
        for u in range(n_u):
            ids.get_or_add("user", f"u{u}")
        for i in range(n_i):
            ids.get_or_add("item", f"a{i}")
        hit = rng.random((n_u, n_i)) < 0.3
        src, dst = np.nonzero(hit)
        w = rng.integers(1, 4, size=src.size).astype(float)
        g = build_graph(schema_from_dict(SCHEMA), ids, {"click": (src.tolist(), dst.tolist(), w.tolist())})
        a = g.out_adjacency("click").toarray()
        dense = a @ a.T
        np.fill_diagonal(dense, 0.0)
        shared = (hit.astype(float) @ hit.T.astype(float)) > 0
        top_k, min_weight = int(rng.integers(1, 5)), float(rng.integers(0, 3))
        expected = _top_k_oracle(dense, shared, top_k, min_weight)
        got = project_subgraph(g, "user", "click", top_k=top_k, min_weight=min_weight)
        assert list(zip(got.src.tolist(), got.dst.tolist(), got.weight.tolist())) == expected
        sem = derive_semantic_edges(g, "click", "co_click", top_k=top_k, min_weight=min_weight).edges["co_click"]
        assert list(zip(sem.src.tolist(), sem.dst.tolist(), sem.weight.tolist())) == expected
        if trial == 0:
            out = str(tmp_path / "users.tsv")
            assert write_projection(g, got, "user", "co_click", out) == len(expected)
            reloaded = ingest_edges(out, schema_from_dict(json.loads(open(f"{out}.schema.json").read())))
            assert len(reloaded.edges["co_click"]) == len(expected)


def test_projection_keeps_zero_weight_pairs_at_zero_threshold(tmp_path):
    p = tmp_path / "e.tsv"
    p.write_text("click\tu0\ta0\t0\nclick\tu1\ta0\t0\nclick\tu2\ta1\t2\n")
    g = ingest_edges(str(p), schema_from_dict(SCHEMA))
    kept = project_subgraph(g, "user", "click", top_k=5, min_weight=0.0)
    assert list(zip(kept.src.tolist(), kept.dst.tolist(), kept.weight.tolist())) == [(0, 1, 0.0), (1, 0, 0.0)]
    assert len(project_subgraph(g, "user", "click", top_k=5, min_weight=0.5)) == 0



# tables and tokens


def test_export_is_bitwise_stable(tmp_path):
    g, store = fixture_graph(0)
    params = init_params(g.schema, ModelConfig(d=4, d_out=3, num_layers=1, num_heads=2, encoder_hidden=4), 1)
    t = export_embeddings(params, g, store, "item", head=1)
    assert t.matrix.shape == (5, 3) and t.external_ids == [f"i{i}" for i in range(5)]
    save_table(t, str(tmp_path / "a.rge"))
    save_table(export_embeddings(params, g, store, "item", head=1), str(tmp_path / "b.rge"))
    assert (tmp_path / "a.rge").read_bytes() == (tmp_path / "b.rge").read_bytes()
    loaded = load_table(str(tmp_path / "a.rge"), expected_fingerprint=g.schema.fingerprint())
    assert loaded.head == 1 and loaded.node_type == "item"
    assert np.array_equal(loaded.matrix, t.matrix)
    with pytest.raises(FingerprintMismatch):
        load_table(str(tmp_path / "a.rge"), expected_fingerprint=b"\0" * 32)
    with pytest.raises(ValidationError):
        export_embeddings(params, g, store, "item", head=2)


def test_table_rejects_corrupt_file(tmp_path):
    save_table(_table(np.eye(2)), str(tmp_path / "t.rge"))
    data = (tmp_path / "t.rge").read_bytes()
    (tmp_path / "t.rge").write_bytes(data[:-3])
    with pytest.raises(ParseError):
        load_table(str(tmp_path / "t.rge"))


def test_graph_tokens_carry_ids_and_fingerprint(tmp_path):
    t = _table(_unit_rows(4, 3, 6))
    path = str(tmp_path / "tokens.rgk")
    assert export_graph_tokens(t, path) == 4
    tokens = read_graph_tokens(path, expected_fingerprint=FP)
    assert tokens.ids.tolist() == [token_id("item", f"i{i}") for i in range(4)]
    assert np.array_equal(tokens.vectors, t.matrix)
    assert token_id("item", "i0") != token_id("user", "i0")
    with pytest.raises(FingerprintMismatch):
        read_graph_tokens(path, expected_fingerprint=bytes(32))


def test_user_token_sequences_are_chronological(tmp_path):
    t = _table(_unit_rows(3, 2, 7))
    log = pd.DataFrame(
        {
            "hour": [5, 1, 3, 2],
            "user_id": ["u1", "u1", "u2", "u1"],
            "item_id": ["i2", "i0", "i1", "ghost"],
            "interaction_type": ["click", "like", "click", "click"],
            "weight": [1.0, 1.0, 1.0, 1.0],
        }
    )
    path = tmp_path / "seq.jsonl"
    assert export_user_token_sequences(log, t, str(path)) == 2
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert rows[0]["user_id"] == "u1"
    assert [tok[0] for tok in rows[0]["tokens"]] == [1, 5]
    assert rows[0]["tokens"][0][2] == token_id("item", "i0")
