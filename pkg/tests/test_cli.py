import json
import os

import numpy as np

from src.rankgraph.main import manifest_path, run
from src.rankgraph.serving.tables import EmbeddingTable, load_table, save_table

SMALL = """
synthetic:
  n_users: 24
  n_items: 24
  communities: 3
  p_in: 0.3
  p_out: 0.02
  user_dim: 4
  item_dims: [4, 3]
  log_hours: 8
model:
  d: 4
  d_out: 4
  num_layers: 1
  num_heads: 2
  encoder_hidden: 4
loss:
  n_neg: 2
  pool_capacity: 32
train:
  steps: 2
  batch_size: 8
edge_recall:
  sample_size: 50
  ks: [1, 5]
engagement_recall:
  eval_hours: 2
  window: 3
  horizon_start: 1
  horizon_end: 2
  neighbors: 5
  ks: [1, 5]
cluster:
  k: 3
  max_iters: 10
"""


def _config(tmp_path, text=SMALL):
    p = tmp_path / "cfg.yaml"
    p.write_text(text)
    return str(p)


def test_pipeline_end_to_end(tmp_path, capsys):
    cfg = _config(tmp_path)
    d = lambda name: str(tmp_path / name)  # noqa: E731

    assert run(["generate", "--config", cfg, "--seed", "3", "--out", d("data")]) == 0
    assert os.path.exists(d("data/schema.json"))
    manifest = json.loads(open(manifest_path(d("data"))).read())
    assert manifest["subcommand"] == "generate" and manifest["seed"] == 3
    assert manifest["config"]["synthetic"]["n_users"] == 24

    assert run(["ingest", "--config", cfg, "--schema", d("data/schema.json"),
                "--edges", d("data/edges.tsv"), "--out", d("g.rgg")]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["nodes"]["user"] > 0

    assert run(["init", "--config", cfg, "--graph", d("g.rgg"), "--out", d("init.ckpt")]) == 0
    assert run(["train", "--config", cfg, "--graph", d("g.rgg"), "--features", d("data/features"),
                "--steps", "0", "--out", d("zero.ckpt")]) == 0
    assert (tmp_path / "zero.ckpt").read_bytes() == (tmp_path / "init.ckpt").read_bytes()
    assert "0 steps" in capsys.readouterr().out

    assert run(["train", "--config", cfg, "--graph", d("g.rgg"), "--features", d("data/features"),
                "--out", d("trained.ckpt")]) == 0
    assert len((tmp_path / "trained.ckpt.loss.tsv").read_text().strip().splitlines()) == 2

    assert run(["embed", "--config", cfg, "--graph", d("g.rgg"), "--features", d("data/features"),
                "--checkpoint", d("trained.ckpt"), "--out", d("tables")]) == 0
    for name in ("user.head0.rge", "user.head1.rge", "item.head0.rge", "item.head1.rge"):
        assert os.path.exists(d(f"tables/{name}"))
    items = load_table(d("tables/item.head0.rge"))
    assert items.matrix.shape[1] == 4

    assert run(["eval-edge-recall", "--config", cfg, "--table", d("tables/user.head0.rge"),
                "--table", d("tables/item.head0.rge"), "--next-graph", d("g.rgg"),
                "--compare-random", "--out", d("edge.json")]) == 0
    report = json.loads((tmp_path / "edge.json").read_text())
    assert set(report["recall"]) == {"1", "5"}
    assert "random_embeddings" in report

    assert run(["--threads", "2", "eval-engagement-recall", "--config", cfg, "--table", d("tables/item.head0.rge"),
                "--interactions", d("data/interactions.tsv"), "--out", d("eng.json")]) == 0
    assert json.loads((tmp_path / "eng.json").read_text())["protocol"] == "engagement"

    assert run(["cluster", "--config", cfg, "--table", d("tables/item.head0.rge"), "--out", d("clusters.tsv")]) == 0
    assert json.loads((tmp_path / "clusters.tsv.json").read_text())["k"] == 3

    assert run(["export-tokens", "--config", cfg, "--table", d("tables/item.head0.rge"),
                "--interactions", d("data/interactions.tsv"), "--out", d("tokens.rgk")]) == 0
    assert os.path.exists(d("tokens.rgk.sequences.jsonl"))

    assert run(["subgraph", "--config", cfg, "--graph", d("g.rgg"), "--node-type", "user",
                "--via", "click", "--out", d("users.tsv")]) == 0
    assert os.path.exists(d("users.tsv.schema.json"))

    assert run(["semantic-edges", "--config", cfg, "--graph", d("g.rgg"), "--out", d("g_sem.rgg")]) == 0
    sem = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert "co_engagement" in sem["edges"]

    runs = [json.loads(line) for line in (tmp_path / "runs.jsonl").read_text().splitlines()]
    assert runs[0]["subcommand"] == "generate"
    assert runs[1]["inputs"]["edges"]["sha256"]


def test_runbook_with_generated_ids_scores_every_next_period_edge(tmp_path, capsys):
    cfg = _config(tmp_path)
    d = lambda name: str(tmp_path / name)  # noqa: E731

    assert run(["generate", "--config", cfg, "--seed", "7", "--out", d("data")]) == 0
    assert os.path.exists(d("data/ids.tsv"))
    assert run(["ingest", "--config", cfg, "--schema", d("data/schema.json"), "--edges", d("data/edges.tsv"),
                "--ids-from", d("data/ids.tsv"), "--out", d("graph.rgg")]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["nodes"] == {"user": 24, "item": 24}
    assert run(["ingest", "--config", cfg, "--schema", d("data/schema.json"), "--edges", d("data/edges_next.tsv"),
                "--ids-from", d("graph.rgg"), "--out", d("next.rgg")]) == 0
    assert json.loads(capsys.readouterr().out.strip().splitlines()[-1])["nodes"] == {"user": 24, "item": 24}
    assert run(["semantic-edges", "--config", cfg, "--graph", d("graph.rgg"), "--out", d("graph_sem.rgg")]) == 0
    assert run(["train", "--config", cfg, "--seed", "7", "--graph", d("graph_sem.rgg"),
                "--features", d("data/features"), "--out", d("model.ckpt")]) == 0
    assert run(["embed", "--config", cfg, "--graph", d("graph_sem.rgg"), "--features", d("data/features"),
                "--checkpoint", d("model.ckpt"), "--out", d("tables")]) == 0
    assert run(["eval-edge-recall", "--config", cfg, "--seed", "7", "--table", d("tables/user.head0.rge"),
                "--table", d("tables/item.head0.rge"), "--next-graph", d("next.rgg"),
                "--out", d("edge.json")]) == 0
    report = json.loads((tmp_path / "edge.json").read_text())
    assert report["pool"] == "partner_type" and set(report["random_baseline"]) == {"1", "5"}
    assert run(["eval-engagement-recall", "--config", cfg, "--table", d("tables/item.head0.rge"),
                "--interactions", d("data/interactions.tsv"), "--out", d("eng.json")]) == 0
    assert json.loads((tmp_path / "eng.json").read_text())["eval_hours"]


def test_retrieve_on_two_node_table(tmp_path, capsys):
    path = str(tmp_path / "t.rge")
    save_table(EmbeddingTable("item", 0, np.array([[1.0, 0.0], [0.0, 1.0]]), ["i0", "i1"], bytes(32)), path)
    assert run(["retrieve", "--config", _config(tmp_path), "--table", path, "--id", "i0", "--k", "5"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "query\trank\tneighbor\tscore"
    assert len(lines) == 2 and lines[1].startswith("i0\t1\ti1\t")


def test_grad_check_command(tmp_path):
    out = str(tmp_path / "gc.json")
    assert run(["grad-check", "--config", _config(tmp_path), "--seed", "7", "--out", out]) == 0
    result = json.loads(open(out).read())
    assert result["passed"] is True and result["max_error"] <= result["tolerance"]


def test_exit_codes(tmp_path, capsys):
    cfg = _config(tmp_path)
    assert run(["ingest", "--config", cfg, "--schema", str(tmp_path / "missing.json"),
                "--edges", str(tmp_path / "missing.tsv"), "--out", str(tmp_path / "g.rgg")]) == 1
    bad = _config(tmp_path, "loss:\n  temperature: 0\n")
    assert run(["grad-check", "--config", bad]) == 1
    assert run(["--threads", "0", "grad-check", "--config", cfg]) == 1
    path = str(tmp_path / "t.rge")
    save_table(EmbeddingTable("item", 0, np.eye(2), ["i0", "i1"], bytes(32)), path)
    assert run(["retrieve", "--config", cfg, "--table", path, "--id", "ghost"]) == 1
    (tmp_path / "blocker").write_text("x")
    assert run(["grad-check", "--config", cfg, "--out", str(tmp_path / "blocker" / "gc.json")]) == 2
    assert run(["--version"]) == 0
    assert "0.1.0" in capsys.readouterr().out
