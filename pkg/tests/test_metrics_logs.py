import json
import logging

from prometheus_client import REGISTRY

from src.rankgraph.graph.schema import schema_from_dict
from src.rankgraph.graph.store import ingest_edges
from src.rankgraph.io.container import read_container, write_container
from src.rankgraph.logs.run_log import append_jsonl, log_event, validate_record
from src.rankgraph.metrics.core import inc_knn_queries, record_train_step, set_recall


def test_ingest_counts_edges_and_logs_json(tmp_path, caplog):
    caplog.set_level(logging.INFO)
    p = tmp_path / "edges.tsv"
    p.write_text("click\tu1\ta1\t1\nclick\tu2\ta1\t1\n")
    schema = schema_from_dict(
        {"node_types": [{"name": "user", "feature_blocks": [1]}, {"name": "item", "feature_blocks": [1]}],
         "relations": [{"name": "click", "src": "user", "dst": "item"}]}
    )
    before = REGISTRY.get_sample_value("rankgraph_edges_ingested_total", {"relation": "click"}) or 0.0
    ingest_edges(str(p), schema)
    after = REGISTRY.get_sample_value("rankgraph_edges_ingested_total", {"relation": "click"})
    assert after == before + 2.0
    log_out = "\n".join(r.message for r in caplog.records)
    assert '"event":"ingest_complete"' in log_out


def test_train_step_and_recall_gauges():
    record_train_step(0.75, 0.25, 0.5, 0.01)
    assert REGISTRY.get_sample_value("rankgraph_train_loss", {"component": "total"}) == 0.75
    assert REGISTRY.get_sample_value("rankgraph_train_steps_total") >= 1.0
    assert REGISTRY.get_sample_value("rankgraph_step_seconds_count") >= 1.0
    set_recall("edge", 10, 0.42)
    assert REGISTRY.get_sample_value("rankgraph_recall", {"protocol": "edge", "k": "10"}) == 0.42
    before = REGISTRY.get_sample_value("rankgraph_knn_queries_total") or 0.0
    inc_knn_queries(3)
    assert REGISTRY.get_sample_value("rankgraph_knn_queries_total") == before + 3.0


def test_log_event_never_raises_on_odd_fields(caplog):
    caplog.set_level(logging.INFO)
    log_event("eval", "odd", value=object(), nested={"a": [1, 2]})
    rec = json.loads(caplog.records[-1].message)
    assert rec["event"] == "odd" and rec["component"] == "eval" and rec["nested"] == {"a": [1, 2]}


def test_run_journal_requires_manifest_fields(tmp_path):
    path = str(tmp_path / "runs.jsonl")
    good = {"kind": "manifest", "subcommand": "init", "seed": 1, "version": "0.1.0", "outputs": ["x"]}
    assert validate_record(good) == []
    assert append_jsonl(path, good) is True
    assert append_jsonl(path, {"kind": "manifest"}) is False
    lines = open(path, encoding="utf-8").read().splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["subcommand"] == "init"
    v = REGISTRY.get_sample_value(
        "rankgraph_journal_errors_total", {"reason": "missing_fields", "kind": "manifest"}
    )
    assert v is not None and v >= 1.0


def test_container_bytes_do_not_depend_on_write_time(tmp_path):
    members = [("b.txt", b"second"), ("a.txt", b"first")]
    write_container(str(tmp_path / "one.zip"), members)
    write_container(str(tmp_path / "two.zip"), members)
    assert (tmp_path / "one.zip").read_bytes() == (tmp_path / "two.zip").read_bytes()
    assert read_container(str(tmp_path / "one.zip")) == {"b.txt": b"second", "a.txt": b"first"}
