"""Core metrics helpers for rankgraph.

Collectors are created lazily on first use and tolerate re-registration (tests
import modules repeatedly). `DISABLE_PROMETHEUS=1` swaps every collector for a
no-op. Recording helpers never raise.
"""
from __future__ import annotations

import logging
import os
from typing import Optional

try:
    from prometheus_client import REGISTRY, Counter, Gauge, Histogram, start_http_server
except Exception:  # pragma: no cover
    REGISTRY = Counter = Gauge = Histogram = start_http_server = None  # type: ignore

_edges_ingested: Optional[Counter] = None
_train_steps: Optional[Counter] = None
_train_loss: Optional[Gauge] = None
_negatives_sampled: Optional[Counter] = None
_pool_size: Optional[Gauge] = None
_step_seconds: Optional[Histogram] = None
_recall: Optional[Gauge] = None
_triggers_skipped: Optional[Counter] = None
_knn_queries: Optional[Counter] = None


class _NoOp:
    def labels(self, *args, **kwargs):
        return self

    def inc(self, *args, **kwargs):
        return None

    def set(self, *args, **kwargs):
        return None

    def observe(self, *args, **kwargs):
        return None


def start_server_safe(port: int) -> Optional[int]:
    """Start Prometheus metrics server; return port or None if failed.

    Logs a warning and continues if the port cannot be bound.
    """
    if start_http_server is None:
        logging.warning("Prometheus client not available; metrics disabled")
        return None
    try:
        start_http_server(port)
        logging.info(f"Prometheus metrics server started on :{port}")
        return port
    except OSError as e:
        logging.warning(f"Failed to start Prometheus server on :{port}: {e}")
        return None


def _disabled() -> bool:
    return Counter is None or os.getenv("DISABLE_PROMETHEUS", "0") == "1"


def _existing(name: str):
    try:
        coll = getattr(REGISTRY, "_names_to_collectors", {}).get(name)
        if coll is not None:
            return coll
        for coll in list(getattr(REGISTRY, "_collector_to_names", {}).keys()):
            if getattr(coll, "_name", None) == name:
                return coll
    except Exception:
        pass
    return _NoOp()


def _safe_counter(name: str, doc: str, labelnames=()):
    if _disabled():
        return _NoOp()
    try:
        return Counter(name, doc, labelnames)
    except ValueError:
        return _existing(name)


def _safe_gauge_labels(name: str, doc: str, labelnames=()):
    if _disabled():
        return _NoOp()
    try:
        return Gauge(name, doc, labelnames)
    except ValueError:
        return _existing(name)


def _safe_histogram(name: str, doc: str, buckets=None):
    if _disabled():
        return _NoOp()
    try:
        if buckets is not None:
            return Histogram(name, doc, buckets=buckets)
        return Histogram(name, doc)
    except ValueError:
        return _existing(name)


def get_edges_ingested_total():
    global _edges_ingested
    if _edges_ingested is None:
        _edges_ingested = _safe_counter(
            "rankgraph_edges_ingested_total", "Edge lines ingested", ["relation"]
        )
    return _edges_ingested


def get_train_steps_total():
    global _train_steps
    if _train_steps is None:
        _train_steps = _safe_counter("rankgraph_train_steps_total", "Training steps completed")
    return _train_steps


def get_train_loss():
    """Gauge: last step loss by component (total|triplet|infonce)."""
    global _train_loss
    if _train_loss is None:
        _train_loss = _safe_gauge_labels(
            "rankgraph_train_loss", "Last training step loss", ["component"]
        )
    return _train_loss


def get_negatives_sampled_total():
    global _negatives_sampled
    if _negatives_sampled is None:
        _negatives_sampled = _safe_counter(
            "rankgraph_negatives_sampled_total", "Negatives drawn per source", ["source"]
        )
    return _negatives_sampled


def get_negative_pool_size():
    global _pool_size
    if _pool_size is None:
        _pool_size = _safe_gauge_labels(
            "rankgraph_negative_pool_size", "Entries held by a negative pool", ["node_type", "head"]
        )
    return _pool_size


def get_step_seconds():
    """Histogram: wall time of one training step.

    Buckets: [0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1]
    """
    global _step_seconds
    if _step_seconds is None:
        _step_seconds = _safe_histogram(
            "rankgraph_step_seconds",
            "Seconds per training step",
            buckets=(0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0),
        )
    return _step_seconds


def get_recall_gauge():
    global _recall
    if _recall is None:
        _recall = _safe_gauge_labels("rankgraph_recall", "Last reported recall@k", ["protocol", "k"])
    return _recall


def get_triggers_skipped_total():
    global _triggers_skipped
    if _triggers_skipped is None:
        _triggers_skipped = _safe_counter(
            "rankgraph_triggers_skipped_total", "Trigger items absent from the embedding table"
        )
    return _triggers_skipped


def get_knn_queries_total():
    global _knn_queries
    if _knn_queries is None:
        _knn_queries = _safe_counter("rankgraph_knn_queries_total", "Exact kNN queries served")
    return _knn_queries


def record_train_step(total: float, triplet: float, infonce: float, seconds: float) -> None:
    try:
        get_train_steps_total().inc()
        g = get_train_loss()
        g.labels("total").set(float(total))
        g.labels("triplet").set(float(triplet))
        g.labels("infonce").set(float(infonce))
        if seconds >= 0:
            get_step_seconds().observe(float(seconds))
    except Exception:
        pass


def inc_negatives(source: str, n: int) -> None:
    if n <= 0:
        return
    try:
        get_negatives_sampled_total().labels(source).inc(n)
    except Exception:
        pass


def set_pool_size(node_type: str, head: int, size: int) -> None:
    try:
        get_negative_pool_size().labels(node_type, str(head)).set(int(size))
    except Exception:
        pass


def set_recall(protocol: str, k: int, value: float) -> None:
    try:
        get_recall_gauge().labels(protocol, str(k)).set(float(value))
    except Exception:
        pass


def inc_edges_ingested(relation: str, n: int = 1) -> None:
    try:
        get_edges_ingested_total().labels(relation).inc(n)
    except Exception:
        pass


def inc_triggers_skipped(n: int = 1) -> None:
    if n <= 0:
        return
    try:
        get_triggers_skipped_total().inc(n)
    except Exception:
        pass


def inc_knn_queries(n: int = 1) -> None:
    try:
        get_knn_queries_total().inc(n)
    except Exception:
        pass
