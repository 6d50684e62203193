from __future__ import annotations

import json
import logging
import os
import time
from typing import Any, Dict, List

try:
    from ..metrics.core import _safe_counter  # type: ignore
except Exception:  # pragma: no cover
    _safe_counter = None


def _get_append_counters():
    if _safe_counter is None:  # pragma: no cover
        class _NoOp:
            def labels(self, *a, **k):
                return self

            def inc(self, *a, **k):
                return None
        return _NoOp(), _NoOp()
    app = _safe_counter("rankgraph_journal_appends_total", "Run journal records appended", ["kind"])
    err = _safe_counter("rankgraph_journal_errors_total", "Run journal errors", ["reason", "kind"])
    return app, err


REQUIRED_KEYS = {"kind", "subcommand", "seed", "version", "outputs"}


def validate_record(rec: Dict[str, Any]) -> List[str]:
    return sorted(k for k in REQUIRED_KEYS if k not in rec)


def append_jsonl(path: str, rec: Dict[str, Any]) -> bool:
    """Append one journal record; returns False (and counts why) on failure."""
    kind = str(rec.get("kind", "unknown"))
    app, err = _get_append_counters()
    if validate_record(rec):
        err.labels("missing_fields", kind).inc()
        return False
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    try:
        with open(path, "a", encoding="utf-8") as f:
            f.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
        app.labels(kind).inc()
        return True
    except Exception:
        err.labels("io_error", kind).inc()
        return False


def log_event(component: str, event: str, **fields: Any) -> None:
    """Emit a structured JSON log line.

    Keys: event, component, ts, severity, schema_version, plus caller fields.
    """
    try:
        logger = logging.getLogger(f"rankgraph.{component}")
        payload: Dict[str, Any] = {
            "event": str(event),
            "component": str(component),
            "ts": int(time.time() * 1000),
            "severity": "INFO",
            "schema_version": "v1",
        }
        payload.update(fields)
        logger.info(json.dumps(payload, separators=(",", ":"), default=str))
    except Exception:
        # Logging must never throw
        pass
