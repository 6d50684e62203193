"""
Offline recall protocols.

Edge recall: sample edges of the next period and make every endpoint a
candidate. Each endpoint ranks candidates by cosine and we measure how many of
its sampled partners land in the top k. With pool=partner_type a partner of
type T is ranked only against the sampled endpoints of type T (so a user's
items never compete with other users); pool=shared ranks everything in one
list. The random baseline is the per-node expectation under the same pools.

Engagement recall: for each user, items touched in [t - window, t] become
triggers weighted by sum(weight * type_weight); every trigger contributes its
nearest item neighbors scored trigger_weight * cosine (max per item); the top
k predictions are compared against the distinct items the user touches in
[t + horizon_start, t + horizon_end]. Recall is the mean over the eval day's
hours t of each hour's mean over users.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd

from ..config.loader import EdgeRecallConfig, EngagementRecallConfig
from ..errors import ValidationError
from ..graph.sampling import RngLike, as_rng
from ..graph.store import HeteroGraph
from ..logs.run_log import log_event
from ..metrics.core import inc_triggers_skipped, set_recall
from ..serving.retrieval import NeighborCache, knn_within, score_predictions
from ..serving.tables import EmbeddingTable

logger = logging.getLogger(__name__)


def random_baseline_recall(m: int, k: int) -> float:
    """Expected recall@k with one ground-truth partner among m candidates under random ranking."""
    if m < 2:
        raise ValidationError("need at least 2 candidates")
    if k < 1:
        raise ValidationError("k must be >= 1")
    return min(1.0, k / (m - 1))


def random_table(like: EmbeddingTable, seed: RngLike) -> EmbeddingTable:
    """Random unit rows with the same ids, head and fingerprint."""
    rng = as_rng(seed)
    x = rng.normal(size=like.matrix.shape)
    x = x / np.sqrt((x * x).sum(axis=1, keepdims=True))
    return EmbeddingTable(like.node_type, like.head, x, like.external_ids, like.fingerprint)


@dataclass
class RecallReport:
    protocol: str
    recall: Dict[int, float]
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"protocol": self.protocol, "recall": {str(k): v for k, v in self.recall.items()}}
        out.update(self.details)
        return out


def _recall_rows(truth: Sequence[Set[int]], ranked: Sequence[np.ndarray], ks: Sequence[int]) -> Dict[int, float]:
    out: Dict[int, float] = {}
    for k in ks:
        vals = [len(t & set(r[:k].tolist())) / len(t) for t, r in zip(truth, ranked)]
        out[k] = float(np.mean(vals))
    return out


def next_period_edges(g: HeteroGraph, relations: Optional[Sequence[str]] = None) -> List[Tuple[str, str, str, str]]:
    """(src_type, src_ext, dst_type, dst_ext) for every engagement edge that is not a mirrored reverse."""
    if relations:
        rels = [g.relation(r) for r in relations]
    else:
        rels = [r for r in g.schema.relations if r.kind == "engagement" and r.reverse_of is None]
    rows: List[Tuple[str, str, str, str]] = []
    for rel in rels:
        st, dt = g.type_name(rel.src_type), g.type_name(rel.dst_type)
        e = g.edges[rel.name]
        for s, d in zip(e.src.tolist(), e.dst.tolist()):
            rows.append((st, g.ids.external(st, s), dt, g.ids.external(dt, d)))
    return rows


def _candidate_pools(nodes: Sequence[Tuple[str, str]], pool: str) -> Dict[Optional[str], np.ndarray]:
    if pool == "shared":
        return {None: np.arange(len(nodes), dtype=np.int64)}
    types = np.array([t for t, _ in nodes], dtype=object)
    return {str(t): np.flatnonzero(types == t) for t in sorted(set(types.tolist()))}


def eval_edge_recall(
    tables: Mapping[str, EmbeddingTable],
    next_graph: HeteroGraph,
    cfg: EdgeRecallConfig,
    seed: RngLike,
    relations: Optional[Sequence[str]] = None,
) -> RecallReport:
    edges = next_period_edges(next_graph, relations)
    edges = [e for e in edges if (e[0], e[1]) != (e[2], e[3])]
    if not edges:
        raise ValidationError("next-period graph has no edges to sample")
    rng = as_rng(seed)
    if len(edges) > cfg.sample_size:
        picked = np.sort(rng.choice(len(edges), size=cfg.sample_size, replace=False))
        sample = [edges[i] for i in picked.tolist()]
    else:
        sample = list(edges)
    nodes = sorted({(e[0], e[1]) for e in sample} | {(e[2], e[3]) for e in sample})
    index = {n: i for i, n in enumerate(nodes)}
    rows = []
    for node_type, ext in nodes:
        table = tables.get(node_type)
        if table is None or not table.has(ext):
            raise ValidationError(f"sampled node {node_type}:{ext} is missing from the embedding tables")
        rows.append(table.row(ext))
    matrix = np.vstack(rows)
    truth: List[Set[int]] = [set() for _ in nodes]
    for st, s, dt, d in sample:
        a, b = index[(st, s)], index[(dt, d)]
        truth[a].add(b)
        truth[b].add(a)
    m = len(nodes)
    pools = _candidate_pools(nodes, cfg.pool)
    k_max = max(cfg.ks)
    hits = {k: np.zeros(m) for k in cfg.ks}
    chance = {k: np.zeros(m) for k in cfg.ks}
    for i in range(m):
        by_pool: Dict[Optional[str], Set[int]] = {}
        for j in truth[i]:
            by_pool.setdefault(None if cfg.pool == "shared" else nodes[j][0], set()).add(j)
        for key, partners in by_pool.items():
            cand = pools[key]
            ranked, _ = knn_within(matrix, i, cand, k_max)
            # pool size as the baseline counts it: the node itself plus everything it is ranked against
            size = int(cand.size - np.count_nonzero(cand == i)) + 1
            for k in cfg.ks:
                hits[k][i] += len(partners & set(ranked[:k].tolist()))
                chance[k][i] += len(partners) * random_baseline_recall(size, k)
    n_truth = np.array([len(t) for t in truth], dtype=np.float64)
    recall = {k: float(np.mean(hits[k] / n_truth)) for k in cfg.ks}
    baseline = {str(k): float(np.mean(chance[k] / n_truth)) for k in cfg.ks}
    for k, v in recall.items():
        set_recall("edge", k, v)
    report = RecallReport(
        "edge",
        recall,
        {
            "sample_size": len(sample),
            "candidates": m,
            "pool": cfg.pool,
            "random_baseline": baseline,
            "config": cfg.model_dump(),
        },
    )
    log_event("eval", "edge_recall", recall=report.to_dict()["recall"], candidates=m, sample_size=len(sample))
    return report


def default_eval_hour(log: pd.DataFrame, cfg: EngagementRecallConfig) -> int:
    if cfg.eval_hour is not None:
        return int(cfg.eval_hour)
    if log.empty:
        raise ValidationError("interaction log is empty")
    return int(log["hour"].max()) - cfg.horizon_end


def user_triggers(log: pd.DataFrame, t: int, cfg: EngagementRecallConfig) -> Dict[str, Dict[str, float]]:
    window = log[(log["hour"] >= t - cfg.window) & (log["hour"] <= t)]
    unknown = sorted(set(window["interaction_type"]) - set(cfg.type_weights))
    if unknown:
        raise ValidationError(f"no trigger weight for interaction types {unknown}")
    weights = window["weight"].to_numpy() * window["interaction_type"].map(cfg.type_weights).to_numpy()
    frame = pd.DataFrame({"user_id": window["user_id"].to_numpy(), "item_id": window["item_id"].to_numpy(), "w": weights})
    out: Dict[str, Dict[str, float]] = {}
    for (user, item), w in frame.groupby(["user_id", "item_id"], sort=True)["w"].sum().items():
        out.setdefault(str(user), {})[str(item)] = float(w)
    return out


def user_ground_truth(log: pd.DataFrame, t: int, cfg: EngagementRecallConfig) -> Dict[str, Set[str]]:
    horizon = log[(log["hour"] >= t + cfg.horizon_start) & (log["hour"] <= t + cfg.horizon_end)]
    out: Dict[str, Set[str]] = {}
    for user, item in zip(horizon["user_id"], horizon["item_id"]):
        out.setdefault(str(user), set()).add(str(item))
    return out


@dataclass
class _HourResult:
    recall: Dict[int, float]
    users: List[str]
    excluded: int
    skipped: int


def _engagement_hour(
    table: EmbeddingTable,
    cache: NeighborCache,
    log: pd.DataFrame,
    t: int,
    cfg: EngagementRecallConfig,
    pool: Optional[ThreadPoolExecutor],
) -> Optional[_HourResult]:
    triggers = user_triggers(log, t, cfg)
    truth = user_ground_truth(log, t, cfg)
    users = sorted(truth)
    if not users:
        return None
    k_max = max(cfg.ks)

    def one(user: str) -> Tuple[np.ndarray, int]:
        rows: Dict[int, float] = {}
        skipped = 0
        for item, w in triggers.get(user, {}).items():
            if table.has(item):
                rows[table.index_of(item)] = w
            else:
                skipped += 1
        ids, _ = score_predictions(cache, rows)
        return ids[:k_max], skipped

    results = list(pool.map(one, users)) if pool is not None else [one(u) for u in users]
    ranked = [np.array([table.external_ids[i] for i in ids.tolist()], dtype=object) for ids, _ in results]
    return _HourResult(
        recall=_recall_rows([truth[u] for u in users], ranked, cfg.ks),
        users=users,
        excluded=len(set(triggers) - set(truth)),
        skipped=sum(s for _, s in results),
    )


def eval_engagement_recall(
    table: EmbeddingTable,
    log: pd.DataFrame,
    cfg: EngagementRecallConfig,
    threads: int = 1,
) -> RecallReport:
    t_end = default_eval_hour(log, cfg)
    hours = list(range(t_end - cfg.eval_hours + 1, t_end + 1))
    lo, hi = hours[0] - cfg.window, t_end + cfg.horizon_end
    if not log.empty and (int(log["hour"].min()) > lo or int(log["hour"].max()) < hi):
        logger.warning(f"interaction log does not cover hours [{lo}, {hi}]")
    cache = NeighborCache(table, cfg.neighbors)
    per_hour: Dict[int, _HourResult] = {}
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for t in hours:
            res = _engagement_hour(table, cache, log, t, cfg, pool)
            if res is None:
                logger.warning(f"eval hour {t}: no users with ground truth, skipped")
                continue
            per_hour[t] = res
    finally:
        if pool is not None:
            pool.shutdown()
    if not per_hour:
        raise ValidationError(
            f"no users with ground truth in hours [{hours[0] + cfg.horizon_start}, {t_end + cfg.horizon_end}]"
        )
    recall = {k: float(np.mean([r.recall[k] for r in per_hour.values()])) for k in cfg.ks}
    skipped = sum(r.skipped for r in per_hour.values())
    if skipped:
        inc_triggers_skipped(skipped)
    for k, v in recall.items():
        set_recall("engagement", k, v)
    users = sorted({u for r in per_hour.values() for u in r.users})
    excluded = sum(r.excluded for r in per_hour.values())
    report = RecallReport(
        "engagement",
        recall,
        {
            "eval_hour": t_end,
            "eval_hours": sorted(per_hour),
            "per_hour": {str(t): {str(k): v for k, v in r.recall.items()} for t, r in sorted(per_hour.items())},
            "users": len(users),
            "user_hours": sum(len(r.users) for r in per_hour.values()),
            "excluded_users": excluded,
            "triggers_skipped": skipped,
            "config": cfg.model_dump(),
        },
    )
    log_event(
        "eval", "engagement_recall",
        recall=report.to_dict()["recall"], users=len(users), hours=len(per_hour), excluded=excluded,
    )
    return report
