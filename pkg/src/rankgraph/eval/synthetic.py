"""
Planted-partition data generator.

What it does:
- Assigns users and items to C communities (balanced, shuffled).
- Draws user->item `click` edges with probability p_in inside a community and
  p_out across (weights weight_in / weight_out), twice: `edges.tsv` for
  training and an independent `edges_next.tsv` for the next period.
- Features are community centroids plus Gaussian noise; users carry one block,
  items one block per entry of `item_dims`.
- An hourly interaction log where each user acts with probability
  `interactions_per_hour`, choosing an in-community item with the same odds
  the edge model implies.

Files written under the output directory:
    schema.json, ids.tsv, edges.tsv, edges_next.tsv, features/user.tsv,
    features/item.tsv, interactions.tsv, communities.tsv

ids.tsv lists every generated node, so `ingest --ids-from ids.tsv` keeps
nodes that drew no edge in a period (and local ids agree across periods).
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd

from ..config.loader import SyntheticConfig
from ..errors import ValidationError
from ..graph.features import FeatureStore, save_features
from ..graph.schema import GraphSchema, schema_from_dict, save_schema
from ..graph.store import HeteroGraph, IdDictionary, build_graph, write_edge_file
from ..logs.run_log import log_event
from .interactions import write_interaction_log

logger = logging.getLogger(__name__)

USER, ITEM = "user", "item"
RELATION, REVERSE = "click", "clicked_by"


@dataclass
class SyntheticDataset:
    schema: GraphSchema
    ids: IdDictionary
    features: FeatureStore
    user_community: np.ndarray
    item_community: np.ndarray
    edges: List[Tuple[str, str, str, float]]
    edges_next: List[Tuple[str, str, str, float]]
    interactions: pd.DataFrame

    def intra_fraction(self, which: str = "edges") -> float:
        rows = self.edges if which == "edges" else self.edges_next
        if not rows:
            return 0.0
        u = {self.ids.external(USER, i): c for i, c in enumerate(self.user_community.tolist())}
        it = {self.ids.external(ITEM, i): c for i, c in enumerate(self.item_community.tolist())}
        return float(np.mean([u[s] == it[d] for _, s, d, _ in rows]))

    def graph(self, which: str = "edges") -> HeteroGraph:
        """The period's graph over every generated node, edgeless ones included."""
        rows = self.edges if which == "edges" else self.edges_next
        raw = {RELATION: ([], [], [])}
        for _, s, d, w in rows:
            raw[RELATION][0].append(self.ids.lookup(USER, s))
            raw[RELATION][1].append(self.ids.lookup(ITEM, d))
            raw[RELATION][2].append(w)
        return build_graph(self.schema, self.ids.copy(), raw)


def synthetic_schema(cfg: SyntheticConfig) -> GraphSchema:
    return schema_from_dict(
        {
            "node_types": [
                {"name": USER, "feature_blocks": [cfg.user_dim]},
                {"name": ITEM, "feature_blocks": list(cfg.item_dims)},
            ],
            "relations": [
                {"name": RELATION, "src": USER, "dst": ITEM, "kind": "engagement", "reverse": REVERSE}
            ],
        }
    )


def _communities(n: int, c: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(np.arange(n) % c)


def _draw_edges(
    cfg: SyntheticConfig, uc: np.ndarray, ic: np.ndarray, ids: IdDictionary, rng: np.random.Generator
) -> List[Tuple[str, str, str, float]]:
    same = uc[:, None] == ic[None, :]
    p = np.where(same, cfg.p_in, cfg.p_out)
    hit = rng.random(p.shape) < p
    rows = []
    for u, i in zip(*np.nonzero(hit)):
        w = cfg.weight_in if same[u, i] else cfg.weight_out
        rows.append((RELATION, ids.external(USER, int(u)), ids.external(ITEM, int(i)), float(w)))
    return rows


def _features(
    n: int, dims: List[int], community: np.ndarray, c: int, noise: float, rng: np.random.Generator
) -> List[np.ndarray]:
    blocks = []
    for dim in dims:
        centroids = rng.normal(size=(c, dim))
        blocks.append(centroids[community] + noise * rng.normal(size=(n, dim)))
    return blocks


def _interactions(
    cfg: SyntheticConfig, uc: np.ndarray, ic: np.ndarray, ids: IdDictionary, rng: np.random.Generator
) -> pd.DataFrame:
    types = sorted(cfg.interaction_types)
    type_p = np.array([cfg.interaction_types[t] for t in types], dtype=np.float64)
    if type_p.sum() <= 0:
        raise ValidationError("interaction_types probabilities must sum to > 0")
    type_p = type_p / type_p.sum()
    members: Dict[int, np.ndarray] = {c: np.flatnonzero(ic == c) for c in range(cfg.communities)}
    outsiders: Dict[int, np.ndarray] = {c: np.flatnonzero(ic != c) for c in range(cfg.communities)}
    records = []
    for hour in range(cfg.log_hours):
        active = np.flatnonzero(rng.random(uc.shape[0]) < cfg.interactions_per_hour)
        for u in active.tolist():
            c = int(uc[u])
            n_in, n_out = members[c].size, outsiders[c].size
            mass_in, mass_out = cfg.p_in * n_in, cfg.p_out * n_out
            inside = n_out == 0 or (n_in > 0 and rng.random() < mass_in / (mass_in + mass_out))
            pick = members[c] if inside else outsiders[c]
            item = int(pick[rng.integers(0, pick.size)])
            kind = types[int(rng.choice(len(types), p=type_p))]
            records.append((hour, ids.external(USER, u), ids.external(ITEM, item), kind, 1.0))
    return pd.DataFrame(records, columns=["hour", "user_id", "item_id", "interaction_type", "weight"])


def generate_synthetic(cfg: SyntheticConfig, seed: int) -> SyntheticDataset:
    if cfg.p_in <= cfg.p_out:
        raise ValidationError(f"p_in ({cfg.p_in}) must exceed p_out ({cfg.p_out}) for a planted signal")
    if cfg.communities < 2:
        raise ValidationError("communities must be >= 2")
    rng = np.random.default_rng(int(seed))
    schema = synthetic_schema(cfg)
    ids = IdDictionary([USER, ITEM])
    width_u, width_i = len(str(cfg.n_users - 1)), len(str(cfg.n_items - 1))
    for u in range(cfg.n_users):
        ids.get_or_add(USER, f"u{u:0{width_u}d}")
    for i in range(cfg.n_items):
        ids.get_or_add(ITEM, f"i{i:0{width_i}d}")
    uc = _communities(cfg.n_users, cfg.communities, rng)
    ic = _communities(cfg.n_items, cfg.communities, rng)
    features = FeatureStore(
        {
            USER: _features(cfg.n_users, [cfg.user_dim], uc, cfg.communities, cfg.noise, rng),
            ITEM: _features(cfg.n_items, list(cfg.item_dims), ic, cfg.communities, cfg.noise, rng),
        }
    )
    edges = _draw_edges(cfg, uc, ic, ids, rng)
    edges_next = _draw_edges(cfg, uc, ic, ids, rng)
    interactions = _interactions(cfg, uc, ic, ids, rng)
    return SyntheticDataset(schema, ids, features, uc, ic, edges, edges_next, interactions)


def write_synthetic(ds: SyntheticDataset, out_dir: str) -> Dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "schema": os.path.join(out_dir, "schema.json"),
        "ids": os.path.join(out_dir, "ids.tsv"),
        "edges": os.path.join(out_dir, "edges.tsv"),
        "edges_next": os.path.join(out_dir, "edges_next.tsv"),
        "features": os.path.join(out_dir, "features"),
        "interactions": os.path.join(out_dir, "interactions.tsv"),
        "communities": os.path.join(out_dir, "communities.tsv"),
    }
    save_schema(ds.schema, paths["schema"])
    ds.ids.save(paths["ids"])
    write_edge_file(paths["edges"], ds.edges)
    write_edge_file(paths["edges_next"], ds.edges_next)
    save_features(ds.features, paths["features"], ds.schema, ds.ids)
    write_interaction_log(ds.interactions, paths["interactions"])
    comm = pd.DataFrame(
        {
            "node_type": [USER] * len(ds.user_community) + [ITEM] * len(ds.item_community),
            "external_id": ds.ids.externals(USER) + ds.ids.externals(ITEM),
            "community": np.concatenate([ds.user_community, ds.item_community]),
        }
    )
    comm.to_csv(paths["communities"], sep="\t", index=False, lineterminator="\n")
    log_event(
        "eval", "synthetic_written",
        users=len(ds.user_community), items=len(ds.item_community), edges=len(ds.edges),
        edges_next=len(ds.edges_next), interactions=len(ds.interactions),
        intra_fraction=round(ds.intra_fraction(), 4),
    )
    return paths
