"""
Spherical k-means over unit-norm embedding rows.

Seeding is k-means++ with 1 - cosine as the sampling weight. Each iteration
assigns rows to the centroid of highest cosine (lowest index on ties) and
moves every centroid to its members' normalised mean; empty clusters and
zero-mean clusters keep their previous centroid. Inertia
sum(1 - cos(x, c_x)) is checked to be non-increasing after every iteration.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from typing import List

import numpy as np
import pandas as pd

from ..errors import ClusteringError, ValidationError
from ..graph.sampling import RngLike, as_rng
from ..logs.run_log import log_event
from .tables import EmbeddingTable

logger = logging.getLogger(__name__)

INERTIA_TOLERANCE = 1e-12


@dataclass
class ClusterModel:
    centroids: np.ndarray
    assignment: np.ndarray
    inertia: float
    history: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    @property
    def k(self) -> int:
        return int(self.centroids.shape[0])


def _normalize(rows: np.ndarray) -> np.ndarray:
    norms = np.sqrt((rows * rows).sum(axis=1, keepdims=True))
    return np.where(norms >= 1e-30, rows / np.where(norms >= 1e-30, norms, 1.0), rows)


def _seed_centroids(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(0, n))]
    best = x @ x[chosen[0]]
    while len(chosen) < k:
        dist = np.clip(1.0 - best, 0.0, None)
        dist[chosen] = 0.0
        total = float(dist.sum())
        if total > 0:
            nxt = int(rng.choice(n, p=dist / total))
        else:
            remaining = np.setdiff1d(np.arange(n), chosen)
            nxt = int(remaining[rng.integers(0, remaining.size)])
        chosen.append(nxt)
        best = np.maximum(best, x @ x[nxt])
    return x[chosen].copy()


def _assign(x: np.ndarray, centroids: np.ndarray):
    sims = x @ centroids.T
    assignment = np.argmax(sims, axis=1)
    cos = sims[np.arange(x.shape[0]), assignment]
    return assignment, float(np.clip(1.0 - cos, 0.0, None).sum())


def spherical_kmeans(matrix: np.ndarray, k: int, max_iters: int, seed: RngLike) -> ClusterModel:
    x = np.asarray(matrix, dtype=np.float64)
    n = x.shape[0]
    if k < 1:
        raise ValidationError("K must be >= 1")
    if k > n:
        raise ValidationError(f"K={k} exceeds the {n} rows")
    if max_iters < 1:
        raise ValidationError("max_iters must be >= 1")
    rng = as_rng(seed)
    centroids = _seed_centroids(x, k, rng)
    assignment, inertia = _assign(x, centroids)
    history = [inertia]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        updated = centroids.copy()
        for c in range(k):
            members = x[assignment == c]
            if members.shape[0] == 0:
                continue
            mean = members.mean(axis=0)
            norm = float(np.sqrt(mean @ mean))
            if norm >= 1e-30:
                updated[c] = mean / norm
        centroids = updated
        new_assignment, inertia = _assign(x, centroids)
        if inertia > history[-1] + INERTIA_TOLERANCE:
            raise ClusteringError(f"inertia rose from {history[-1]!r} to {inertia!r} at iteration {it}")
        history.append(inertia)
        stable = np.array_equal(new_assignment, assignment)
        assignment = new_assignment
        if stable:
            converged = True
            break
    log_event("serving", "cluster_complete", k=k, rows=n, iterations=it, inertia=inertia, converged=converged)
    return ClusterModel(centroids, assignment, inertia, history, it, converged)


def cluster(table: EmbeddingTable, k: int, max_iters: int, seed: RngLike) -> ClusterModel:
    return spherical_kmeans(table.matrix, k, max_iters, seed)


def save_clusters(model: ClusterModel, table: EmbeddingTable, path: str) -> None:
    """Assignment TSV at `path` and a JSON summary at `<path>.json`."""
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    pd.DataFrame({"external_id": table.external_ids, "cluster": model.assignment}).to_csv(
        path, sep="\t", index=False, lineterminator="\n"
    )
    summary = {
        "node_type": table.node_type,
        "head": table.head,
        "k": model.k,
        "inertia": model.inertia,
        "history": model.history,
        "iterations": model.iterations,
        "converged": model.converged,
        "sizes": np.bincount(model.assignment, minlength=model.k).tolist(),
    }
    with open(f"{path}.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
