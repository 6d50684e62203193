"""
Heterogeneous graph store.

What it does:
- Maps external string ids to dense per-type local ids (first-seen order).
- Ingests the TSV edge file (`relation<TAB>src<TAB>dst<TAB>weight`), merging
  duplicate (relation, src, dst) triples by summing weights, mirroring edges
  into declared reverse relations and injecting one weight-1.0 self loop per
  node.
- Serves read-only adjacency views: sorted out-neighbors, CSR in-adjacency for
  message passing, neighbor sets for negative exclusion.
- Persists graphs as deterministic containers and writes edge files back out.

A finalized `HeteroGraph` is never mutated; derived graphs are new objects, so
every read is safe from many threads.
"""
from __future__ import annotations

import io
import json
import logging
import math
import os
import zipfile
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Set, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp

from ..errors import ParseError, SchemaError, ValidationError
from ..io.container import array_to_npy, npy_to_array, read_container, write_container
from ..logs.run_log import log_event
from ..metrics.core import inc_edges_ingested
from .schema import GraphSchema, RelationSchema, TypeRef, schema_from_dict, schema_to_dict

logger = logging.getLogger(__name__)

Node = Tuple[TypeRef, int]


class IdDictionary:
    """External id <-> dense local id, per node type."""

    def __init__(self, type_names: Iterable[str]):
        self._to_local: Dict[str, Dict[str, int]] = {t: {} for t in type_names}
        self._to_external: Dict[str, List[str]] = {t: [] for t in self._to_local}

    def _check_type(self, type_name: str) -> None:
        if type_name not in self._to_local:
            raise SchemaError(f"unknown node type {type_name!r}")

    def get_or_add(self, type_name: str, external_id: str) -> int:
        self._check_type(type_name)
        table = self._to_local[type_name]
        local = table.get(external_id)
        if local is None:
            local = len(table)
            table[external_id] = local
            self._to_external[type_name].append(external_id)
        return local

    def lookup(self, type_name: str, external_id: str) -> Optional[int]:
        self._check_type(type_name)
        return self._to_local[type_name].get(external_id)

    def external(self, type_name: str, local_id: int) -> str:
        self._check_type(type_name)
        return self._to_external[type_name][int(local_id)]

    def externals(self, type_name: str) -> List[str]:
        self._check_type(type_name)
        return list(self._to_external[type_name])

    def count(self, type_name: str) -> int:
        self._check_type(type_name)
        return len(self._to_external[type_name])

    def type_names(self) -> List[str]:
        return list(self._to_local)

    def copy(self) -> "IdDictionary":
        out = IdDictionary(self.type_names())
        for t in self._to_local:
            out._to_local[t] = dict(self._to_local[t])
            out._to_external[t] = list(self._to_external[t])
        return out

    def to_frame(self, type_names: Optional[Iterable[str]] = None) -> pd.DataFrame:
        rows = []
        for t in type_names or self.type_names():
            for local, ext in enumerate(self._to_external[t]):
                rows.append((t, ext, local))
        return pd.DataFrame(rows, columns=["type_name", "external_id", "local_id"])

    def to_tsv(self, type_names: Optional[Iterable[str]] = None) -> str:
        buf = io.StringIO()
        self.to_frame(type_names).to_csv(buf, sep="\t", index=False, header=False, lineterminator="\n")
        return buf.getvalue()

    def save(self, path: str, type_names: Optional[Iterable[str]] = None) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(self.to_tsv(type_names))

    @classmethod
    def from_frame(cls, df: pd.DataFrame, type_names: Iterable[str]) -> "IdDictionary":
        out = cls(type_names)
        for t, group in df.groupby("type_name", sort=False):
            t = str(t)
            out._check_type(t)
            group = group.sort_values("local_id")
            locals_ = group["local_id"].astype(np.int64).to_numpy()
            if not np.array_equal(locals_, np.arange(len(group))):
                raise ParseError(f"id dictionary for {t!r} is not dense from 0")
            exts = [str(x) for x in group["external_id"]]
            out._to_external[t] = exts
            out._to_local[t] = {e: i for i, e in enumerate(exts)}
        return out

    @classmethod
    def from_tsv(cls, text: str, type_names: Iterable[str]) -> "IdDictionary":
        if not text.strip():
            return cls(type_names)
        df = pd.read_csv(
            io.StringIO(text), sep="\t", header=None,
            names=["type_name", "external_id", "local_id"],
            dtype={"type_name": str, "external_id": str, "local_id": np.int64},
            keep_default_na=False,
        )
        return cls.from_frame(df, type_names)

    @classmethod
    def load(cls, path: str, type_names: Iterable[str]) -> "IdDictionary":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_tsv(f.read(), type_names)


@dataclass(frozen=True)
class RelationEdges:
    """Unique edges of one relation sorted by (src, dst)."""
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray

    def __len__(self) -> int:
        return int(self.src.shape[0])


def merge_edges(src: np.ndarray, dst: np.ndarray, weight: np.ndarray, n_dst: int) -> RelationEdges:
    """Collapse duplicate (src, dst) pairs by summing weights; output sorted by (src, dst)."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    weight = np.asarray(weight, dtype=np.float64)
    if src.size == 0:
        return RelationEdges(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.float64))
    key = src * max(int(n_dst), 1) + dst
    uniq, inverse = np.unique(key, return_inverse=True)
    summed = np.zeros(uniq.shape[0], dtype=np.float64)
    np.add.at(summed, inverse, weight)
    return RelationEdges(uniq // max(int(n_dst), 1), uniq % max(int(n_dst), 1), summed)


class HeteroGraph:
    """Finalized, immutable heterogeneous graph."""

    def __init__(self, schema: GraphSchema, ids: IdDictionary, edges: Dict[str, RelationEdges]):
        if not schema.finalized:
            raise SchemaError("HeteroGraph needs a finalized schema")
        self.schema = schema
        self.ids = ids
        self.num_nodes: Dict[str, int] = {t.name: ids.count(t.name) for t in schema.node_types}
        self.edges: Dict[str, RelationEdges] = {}
        self._out: Dict[str, sp.csr_matrix] = {}
        self._in: Dict[str, sp.csr_matrix] = {}
        for rel in schema.relations:
            e = edges.get(rel.name)
            if e is None:
                e = RelationEdges(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.float64))
            n_src = self.num_nodes[self.type_name(rel.src_type)]
            n_dst = self.num_nodes[self.type_name(rel.dst_type)]
            if len(e) and (e.src.min() < 0 or e.src.max() >= n_src or e.dst.min() < 0 or e.dst.max() >= n_dst):
                raise ValidationError(f"relation {rel.name!r} has endpoints outside the node ranges")
            if len(e) and (e.weight < 0).any():
                raise ValidationError(f"relation {rel.name!r} has negative weights")
            self.edges[rel.name] = e
            out = sp.csr_matrix((e.weight, (e.src, e.dst)), shape=(n_src, n_dst), dtype=np.float64)
            out.sort_indices()
            self._out[rel.name] = out
            inc = sp.csr_matrix((e.weight, (e.dst, e.src)), shape=(n_dst, n_src), dtype=np.float64)
            inc.sort_indices()
            self._in[rel.name] = inc

    def type_name(self, ref: TypeRef) -> str:
        return self.schema.node_type(ref).name

    def relation(self, ref: TypeRef) -> RelationSchema:
        return self.schema.relation(ref)

    def num_edges(self, relation: TypeRef) -> int:
        return len(self.edges[self.relation(relation).name])

    def out_adjacency(self, relation: TypeRef) -> sp.csr_matrix:
        """(n_src x n_dst) weighted adjacency."""
        return self._out[self.relation(relation).name]

    def in_adjacency(self, relation: TypeRef) -> sp.csr_matrix:
        """(n_dst x n_src) weighted adjacency: row i lists the sources messaging i."""
        return self._in[self.relation(relation).name]

    def adjacency_sets(self, relation: TypeRef, reverse: bool = False) -> Dict[int, Set[int]]:
        mat = self.in_adjacency(relation) if reverse else self.out_adjacency(relation)
        return {
            i: set(mat.indices[mat.indptr[i]:mat.indptr[i + 1]].tolist())
            for i in range(mat.shape[0])
            if mat.indptr[i + 1] > mat.indptr[i]
        }

    def with_relation(self, rel_name: str, src_type: TypeRef, kind: str, edges: RelationEdges) -> "HeteroGraph":
        schema = self.schema.with_relation(rel_name, src_type, src_type, kind)  # type: ignore[arg-type]
        all_edges = dict(self.edges)
        all_edges[rel_name] = edges
        return HeteroGraph(schema, self.ids, all_edges)

    def edge_rows(self, relation: TypeRef) -> Iterable[Tuple[str, str, str, float]]:
        rel = self.relation(relation)
        e = self.edges[rel.name]
        st, dt = self.type_name(rel.src_type), self.type_name(rel.dst_type)
        for s, d, w in zip(e.src.tolist(), e.dst.tolist(), e.weight.tolist()):
            yield rel.name, self.ids.external(st, s), self.ids.external(dt, d), w

    def summary(self) -> Dict[str, object]:
        return {
            "nodes": dict(self.num_nodes),
            "edges": {name: len(e) for name, e in self.edges.items()},
            "fingerprint": self.schema.fingerprint_hex(),
        }


def neighbors(g: HeteroGraph, node: Node, relation: TypeRef) -> List[Tuple[int, float]]:
    """Out-neighbors of `node` under `relation`, ascending by neighbor id."""
    type_ref, local = node
    rel = g.relation(relation)
    t = g.schema.node_type(type_ref)
    if t.type_id != rel.src_type:
        raise ValidationError(
            f"node type {t.name!r} does not match source type "
            f"{g.type_name(rel.src_type)!r} of relation {rel.name!r}"
        )
    local = int(local)
    if not 0 <= local < g.num_nodes[t.name]:
        raise ValidationError(f"node {local} out of range for type {t.name!r}")
    mat = g.out_adjacency(rel.relation_id)
    lo, hi = mat.indptr[local], mat.indptr[local + 1]
    return list(zip(mat.indices[lo:hi].tolist(), mat.data[lo:hi].tolist()))


def build_graph(
    schema: GraphSchema,
    ids: IdDictionary,
    raw: Dict[str, Tuple[List[int], List[int], List[float]]],
) -> HeteroGraph:
    """Finalize raw per-relation edge lists into a HeteroGraph."""
    schema = schema.finalize()
    counts = {t.name: ids.count(t.name) for t in schema.node_types}
    edges: Dict[str, RelationEdges] = {}
    for rel in schema.relations:
        if rel.kind == "self_loop":
            n = counts[schema.node_type(rel.src_type).name]
            idx = np.arange(n, dtype=np.int64)
            edges[rel.name] = RelationEdges(idx, idx.copy(), np.ones(n, dtype=np.float64))
            continue
        if rel.reverse_of is not None:
            s, d, w = raw.get(rel.reverse_of, ([], [], []))
            s, d = d, s
        else:
            s, d, w = raw.get(rel.name, ([], [], []))
        n_dst = counts[schema.node_type(rel.dst_type).name]
        edges[rel.name] = merge_edges(np.asarray(s), np.asarray(d), np.asarray(w), n_dst)
    return HeteroGraph(schema, ids, edges)


def ingest_edges(edge_file: str, schema: GraphSchema, ids: Optional[IdDictionary] = None) -> HeteroGraph:
    """Parse a TSV edge file into a finalized graph.

    `ids` seeds the id dictionary (e.g. the previous period's), so shared
    external ids keep their local ids; it is copied, never mutated.
    """
    final = schema.finalize()
    ids = ids.copy() if ids is not None else IdDictionary([t.name for t in final.node_types])
    raw: Dict[str, Tuple[List[int], List[int], List[float]]] = {}
    lines_by_rel: Dict[str, int] = {}
    with open(edge_file, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ParseError(f"expected 4 tab-separated fields, got {len(parts)}", line=lineno)
            rel_name, src_ext, dst_ext, w_text = parts
            if not final.has_relation(rel_name):
                raise SchemaError(f"undeclared relation {rel_name!r}", line=lineno)
            rel = final.relation(rel_name)
            if rel.kind == "self_loop" or rel.reverse_of is not None:
                raise SchemaError(f"relation {rel_name!r} is derived and cannot be ingested", line=lineno)
            try:
                w = float(w_text)
            except ValueError:
                raise ParseError(f"weight {w_text!r} is not a number", line=lineno) from None
            if not math.isfinite(w):
                raise ParseError(f"weight {w_text!r} is not finite", line=lineno)
            if w < 0:
                raise ValidationError(f"line {lineno}: negative weight {w} on relation {rel_name!r}")
            if not src_ext or not dst_ext:
                raise ParseError("empty node id", line=lineno)
            s = ids.get_or_add(final.node_type(rel.src_type).name, src_ext)
            d = ids.get_or_add(final.node_type(rel.dst_type).name, dst_ext)
            bucket = raw.setdefault(rel_name, ([], [], []))
            bucket[0].append(s)
            bucket[1].append(d)
            bucket[2].append(w)
            lines_by_rel[rel_name] = lines_by_rel.get(rel_name, 0) + 1
    g = build_graph(final, ids, raw)
    for rel_name, n in lines_by_rel.items():
        inc_edges_ingested(rel_name, n)
    log_event("graph", "ingest_complete", source=os.path.basename(edge_file), **g.summary())
    return g


def write_edge_file(path: str, rows: Iterable[Tuple[str, str, str, float]]) -> int:
    """Write edges in the ingestion TSV format; returns the number of rows."""
    df = pd.DataFrame(list(rows), columns=["relation", "src", "dst", "weight"])
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("# relation\tsrc\tdst\tweight\n")
        df.to_csv(f, sep="\t", index=False, header=False, float_format="%.17g", lineterminator="\n")
    return len(df)


def save_graph(g: HeteroGraph, path: str) -> None:
    members = [
        ("schema.json", json.dumps(schema_to_dict(g.schema), sort_keys=True).encode("utf-8")),
        ("ids.tsv", g.ids.to_tsv().encode("utf-8")),
    ]
    for rel in g.schema.relations:
        e = g.edges[rel.name]
        members.append((f"edges/{rel.name}/src.npy", array_to_npy(e.src)))
        members.append((f"edges/{rel.name}/dst.npy", array_to_npy(e.dst)))
        members.append((f"edges/{rel.name}/weight.npy", array_to_npy(e.weight)))
    write_container(path, members)


def load_graph(path: str) -> HeteroGraph:
    members = read_container(path)
    try:
        schema = schema_from_dict(json.loads(members["schema.json"].decode("utf-8")))
        ids = IdDictionary.from_tsv(members["ids.tsv"].decode("utf-8"), [t.name for t in schema.node_types])
        edges = {
            rel.name: RelationEdges(
                npy_to_array(members[f"edges/{rel.name}/src.npy"]).astype(np.int64),
                npy_to_array(members[f"edges/{rel.name}/dst.npy"]).astype(np.int64),
                npy_to_array(members[f"edges/{rel.name}/weight.npy"]).astype(np.float64),
            )
            for rel in schema.relations
        }
    except KeyError as e:
        raise ParseError(f"graph container {path} is missing member {e}") from e
    return HeteroGraph(schema, ids, edges)


def load_ids(path: str, schema: GraphSchema) -> IdDictionary:
    """Id dictionary from a graph container or a `type<TAB>external<TAB>local` TSV."""
    type_names = [t.name for t in schema.finalize().node_types]
    if zipfile.is_zipfile(path):
        ids = load_graph(path).ids
        missing = [t for t in type_names if t not in ids.type_names()]
        if missing:
            raise SchemaError(f"id source {path} lacks node types {missing}")
        seeded = IdDictionary(type_names)
        for t in type_names:
            for ext in ids.externals(t):
                seeded.get_or_add(t, ext)
        return seeded
    return IdDictionary.load(path, type_names)
