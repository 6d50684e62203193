"""
Embedding tables and their on-disk format.

What it does:
- `export_embeddings` runs the full forward pass for a checkpoint and keeps one
  (node type, head) matrix; rows follow local id order.
- `save_table` writes the binary `RGE1` file (magic, u32 N, u32 d_out, u8 head,
  32-byte schema fingerprint, N x d_out little-endian f64) plus a companion
  `<path>.ids.tsv` (node_type, local_id, external_id).
- `load_table` reads both back and can insist on a fingerprint.
"""
from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from ..errors import FingerprintMismatch, ParseError, ValidationError
from ..graph.features import FeatureStore
from ..graph.store import HeteroGraph
from ..model.network import forward_all
from ..model.params import ModelParams

logger = logging.getLogger(__name__)

MAGIC = b"RGE1"
_HEADER = struct.Struct("<4sIIB32s")


@dataclass(frozen=True)
class EmbeddingTable:
    node_type: str
    head: int
    matrix: np.ndarray
    external_ids: List[str]
    fingerprint: bytes
    _index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != len(self.external_ids):
            raise ValidationError(
                f"table matrix shape {m.shape} does not match {len(self.external_ids)} ids"
            )
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "external_ids", list(self.external_ids))
        object.__setattr__(self, "_index", {e: i for i, e in enumerate(self.external_ids)})

    def __len__(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def d_out(self) -> int:
        return int(self.matrix.shape[1])

    def index_of(self, external_id: str) -> int:
        i = self._index.get(str(external_id))
        if i is None:
            raise ValidationError(f"unknown {self.node_type} id {external_id!r}")
        return i

    def has(self, external_id: str) -> bool:
        return str(external_id) in self._index

    def row(self, external_id: str) -> np.ndarray:
        return self.matrix[self.index_of(external_id)]


def export_tables(params: ModelParams, g: HeteroGraph, store: FeatureStore) -> Dict[Tuple[str, int], EmbeddingTable]:
    """Every (node type, head) table from one full forward pass."""
    params.check_schema(g.schema)
    store.validate(g.schema, g.num_nodes)
    emb = forward_all(g, store, params.tensors(), params.dims)
    fp = g.schema.fingerprint()
    return {
        (t, h): EmbeddingTable(t, h, heads[h].values, g.ids.externals(t), fp)
        for t, heads in emb.items()
        for h in range(len(heads))
    }


def export_embeddings(
    params: ModelParams, g: HeteroGraph, store: FeatureStore, node_type: str, head: int = 0
) -> EmbeddingTable:
    t = g.type_name(node_type)
    if not 0 <= head < params.dims.num_heads:
        raise ValidationError(f"head {head} out of range [0, {params.dims.num_heads})")
    return export_tables(params, g, store)[(t, head)]


def ids_path(path: str) -> str:
    return f"{path}.ids.tsv"


def save_table(table: EmbeddingTable, path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    header = _HEADER.pack(MAGIC, len(table), table.d_out, table.head, table.fingerprint)
    with open(path, "wb") as f:
        f.write(header)
        f.write(table.matrix.astype("<f8").tobytes(order="C"))
    df = pd.DataFrame(
        {
            "node_type": [table.node_type] * len(table),
            "local_id": np.arange(len(table)),
            "external_id": table.external_ids,
        }
    )
    df.to_csv(ids_path(path), sep="\t", index=False, lineterminator="\n")
    logger.info(f"Wrote {table.node_type} head {table.head} table ({len(table)} x {table.d_out}) to {path}")


def load_table(path: str, expected_fingerprint: Optional[bytes] = None) -> EmbeddingTable:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER.size:
        raise ParseError(f"{path}: truncated embedding table header")
    magic, n, d_out, head, fp = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ParseError(f"{path}: bad embedding table magic {magic!r}")
    if len(data) != _HEADER.size + n * d_out * 8:
        raise ParseError(f"{path}: payload size does not match {n} x {d_out}")
    if expected_fingerprint is not None and fp != expected_fingerprint:
        raise FingerprintMismatch(expected_fingerprint.hex(), fp.hex())
    matrix = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(n, d_out)
    df = pd.read_csv(ids_path(path), sep="\t", dtype={"external_id": str, "node_type": str}, keep_default_na=False)
    if len(df) != n:
        raise ParseError(f"{ids_path(path)}: {len(df)} ids for {n} rows")
    df = df.sort_values("local_id", kind="stable")
    types = df["node_type"].unique().tolist()
    if len(types) > 1:
        raise ParseError(f"{ids_path(path)}: mixed node types {types}")
    node_type = types[0] if types else ""
    return EmbeddingTable(node_type, int(head), matrix, df["external_id"].tolist(), fp)
