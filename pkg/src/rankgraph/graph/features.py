"""
Per-type feature blocks aligned to graph local ids.

What it does:
- Holds, for every node type t, the n_t feature matrices x_{t,j}
  (rows = local ids, columns = block width).
- Loads/saves one TSV per type: `external_id` followed by `b{j}_{k}` columns for
  block j, component k. Rows for ids the graph never saw are ignored; graph
  nodes without a row are an error naming the node.

Where it is used:
- `rankgraph.model.network.encode_node_features` reads blocks from it.
- The synthetic generator writes it; `train`/`embed` load it.
"""
from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
import pandas as pd

from ..errors import ParseError, ValidationError
from .schema import GraphSchema, TypeRef
from .store import HeteroGraph, IdDictionary

logger = logging.getLogger(__name__)

_COLUMN = re.compile(r"^b(\d+)_(\d+)$")


@dataclass
class FeatureStore:
    blocks: Dict[str, List[np.ndarray]] = field(default_factory=dict)

    def block(self, type_name: str, j: int) -> np.ndarray:
        per_type = self.blocks.get(type_name)
        if per_type is None or j >= len(per_type) or per_type[j] is None:
            raise ValidationError(f"missing feature block ({type_name!r}, {j})")
        return per_type[j]

    def validate(self, schema: GraphSchema, num_nodes: Dict[str, int]) -> None:
        for t in schema.node_types:
            for j, dim in enumerate(t.block_dims):
                x = self.block(t.name, j)
                if x.shape != (num_nodes[t.name], dim):
                    raise ValidationError(
                        f"feature block ({t.name!r}, {j}) has shape {x.shape}, "
                        f"expected {(num_nodes[t.name], dim)}"
                    )
                if not np.isfinite(x).all():
                    raise ValidationError(f"feature block ({t.name!r}, {j}) has non-finite values")

    def type_rows(self, type_ref: TypeRef, schema: GraphSchema) -> int:
        t = schema.node_type(type_ref)
        return int(self.block(t.name, 0).shape[0])


def feature_frame(type_name: str, blocks: List[np.ndarray], ids: IdDictionary) -> pd.DataFrame:
    cols: Dict[str, object] = {"external_id": ids.externals(type_name)}
    for j, x in enumerate(blocks):
        for k in range(x.shape[1]):
            cols[f"b{j}_{k}"] = x[:, k]
    return pd.DataFrame(cols)


def save_features(store: FeatureStore, directory: str, schema: GraphSchema, ids: IdDictionary) -> None:
    os.makedirs(directory, exist_ok=True)
    for t in schema.node_types:
        df = feature_frame(t.name, store.blocks[t.name], ids)
        df.to_csv(
            os.path.join(directory, f"{t.name}.tsv"), sep="\t", index=False,
            float_format="%.17g", lineterminator="\n",
        )


def frame_to_blocks(df: pd.DataFrame, type_name: str, block_dims: List[int], ids: IdDictionary) -> List[np.ndarray]:
    if "external_id" not in df.columns:
        raise ParseError(f"feature table for {type_name!r} lacks an external_id column")
    widths: Dict[int, int] = {}
    for c in df.columns[1:]:
        m = _COLUMN.match(str(c))
        if not m:
            raise ParseError(f"feature column {c!r} of {type_name!r} is not b<block>_<k>")
        j, k = int(m.group(1)), int(m.group(2))
        widths[j] = max(widths.get(j, 0), k + 1)
    for j, dim in enumerate(block_dims):
        if widths.get(j, 0) == 0:
            raise ValidationError(f"missing feature block ({type_name!r}, {j})")
        if widths[j] != dim:
            raise ValidationError(f"feature block ({type_name!r}, {j}) has width {widths[j]}, expected {dim}")
    n = ids.count(type_name)
    rows = np.full(n, -1, dtype=np.int64)
    ext = df["external_id"].astype(str).tolist()
    for r, e in enumerate(ext):
        local = ids.lookup(type_name, e)
        if local is not None:
            rows[local] = r
    missing = np.flatnonzero(rows < 0)
    if missing.size:
        raise ValidationError(
            f"node {ids.external(type_name, int(missing[0]))!r} of type {type_name!r} has no feature row"
        )
    blocks = []
    for j, dim in enumerate(block_dims):
        cols = [f"b{j}_{k}" for k in range(dim)]
        blocks.append(df[cols].to_numpy(dtype=np.float64)[rows])
    return blocks


def load_features(directory: str, g: HeteroGraph) -> FeatureStore:
    store = FeatureStore()
    for t in g.schema.node_types:
        path = os.path.join(directory, f"{t.name}.tsv")
        if not os.path.exists(path):
            raise ValidationError(f"missing feature block ({t.name!r}, 0): no file {path}")
        df = pd.read_csv(
            path, sep="\t", dtype={"external_id": str}, keep_default_na=False, float_precision="round_trip"
        )
        store.blocks[t.name] = frame_to_blocks(df, t.name, t.block_dims, g.ids)
    store.validate(g.schema, g.num_nodes)
    logger.info(f"Loaded features for {len(store.blocks)} node types from {directory}")
    return store
