"""
Graph-token export for downstream sequence models (export only).

Token file `RGK1`: magic, u32 N, u32 d_out, u8 head, 32-byte schema
fingerprint, then N records of (u64 little-endian id hash, d_out f64). The id
hash is the first 8 bytes of blake2b("<node_type>:<external_id>").
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from ..errors import FingerprintMismatch, ParseError
from ..logs.run_log import log_event
from .tables import EmbeddingTable

MAGIC = b"RGK1"
_HEADER = struct.Struct("<4sIIB32s")


def token_id(node_type: str, external_id: str) -> int:
    digest = hashlib.blake2b(f"{node_type}:{external_id}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class GraphTokens:
    head: int
    fingerprint: bytes
    ids: np.ndarray
    vectors: np.ndarray

    def __len__(self) -> int:
        return int(self.ids.shape[0])


def _record_dtype(d_out: int) -> np.dtype:
    return np.dtype([("id", "<u8"), ("vec", "<f8", (d_out,))])


def export_graph_tokens(table: EmbeddingTable, path: str) -> int:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    records = np.zeros(len(table), dtype=_record_dtype(table.d_out))
    records["id"] = [token_id(table.node_type, e) for e in table.external_ids]
    records["vec"] = table.matrix
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, len(table), table.d_out, table.head, table.fingerprint))
        f.write(records.tobytes())
    log_event("serving", "tokens_written", node_type=table.node_type, head=table.head, records=len(table))
    return len(table)


def read_graph_tokens(path: str, expected_fingerprint: Optional[bytes] = None) -> GraphTokens:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER.size:
        raise ParseError(f"{path}: truncated token header")
    magic, n, d_out, head, fp = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ParseError(f"{path}: bad token magic {magic!r}")
    if expected_fingerprint is not None and fp != expected_fingerprint:
        raise FingerprintMismatch(expected_fingerprint.hex(), fp.hex())
    dtype = _record_dtype(d_out)
    if len(data) != _HEADER.size + n * dtype.itemsize:
        raise ParseError(f"{path}: payload size does not match {n} records of width {d_out}")
    records = np.frombuffer(data, dtype=dtype, count=n, offset=_HEADER.size)
    return GraphTokens(int(head), fp, records["id"].copy(), records["vec"].copy())


def export_user_token_sequences(
    log_frame,
    item_table: EmbeddingTable,
    path: str,
) -> int:
    """Per user, chronological (hour, interaction type, item token id) triples as JSONL.

    Interactions on items missing from the table are dropped. Returns the number
    of users written.
    """
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    df = log_frame.sort_values(["user_id", "hour", "item_id", "interaction_type"], kind="stable")
    sequences: Dict[str, List[list]] = {}
    for user, hour, item, kind in zip(df["user_id"], df["hour"], df["item_id"], df["interaction_type"]):
        if not item_table.has(item):
            continue
        sequences.setdefault(str(user), []).append([int(hour), str(kind), token_id(item_table.node_type, str(item))])
    with open(path, "w", encoding="utf-8") as f:
        for user in sorted(sequences):
            f.write(json.dumps({"user_id": user, "tokens": sequences[user]}, separators=(",", ":")) + "\n")
    return len(sequences)
