"""
Node and relation schemas for the heterogeneous graph.

What it does:
- Declares node types (with their feature block widths) and typed relations.
- Loads the JSON schema file, resolving type names to ids.
- Finalizes a schema: injects declared reverse relations and exactly one
  self-loop relation per node type, then renumbers relation ids densely.
- Fingerprints the finalized schema (sha256 of its canonical JSON); checkpoints,
  embedding tables and token files carry this fingerprint.

Schema file shape:
    {"node_types": [{"name": "user", "feature_blocks": [16]}, ...],
     "relations": [{"name": "click", "src": "user", "dst": "item",
                    "kind": "engagement", "reverse": "clicked_by"}, ...]}
"""
from __future__ import annotations

import hashlib
import json
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, field_validator

from ..errors import ParseError, SchemaError

RelationKind = Literal["engagement", "semantic", "self_loop"]
TypeRef = Union[int, str]


class NodeTypeSchema(BaseModel):
    type_id: int
    name: str
    block_dims: List[int]

    @property
    def n_features(self) -> int:
        return len(self.block_dims)

    @field_validator("block_dims")
    @classmethod
    def positive_blocks(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("a node type needs at least one feature block")
        if any(d < 1 for d in v):
            raise ValueError("feature block dims must be >= 1")
        return v


class RelationSchema(BaseModel):
    relation_id: int
    name: str
    src_type: int
    dst_type: int
    kind: RelationKind = "engagement"
    # name of the mirrored relation ingestion should also populate
    reverse: Optional[str] = None
    # set on relations generated from another relation's `reverse`
    reverse_of: Optional[str] = None


class GraphSchema(BaseModel):
    node_types: List[NodeTypeSchema]
    relations: List[RelationSchema]
    finalized: bool = False

    def check(self) -> "GraphSchema":
        """Structural validation, kept out of pydantic so errors stay `SchemaError`s."""
        names = [t.name for t in self.node_types]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate node type names in {names}")
        for i, t in enumerate(self.node_types):
            if t.type_id != i:
                raise SchemaError(f"node type {t.name!r} has id {t.type_id}, expected {i}")
        rel_names = [r.name for r in self.relations]
        if len(set(rel_names)) != len(rel_names):
            raise SchemaError(f"duplicate relation names in {rel_names}")
        n = len(self.node_types)
        for i, r in enumerate(self.relations):
            if r.relation_id != i:
                raise SchemaError(f"relation {r.name!r} has id {r.relation_id}, expected {i}")
            if not (0 <= r.src_type < n and 0 <= r.dst_type < n):
                raise SchemaError(f"relation {r.name!r} references an unknown node type")
            if r.kind in ("self_loop", "semantic") and r.src_type != r.dst_type:
                raise SchemaError(f"{r.kind} relation {r.name!r} must connect one node type")
        if self.finalized:
            for t in self.node_types:
                loops = [r for r in self.relations if r.kind == "self_loop" and r.src_type == t.type_id]
                if len(loops) != 1:
                    raise SchemaError(f"node type {t.name!r} needs exactly one self_loop relation")
        return self

    def node_type(self, ref: TypeRef) -> NodeTypeSchema:
        if isinstance(ref, str):
            for t in self.node_types:
                if t.name == ref:
                    return t
            raise SchemaError(f"unknown node type {ref!r}")
        if 0 <= int(ref) < len(self.node_types):
            return self.node_types[int(ref)]
        raise SchemaError(f"unknown node type id {ref}")

    def relation(self, ref: TypeRef) -> RelationSchema:
        if isinstance(ref, str):
            for r in self.relations:
                if r.name == ref:
                    return r
            raise SchemaError(f"unknown relation {ref!r}")
        if 0 <= int(ref) < len(self.relations):
            return self.relations[int(ref)]
        raise SchemaError(f"unknown relation id {ref}")

    def has_relation(self, name: str) -> bool:
        return any(r.name == name for r in self.relations)

    def self_loop(self, ref: TypeRef) -> RelationSchema:
        t = self.node_type(ref)
        for r in self.relations:
            if r.kind == "self_loop" and r.src_type == t.type_id:
                return r
        raise SchemaError(f"node type {t.name!r} has no self_loop relation")

    def incoming(self, ref: TypeRef) -> List[RelationSchema]:
        """Relations whose messages land on nodes of this type, in relation-id order."""
        t = self.node_type(ref)
        return [r for r in self.relations if r.dst_type == t.type_id]

    def trainable_relations(self) -> List[RelationSchema]:
        return [r for r in self.relations if r.kind != "self_loop" and r.reverse_of is None]

    def with_relation(self, name: str, src: TypeRef, dst: TypeRef, kind: RelationKind) -> "GraphSchema":
        if self.has_relation(name):
            raise SchemaError(f"relation {name!r} already exists")
        rel = RelationSchema(
            relation_id=len(self.relations),
            name=name,
            src_type=self.node_type(src).type_id,
            dst_type=self.node_type(dst).type_id,
            kind=kind,
        )
        return GraphSchema(
            node_types=list(self.node_types),
            relations=list(self.relations) + [rel],
            finalized=self.finalized,
        ).check()

    def finalize(self) -> "GraphSchema":
        if self.finalized:
            return self
        rels: List[Dict[str, Any]] = []
        for r in self.relations:
            rels.append(r.model_dump())
        for r in self.relations:
            if r.reverse:
                if any(x["name"] == r.reverse for x in rels):
                    raise SchemaError(f"reverse relation name {r.reverse!r} of {r.name!r} already declared")
                rels.append(
                    dict(name=r.reverse, src_type=r.dst_type, dst_type=r.src_type,
                         kind="engagement", reverse=None, reverse_of=r.name)
                )
        for t in self.node_types:
            if not any(x["kind"] == "self_loop" and x["src_type"] == t.type_id for x in rels):
                rels.append(
                    dict(name=f"self_{t.name}", src_type=t.type_id, dst_type=t.type_id,
                         kind="self_loop", reverse=None, reverse_of=None)
                )
        for i, x in enumerate(rels):
            x["relation_id"] = i
        return GraphSchema(
            node_types=list(self.node_types),
            relations=[RelationSchema(**x) for x in rels],
            finalized=True,
        ).check()

    def canonical(self) -> Dict[str, Any]:
        types = [t.name for t in self.node_types]
        return {
            "node_types": [{"name": t.name, "block_dims": list(t.block_dims)} for t in self.node_types],
            "relations": [
                {
                    "name": r.name,
                    "src": types[r.src_type],
                    "dst": types[r.dst_type],
                    "kind": r.kind,
                    "reverse": r.reverse,
                    "reverse_of": r.reverse_of,
                }
                for r in self.relations
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))

    def fingerprint(self) -> bytes:
        return hashlib.sha256(self.to_json().encode("utf-8")).digest()

    def fingerprint_hex(self) -> str:
        return self.fingerprint().hex()


def schema_from_dict(raw: Dict[str, Any]) -> GraphSchema:
    """Build a schema from the name-based file layout (see module docstring)."""
    if not isinstance(raw, dict):
        raise SchemaError("schema must be a JSON object")
    try:
        raw_types = raw.get("node_types") or []
        types: List[NodeTypeSchema] = []
        for i, t in enumerate(raw_types):
            dims = t.get("feature_blocks", t.get("block_dims"))
            types.append(NodeTypeSchema(type_id=i, name=str(t["name"]), block_dims=[int(d) for d in dims]))
        by_name = {t.name: t.type_id for t in types}
        rels: List[RelationSchema] = []
        for i, r in enumerate(raw.get("relations") or []):
            for end in ("src", "dst"):
                if r[end] not in by_name:
                    raise SchemaError(f"relation {r.get('name')!r} references undeclared node type {r[end]!r}")
            rels.append(
                RelationSchema(
                    relation_id=i,
                    name=str(r["name"]),
                    src_type=by_name[r["src"]],
                    dst_type=by_name[r["dst"]],
                    kind=r.get("kind", "engagement"),
                    reverse=r.get("reverse"),
                    reverse_of=r.get("reverse_of"),
                )
            )
        finalized = bool(raw.get("finalized", False))
        return GraphSchema(node_types=types, relations=rels, finalized=finalized).check()
    except SchemaError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"invalid schema: {e}") from e


def schema_to_dict(schema: GraphSchema) -> Dict[str, Any]:
    out = schema.canonical()
    for t in out["node_types"]:
        t["feature_blocks"] = t.pop("block_dims")
    out["finalized"] = schema.finalized
    return out


def load_schema(path: str) -> GraphSchema:
    with open(path, "r", encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"schema {path} is not valid JSON: {e.msg}", line=e.lineno) from e
    return schema_from_dict(raw)


def save_schema(schema: GraphSchema, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(schema_to_dict(schema), f, indent=2, sort_keys=True)
        f.write("\n")
