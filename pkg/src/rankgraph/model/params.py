"""
Model parameters: canonical layout, seeded initialisation and checkpoints.

What it does:
- `param_layout(schema, dims)` lists every (name, shape) in one fixed order;
  init, checkpoint load and tape watching all iterate it, so the order can
  never drift between them.
- `init_params` draws weights uniformly in +/- sqrt(6 / (fan_in + fan_out))
  and zeroes biases.
- Checkpoints are deterministic zip containers: `manifest.json` (dims, schema
  fingerprint, tensor names in canonical order) plus one RGT1 member per tensor.

Naming:
    encoder.<type>.block<j>.<k>.weight|bias   per-block MLP layer k
    encoder.<type>.mixer.weight|bias          encoder feature mixer
    layer<l>.<relation>.relation_weight       W_r
    layer<l>.<relation>.mlp.<k>.weight|bias   post-aggregation f_r
    layer<l>.mixer.<type>.weight|bias         per-layer mixer
    head<h>.weight|bias                       output heads
"""
from __future__ import annotations

import json
import logging
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from ..autodiff.serialize import tensor_from_bytes, tensor_to_bytes
from ..autodiff.tensor import Tape, Tensor
from ..config.loader import ModelConfig
from ..errors import FingerprintMismatch, ParseError, ValidationError
from ..graph.schema import GraphSchema
from ..io.container import read_container, write_container

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "rankgraph-checkpoint"
CHECKPOINT_VERSION = 1

Shape = Tuple[int, int]


def mixer_width(k: int, d: int) -> int:
    """Width of concat(k blocks) ++ all pairwise products."""
    return k * d + (k * (k - 1) // 2) * d


def _mlp_layout(prefix: str, widths: List[int]) -> List[Tuple[str, Shape]]:
    out: List[Tuple[str, Shape]] = []
    for k in range(len(widths) - 1):
        out.append((f"{prefix}.{k}.weight", (widths[k], widths[k + 1])))
        out.append((f"{prefix}.{k}.bias", (1, widths[k + 1])))
    return out


def param_layout(schema: GraphSchema, dims: ModelConfig) -> List[Tuple[str, Shape]]:
    d = dims.d
    layout: List[Tuple[str, Shape]] = []
    for t in schema.node_types:
        for j, width in enumerate(t.block_dims):
            layout += _mlp_layout(f"encoder.{t.name}.block{j}", [width, dims.encoder_hidden, d])
        w = mixer_width(t.n_features, d)
        layout += [(f"encoder.{t.name}.mixer.weight", (w, d)), (f"encoder.{t.name}.mixer.bias", (1, d))]
    rel_widths = [d, dims.relation_hidden, d] if dims.relation_hidden > 0 else [d, d]
    for layer in range(dims.num_layers):
        for r in schema.relations:
            layout.append((f"layer{layer}.{r.name}.relation_weight", (d, d)))
            layout += _mlp_layout(f"layer{layer}.{r.name}.mlp", rel_widths)
        for t in schema.node_types:
            w = mixer_width(len(schema.incoming(t.type_id)), d)
            layout += [(f"layer{layer}.mixer.{t.name}.weight", (w, d)), (f"layer{layer}.mixer.{t.name}.bias", (1, d))]
    for h in range(dims.num_heads):
        layout += [(f"head{h}.weight", (d, dims.d_out)), (f"head{h}.bias", (1, dims.d_out))]
    return layout


class ModelParams:
    """Immutable named parameter set bound to one schema fingerprint."""

    def __init__(self, dims: ModelConfig, fingerprint: bytes, arrays: Mapping[str, np.ndarray]):
        self.dims = dims
        self.fingerprint = bytes(fingerprint)
        self._arrays: Dict[str, np.ndarray] = {}
        for name, arr in arrays.items():
            a = np.array(arr, dtype=np.float64)
            if a.ndim != 2:
                raise ValidationError(f"parameter {name!r} must be 2-D, got shape {a.shape}")
            if not np.isfinite(a).all():
                raise ValidationError(f"parameter {name!r} has non-finite values")
            a.flags.writeable = False
            self._arrays[name] = a

    @property
    def names(self) -> List[str]:
        return list(self._arrays)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __len__(self) -> int:
        return len(self._arrays)

    def named_arrays(self) -> List[Tuple[str, np.ndarray]]:
        return list(self._arrays.items())

    def tensors(self) -> Dict[str, Tensor]:
        return {name: Tensor(a) for name, a in self._arrays.items()}

    def watch(self, tape: Tape) -> Dict[str, Tensor]:
        return {name: tape.watch(a) for name, a in self._arrays.items()}

    def replace(self, arrays: Mapping[str, np.ndarray]) -> "ModelParams":
        if list(arrays) != self.names:
            raise ValidationError("replacement arrays must keep the canonical parameter order")
        return ModelParams(self.dims, self.fingerprint, arrays)

    def num_scalars(self) -> int:
        return int(sum(a.size for a in self._arrays.values()))

    def check_schema(self, schema: GraphSchema) -> None:
        actual = schema.fingerprint()
        if actual != self.fingerprint:
            raise FingerprintMismatch(self.fingerprint.hex(), actual.hex())

    def equals(self, other: "ModelParams") -> bool:
        return (
            self.fingerprint == other.fingerprint
            and self.names == other.names
            and all(np.array_equal(self[n], other[n]) for n in self.names)
        )


def init_params(schema: GraphSchema, dims: ModelConfig, seed: int) -> ModelParams:
    for field in ("d", "d_out", "num_layers", "num_heads", "encoder_hidden"):
        if getattr(dims, field) < 1:
            raise ValidationError(f"model dimension {field} must be >= 1")
    rng = np.random.default_rng(int(seed))
    arrays: Dict[str, np.ndarray] = {}
    for name, shape in param_layout(schema, dims):
        if name.endswith(".bias"):
            arrays[name] = np.zeros(shape)
        else:
            s = float(np.sqrt(6.0 / (shape[0] + shape[1])))
            arrays[name] = rng.uniform(-s, s, size=shape)
    params = ModelParams(dims, schema.fingerprint(), arrays)
    logger.info(f"Initialised {len(params)} parameter tensors ({params.num_scalars()} scalars)")
    return params


def _member(name: str) -> str:
    return f"tensors/{name}.rgt"


def checkpoint_manifest(params: ModelParams) -> Dict[str, object]:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": params.dims.model_dump(),
        "fingerprint": params.fingerprint.hex(),
        "tensors": params.names,
    }


def save_checkpoint(params: ModelParams, path: str) -> None:
    manifest = json.dumps(checkpoint_manifest(params), sort_keys=True, indent=2).encode("utf-8")
    members = [("manifest.json", manifest)]
    members += [(_member(n), tensor_to_bytes(Tensor(a))) for n, a in params.named_arrays()]
    write_container(path, members)
    logger.info(f"Wrote checkpoint with {len(params)} tensors to {path}")


def load_checkpoint(path: str, schema: Optional[GraphSchema] = None) -> ModelParams:
    """Read a checkpoint; with `schema`, reject a fingerprint or layout mismatch."""
    members = read_container(path)
    if "manifest.json" not in members:
        raise ParseError(f"{path}: checkpoint has no manifest.json")
    manifest = json.loads(members["manifest.json"].decode("utf-8"))
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ParseError(f"{path}: not a rankgraph checkpoint")
    dims = ModelConfig(**manifest["dims"])
    fingerprint = bytes.fromhex(manifest["fingerprint"])
    arrays: Dict[str, np.ndarray] = {}
    for name in manifest["tensors"]:
        data = members.get(_member(name))
        if data is None:
            raise ParseError(f"{path}: missing tensor {name!r}")
        arrays[name] = tensor_from_bytes(data).values
    params = ModelParams(dims, fingerprint, arrays)
    if schema is not None:
        params.check_schema(schema)
        expected = param_layout(schema, dims)
        if [(n, tuple(params[n].shape)) for n in params.names] != [(n, s) for n, s in expected]:
            raise ValidationError(f"{path}: parameter layout does not match the schema")
    return params
