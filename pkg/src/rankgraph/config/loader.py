"""
Configuration loader for rankgraph.

What it does:
- Reads one structured config document (YAML; JSON parses too since it is a YAML
  subset) from `config/rankgraph.yaml` or the path in `RANKGRAPH_CONFIG`.
- Validates every section with Pydantic models; missing sections fall back to
  the defaults declared here.
- Derives per-module seeds from the single run seed.

Where it is used:
- `rankgraph.main` resolves a `RankGraphConfig` for every subcommand.
- Library callers (tests, notebooks) build the section models directly.
"""
from __future__ import annotations

import hashlib
import os
from typing import Any, Dict, List, Literal, Optional

import yaml
from pydantic import BaseModel, Field, ValidationError as PydanticValidationError
from pydantic import field_validator, model_validator

from ..errors import ConfigError

DEFAULT_CONFIG_PATH = "config/rankgraph.yaml"


class ModelConfig(BaseModel):
    """Dimensions of the encoder, message-passing stack and output heads."""
    d: int = Field(default=32, ge=1)
    d_out: int = Field(default=32, ge=1)
    num_layers: int = Field(default=2, ge=1)
    num_heads: int = Field(default=2, ge=1)
    encoder_hidden: int = Field(default=32, ge=1)
    # 0 = the per-relation MLP is a single affine map
    relation_hidden: int = Field(default=0, ge=0)


class LossConfig(BaseModel):
    margin: float = 0.4
    temperature: float = 0.1
    alpha: float = Field(default=1.0, ge=0)
    beta: float = Field(default=1.0, ge=0)
    n_neg: int = Field(default=8, ge=1)
    pool_capacity: int = Field(default=4096, ge=1)
    semantic_negatives: bool = True
    detach_semantic: bool = False

    @field_validator("temperature")
    @classmethod
    def positive_temperature(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("temperature must be > 0")
        return v

    @model_validator(mode="after")
    def some_loss_weight(self) -> "LossConfig":
        if self.alpha + self.beta <= 0:
            raise ValueError("alpha + beta must be > 0")
        return self


class OptimizerConfig(BaseModel):
    lr: float = Field(default=1e-3, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)


class TrainConfig(BaseModel):
    steps: int = Field(default=300, ge=0)
    batch_size: int = Field(default=64, ge=1)
    # None = every engagement/semantic relation that is not an auto-generated reverse
    relations: Optional[List[str]] = None
    symmetric: bool = True
    checked: bool = False
    log_every: int = Field(default=50, ge=1)


class SemanticConfig(BaseModel):
    via: Optional[str] = None
    name: str = "co_engagement"
    top_k: int = Field(default=10, ge=1)
    min_weight: float = 0.0


class SyntheticConfig(BaseModel):
    n_users: int = Field(default=200, ge=1)
    n_items: int = Field(default=200, ge=1)
    communities: int = Field(default=8, ge=2)
    p_in: float = Field(default=0.2, ge=0, le=1)
    p_out: float = Field(default=0.002, ge=0, le=1)
    weight_in: float = Field(default=2.0, gt=0)
    weight_out: float = Field(default=1.0, gt=0)
    user_dim: int = Field(default=16, ge=1)
    item_dims: List[int] = Field(default_factory=lambda: [16, 8])
    noise: float = Field(default=0.5, ge=0)
    log_hours: int = Field(default=200, ge=2)
    interactions_per_hour: float = Field(default=0.3, ge=0)
    interaction_types: Dict[str, float] = Field(
        default_factory=lambda: {"click": 0.7, "like": 0.2, "share": 0.1}
    )

    @field_validator("item_dims")
    @classmethod
    def non_empty_dims(cls, v: List[int]) -> List[int]:
        if not v or any(x < 1 for x in v):
            raise ValueError("item_dims must list at least one positive width")
        return v


class EdgeRecallConfig(BaseModel):
    sample_size: int = Field(default=1000, ge=1)
    ks: List[int] = Field(default_factory=lambda: [5, 10, 50, 100])
    head: int = Field(default=0, ge=0)
    # partner_type: rank each partner type on its own; shared: one pool over every sampled endpoint
    pool: Literal["partner_type", "shared"] = "partner_type"

    @field_validator("ks")
    @classmethod
    def positive_ks(cls, v: List[int]) -> List[int]:
        if not v or any(k < 1 for k in v):
            raise ValueError("k values must be >= 1")
        return sorted(set(v))


class EngagementRecallConfig(BaseModel):
    # last hour of the eval day; None = last hour of the log minus the horizon end
    eval_hour: Optional[int] = None
    # recall is averaged over this many consecutive hours ending at eval_hour
    eval_hours: int = Field(default=24, ge=1)
    window: int = Field(default=168, ge=0)
    neighbors: int = Field(default=20, ge=1)
    horizon_start: int = Field(default=1, ge=1)
    horizon_end: int = Field(default=4, ge=1)
    ks: List[int] = Field(default_factory=lambda: [100, 200, 500])
    type_weights: Dict[str, float] = Field(
        default_factory=lambda: {"click": 1.0, "like": 2.0, "share": 3.0}
    )
    head: int = Field(default=0, ge=0)

    @field_validator("ks")
    @classmethod
    def positive_ks(cls, v: List[int]) -> List[int]:
        if not v or any(k < 1 for k in v):
            raise ValueError("k values must be >= 1")
        return sorted(set(v))

    @model_validator(mode="after")
    def ordered_horizon(self) -> "EngagementRecallConfig":
        if self.horizon_end < self.horizon_start:
            raise ValueError("horizon_end must be >= horizon_start")
        return self


class ClusterConfig(BaseModel):
    k: int = Field(default=8, ge=1)
    max_iters: int = Field(default=50, ge=1)


class RankGraphConfig(BaseModel):
    """Every section of the run configuration, defaults included."""
    model: ModelConfig = Field(default_factory=ModelConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    semantic: SemanticConfig = Field(default_factory=SemanticConfig)
    synthetic: SyntheticConfig = Field(default_factory=SyntheticConfig)
    edge_recall: EdgeRecallConfig = Field(default_factory=EdgeRecallConfig)
    engagement_recall: EngagementRecallConfig = Field(default_factory=EngagementRecallConfig)
    cluster: ClusterConfig = Field(default_factory=ClusterConfig)


def parse_config(raw: Optional[Dict[str, Any]]) -> RankGraphConfig:
    try:
        return RankGraphConfig(**(raw or {}))
    except PydanticValidationError as e:
        raise ConfigError(f"invalid config: {e}") from e


def load_config(path: Optional[str] = None) -> RankGraphConfig:
    """Load and validate a config file.

    With no explicit path, `RANKGRAPH_CONFIG` is consulted, then the repo default;
    a missing default file yields pure defaults.
    """
    explicit = path is not None
    path = path or os.getenv("RANKGRAPH_CONFIG", DEFAULT_CONFIG_PATH)
    if not os.path.exists(path):
        if explicit:
            raise ConfigError(f"config file not found: {path}")
        return RankGraphConfig()
    with open(path, "r", encoding="utf-8") as f:
        try:
            raw = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"unreadable config {path}: {e}") from e
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping at top level")
    return parse_config(raw)


def derive_seed(seed: int, name: str) -> int:
    """Stable per-module seed: first 8 bytes of sha256(f"{seed}:{name}")."""
    digest = hashlib.sha256(f"{int(seed)}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
