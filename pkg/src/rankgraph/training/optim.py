from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

from ..config.loader import OptimizerConfig
from ..errors import ShapeError, ValidationError


@dataclass
class AdamMoments:
    first: Dict[str, np.ndarray] = field(default_factory=dict)
    second: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "AdamMoments":
        return cls(
            first={k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()},
            second={k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()},
        )


def adam_update(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    moments: AdamMoments,
    step: int,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> Tuple[Dict[str, np.ndarray], AdamMoments]:
    """One bias-corrected Adam step; `step` counts from 1. Inputs are not mutated."""
    if step < 1:
        raise ValidationError("adam step counts from 1")
    new_params: Dict[str, np.ndarray] = {}
    out = AdamMoments()
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError("adam_update", p.shape, g.shape)
        m_prev, v_prev = moments.first[name], moments.second[name]
        if m_prev.shape != p.shape or v_prev.shape != p.shape:
            raise ShapeError("adam_update", p.shape, m_prev.shape)
        m = beta1 * m_prev + (1.0 - beta1) * g
        v = beta2 * v_prev + (1.0 - beta2) * g * g
        new_params[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        out.first[name] = m
        out.second[name] = v
    return new_params, out


def adam_from_config(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    moments: AdamMoments,
    step: int,
    cfg: OptimizerConfig,
) -> Tuple[Dict[str, np.ndarray], AdamMoments]:
    return adam_update(params, grads, moments, step, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
