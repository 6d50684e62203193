"""Reverse pass over a tape, and finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Dict, Mapping

import numpy as np

from ..errors import ShapeError, ValidationError
from .tensor import Tape, Tensor, checked


def backward(tape: Tape, loss: Tensor) -> Dict[int, Tensor]:
    """Gradients of a 1x1 loss for every leaf registered on `tape`.

    Ops are visited in exact reverse recording order. Leaves the loss does not
    depend on get zeros.
    """
    if loss.shape != (1, 1):
        raise ShapeError("backward", loss.shape, (1, 1))
    grads: Dict[int, np.ndarray] = {}
    if tape.tracks(loss):
        grads[loss.node_id] = np.ones((1, 1))
    for rec in reversed(tape.records):
        g = grads.pop(rec.output, None)
        if g is None:
            continue
        for handle, gi in zip(rec.inputs, rec.vjp(g)):
            if handle is None or gi is None:
                continue
            prev = grads.get(handle)
            grads[handle] = gi if prev is None else prev + gi
    return {
        h: Tensor(grads[h] if h in grads else np.zeros(shape))
        for h, shape in tape.leaves.items()
    }


LossFn = Callable[[Dict[str, Tensor]], Tensor]


def _evaluate(fn: LossFn, params: Mapping[str, np.ndarray]) -> float:
    return fn({k: Tensor(v) for k, v in params.items()}).item()


def grad_check(fn: LossFn, params: Mapping[str, np.ndarray], epsilon: float = 1e-6) -> float:
    """Largest |analytic - numeric| / max(1, |numeric|) over every scalar parameter.

    Numeric gradients are central differences of `fn` evaluated without a tape.
    The whole check runs with finiteness validation on.
    """
    if not epsilon > 0:
        raise ValidationError(f"epsilon must be > 0, got {epsilon}")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    with checked():
        tape = Tape()
        with tape:
            tracked = {k: tape.watch(v) for k, v in base.items()}
            loss = fn(tracked)
        grads = backward(tape, loss)
        worst = 0.0
        for name, value in base.items():
            analytic = grads[tracked[name].node_id].values
            for i in range(value.size):
                bumped = dict(base)
                plus = value.copy()
                plus.flat[i] += epsilon
                bumped[name] = plus
                f_plus = _evaluate(fn, bumped)
                minus = value.copy()
                minus.flat[i] -= epsilon
                bumped[name] = minus
                f_minus = _evaluate(fn, bumped)
                numeric = (f_plus - f_minus) / (2.0 * epsilon)
                err = abs(float(analytic.flat[i]) - numeric) / max(1.0, abs(numeric))
                worst = max(worst, err)
    return worst
