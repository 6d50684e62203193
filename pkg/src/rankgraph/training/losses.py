"""
Contrastive losses on unit-norm rows.

Batched kernels take, per anchor, the positive cosine (B, 1), a padded matrix
of negative cosines (B, S) and a boolean mask (B, S) of real negative slots.
The single-anchor forms are the same kernels with B = 1.
"""
from __future__ import annotations

import numpy as np

from ..autodiff import ops
from ..autodiff.tensor import Tensor
from ..errors import ShapeError, ValidationError


def cosine_rows(x: Tensor, y: Tensor) -> Tensor:
    return ops.row_sum(ops.hadamard(x, y))


def _repeat_cols(col: Tensor, n: int) -> Tensor:
    return ops.affine(col, Tensor(np.ones((1, n))))


def _check(cos_ap: Tensor, cos_an: Tensor, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if cos_ap.shape != (cos_an.rows, 1):
        raise ShapeError("contrastive_loss", cos_ap.shape, cos_an.shape)
    if mask.shape != cos_an.shape:
        raise ShapeError("contrastive_loss", cos_an.shape, mask.shape)
    if not mask.any(axis=1).all():
        raise ValidationError("every anchor needs at least one negative")
    return mask


def triplet_terms(cos_ap: Tensor, cos_an: Tensor, mask: np.ndarray, margin: float) -> Tensor:
    """Per anchor: mean over negatives of max(0, cos_an - cos_ap + margin)."""
    mask = _check(cos_ap, cos_an, mask)
    diff = ops.add([cos_an, ops.scale(_repeat_cols(cos_ap, cos_an.cols), -1.0)])
    hinge = ops.hadamard(ops.relu(ops.shift(diff, margin)), Tensor(mask.astype(np.float64)))
    inv_count = Tensor(1.0 / mask.sum(axis=1, keepdims=True))
    return ops.hadamard(ops.row_sum(hinge), inv_count)


def infonce_terms(cos_ap: Tensor, cos_an: Tensor, mask: np.ndarray, temperature: float) -> Tensor:
    """Per anchor: -log softmax of the positive among positive + negatives at temperature tau."""
    if not temperature > 0:
        raise ValidationError(f"temperature must be > 0, got {temperature}")
    mask = _check(cos_ap, cos_an, mask)
    inv_t = 1.0 / temperature
    logits = ops.scale(ops.concat_cols([cos_ap, cos_an]), inv_t)
    full_mask = np.concatenate([np.ones((mask.shape[0], 1), dtype=bool), mask], axis=1)
    return ops.add([ops.logsumexp_row(logits, full_mask), ops.scale(cos_ap, -inv_t)])


def _single(a: Tensor, p: Tensor, negatives: Tensor):
    if negatives.rows < 1:
        raise ValidationError("negatives must not be empty")
    if a.shape != p.shape or a.rows != 1 or negatives.cols != a.cols:
        raise ShapeError("contrastive_loss", a.shape, negatives.shape)
    cos_ap = cosine_rows(a, p)
    cos_an = ops.reshape(ops.affine(negatives, ops.reshape(a, (a.cols, 1))), (1, negatives.rows))
    return cos_ap, cos_an, np.ones((1, negatives.rows), dtype=bool)


def triplet_loss(a: Tensor, p: Tensor, negatives: Tensor, margin: float) -> Tensor:
    return triplet_terms(*_single(a, p, negatives), margin)


def infonce_loss(a: Tensor, p: Tensor, negatives: Tensor, temperature: float) -> Tensor:
    if not temperature > 0:
        raise ValidationError(f"temperature must be > 0, got {temperature}")
    return infonce_terms(*_single(a, p, negatives), temperature)


def combined_loss(triplet: Tensor, infonce: Tensor, alpha: float, beta: float) -> Tensor:
    """alpha * mean(triplet) + beta * mean(infonce) over all anchors of the step."""
    return ops.add([ops.scale(ops.mean_all(triplet), alpha), ops.scale(ops.mean_all(infonce), beta)])
