"""
Primitive tensor ops with reverse-mode rules.

Every op validates shapes (raising `ShapeError` naming the op and both shapes),
computes its result with numpy and records a vector-Jacobian closure on the
active tape. Row gathers and scatters go through constant scipy CSR matrices so
accumulation order is fixed.
"""
from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from ..errors import ShapeError, ValidationError
from .tensor import Tensor, record

NORM_EPS = 1e-30


def _same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


def affine(x: Tensor, W: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x @ W (+ b), b being a (1, out) row."""
    if x.cols != W.rows:
        raise ShapeError("affine", x.shape, W.shape)
    if b is not None and b.shape != (1, W.cols):
        raise ShapeError("affine", W.shape, b.shape)
    xv, wv = x.values, W.values
    out = xv @ wv
    if b is not None:
        out = out + b.values

    def vjp(g: np.ndarray):
        grads = [g @ wv.T, xv.T @ g]
        if b is not None:
            grads.append(g.sum(axis=0, keepdims=True))
        return grads

    inputs = [x, W] if b is None else [x, W, b]
    return record("affine", inputs, out, vjp)


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0
    return record("relu", [x], np.where(mask, x.values, 0.0), lambda g: [g * mask])


def concat_cols(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ValidationError("concat_cols needs at least one tensor")
    for t in xs[1:]:
        if t.rows != xs[0].rows:
            raise ShapeError("concat_cols", xs[0].shape, t.shape)
    bounds = np.cumsum([0] + [t.cols for t in xs])
    out = np.concatenate([t.values for t in xs], axis=1)
    return record(
        "concat_cols", list(xs), out,
        lambda g: [g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs))],
    )


def concat_rows(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ValidationError("concat_rows needs at least one tensor")
    for t in xs[1:]:
        if t.cols != xs[0].cols:
            raise ShapeError("concat_rows", xs[0].shape, t.shape)
    bounds = np.cumsum([0] + [t.rows for t in xs])
    out = np.concatenate([t.values for t in xs], axis=0)
    return record(
        "concat_rows", list(xs), out,
        lambda g: [g[bounds[i]:bounds[i + 1], :] for i in range(len(xs))],
    )


def hadamard(x: Tensor, y: Tensor) -> Tensor:
    _same("hadamard", x, y)
    xv, yv = x.values, y.values
    return record("hadamard", [x, y], xv * yv, lambda g: [g * yv, g * xv])


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return record("scale", [x], x.values * c, lambda g: [g * c])


def shift(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return record("shift", [x], x.values + c, lambda g: [g])


def add(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ValidationError("add needs at least one tensor")
    for t in xs[1:]:
        _same("add", xs[0], t)
    out = xs[0].values.copy()
    for t in xs[1:]:
        out = out + t.values
    return record("add", list(xs), out, lambda g: [g] * len(xs))


def row_sum(x: Tensor) -> Tensor:
    """(rows, cols) -> (rows, 1)."""
    shape = x.shape
    return record(
        "row_sum", [x], x.values.sum(axis=1, keepdims=True),
        lambda g: [np.broadcast_to(g, shape).copy()],
    )


def row_l2_normalize(x: Tensor) -> Tensor:
    """Unit-norm rows; rows with norm < 1e-30 pass through unchanged."""
    xv = x.values
    norms = np.sqrt((xv * xv).sum(axis=1, keepdims=True))
    live = norms >= NORM_EPS
    safe = np.where(live, norms, 1.0)
    y = np.where(live, xv / safe, xv)

    def vjp(g: np.ndarray):
        proj = (g * y).sum(axis=1, keepdims=True)
        return [np.where(live, (g - y * proj) / safe, g)]

    return record("row_l2_normalize", [x], y, vjp)


def logsumexp_row(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Row-wise log-sum-exp -> (rows, 1); `mask` (bool, constant) drops entries."""
    xv = x.values
    if mask is None:
        mask = np.ones(xv.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != xv.shape:
        raise ShapeError("logsumexp_row", xv.shape, mask.shape)
    if not mask.any(axis=1).all():
        raise ValidationError("logsumexp_row: a row has no unmasked entries")
    m = np.where(mask, xv, -np.inf).max(axis=1, keepdims=True)
    shifted = np.where(mask, xv - m, -np.inf)
    e = np.exp(shifted)
    s = e.sum(axis=1, keepdims=True)
    out = m + np.log(s)
    soft = e / s
    return record("logsumexp_row", [x], out, lambda g: [g * soft])


def _index(op: str, idx, limit: int) -> np.ndarray:
    arr = np.asarray(idx, dtype=np.int64).reshape(-1)
    if arr.size and (arr.min() < 0 or arr.max() >= limit):
        raise ValidationError(f"{op}: index out of range [0, {limit})")
    return arr


def gather_rows(x: Tensor, idx) -> Tensor:
    arr = _index("gather_rows", idx, x.rows)
    n = x.rows
    out = x.values[arr]

    def vjp(g: np.ndarray):
        m = sp.csr_matrix((np.ones(arr.size), (arr, np.arange(arr.size))), shape=(n, arr.size))
        return [np.asarray(m @ g)]

    return record("gather_rows", [x], out, vjp)


def scatter_add_rows(x: Tensor, idx, n_rows: int, weights=None) -> Tensor:
    """out[idx[e]] += weights[e] * x[e]; rows never targeted stay zero."""
    arr = _index("scatter_add_rows", idx, int(n_rows))
    if arr.size != x.rows:
        raise ShapeError("scatter_add_rows", x.shape, (arr.size, x.cols))
    w = np.ones(arr.size) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.size != arr.size:
        raise ShapeError("scatter_add_rows", (arr.size,), (w.size,))
    m = sp.csr_matrix((w, (arr, np.arange(arr.size))), shape=(int(n_rows), arr.size))
    out = np.asarray(m @ x.values) if arr.size else np.zeros((int(n_rows), x.cols))
    mt = m.T.tocsr()
    return record("scatter_add_rows", [x], out, lambda g: [np.asarray(mt @ g)])


def reshape(x: Tensor, shape: Tuple[int, int]) -> Tensor:
    rows, cols = shape
    if rows == -1:
        rows = x.values.size // cols
    if cols == -1:
        cols = x.values.size // rows
    if rows * cols != x.values.size:
        raise ShapeError("reshape", x.shape, (rows, cols))
    orig = x.shape
    return record("reshape", [x], x.values.reshape(rows, cols), lambda g: [g.reshape(orig)])


def sum_all(x: Tensor) -> Tensor:
    return row_sum(reshape(x, (1, -1)))


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.values.size)
