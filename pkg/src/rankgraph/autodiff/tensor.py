"""
Immutable 2-D float64 tensors and the recording tape.

What it does:
- `Tensor` wraps a read-only (rows, cols) float64 array; NaN/Inf are rejected
  at construction, and after every op while `checked()` is active.
- `Tape` records primitive ops (inputs, output handle, vector-Jacobian
  closure) while it is the innermost active tape. Leaves are registered with
  `Tape.watch`; ops only record when at least one input is tracked on the
  active tape, so untracked tensors act as constants.

A tape is single-threaded; the active-tape stack and the checked flag are
thread-local, so parallel workers each drive their own tape.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import NonFiniteError, ShapeError

VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_local = threading.local()


def _stack() -> List["Tape"]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = []
        _local.tapes = stack
    return stack


def active_tape() -> Optional["Tape"]:
    stack = _stack()
    return stack[-1] if stack else None


def is_checked() -> bool:
    return getattr(_local, "checked", 0) > 0


@contextmanager
def checked() -> Iterator[None]:
    """Validate finiteness after every op inside the block."""
    _local.checked = getattr(_local, "checked", 0) + 1
    try:
        yield
    finally:
        _local.checked -= 1


def _as_matrix(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError("tensor", arr.shape, (0, 0))
    return arr


class Tensor:
    __slots__ = ("values", "node_id", "tape")

    def __init__(self, values, node_id: Optional[int] = None, tape: Optional["Tape"] = None):
        arr = _as_matrix(values)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values in tensor of shape {arr.shape}")
        arr.flags.writeable = False
        self.values = arr
        self.node_id = node_id
        self.tape = tape

    @classmethod
    def _from_op(cls, op: str, arr: np.ndarray, node_id: Optional[int], tape: Optional["Tape"]) -> "Tensor":
        if is_checked() and not np.isfinite(arr).all():
            raise NonFiniteError(f"{op} produced non-finite values")
        out = cls.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        arr.flags.writeable = False
        out.values = arr
        out.node_id = node_id
        out.tape = tape
        return out

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]

    @property
    def rows(self) -> int:
        return int(self.values.shape[0])

    @property
    def cols(self) -> int:
        return int(self.values.shape[1])

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ShapeError("item", self.shape, (1, 1))
        return float(self.values[0, 0])

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self) -> str:
        tag = f", node_id={self.node_id}" if self.node_id is not None else ""
        return f"Tensor(shape={self.shape}{tag})"


def detach(t: Tensor) -> Tensor:
    """Same values, no tape linkage."""
    return Tensor._from_op("detach", t.values, None, None)


@dataclass(frozen=True)
class OpRecord:
    op: str
    inputs: Tuple[Optional[int], ...]
    output: int
    vjp: VJP


class Tape:
    def __init__(self) -> None:
        self.records: List[OpRecord] = []
        self.leaves: Dict[int, Tuple[int, int]] = {}
        self._next = 0

    def _handle(self) -> int:
        h = self._next
        self._next += 1
        return h

    def watch(self, values) -> Tensor:
        """Register a leaf (a parameter) and return its tracked tensor."""
        src = values.values if isinstance(values, Tensor) else values
        t = Tensor(src)
        h = self._handle()
        self.leaves[h] = t.shape
        t.node_id = h
        t.tape = self
        return t

    def tracks(self, t: Tensor) -> bool:
        return t.node_id is not None and t.tape is self

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()


def record(op: str, inputs: Sequence[Tensor], out: np.ndarray, vjp: VJP) -> Tensor:
    """Wrap an op result, recording it when an input is tracked on the active tape."""
    tape = active_tape()
    if tape is not None and any(tape.tracks(t) for t in inputs):
        h = tape._handle()
        handles = tuple(t.node_id if tape.tracks(t) else None for t in inputs)
        tape.records.append(OpRecord(op, handles, h, vjp))
        return Tensor._from_op(op, out, h, tape)
    return Tensor._from_op(op, out, None, None)
