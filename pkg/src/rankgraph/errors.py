"""Exception hierarchy shared by every rankgraph subpackage.

Validation errors (bad inputs, schemas, configs, shapes) are `ValueError`s so
callers that only know the builtin still catch them; the CLI maps them to exit
code 1 and every other `RankGraphError` to exit code 2.
"""
from __future__ import annotations

from typing import Dict, Optional, Tuple


class RankGraphError(Exception):
    """Root of all rankgraph errors."""


class ValidationError(RankGraphError, ValueError):
    """Input rejected before any work was done."""


class SchemaError(ValidationError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ParseError(ValidationError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(ValidationError):
    pass


class ShapeError(ValidationError):
    def __init__(self, op: str, left: Tuple[int, ...], right: Tuple[int, ...]):
        self.op = op
        self.left = tuple(left)
        self.right = tuple(right)
        super().__init__(f"{op}: incompatible shapes {self.left} and {self.right}")


class FingerprintMismatch(ValidationError):
    def __init__(self, expected: str, actual: str):
        self.expected = expected
        self.actual = actual
        super().__init__(f"schema fingerprint mismatch: expected {expected[:16]}…, got {actual[:16]}…")


class NonFiniteError(RankGraphError):
    pass


class TrainingAborted(RankGraphError):
    def __init__(self, step: int, components: Dict[str, float]):
        self.step = step
        self.components = dict(components)
        parts = ", ".join(f"{k}={v!r}" for k, v in self.components.items())
        super().__init__(f"non-finite loss at step {step}: {parts}")


class EmptyPoolError(RankGraphError):
    pass


class ClusteringError(RankGraphError):
    pass
