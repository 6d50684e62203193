"""Interaction log TSV: hour, user_id, item_id, interaction_type, weight (with header)."""
from __future__ import annotations

import os

import numpy as np
import pandas as pd

from ..errors import ParseError, ValidationError

COLUMNS = ["hour", "user_id", "item_id", "interaction_type", "weight"]


def canonical_sort(df: pd.DataFrame) -> pd.DataFrame:
    return df.sort_values(["hour", "user_id", "item_id", "interaction_type"], kind="stable").reset_index(drop=True)


def validate_log(df: pd.DataFrame) -> pd.DataFrame:
    missing = [c for c in COLUMNS if c not in df.columns]
    if missing:
        raise ParseError(f"interaction log lacks columns {missing}")
    out = df[COLUMNS].copy()
    try:
        out["hour"] = out["hour"].astype(np.int64)
        out["weight"] = out["weight"].astype(np.float64)
    except (TypeError, ValueError) as e:
        raise ParseError(f"interaction log has non-numeric hour or weight: {e}") from e
    for col in ("user_id", "item_id", "interaction_type"):
        out[col] = out[col].astype(str)
    bad = ~(out["weight"] > 0) | ~np.isfinite(out["weight"])
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise ValidationError(f"interaction log row {row + 1} has non-positive weight {out['weight'].iloc[row]!r}")
    return canonical_sort(out)


def read_interaction_log(path: str) -> pd.DataFrame:
    df = pd.read_csv(
        path, sep="\t", dtype={"user_id": str, "item_id": str, "interaction_type": str},
        keep_default_na=False, float_precision="round_trip",
    )
    return validate_log(df)


def write_interaction_log(df: pd.DataFrame, path: str) -> int:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    out = validate_log(df)
    out.to_csv(path, sep="\t", index=False, float_format="%.17g", lineterminator="\n")
    return len(out)
