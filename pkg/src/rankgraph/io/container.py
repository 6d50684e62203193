"""Deterministic zip containers.

Members are written in the given order with a fixed timestamp and fixed
permissions, so identical contents always produce byte-identical files.
"""
from __future__ import annotations

import io
import os
import zipfile
from typing import Dict, Iterable, Tuple

import numpy as np

from ..errors import ParseError

_EPOCH = (1980, 1, 1, 0, 0, 0)


def write_container(path: str, members: Iterable[Tuple[str, bytes]]) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name, data in members:
            info = zipfile.ZipInfo(name, date_time=_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, data)


def read_container(path: str) -> Dict[str, bytes]:
    try:
        with zipfile.ZipFile(path, "r") as zf:
            return {name: zf.read(name) for name in zf.namelist()}
    except zipfile.BadZipFile as e:
        raise ParseError(f"{path} is not a rankgraph container: {e}") from e


def array_to_npy(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def npy_to_array(data: bytes) -> np.ndarray:
    return np.load(io.BytesIO(data), allow_pickle=False)
