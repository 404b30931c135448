"""Deterministic text serialization shared by the artifact writers.

Every float is written with 17 significant digits, enough to round-trip
IEEE doubles exactly, so re-running an experiment reproduces artifacts
byte for byte.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

__all__ = ["fmt", "write_csv", "read_csv", "write_json"]


def fmt(x) -> str:
    """17-significant-digit decimal; round-trips any finite double."""
    return f"{float(x):.17g}"


def write_csv(path, columns: dict, header_comments: dict | None = None) -> Path:
    """Write named columns of equal length, optional `# key = value` header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    arrays = [np.asarray(columns[k]).ravel() for k in names]
    n = arrays[0].size
    if any(a.size != n for a in arrays):
        raise ValueError("columns must have equal length")
    lines = []
    for key, val in (header_comments or {}).items():
        sval = fmt(val) if isinstance(val, (int, float, np.floating)) else str(val)
        lines.append(f"# {key} = {sval}")
    lines.append(",".join(names))
    for j in range(n):
        lines.append(",".join(fmt(a[j]) for a in arrays))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path) -> tuple[dict, dict]:
    """Read a file written by write_csv: (columns, header_comments)."""
    comments = {}
    names = None
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].partition("=")
            comments[key.strip()] = val.strip()
        elif names is None:
            names = line.split(",")
        elif line:
            rows.append([float(v) for v in line.split(",")])
    data = np.array(rows) if rows else np.empty((0, len(names or [])))
    return {k: data[:, j] for j, k in enumerate(names or [])}, comments


def _jsonable(obj):
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path
