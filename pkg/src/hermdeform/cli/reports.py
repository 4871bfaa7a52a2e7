"""Canonical report writers: JSON, CSV tables, and PGM heatmaps.

Reports must be byte-identical across runs with the same configuration
and package version, so every writer here is deterministic: floats are
rendered with 17 significant digits (enough to round-trip an IEEE
double), keys are emitted in sorted order, line endings are ``\n``, and
no timestamps, hostnames, or memory addresses ever appear.  The JSON
serializer is hand-rolled because the stdlib encoder does not let us
pin the float format.
"""

from __future__ import annotations

import math
import os
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "format_float",
    "canonical_json",
    "write_json",
    "write_csv",
    "write_pgm",
]


def format_float(x: float) -> str:
    """Render a finite float with 17 significant digits."""
    if isinstance(x, bool):  # bools are ints are "floats" to isinstance
        raise TypeError("bool is not a float value")
    xf = float(x)
    if math.isnan(xf) or math.isinf(xf):
        raise ValueError(f"non-finite float {x!r} cannot appear in a report")
    return format(xf, ".17g")


def _json_escape(s: str) -> str:
    out = ['"']
    for ch in s:
        if ch == '"':
            out.append('\\"')
        elif ch == "\\":
            out.append("\\\\")
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\t":
            out.append("\\t")
        elif ch == "\r":
            out.append("\\r")
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    out.append('"')
    return "".join(out)


def _render(obj, indent: int, pieces: list) -> None:
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if obj is None:
        pieces.append("null")
    elif isinstance(obj, bool):
        pieces.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)) and not isinstance(obj, bool):
        pieces.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        pieces.append(format_float(float(obj)))
    elif isinstance(obj, str):
        pieces.append(_json_escape(obj))
    elif isinstance(obj, dict):
        if not obj:
            pieces.append("{}")
            return
        pieces.append("{\n")
        keys = sorted(obj.keys())
        for i, key in enumerate(keys):
            if not isinstance(key, str):
                raise TypeError(f"JSON object keys must be strings, got {key!r}")
            pieces.append(inner)
            pieces.append(_json_escape(key))
            pieces.append(": ")
            _render(obj[key], indent + 1, pieces)
            pieces.append(",\n" if i + 1 < len(keys) else "\n")
        pieces.append(pad + "}")
    elif isinstance(obj, (list, tuple)):
        if len(obj) == 0:
            pieces.append("[]")
            return
        pieces.append("[\n")
        for i, item in enumerate(obj):
            pieces.append(inner)
            _render(item, indent + 1, pieces)
            pieces.append(",\n" if i + 1 < len(obj) else "\n")
        pieces.append(pad + "]")
    elif isinstance(obj, np.ndarray):
        _render(obj.tolist(), indent, pieces)
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__} into a report")


def canonical_json(obj) -> str:
    """Serialize ``obj`` deterministically (sorted keys, 17-digit
    floats, two-space indent, trailing newline)."""
    pieces: list = []
    _render(obj, 0, pieces)
    pieces.append("\n")
    return "".join(pieces)


def write_json(path: str, obj) -> None:
    _write_text(path, canonical_json(obj))


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write a CSV table with the canonical float format.  Cells may be
    strings, ints, or floats; no quoting is performed, so string cells
    must not contain commas."""
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            if isinstance(cell, bool):
                cells.append("true" if cell else "false")
            elif isinstance(cell, (int, np.integer)):
                cells.append(str(int(cell)))
            elif isinstance(cell, (float, np.floating)):
                cells.append(format_float(float(cell)))
            else:
                text = str(cell)
                if "," in text or "\n" in text:
                    raise ValueError(f"CSV cell {text!r} contains a delimiter")
                cells.append(text)
        lines.append(",".join(cells))
    _write_text(path, "\n".join(lines) + "\n")


def write_pgm(path: str, field: np.ndarray) -> dict:
    """Write a 2-d scalar field as an 8-bit ASCII PGM heatmap.

    The field is affinely mapped so its minimum becomes 0 and its
    maximum 255 (a constant field maps to all zeros).  Returns the
    scaling metadata so callers can embed it in the JSON report; the
    image alone is qualitative.
    """
    arr = np.asarray(field, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"PGM heatmaps need a 2-d field, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("PGM heatmap field contains non-finite values")
    lo = float(arr.min())
    hi = float(arr.max())
    if hi > lo:
        scaled = np.rint((arr - lo) * (255.0 / (hi - lo))).astype(np.int64)
    else:
        scaled = np.zeros(arr.shape, dtype=np.int64)
    scaled = np.clip(scaled, 0, 255)
    h, w = arr.shape
    lines = ["P2", f"{w} {h}", "255"]
    for row in scaled:
        vals = [str(int(v)) for v in row]
        for start in range(0, len(vals), 16):
            lines.append(" ".join(vals[start : start + 16]))
    _write_text(path, "\n".join(lines) + "\n")
    return {"min_value": lo, "max_value": hi, "width": w, "height": h}


def _write_text(path: str, text: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
