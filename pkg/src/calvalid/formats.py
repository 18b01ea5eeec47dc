"""Correspondence files: one JSON object per line.

    {"x2d": [u, v], "X3d": [X, Y, Z], "inlier": true, "a_x": 1.2, "a_y": 0.1}

``a_x``/``a_y`` are optional, but must be present on every line or none.
Floats are written with ``repr`` precision, so files round-trip exactly.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import NonFinite, ParseError
from .geometry import Correspondence


def correspondence_lines(corrs, scales=None):
    if scales is not None:
        scales = np.asarray(scales, dtype=float)
        if scales.shape != (len(corrs), 2):
            raise ValueError(f"scales shape {scales.shape} does not match {len(corrs)} points")
    for k, c in enumerate(corrs):
        d = {"x2d": [float(v) for v in c.x2d], "X3d": [float(v) for v in c.X3d],
             "inlier": bool(c.inlier)}
        if scales is not None:
            d["a_x"] = float(scales[k, 0])
            d["a_y"] = float(scales[k, 1])
        yield json.dumps(d, separators=(", ", ": "))


def save_correspondences(path, corrs, scales=None):
    text = "".join(line + "\n" for line in correspondence_lines(corrs, scales))
    Path(path).write_text(text, encoding="utf-8")


def _vector(d, name, size, path, line):
    v = d.get(name)
    if v is None:
        raise ParseError("missing field", reason="MissingField", path=path, line=line, field=name)
    if not isinstance(v, list) or len(v) != size or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise ParseError(f"expected a list of {size} numbers", reason="InvalidField", path=path,
                         line=line, field=name)
    if not all(math.isfinite(x) for x in v):
        raise ParseError("non-finite coordinate", reason="NonFinite", path=path, line=line,
                         field=name)
    return v


def load_correspondences(path):
    """Read a correspondence file; returns ``(corrs, scales)`` with ``scales`` (K, 2) or None."""
    path = str(path)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(str(exc), reason="IOError", path=path) from None
    corrs, scales = [], []
    with_scales = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            d = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, reason="InvalidJSON", path=path, line=lineno) from None
        if not isinstance(d, dict):
            raise ParseError("expected a JSON object", reason="InvalidJSON", path=path,
                             line=lineno)
        x2d = _vector(d, "x2d", 2, path, lineno)
        X3d = _vector(d, "X3d", 3, path, lineno)
        inlier = d.get("inlier", True)
        if not isinstance(inlier, bool):
            raise ParseError("inlier must be a boolean", reason="InvalidField", path=path,
                             line=lineno, field="inlier")
        has = ("a_x" in d, "a_y" in d)
        if has[0] != has[1]:
            raise ParseError("a_x and a_y must appear together", reason="InvalidField",
                             path=path, line=lineno, field="a_x" if not has[0] else "a_y")
        if with_scales is None:
            with_scales = has[0]
        elif with_scales != has[0]:
            raise ParseError("a_x/a_y present on some lines only", reason="InvalidField",
                             path=path, line=lineno, field="a_x")
        if has[0]:
            a = [d["a_x"], d["a_y"]]
            if not all(isinstance(x, (int, float)) and not isinstance(x, bool)
                       and math.isfinite(x) and x >= 0 for x in a):
                raise ParseError("scales must be finite and non-negative",
                                 reason="InvalidField", path=path, line=lineno, field="a_x")
            scales.append(a)
        try:
            corrs.append(Correspondence(x2d=x2d, X3d=X3d, inlier=inlier))
        except NonFinite as exc:
            raise ParseError(str(exc), reason="NonFinite", path=path, line=lineno) from None
    return corrs, (np.array(scales, dtype=float) if with_scales else None)
