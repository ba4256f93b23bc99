"""Deterministic JSON emission with 17-significant-digit floats.

The stdlib encoder hardcodes ``repr`` for floats, so report files are
written by this small emitter instead: every float is rendered with
``%.17g`` (guaranteeing bit-exact round-trips through ``json.loads``),
dict order is preserved, and output is stable byte-for-byte for equal
inputs. Reading uses plain ``json``.
"""

from __future__ import annotations

import math
import os
import tempfile

import numpy as np

__all__ = ["dumps", "format_float", "atomic_write_bytes", "atomic_write_text"]


def format_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        raise ValueError("report values must be finite")
    if x == int(x) and abs(x) < 1e16:
        # keep integral floats readable and unambiguous
        return f"{x:.1f}"
    return f"{x:.17g}"


def _emit(obj, indent: int, level: int, out: list) -> None:
    pad = " " * (indent * level)
    inner = " " * (indent * (level + 1))
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, (np.floating, float)):
        out.append(format_float(float(obj)))
    elif isinstance(obj, (np.integer, int)):
        out.append(str(int(obj)))
    elif isinstance(obj, str):
        import json as _json
        out.append(_json.dumps(obj))
    elif isinstance(obj, np.ndarray):
        _emit(obj.tolist(), indent, level, out)
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        for i, (k, v) in enumerate(obj.items()):
            if not isinstance(k, str):
                raise TypeError(f"JSON keys must be strings, got {type(k)}")
            import json as _json
            out.append(inner + _json.dumps(k) + ": ")
            _emit(v, indent, level + 1, out)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(pad + "}")
    elif isinstance(obj, (list, tuple)):
        if not len(obj):
            out.append("[]")
            return
        out.append("[\n")
        for i, v in enumerate(obj):
            out.append(inner)
            _emit(v, indent, level + 1, out)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(pad + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj)}")


def dumps(obj, indent: int = 2) -> str:
    out: list = []
    _emit(obj, indent, 0, out)
    out.append("\n")
    return "".join(out)


def atomic_write_bytes(path, data: bytes) -> None:
    """Whole-file atomic write: temp file in the target dir, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
