"""Binary trace files: the on-disk carrier for per-layer embedding matrices.

Layout (all integers little-endian u32):

    magic "EMTR" | version | layer_count | N | d | flags | payload

``layer_count`` counts every stored matrix, including the layer-0
embedding output and, when flag bit 0 is set, a trailing post-final-norm
entry. The payload is layer-major, row-major float32, so a file round-trips
bit-exactly at 32-bit precision. The sequence id is not stored; readers
take it from the file name.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .geometry import EmbeddingTrace
from .jsonio import atomic_write_bytes

__all__ = ["TraceFormatError", "read_trace", "write_trace", "TRACE_MAGIC", "TRACE_VERSION"]

TRACE_MAGIC = b"EMTR"
TRACE_VERSION = 1
FLAG_FINAL_NORM = 1


class TraceFormatError(ValueError):
    """Malformed trace file; ``code`` is one of bad_magic, version_mismatch,
    truncated_payload, bad_header."""

    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(message)


def write_trace(trace: EmbeddingTrace, path) -> None:
    mats = trace.matrices()
    n, d = mats[0].shape
    flags = FLAG_FINAL_NORM if trace.final_norm is not None else 0
    header = TRACE_MAGIC + struct.pack("<5I", TRACE_VERSION, len(mats), n, d, flags)
    payload = b"".join(np.ascontiguousarray(m, dtype="<f4").tobytes() for m in mats)
    atomic_write_bytes(path, header + payload)


def read_trace(path) -> EmbeddingTrace:
    path = os.fspath(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 24:
        raise TraceFormatError("bad_header", f"{path}: too short for a trace header")
    if raw[:4] != TRACE_MAGIC:
        raise TraceFormatError("bad_magic", f"{path}: bad magic {raw[:4]!r}")
    version, layer_count, n, d, flags = struct.unpack_from("<5I", raw, 4)
    if version != TRACE_VERSION:
        raise TraceFormatError(
            "version_mismatch", f"{path}: version {version}, expected {TRACE_VERSION}")
    expected = layer_count * n * d * 4
    if len(raw) - 24 != expected:
        raise TraceFormatError(
            "truncated_payload",
            f"{path}: payload is {len(raw) - 24} bytes, expected {expected}")
    mats = [np.frombuffer(raw, dtype="<f4", count=n * d, offset=24 + i * n * d * 4)
            .reshape(n, d).copy() for i in range(layer_count)]
    final = mats.pop() if flags & FLAG_FINAL_NORM else None
    if len(mats) < 2:
        raise TraceFormatError("bad_header", f"{path}: needs at least 2 layer matrices")
    seq_id = os.path.splitext(os.path.basename(path))[0]
    return EmbeddingTrace(layers=mats, sequence_id=seq_id, final_norm=final)
