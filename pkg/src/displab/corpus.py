"""Byte-level corpus ingestion: every byte is a token id in 0..255."""

from __future__ import annotations

import os

import numpy as np

__all__ = ["CorpusError", "ingest_corpus", "load_corpus"]

DEFAULT_CHUNK = 1 << 20


class CorpusError(ValueError):
    pass


def ingest_corpus(path, chunk_size: int = DEFAULT_CHUNK):
    """Stream a corpus file as uint8 id chunks.

    Yields numpy arrays of at most ``chunk_size`` ids. Raises
    :class:`CorpusError` for a missing or empty file.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise CorpusError(f"corpus file not found: {path}")
    if os.path.getsize(path) == 0:
        raise CorpusError(f"empty corpus: {path}")
    with open(path, "rb") as fh:
        while True:
            block = fh.read(chunk_size)
            if not block:
                return
            yield np.frombuffer(block, dtype=np.uint8)


def load_corpus(path) -> np.ndarray:
    """Read the whole corpus; returns the id array (len == byte count)."""
    chunks = list(ingest_corpus(path))
    return chunks[0] if len(chunks) == 1 else np.concatenate(chunks)
