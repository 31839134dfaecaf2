"""Reader for line-oriented corpora and writer for the binary embedding
format consumed by the fintext toolkit.

Format: 4-byte magic "FXEM", u32 version (1), u32 dim, u64 row count, then a
row-major little-endian float32 payload; row ids go to a sidecar manifest at
``<path>.ids``, one id per line. Files are written atomically via rename.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"FXEM"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


class CorpusError(ValueError):
    """Malformed corpus input."""


def read_corpus(path: str | Path) -> list[tuple[str, str]]:
    """(id, text) pairs in file order; rejects malformed lines and duplicates."""
    records: list[tuple[str, str]] = []
    seen: set[str] = set()
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
            if not isinstance(record, dict) or "id" not in record or "text" not in record:
                raise CorpusError(f"{path}:{line_no}: record needs id and text")
            doc_id, text = record["id"], record["text"]
            if not isinstance(doc_id, str) or not isinstance(text, str):
                raise CorpusError(f"{path}:{line_no}: id and text must be strings")
            if doc_id in seen:
                raise CorpusError(f"{path}:{line_no}: duplicate id {doc_id!r}")
            seen.add(doc_id)
            records.append((doc_id, text))
    return records


def _atomic_write(path: Path, payload: bytes) -> None:
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def write_matrix(ids: list[str], vectors: np.ndarray, path: str | Path) -> None:
    """Write the binary matrix plus its id manifest, both atomically."""
    path = Path(path)
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    if vectors.ndim != 2:
        raise ValueError(f"vectors must be 2-d, got shape {vectors.shape}")
    if vectors.shape[0] != len(ids):
        raise ValueError(f"{vectors.shape[0]} rows for {len(ids)} ids")
    if not np.all(np.isfinite(vectors)):
        raise ValueError("vectors must be finite")
    header = _HEADER.pack(MAGIC, VERSION, vectors.shape[1], vectors.shape[0])
    _atomic_write(path, header + vectors.tobytes())
    manifest = "".join(doc_id + "\n" for doc_id in ids).encode("utf-8")
    _atomic_write(path.with_name(path.name + ".ids"), manifest)
