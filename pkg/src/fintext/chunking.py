"""Sliding-window chunking of token sequences and per-chunk score roll-up.

Windows advance by ``window - overlap`` tokens. The truncated tail chunk is
kept unless it is fully contained in the previous chunk, which guarantees
every token index is covered exactly once the chunk list is unioned.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from fintext.errors import ParameterError, ValidationError

DEFAULT_WINDOW = 400
DEFAULT_OVERLAP = 20


@dataclass(frozen=True)
class Chunk:
    doc_id: str
    index: int
    token_start: int
    token_end: int  # exclusive
    tokens: tuple[str, ...]

    @property
    def chunk_id(self) -> str:
        return f"{self.doc_id}#{self.index}"


def chunk_tokens(
    doc_id: str,
    tokens: Sequence[str],
    window: int = DEFAULT_WINDOW,
    overlap: int = DEFAULT_OVERLAP,
) -> list[Chunk]:
    """Split ``tokens`` into windows of at most ``window`` tokens.

    Chunk i starts at ``i * (window - overlap)``. A tail chunk whose range is
    fully contained in the previous chunk is suppressed.
    """
    if window <= 0:
        raise ParameterError(f"window must be positive, got {window}")
    if overlap < 0 or overlap >= window:
        raise ParameterError(
            f"overlap must satisfy 0 <= overlap < window, got overlap={overlap} window={window}"
        )
    n = len(tokens)
    step = window - overlap
    chunks: list[Chunk] = []
    for start in range(0, n, step):
        end = min(start + window, n)
        if chunks and end <= chunks[-1].token_end:
            break  # contained in the previous window; later starts only shrink
        chunks.append(
            Chunk(
                doc_id=doc_id,
                index=len(chunks),
                token_start=start,
                token_end=end,
                tokens=tuple(tokens[start:end]),
            )
        )
    return chunks


def aggregate_chunk_scores(
    chunk_scores: Mapping[str, Sequence[float]],
    mode: str = "max",
) -> dict[str, float]:
    """Roll per-chunk scores grouped by document up to one score per document."""
    if mode not in ("max", "mean"):
        raise ParameterError(f"unknown aggregation mode {mode!r}")
    out: dict[str, float] = {}
    for doc_id, scores in chunk_scores.items():
        if len(scores) == 0:
            raise ValidationError(f"empty score group for document {doc_id!r}")
        if mode == "max":
            out[doc_id] = max(scores)
        else:
            out[doc_id] = sum(scores) / len(scores)
    return out
