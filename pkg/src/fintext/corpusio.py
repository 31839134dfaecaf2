"""Persistent data formats: corpora, embeddings, judgments, runs, triplets.

Everything here is line-oriented text except the embedding matrix, which uses
a small binary format (fixed header + raw little-endian float32 payload) with
a sidecar id manifest so round-trips are bit-exact.
"""

from __future__ import annotations

import json
import math
import random
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from fintext.errors import (
    CapacityError,
    FormatError,
    ParseError,
    ValidationError,
)

EMBEDDING_MAGIC = b"FXEM"
EMBEDDING_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")  # magic, version, dim, rows


@dataclass(frozen=True)
class Document:
    """One corpus record: unique id, text, optional string metadata."""

    id: str
    text: str
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise ValidationError("document id must be non-empty")
        if self.text == "" and not self.meta:
            raise ValidationError(
                f"document {self.id!r}: empty text requires non-empty meta"
            )


@dataclass
class EmbeddingMatrix:
    """Dense row-major float32 matrix with one id per row."""

    ids: list[str]
    dim: int
    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        self.validate()

    def validate(self) -> None:
        if self.dim <= 0:
            raise ValidationError(f"dim must be positive, got {self.dim}")
        if self.data.ndim != 2 or self.data.shape[1] != self.dim:
            raise ValidationError(
                f"data shape {self.data.shape} does not match dim {self.dim}"
            )
        if self.data.shape[0] != len(self.ids):
            raise ValidationError(
                f"{self.data.shape[0]} rows but {len(self.ids)} ids"
            )
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("embedding ids must be unique")
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("embedding values must be finite")

    def __len__(self) -> int:
        return len(self.ids)

    def row(self, doc_id: str) -> np.ndarray:
        return self.data[self.ids.index(doc_id)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingMatrix):
            return NotImplemented
        return (
            self.ids == other.ids
            and self.dim == other.dim
            and self.data.tobytes() == other.data.tobytes()
        )


@dataclass
class QRels:
    """query-id -> {doc-id: relevance} judgments."""

    entries: dict[str, dict[str, int]]

    def __post_init__(self):
        for qid, docs in self.entries.items():
            for did, rel in docs.items():
                if rel < 0:
                    raise ValidationError(
                        f"qrels ({qid!r},{did!r}): relevance {rel} < 0"
                    )

    def relevant(self, qid: str) -> dict[str, int]:
        """Positive-relevance docs for one query."""
        return {d: r for d, r in self.entries.get(qid, {}).items() if r > 0}


@dataclass
class RetrievalRun:
    """query-id -> ranked (doc-id, score) list, scores non-increasing."""

    entries: dict[str, list[tuple[str, float]]]

    def __post_init__(self):
        for qid, ranking in self.entries.items():
            seen: set[str] = set()
            prev = math.inf
            for did, score in ranking:
                if did in seen:
                    raise ValidationError(
                        f"run {qid!r}: duplicate doc {did!r}"
                    )
                seen.add(did)
                if not math.isfinite(score):
                    raise ValidationError(
                        f"run {qid!r}: non-finite score for doc {did!r}"
                    )
                if score > prev:
                    raise ValidationError(
                        f"run {qid!r}: scores increase at doc {did!r}"
                    )
                prev = score


@dataclass
class LabeledSplit:
    """Balanced high/low quality text split with its sampling seed."""

    train: list[tuple[str, str]]
    test: list[tuple[str, str]]
    seed: int


# ---------------------------------------------------------------------------
# corpus (one JSON record per line)
# ---------------------------------------------------------------------------


def load_corpus(path: str | Path) -> list[Document]:
    """Load a line-oriented corpus; rejects malformed lines and duplicate ids."""
    path = Path(path)
    docs: list[Document] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(path), line_no, f"invalid JSON: {exc}") from exc
            if not isinstance(record, dict) or "id" not in record or "text" not in record:
                raise ParseError(
                    str(path), line_no, "record must be an object with id and text"
                )
            doc_id = record["id"]
            text = record["text"]
            meta = record.get("meta", {})
            if not isinstance(doc_id, str) or not isinstance(text, str):
                raise ParseError(str(path), line_no, "id and text must be strings")
            if not isinstance(meta, dict) or not all(
                isinstance(k, str) and isinstance(v, str) for k, v in meta.items()
            ):
                raise ParseError(str(path), line_no, "meta must map strings to strings")
            if doc_id in seen:
                raise ValidationError(f"duplicate document id {doc_id!r}")
            seen.add(doc_id)
            try:
                docs.append(Document(id=doc_id, text=text, meta=meta))
            except ValidationError as exc:
                raise ParseError(str(path), line_no, str(exc)) from exc
    return docs


def write_corpus(docs: Iterable[Document], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for doc in docs:
            record: dict = {"id": doc.id, "text": doc.text}
            if doc.meta:
                record["meta"] = doc.meta
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# embeddings (binary + sidecar id manifest)
# ---------------------------------------------------------------------------


def _ids_path(path: Path) -> Path:
    return path.with_name(path.name + ".ids")


def _check_line_safe(value: str, what: str, tabs: bool = False) -> None:
    """Line-oriented formats cannot carry ids with record separators."""
    banned = "\t\n\r" if tabs else "\n\r"
    if any(ch in value for ch in banned):
        raise ValidationError(f"{what} {value!r} contains a separator character")


def write_embeddings(m: EmbeddingMatrix, path: str | Path) -> None:
    """Write header + raw float32 payload, ids in a sidecar manifest."""
    m.validate()
    for doc_id in m.ids:
        _check_line_safe(doc_id, "embedding id")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(EMBEDDING_MAGIC, EMBEDDING_VERSION, m.dim, len(m.ids)))
        fh.write(np.ascontiguousarray(m.data, dtype="<f4").tobytes())
    with _ids_path(path).open("w", encoding="utf-8") as fh:
        for doc_id in m.ids:
            fh.write(doc_id + "\n")


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, dim, rows = _HEADER.unpack_from(raw)
    if magic != EMBEDDING_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != EMBEDDING_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dim <= 0:
        raise FormatError(f"{path}: non-positive dim {dim}")
    expected = _HEADER.size + rows * dim * 4
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload is {len(raw) - _HEADER.size} bytes, "
            f"expected {rows * dim * 4} for {rows}x{dim}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(rows, dim)
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: non-finite payload value")
    ids_file = _ids_path(path)
    if not ids_file.exists():
        raise FormatError(f"{path}: missing id manifest {ids_file}")
    ids = ids_file.read_text(encoding="utf-8").splitlines()
    if len(ids) != rows:
        raise FormatError(
            f"{ids_file}: {len(ids)} ids for {rows} rows"
        )
    try:
        return EmbeddingMatrix(ids=ids, dim=int(dim), data=data.copy())
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# qrels / runs (tab-separated)
# ---------------------------------------------------------------------------


def load_qrels(path: str | Path) -> QRels:
    path = Path(path)
    entries: dict[str, dict[str, int]] = {}
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise ParseError(
                    str(path), line_no, f"expected 3 tab-separated fields, got {len(parts)}"
                )
            qid, did, rel_s = parts
            try:
                rel = int(rel_s)
            except ValueError as exc:
                raise ParseError(str(path), line_no, f"bad relevance {rel_s!r}") from exc
            if rel < 0:
                raise ParseError(str(path), line_no, f"negative relevance {rel}")
            per_query = entries.setdefault(qid, {})
            if did in per_query:
                raise ValidationError(f"duplicate qrels pair ({qid!r}, {did!r})")
            per_query[did] = rel
    return QRels(entries=entries)


def write_qrels(qrels: QRels, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for qid in qrels.entries:
            _check_line_safe(qid, "query id", tabs=True)
            for did, rel in qrels.entries[qid].items():
                _check_line_safe(did, "doc id", tabs=True)
                fh.write(f"{qid}\t{did}\t{rel}\n")


def load_run(path: str | Path) -> RetrievalRun:
    path = Path(path)
    entries: dict[str, list[tuple[str, float]]] = {}
    expected_rank: dict[str, int] = {}
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise ParseError(
                    str(path), line_no, f"expected 4 tab-separated fields, got {len(parts)}"
                )
            qid, rank_s, did, score_s = parts
            try:
                rank = int(rank_s)
                score = float(score_s)
            except ValueError as exc:
                raise ParseError(str(path), line_no, "bad rank or score") from exc
            if not math.isfinite(score):
                raise ParseError(str(path), line_no, f"non-finite score {score_s!r}")
            want = expected_rank.get(qid, 0) + 1
            if rank != want:
                raise ParseError(
                    str(path), line_no, f"rank {rank} for {qid!r}, expected {want}"
                )
            expected_rank[qid] = rank
            entries.setdefault(qid, []).append((did, score))
    return RetrievalRun(entries=entries)


def write_run(run: RetrievalRun, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for qid, ranking in run.entries.items():
            _check_line_safe(qid, "query id", tabs=True)
            for rank, (did, score) in enumerate(ranking, start=1):
                _check_line_safe(did, "doc id", tabs=True)
                fh.write(f"{qid}\t{rank}\t{did}\t{score!r}\n")


# ---------------------------------------------------------------------------
# triplets (one JSON record per line; type lives in fintext.retrieval)
# ---------------------------------------------------------------------------


def load_triplets(path: str | Path):
    from fintext.retrieval import TrainingTriplet

    path = Path(path)
    triplets = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            try:
                record = json.loads(line)
                triplets.append(
                    TrainingTriplet(
                        query_id=record["query_id"],
                        query_text=record["query_text"],
                        positives=list(record["positives"]),
                        negatives=list(record["negatives"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(str(path), line_no, f"bad triplet record: {exc}") from exc
    return triplets


def write_triplets(triplets, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for t in triplets:
            fh.write(
                json.dumps(
                    {
                        "query_id": t.query_id,
                        "query_text": t.query_text,
                        "positives": t.positives,
                        "negatives": t.negatives,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


# ---------------------------------------------------------------------------
# quality split
# ---------------------------------------------------------------------------


def build_quality_split(
    rated: Sequence[tuple[str, float]],
    high_thr: float = 8.0,
    low_thr: float = 4.0,
    per_class: int = 2000,
    test_fraction: float = 0.10,
    seed: int = 0,
) -> LabeledSplit:
    """Build a balanced high/low split from quality-rated texts.

    Thresholds are strict: an item is high-quality when its score is strictly
    above ``high_thr`` and low-quality when strictly below ``low_thr``.
    Exactly ``per_class`` items are sampled per class without replacement, then
    each class is split train/test at ``test_fraction``.
    """
    if not rated:
        raise CapacityError("rated list is empty")
    high = [text for text, score in rated if score > high_thr]
    low = [text for text, score in rated if score < low_thr]
    if len(high) < per_class or len(low) < per_class:
        raise CapacityError(
            f"need {per_class} per class, have {len(high)} high (score > {high_thr}) "
            f"and {len(low)} low (score < {low_thr})"
        )
    rng = random.Random(seed)
    n_test = round(per_class * test_fraction)
    train: list[tuple[str, str]] = []
    test: list[tuple[str, str]] = []
    for label, pool in (("high", high), ("low", low)):
        picked = rng.sample(pool, per_class)
        test.extend((text, label) for text in picked[:n_test])
        train.extend((text, label) for text in picked[n_test:])
    rng.shuffle(train)
    rng.shuffle(test)
    return LabeledSplit(train=train, test=test, seed=seed)
