"""Corpus-to-embedding export: batched encoding, optional L2 normalization,
atomic write of the binary matrix in corpus order."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from embed_export.encoders import ExportConfig, build_encoder
from embed_export.format import read_corpus, write_matrix


@dataclass
class ExportSummary:
    rows: int
    dim: int
    truncated: int
    output: str
    manifest: str


def export_embeddings(
    corpus_path: str | Path, cfg: ExportConfig, output_path: str | Path
) -> ExportSummary:
    """Encode every corpus document, in order, into the binary matrix format.

    ``normalize=True`` scales each row to unit L2 norm. Documents longer than
    ``max_sequence_length`` tokens are truncated and counted in the summary.
    """
    records = read_corpus(corpus_path)
    encoder = build_encoder(cfg)
    ids = [doc_id for doc_id, _ in records]
    chunks = []
    for start in range(0, len(records), cfg.batch_size):
        batch = [text for _, text in records[start : start + cfg.batch_size]]
        chunks.append(encoder.encode_batch(batch))
    if chunks:
        vectors = np.vstack(chunks)
    else:
        vectors = np.zeros((0, encoder.dim), dtype=np.float64)
    if cfg.normalize and len(vectors):
        norms = np.linalg.norm(vectors, axis=1)
        zero = np.where(norms == 0.0)[0]
        if zero.size:
            raise ValueError(
                f"cannot normalize zero-norm vector for id {ids[zero[0]]!r}"
            )
        vectors = vectors / norms[:, None]
    output_path = Path(output_path)
    write_matrix(ids, vectors.astype(np.float32), output_path)
    return ExportSummary(
        rows=len(ids),
        dim=encoder.dim,
        truncated=encoder.truncated,
        output=str(output_path),
        manifest=str(output_path) + ".ids",
    )
