"""Financial-text toolkit: retrieval evaluation with sliding-window chunking,
contrastive training-pair construction, domain tokenizer training and merging,
and the embedding -> reduction -> clustering -> topic-description pipeline
with its label-free evaluation suite.
"""

__version__ = "0.1.0"

from fintext.corpusio import (
    Document,
    EmbeddingMatrix,
    LabeledSplit,
    QRels,
    RetrievalRun,
    build_quality_split,
    load_corpus,
    load_embeddings,
    load_qrels,
    load_run,
    write_corpus,
    write_embeddings,
    write_qrels,
    write_run,
)

__all__ = [
    "Document",
    "EmbeddingMatrix",
    "LabeledSplit",
    "QRels",
    "RetrievalRun",
    "build_quality_split",
    "load_corpus",
    "load_embeddings",
    "load_qrels",
    "load_run",
    "write_corpus",
    "write_embeddings",
    "write_qrels",
    "write_run",
    "__version__",
]
