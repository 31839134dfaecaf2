"""Corpus-to-embedding exporter for the fintext binary matrix format."""

__version__ = "0.1.0"

from embed_export.encoders import ExportConfig, HashingEncoder, build_encoder
from embed_export.export import ExportSummary, export_embeddings
from embed_export.format import read_corpus, write_matrix

__all__ = [
    "ExportConfig",
    "ExportSummary",
    "HashingEncoder",
    "build_encoder",
    "export_embeddings",
    "read_corpus",
    "write_matrix",
    "__version__",
]
