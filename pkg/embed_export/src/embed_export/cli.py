"""CLI: corpus in, binary embedding matrix out."""

from __future__ import annotations

import argparse
import sys

from embed_export.encoders import ExportConfig
from embed_export.export import export_embeddings
from embed_export.format import CorpusError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed-export",
        description="Encode a corpus with a text-encoder model and write the "
        "fintext binary embedding format",
    )
    parser.add_argument("corpus", help="line-oriented corpus (id/text records)")
    parser.add_argument("output", help="output matrix path (ids go to <output>.ids)")
    parser.add_argument(
        "--model",
        default="hash:64",
        help="model identifier: hash:<dim> or a Hugging Face model id",
    )
    parser.add_argument("--pooling", choices=["cls", "mean"], default="mean")
    parser.add_argument("--max-seq-len", type=int, default=256)
    parser.add_argument("--batch-size", type=int, default=32)
    norm = parser.add_mutually_exclusive_group()
    norm.add_argument("--normalize", dest="normalize", action="store_true", default=True)
    norm.add_argument("--no-normalize", dest="normalize", action="store_false")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    cfg = ExportConfig(
        model=args.model,
        pooling=args.pooling,
        max_sequence_length=args.max_seq_len,
        batch_size=args.batch_size,
        normalize=args.normalize,
    )
    try:
        summary = export_embeddings(args.corpus, cfg, args.output)
    except (CorpusError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(
        f"wrote {summary.rows} rows x {summary.dim} dims to {summary.output} "
        f"({summary.truncated} truncated)",
        file=sys.stderr,
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
