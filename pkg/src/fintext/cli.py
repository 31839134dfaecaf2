"""Command-line entry point.

Data goes to stdout, diagnostics to stderr; every subcommand exits 0 on
success and nonzero on failure. Judge endpoint credentials are read from the
FINTEXT_JUDGE_TOKEN environment variable.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from fintext import corpusio, pipeline, retrieval, tokenize
from fintext.chunking import chunk_tokens
from fintext.cluster import HdbscanConfig, hdbscan_cluster
from fintext.corpusio import Document
from fintext.errors import FintextError
from fintext.judge import (
    FileStubTopicJudge,
    HttpPairJudge,
    HttpTopicJudge,
    StubPairJudge,
)
from fintext.reduce import UmapConfig, umap_reduce
from fintext.tokenize import (
    EntityDictionary,
    MergedTokenizer,
    SubwordVocabulary,
    basic_units,
    load_stopwords,
    merged_tokenize,
    remove_stopwords,
    tokens_with_offsets,
    train_wordpiece_expansion,
)
from fintext.topics import evaluate_topics


def _load_tokenizer(
    dict_path: str | None, vocab_path: str | None, stop_path: str | None
) -> MergedTokenizer | None:
    if not dict_path and not vocab_path and not stop_path:
        return None
    dictionary = (
        EntityDictionary.load(dict_path) if dict_path else EntityDictionary([], source="empty")
    )
    vocab = SubwordVocabulary.load(vocab_path) if vocab_path else SubwordVocabulary(tokens=[])
    stopwords = load_stopwords(stop_path) if stop_path else set()
    return MergedTokenizer(dictionary=dictionary, subwords=vocab, stopwords=stopwords)


def _seed(args) -> int:
    return args.seed if args.seed is not None else 0


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------


def cmd_chunk(args) -> int:
    docs = corpusio.load_corpus(args.input)
    out_docs = []
    for doc in docs:
        units = tokens_with_offsets(doc.text)
        chunks = chunk_tokens(
            doc.id, [u for u, _, _ in units], window=args.window, overlap=args.overlap
        )
        for chunk in chunks:
            if chunk.token_end == chunk.token_start:
                continue
            start_char = units[chunk.token_start][1]
            end_char = units[chunk.token_end - 1][2]
            out_docs.append(
                Document(
                    id=chunk.chunk_id,
                    text=doc.text[start_char:end_char],
                    meta={"doc_id": doc.id, "index": str(chunk.index)},
                )
            )
    corpusio.write_corpus(out_docs, args.output)
    print(f"wrote {len(out_docs)} chunks from {len(docs)} documents", file=sys.stderr)
    return 0


def cmd_retrieve_eval(args) -> int:
    qrels = corpusio.load_qrels(args.qrels)
    if args.run:
        run = corpusio.load_run(args.run)
    else:
        if not (args.queries and args.docs):
            print("need --run or both --queries and --docs", file=sys.stderr)
            return 2
        queries = corpusio.load_embeddings(args.queries)
        docs = corpusio.load_embeddings(args.docs)
        run = retrieval.cosine_topk(queries, docs, args.topk)
        if args.run_out:
            corpusio.write_run(run, args.run_out)
    rows: list[tuple[str, str, float]] = []
    means: list[tuple[str, float]] = []
    for k in args.recall_k:
        per_query, mean = retrieval.recall_at_k(run, qrels, k)
        rows.extend((f"recall@{k}", qid, val) for qid, val in sorted(per_query.items()))
        means.append((f"recall@{k}", mean))
    for k in args.ndcg_k:
        per_query, mean = retrieval.ndcg_at_k(run, qrels, k)
        rows.extend((f"ndcg@{k}", qid, val) for qid, val in sorted(per_query.items()))
        means.append((f"ndcg@{k}", mean))
    if args.format == "tsv":
        for metric, qid, val in rows:
            print(f"{metric}\t{qid}\t{val:.6f}")
        for metric, mean in means:
            print(f"{metric}\tMEAN\t{mean:.6f}")
    else:
        width = max(len(m) for m, _ in means)
        print(f"{'metric':<{width}}  mean over {len(run.entries)} queries")
        for metric, mean in means:
            print(f"{metric:<{width}}  {mean:.4f}")
    return 0


def cmd_mine_negatives(args) -> int:
    queries = corpusio.load_embeddings(args.queries)
    docs = corpusio.load_embeddings(args.docs)
    qrels = corpusio.load_qrels(args.qrels)
    with Path(args.output).open("w", encoding="utf-8") as fh:
        for qid in sorted(qrels.entries):
            if qid not in queries.ids:
                print(f"skip {qid}: no query vector", file=sys.stderr)
                continue
            positives = sorted(qrels.relevant(qid))
            negatives = retrieval.mine_hard_negatives(
                qid, queries.row(qid), positives, docs, max_n=args.max_n
            )
            fh.write(
                json.dumps({"query_id": qid, "negatives": negatives}, ensure_ascii=False)
                + "\n"
            )
    return 0


def _load_mined(path: str) -> dict[str, list[str]]:
    mined: dict[str, list[str]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        record = json.loads(line)
        mined[record["query_id"]] = list(record["negatives"])
    return mined


def cmd_build_pairs(args) -> int:
    qrels = corpusio.load_qrels(args.qrels)
    mined = _load_mined(args.mined)
    texts = {}
    if args.query_corpus:
        texts = {d.id: d.text for d in corpusio.load_corpus(args.query_corpus)}
    if args.preset == "large":
        cfg = retrieval.ContrastiveConfig.large()
    else:
        cfg = retrieval.ContrastiveConfig(
            pos_per_query=args.pos,
            neg_per_query=args.neg,
            max_mined_negatives=args.max_mined,
        )
    result = retrieval.build_training_pairs(
        qrels, mined, cfg, seed=_seed(args), query_texts=texts
    )
    corpusio.write_triplets(result.triplets, args.output)
    for skip in result.skipped:
        print(f"skipped {skip.query_id}: {skip.reason}", file=sys.stderr)
    print(
        f"wrote {len(result.triplets)} triplets, skipped {len(result.skipped)}",
        file=sys.stderr,
    )
    return 0


def cmd_filter_pairs(args) -> int:
    triplets = corpusio.load_triplets(args.pairs)
    doc_texts = {d.id: d.text for d in corpusio.load_corpus(args.corpus)}
    if args.judge_stub:
        judge = StubPairJudge.from_file(args.judge_stub)
    elif args.judge_endpoint:
        judge = HttpPairJudge(args.judge_endpoint)
    else:
        print("need --judge-stub or --judge-endpoint", file=sys.stderr)
        return 2
    cfg = retrieval.ContrastiveConfig(
        pos_per_query=args.pos, neg_per_query=args.neg
    )
    result = retrieval.filter_pairs_with_judge(triplets, judge, doc_texts, cfg)
    corpusio.write_triplets(result.triplets, args.output)
    for removal in result.removed:
        print(f"removed {removal.query_id}: {removal.reason}", file=sys.stderr)
    for err in result.errors:
        print(f"judge error: {err}", file=sys.stderr)
    return 0


def cmd_train_vocab(args) -> int:
    docs = corpusio.load_corpus(args.corpus)
    stream = [unit for doc in docs for unit in basic_units(doc.text)]
    if args.base:
        base = SubwordVocabulary.load(args.base)
    else:
        chars = sorted({ch for unit in stream for ch in unit})
        base = SubwordVocabulary(
            tokens=chars + [tokenize.CONTINUATION + c for c in chars]
        )
    vocab = train_wordpiece_expansion(
        stream, base, new_tokens=args.new_tokens, min_freq=args.min_freq
    )
    vocab.save(args.output)
    print(
        f"vocabulary: {vocab.base_size} base + "
        f"{vocab.expanded_size - vocab.base_size} new tokens",
        file=sys.stderr,
    )
    return 0


def cmd_tokenize(args) -> int:
    tokenizer = _load_tokenizer(args.dict, args.vocab, args.stopwords)
    with open(args.input, "r", encoding="utf-8") as fin, open(
        args.output, "w", encoding="utf-8"
    ) as fout:
        for line in fin:
            text = line.rstrip("\n")
            if tokenizer is None:
                tokens = basic_units(text)
            else:
                tokens = merged_tokenize(text, tokenizer)
                tokens = remove_stopwords(tokens, tokenizer.stopwords)
            fout.write(" ".join(tokens) + "\n")
    return 0


def cmd_tokenizer_diff(args) -> int:
    tok_a = _load_tokenizer(args.a_dict, args.a_vocab, args.a_stopwords)
    tok_b = _load_tokenizer(args.b_dict, args.b_vocab, args.b_stopwords)
    if tok_a is None or tok_b is None:
        print("both tokenizers need at least one artifact flag", file=sys.stderr)
        return 2
    terms = [
        line
        for line in Path(args.terms).read_text(encoding="utf-8").splitlines()
        if line
    ]
    diff = pipeline.tokenizer_diff(tok_a, tok_b, terms)
    print(f"total\t{diff.total}")
    for length in sorted(diff.by_length):
        print(f"length\t{length}\t{diff.by_length[length]}")
    if args.show_terms:
        for term, seg_a, seg_b in diff.entries:
            print(f"term\t{term}\t{' '.join(seg_a)}\t{' '.join(seg_b)}")
    return 0


def cmd_reduce(args) -> int:
    matrix = corpusio.load_embeddings(args.input)
    cfg = UmapConfig(
        n_neighbors=args.n_neighbors,
        out_dim=args.out_dim,
        min_dist=args.min_dist,
        n_epochs=args.epochs,
        negative_sample_rate=args.negative_sample_rate,
        seed=_seed(args),
        metric=args.metric,
    )
    reduced = umap_reduce(matrix, cfg, parallel=(args.threads or 1) > 1)
    corpusio.write_embeddings(reduced, args.output)
    print(f"reduced {len(matrix)} points to {cfg.out_dim} dims", file=sys.stderr)
    return 0


def cmd_cluster(args) -> int:
    matrix = corpusio.load_embeddings(args.input)
    cfg = HdbscanConfig(
        min_cluster_size=args.min_cluster_size, min_samples=args.min_samples
    )
    assignment = hdbscan_cluster(matrix, cfg, metric="euclidean")
    pipeline.write_assignments(matrix.ids, assignment, args.output)
    print(
        f"{assignment.n_clusters} clusters, "
        f"{int(np.sum(assignment.labels == -1))} outliers",
        file=sys.stderr,
    )
    return 0


def cmd_topics(args) -> int:
    from fintext.topics import class_term_counts, ctfidf, top_terms

    docs = corpusio.load_corpus(args.corpus)
    ids, labels, _ = pipeline.load_assignments(args.assignments)
    if [d.id for d in docs] != ids:
        print("corpus ids and assignment ids do not align", file=sys.stderr)
        return 1
    tokenizer = _load_tokenizer(args.dict, args.vocab, args.stopwords)
    token_lists = pipeline.tokenize_documents(docs, tokenizer)
    counts = class_term_counts(token_lists, labels)
    weights = ctfidf(counts)
    doc_counts = {
        int(u): int(np.sum(labels == u)) for u in set(labels.tolist()) if u != -1
    }
    topics = top_terms(weights, k=args.top_k, doc_counts=doc_counts)
    pipeline.write_topics_file(topics, args.output)
    print(f"wrote {len(topics)} topics", file=sys.stderr)
    return 0


def cmd_eval_topics(args) -> int:
    matrix = corpusio.load_embeddings(args.embeddings)
    ids, labels, _ = pipeline.load_assignments(args.assignments)
    if matrix.ids != ids:
        print("embedding ids and assignment ids do not align", file=sys.stderr)
        return 1
    topics = pipeline.load_topics_file(args.topics)
    judge = None
    if args.judge_stub:
        judge = FileStubTopicJudge.from_file(args.judge_stub)
    elif args.judge_endpoint:
        judge = HttpTopicJudge(args.judge_endpoint)
    report = evaluate_topics(
        matrix,
        labels,
        topics,
        diversity_k=args.top_k,
        judge=judge,
        judge_sample=args.judge_sample,
        seed=_seed(args),
        judge_concurrency=args.judge_concurrency,
    )
    pipeline.write_report(report, args.output)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_run_pipeline(args) -> int:
    cfg = pipeline.PipelineConfig.from_json_file(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    report, artifacts = pipeline.run_pipeline(cfg)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    for name, path in artifacts.items():
        print(f"artifact {name}: {path}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fintext",
        description="Financial-text retrieval evaluation and topic modeling toolkit",
    )
    parser.add_argument("--seed", type=int, default=None, help="global random seed")
    parser.add_argument("--threads", type=int, default=None, help="parallelism degree")
    parser.add_argument("--config", default=None, help="pipeline config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("chunk", help="split long documents into token windows")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--window", type=int, default=400)
    p.add_argument("--overlap", type=int, default=20)
    p.set_defaults(func=cmd_chunk)

    p = sub.add_parser("retrieve-eval", help="run retrieval and/or score a run file")
    p.add_argument("--qrels", required=True)
    p.add_argument("--run")
    p.add_argument("--queries")
    p.add_argument("--docs")
    p.add_argument("--topk", type=int, default=100)
    p.add_argument("--run-out")
    p.add_argument("--recall-k", type=_int_list, default=[1, 3, 5, 10, 20])
    p.add_argument("--ndcg-k", type=_int_list, default=[10])
    p.add_argument("--format", choices=["tsv", "table"], default="tsv")
    p.set_defaults(func=cmd_retrieve_eval)

    p = sub.add_parser("mine-negatives", help="mine hard negatives per query")
    p.add_argument("--queries", required=True)
    p.add_argument("--docs", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--max-n", type=int, default=50)
    p.add_argument("output")
    p.set_defaults(func=cmd_mine_negatives)

    p = sub.add_parser("build-pairs", help="sample contrastive training triplets")
    p.add_argument("--qrels", required=True)
    p.add_argument("--mined", required=True)
    p.add_argument("--query-corpus")
    p.add_argument("--pos", type=int, default=2)
    p.add_argument("--neg", type=int, default=8)
    p.add_argument("--max-mined", type=int, default=50)
    p.add_argument("--preset", choices=["base", "large"], default="base")
    p.add_argument("output")
    p.set_defaults(func=cmd_build_pairs)

    p = sub.add_parser("filter-pairs", help="judge-based triplet filtering")
    p.add_argument("--pairs", required=True)
    p.add_argument("--corpus", required=True, help="doc-id to text corpus")
    p.add_argument("--judge-endpoint")
    p.add_argument("--judge-stub")
    p.add_argument("--pos", type=int, default=2)
    p.add_argument("--neg", type=int, default=8)
    p.add_argument("output")
    p.set_defaults(func=cmd_filter_pairs)

    p = sub.add_parser("train-vocab", help="expand a subword vocabulary")
    p.add_argument("--corpus", required=True)
    p.add_argument("--base")
    p.add_argument("--new-tokens", type=int, default=14000)
    p.add_argument("--min-freq", type=int, default=2)
    p.add_argument("output")
    p.set_defaults(func=cmd_train_vocab)

    p = sub.add_parser("tokenize", help="segment text lines")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--dict")
    p.add_argument("--vocab")
    p.add_argument("--stopwords")
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("tokenizer-diff", help="compare two tokenizers on a term list")
    p.add_argument("--terms", required=True)
    p.add_argument("--a-dict")
    p.add_argument("--a-vocab")
    p.add_argument("--a-stopwords")
    p.add_argument("--b-dict")
    p.add_argument("--b-vocab")
    p.add_argument("--b-stopwords")
    p.add_argument("--show-terms", action="store_true")
    p.set_defaults(func=cmd_tokenizer_diff)

    p = sub.add_parser("reduce", help="reduce embeddings for topic modeling")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--n-neighbors", type=int, default=15)
    p.add_argument("--out-dim", type=int, default=32)
    p.add_argument("--min-dist", type=float, default=0.0)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--negative-sample-rate", type=int, default=5)
    p.add_argument("--metric", choices=["cosine", "euclidean"], default="cosine")
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("cluster", help="density clustering of reduced embeddings")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--min-cluster-size", type=int, default=2)
    p.add_argument("--min-samples", type=int, default=1)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("topics", help="descriptor terms per cluster")
    p.add_argument("--corpus", required=True)
    p.add_argument("--assignments", required=True)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--dict")
    p.add_argument("--vocab")
    p.add_argument("--stopwords")
    p.add_argument("output")
    p.set_defaults(func=cmd_topics)

    p = sub.add_parser("eval-topics", help="label-free topic evaluation report")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--assignments", required=True)
    p.add_argument("--topics", required=True)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--judge-endpoint")
    p.add_argument("--judge-stub")
    p.add_argument("--judge-sample", type=int, default=200)
    p.add_argument("--judge-concurrency", type=int, default=4)
    p.add_argument("output")
    p.set_defaults(func=cmd_eval_topics)

    p = sub.add_parser("run-pipeline", help="reduce -> cluster -> topics -> evaluate")
    p.set_defaults(func=cmd_run_pipeline)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "run-pipeline" and not args.config:
        print("run-pipeline requires --config", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except FintextError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
