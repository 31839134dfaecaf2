"""End-to-end topic pipeline: reduce -> cluster -> topics -> evaluate.

Every stage writes its artifact to the output directory along with a stamp
recording a content address (hash of input bytes and stage parameters), so an
unchanged stage is skipped on re-runs. Serial runs with the same config and
seed produce byte-identical artifacts.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from fintext.cluster import ClusterAssignment, HdbscanConfig, hdbscan_cluster
from fintext.corpusio import (
    Document,
    EmbeddingMatrix,
    load_corpus,
    load_embeddings,
    write_embeddings,
)
from fintext.errors import FintextError, ValidationError
from fintext.judge import FileStubTopicJudge, HttpTopicJudge, TopicJudge
from fintext.reduce import UmapConfig, umap_reduce
from fintext.tokenize import (
    EntityDictionary,
    MergedTokenizer,
    SubwordVocabulary,
    basic_units,
    load_stopwords,
    merged_tokenize,
    merged_tokenize_with_spans,
    remove_stopwords,
)
from fintext.topics import (
    Topic,
    TopicEvalReport,
    class_term_counts,
    ctfidf,
    evaluate_topics,
    top_terms,
)


class PipelineStageError(FintextError):
    """A stage failed; completed artifacts stay on disk."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class TopicsStageConfig:
    top_k: int = 10
    dictionary: str | None = None
    vocabulary: str | None = None
    stopwords: str | None = None


@dataclass
class JudgeStageConfig:
    endpoint: str | None = None
    stub: str | None = None
    sample: int = 200
    concurrency: int = 4


@dataclass
class PipelineConfig:
    corpus: str
    embeddings: str
    out_dir: str
    seed: int = 0
    threads: int = 1
    umap: UmapConfig = field(default_factory=UmapConfig)
    hdbscan: HdbscanConfig = field(default_factory=HdbscanConfig)
    topics: TopicsStageConfig = field(default_factory=TopicsStageConfig)
    judge: JudgeStageConfig = field(default_factory=JudgeStageConfig)

    def __post_init__(self):
        if self.threads < 1:
            raise ValidationError("threads must be >= 1")

    def validate_inputs(self) -> None:
        for label, path in (("corpus", self.corpus), ("embeddings", self.embeddings)):
            if not Path(path).exists():
                raise ValidationError(f"{label} path does not exist: {path}")
        for label, path in (
            ("dictionary", self.topics.dictionary),
            ("vocabulary", self.topics.vocabulary),
            ("stopwords", self.topics.stopwords),
            ("judge stub", self.judge.stub),
        ):
            if path is not None and not Path(path).exists():
                raise ValidationError(f"{label} path does not exist: {path}")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        known = {"corpus", "embeddings", "out_dir", "seed", "threads",
                 "umap", "hdbscan", "topics", "judge"}
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"unknown config fields: {sorted(unknown)}")
        return cls(
            corpus=raw["corpus"],
            embeddings=raw["embeddings"],
            out_dir=raw["out_dir"],
            seed=int(raw.get("seed", 0)),
            threads=int(raw.get("threads", 1)),
            umap=UmapConfig(**raw.get("umap", {})),
            hdbscan=HdbscanConfig(**raw.get("hdbscan", {})),
            topics=TopicsStageConfig(**raw.get("topics", {})),
            judge=JudgeStageConfig(**raw.get("judge", {})),
        )

    @classmethod
    def from_json_file(cls, path: str | Path) -> "PipelineConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {path}: invalid JSON: {exc}") from exc
        return cls.from_dict(raw)


# ---------------------------------------------------------------------------
# artifact formats
# ---------------------------------------------------------------------------


def write_assignments(
    ids: list[str], assignment: ClusterAssignment, path: str | Path
) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for doc_id, label, prob in zip(
            ids, assignment.labels, assignment.probabilities
        ):
            fh.write(f"{doc_id}\t{int(label)}\t{float(prob):.6f}\n")


def load_assignments(path: str | Path) -> tuple[list[str], np.ndarray, np.ndarray]:
    ids: list[str] = []
    labels: list[int] = []
    probs: list[float] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        doc_id, label, prob = line.split("\t")
        ids.append(doc_id)
        labels.append(int(label))
        probs.append(float(prob))
    return ids, np.array(labels, dtype=np.int64), np.array(probs)


def write_topics_file(topics: list[Topic], path: str | Path) -> None:
    """One line per descriptor: label, size, rank, term, weight."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for topic in topics:
            for rank, (term, weight) in enumerate(topic.descriptors, start=1):
                fh.write(
                    f"{topic.label}\t{topic.doc_count}\t{rank}\t{term}\t{weight!r}\n"
                )


def load_topics_file(path: str | Path) -> list[Topic]:
    rows: dict[int, tuple[int, list[tuple[str, float]]]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        label_s, size_s, _rank, term, weight_s = line.split("\t")
        label = int(label_s)
        size, descriptors = rows.setdefault(label, (int(size_s), []))
        descriptors.append((term, float(weight_s)))
    return [
        Topic(label=label, descriptors=descriptors, doc_count=size)
        for label, (size, descriptors) in sorted(rows.items())
    ]


def write_report(report: TopicEvalReport, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


# ---------------------------------------------------------------------------
# tokenization used by the topics stage
# ---------------------------------------------------------------------------


def build_merged_tokenizer(cfg: TopicsStageConfig) -> MergedTokenizer | None:
    """Tokenizer from the configured artifact paths; None means plain units."""
    if cfg.dictionary is None and cfg.vocabulary is None and cfg.stopwords is None:
        return None
    dictionary = (
        EntityDictionary.load(cfg.dictionary)
        if cfg.dictionary
        else EntityDictionary([], source="empty")
    )
    vocabulary = (
        SubwordVocabulary.load(cfg.vocabulary)
        if cfg.vocabulary
        else SubwordVocabulary(tokens=[])
    )
    stopwords = load_stopwords(cfg.stopwords) if cfg.stopwords else set()
    return MergedTokenizer(dictionary=dictionary, subwords=vocabulary, stopwords=stopwords)


def tokenize_documents(
    docs: list[Document], tokenizer: MergedTokenizer | None
) -> list[list[str]]:
    out = []
    for doc in docs:
        if tokenizer is None:
            tokens = basic_units(doc.text)
        else:
            # degrade unk to the raw covered span: descriptor terms must be
            # real corpus words even when the subword vocabulary is sparse
            unk = tokenizer.subwords.unk_token
            tokens = [
                doc.text[start:end] if token == unk else token
                for token, start, end in merged_tokenize_with_spans(doc.text, tokenizer)
            ]
            tokens = remove_stopwords(tokens, tokenizer.stopwords)
        out.append(tokens)
    return out


# ---------------------------------------------------------------------------
# pipeline driver
# ---------------------------------------------------------------------------


def _address(parts: list[bytes]) -> str:
    digest = hashlib.sha256()
    for part in parts:
        digest.update(hashlib.sha256(part).digest())
    return digest.hexdigest()


class _StageCache:
    def __init__(self, out_dir: Path):
        self.stamp_dir = out_dir / "stamps"
        self.stamp_dir.mkdir(parents=True, exist_ok=True)

    def fresh(self, stage: str, address: str, artifacts: list[Path]) -> bool:
        stamp = self.stamp_dir / f"{stage}.json"
        if not stamp.exists() or not all(p.exists() for p in artifacts):
            return False
        try:
            return json.loads(stamp.read_text())["address"] == address
        except (json.JSONDecodeError, KeyError):
            return False

    def record(self, stage: str, address: str) -> None:
        (self.stamp_dir / f"{stage}.json").write_text(
            json.dumps({"address": address}) + "\n"
        )


def _topic_judge(cfg: JudgeStageConfig) -> TopicJudge | None:
    if cfg.stub:
        return FileStubTopicJudge.from_file(cfg.stub)
    if cfg.endpoint:
        return HttpTopicJudge(cfg.endpoint)
    return None


def run_pipeline(cfg: PipelineConfig) -> tuple[TopicEvalReport, dict[str, Path]]:
    """Execute reduce -> cluster -> topics -> evaluate, persisting artifacts.

    Raises PipelineStageError naming the failing stage; artifacts from stages
    that already completed remain on disk.
    """
    cfg.validate_inputs()
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache = _StageCache(out_dir)
    artifacts = {
        "reduced": out_dir / "reduced.emb",
        "assignments": out_dir / "assignments.tsv",
        "topics": out_dir / "topics.tsv",
        "report": out_dir / "report.json",
    }

    docs = load_corpus(cfg.corpus)
    embeddings = load_embeddings(cfg.embeddings)
    if [d.id for d in docs] != embeddings.ids:
        raise ValidationError("corpus ids and embedding ids do not align")

    emb_bytes = Path(cfg.embeddings).read_bytes()
    corpus_bytes = Path(cfg.corpus).read_bytes()
    umap_cfg = UmapConfig(**{**asdict(cfg.umap), "seed": cfg.seed})

    # --- reduce ---
    stage = "reduce"
    reduce_addr = _address(
        [
            emb_bytes,
            json.dumps(asdict(umap_cfg), sort_keys=True).encode(),
            b"parallel" if cfg.threads > 1 else b"serial",
        ]
    )
    try:
        if cache.fresh(stage, reduce_addr, [artifacts["reduced"]]):
            reduced = load_embeddings(artifacts["reduced"])
        else:
            reduced = umap_reduce(embeddings, umap_cfg, parallel=cfg.threads > 1)
            write_embeddings(reduced, artifacts["reduced"])
            cache.record(stage, reduce_addr)
    except FintextError as exc:
        raise PipelineStageError(stage, exc) from exc

    # --- cluster ---
    stage = "cluster"
    cluster_addr = _address(
        [
            artifacts["reduced"].read_bytes(),
            json.dumps(asdict(cfg.hdbscan), sort_keys=True).encode(),
        ]
    )
    try:
        if cache.fresh(stage, cluster_addr, [artifacts["assignments"]]):
            _, labels, probs = load_assignments(artifacts["assignments"])
            assignment = ClusterAssignment(
                labels=labels, probabilities=probs, stabilities={}
            )
        else:
            assignment = hdbscan_cluster(reduced, cfg.hdbscan, metric="euclidean")
            write_assignments(reduced.ids, assignment, artifacts["assignments"])
            cache.record(stage, cluster_addr)
    except FintextError as exc:
        raise PipelineStageError(stage, exc) from exc

    # --- topics ---
    stage = "topics"
    topics_addr = _address(
        [
            artifacts["assignments"].read_bytes(),
            corpus_bytes,
            json.dumps(asdict(cfg.topics), sort_keys=True).encode(),
        ]
    )
    try:
        if cache.fresh(stage, topics_addr, [artifacts["topics"]]):
            topics = load_topics_file(artifacts["topics"])
        else:
            tokenizer = build_merged_tokenizer(cfg.topics)
            token_lists = tokenize_documents(docs, tokenizer)
            counts = class_term_counts(token_lists, assignment.labels)
            weights = ctfidf(counts)
            doc_counts = {
                int(u): int(np.sum(assignment.labels == u))
                for u in set(assignment.labels.tolist())
                if u != -1
            }
            topics = top_terms(weights, k=cfg.topics.top_k, doc_counts=doc_counts)
            write_topics_file(topics, artifacts["topics"])
            cache.record(stage, topics_addr)
    except FintextError as exc:
        raise PipelineStageError(stage, exc) from exc

    # --- evaluate ---
    stage = "evaluate"
    eval_addr = _address(
        [
            artifacts["reduced"].read_bytes(),
            artifacts["assignments"].read_bytes(),
            artifacts["topics"].read_bytes(),
            json.dumps(asdict(cfg.judge), sort_keys=True).encode(),
            str(cfg.seed).encode(),
        ]
    )
    try:
        if cache.fresh(stage, eval_addr, [artifacts["report"]]):
            report = _load_report(artifacts["report"])
        else:
            report = evaluate_topics(
                reduced,
                assignment.labels,
                topics,
                diversity_k=cfg.topics.top_k,
                judge=_topic_judge(cfg.judge),
                judge_sample=cfg.judge.sample,
                seed=cfg.seed,
                judge_concurrency=cfg.judge.concurrency,
            )
            write_report(report, artifacts["report"])
            cache.record(stage, eval_addr)
    except FintextError as exc:
        raise PipelineStageError(stage, exc) from exc

    return report, artifacts


def _load_report(path: Path) -> TopicEvalReport:
    raw = json.loads(path.read_text(encoding="utf-8"))
    judge_scores = None
    if "judge_scores" in raw:
        from fintext.topics import JudgeScores

        judge_scores = JudgeScores(**raw.pop("judge_scores"))
    return TopicEvalReport(**raw, judge_scores=judge_scores)


# ---------------------------------------------------------------------------
# tokenizer comparison
# ---------------------------------------------------------------------------


@dataclass
class TokenizerDiff:
    entries: list[tuple[str, list[str], list[str]]]
    total: int
    by_length: dict[int, int]


def tokenizer_diff(
    tokenizer_a: MergedTokenizer,
    tokenizer_b: MergedTokenizer,
    terms: list[str],
) -> TokenizerDiff:
    """Segment every term with both tokenizers and count disagreements,
    overall and grouped by term character length."""
    entries = []
    by_length: dict[int, int] = {}
    for term in terms:
        seg_a = merged_tokenize(term, tokenizer_a)
        seg_b = merged_tokenize(term, tokenizer_b)
        if seg_a != seg_b:
            entries.append((term, seg_a, seg_b))
            by_length[len(term)] = by_length.get(len(term), 0) + 1
    return TokenizerDiff(entries=entries, total=len(entries), by_length=by_length)
