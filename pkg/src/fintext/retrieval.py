"""Brute-force cosine retrieval, ranking metrics, hard-negative mining,
contrastive pair construction, judge-based pair filtering, and the reference
InfoNCE loss.

Similarity everywhere is cosine over L2-normalized copies of the input rows;
ties are broken by ascending doc-id so runs are reproducible across platforms.
"""

from __future__ import annotations

import math
import random
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from fintext.corpusio import EmbeddingMatrix, QRels, RetrievalRun
from fintext.errors import (
    MetricUndefinedError,
    ParameterError,
    ValidationError,
)
from fintext.judge import CHECK_ANSWERABILITY, CHECK_SUFFICIENCY, JudgeError, PairJudge


@dataclass
class TrainingTriplet:
    """Contrastive training record: query plus positive and negative doc ids."""

    query_id: str
    query_text: str
    positives: list[str]
    negatives: list[str]

    def __post_init__(self):
        overlap = set(self.positives) & set(self.negatives)
        if overlap:
            raise ValidationError(
                f"triplet {self.query_id!r}: positives and negatives overlap: {sorted(overlap)}"
            )


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.1
    pos_per_query: int = 2
    neg_per_query: int = 8
    max_mined_negatives: int = 50

    def __post_init__(self):
        if self.temperature <= 0:
            raise ParameterError(f"temperature must be > 0, got {self.temperature}")
        if self.pos_per_query < 1 or self.neg_per_query < 1:
            raise ParameterError("pos_per_query and neg_per_query must be >= 1")
        if self.max_mined_negatives < self.neg_per_query:
            raise ParameterError(
                f"max_mined_negatives {self.max_mined_negatives} < neg_per_query {self.neg_per_query}"
            )

    @classmethod
    def large(cls) -> "ContrastiveConfig":
        """Preset for higher-capacity retrievers: more negatives per query."""
        return cls(neg_per_query=15)


@dataclass
class SkippedQuery:
    query_id: str
    reason: str


@dataclass
class PairBuildResult:
    triplets: list[TrainingTriplet]
    skipped: list[SkippedQuery] = field(default_factory=list)


@dataclass
class FilterResult:
    triplets: list[TrainingTriplet]
    removed: list[SkippedQuery] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)


def _normalized_rows(m: EmbeddingMatrix) -> np.ndarray:
    """L2-normalize a copy of the matrix rows; reject zero-norm rows."""
    norms = np.linalg.norm(m.data.astype(np.float64), axis=1)
    zero = np.where(norms == 0.0)[0]
    if zero.size:
        raise ValidationError(f"zero-norm embedding row for id {m.ids[zero[0]]!r}")
    return m.data.astype(np.float64) / norms[:, None]


def cosine_topk(queries: EmbeddingMatrix, docs: EmbeddingMatrix, k: int) -> RetrievalRun:
    """Exhaustive cosine retrieval of the top-k docs per query.

    Equal scores are ordered by ascending doc-id. Scores are clipped to
    [-1, 1] to absorb floating-point spill.
    """
    if queries.dim != docs.dim:
        raise ValidationError(
            f"query dim {queries.dim} != doc dim {docs.dim}"
        )
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    qn = _normalized_rows(queries)
    dn = _normalized_rows(docs)
    sims = np.clip(qn @ dn.T, -1.0, 1.0)
    doc_ids = np.array(docs.ids)
    entries: dict[str, list[tuple[str, float]]] = {}
    for qi, qid in enumerate(queries.ids):
        order = np.lexsort((doc_ids, -sims[qi]))[:k]
        entries[qid] = [(str(doc_ids[j]), float(sims[qi, j])) for j in order]
    return RetrievalRun(entries=entries)


def _check_evaluable(run: RetrievalRun, qrels: QRels) -> None:
    for qid in run.entries:
        if not qrels.relevant(qid):
            raise MetricUndefinedError(
                f"query {qid!r} has no relevant documents; metric undefined"
            )


def recall_at_k(
    run: RetrievalRun, qrels: QRels, k: int
) -> tuple[dict[str, float], float]:
    """Per-query |relevant in top-k| / |relevant| and the unweighted mean."""
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    _check_evaluable(run, qrels)
    per_query: dict[str, float] = {}
    for qid, ranking in run.entries.items():
        relevant = set(qrels.relevant(qid))
        top = {did for did, _ in ranking[:k]}
        per_query[qid] = len(relevant & top) / len(relevant)
    mean = sum(per_query.values()) / len(per_query) if per_query else 0.0
    return per_query, mean


def ndcg_at_k(
    run: RetrievalRun, qrels: QRels, k: int = 10
) -> tuple[dict[str, float], float]:
    """nDCG@k with linear gains: DCG = sum rel_i / log2(i + 1), i from 1."""
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    _check_evaluable(run, qrels)
    per_query: dict[str, float] = {}
    for qid, ranking in run.entries.items():
        rels = qrels.entries.get(qid, {})
        dcg = 0.0
        for i, (did, _) in enumerate(ranking[:k], start=1):
            dcg += rels.get(did, 0) / math.log2(i + 1)
        ideal = sorted(qrels.relevant(qid).values(), reverse=True)
        idcg = sum(rel / math.log2(i + 1) for i, rel in enumerate(ideal[:k], start=1))
        per_query[qid] = dcg / idcg
    mean = sum(per_query.values()) / len(per_query) if per_query else 0.0
    return per_query, mean


def mine_hard_negatives(
    query_id: str,
    query_vector: np.ndarray,
    positive_ids: Sequence[str],
    docs: EmbeddingMatrix,
    max_n: int = 50,
) -> list[str]:
    """The ``max_n`` highest-cosine docs excluding every positive.

    Returns fewer ids when the corpus is small; an empty corpus after
    exclusion is not an error.
    """
    positives = set(positive_ids)
    missing = positives - set(docs.ids)
    if missing:
        raise ValidationError(
            f"query {query_id!r}: positives not in corpus: {sorted(missing)}"
        )
    q = np.asarray(query_vector, dtype=np.float64)
    if q.shape != (docs.dim,):
        raise ValidationError(
            f"query {query_id!r}: vector shape {q.shape} != ({docs.dim},)"
        )
    qnorm = np.linalg.norm(q)
    if qnorm == 0.0:
        raise ValidationError(f"zero-norm query vector for {query_id!r}")
    dn = _normalized_rows(docs)
    sims = dn @ (q / qnorm)
    doc_ids = np.array(docs.ids)
    order = np.lexsort((doc_ids, -sims))
    out: list[str] = []
    for j in order:
        did = str(doc_ids[j])
        if did in positives:
            continue
        out.append(did)
        if len(out) == max_n:
            break
    return out


def build_training_pairs(
    qrels: QRels,
    mined_negatives: Mapping[str, Sequence[str]],
    cfg: ContrastiveConfig,
    seed: int,
    query_texts: Mapping[str, str] | None = None,
) -> PairBuildResult:
    """Sample exact positive/negative counts per query, skipping short queries.

    Sampling is per-query deterministic (seeded by ``seed`` and the query id),
    so adding or removing other queries does not perturb a query's draw.
    Mined lists are truncated to ``cfg.max_mined_negatives`` and any mined id
    that is also a positive is discarded before sampling.
    """
    texts = query_texts or {}
    triplets: list[TrainingTriplet] = []
    skipped: list[SkippedQuery] = []
    for qid in sorted(qrels.entries):
        positives = sorted(qrels.relevant(qid))
        pool = list(mined_negatives.get(qid, ()))[: cfg.max_mined_negatives]
        pos_set = set(positives)
        negatives = [d for d in pool if d not in pos_set]
        if len(positives) < cfg.pos_per_query:
            skipped.append(
                SkippedQuery(qid, f"{len(positives)} positives < {cfg.pos_per_query}")
            )
            continue
        if len(negatives) < cfg.neg_per_query:
            skipped.append(
                SkippedQuery(qid, f"{len(negatives)} negatives < {cfg.neg_per_query}")
            )
            continue
        rng = random.Random(f"{seed}|{qid}")
        chosen_pos = rng.sample(positives, cfg.pos_per_query)
        chosen_neg = rng.sample(negatives, cfg.neg_per_query)
        triplets.append(
            TrainingTriplet(
                query_id=qid,
                query_text=texts.get(qid, ""),
                positives=chosen_pos,
                negatives=chosen_neg,
            )
        )
    return PairBuildResult(triplets=triplets, skipped=skipped)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValidationError("zero-norm vector in similarity computation")
    return float(np.dot(a, b) / (na * nb))


def infonce_loss(
    q: np.ndarray,
    positive: np.ndarray,
    negatives: Sequence[np.ndarray],
    temperature: float = 0.1,
) -> float:
    """Temperature-scaled softmax contrastive loss with one positive.

    Scores are cosine similarities. Computed via log-sum-exp so extreme
    temperature ratios do not overflow. Returns 0.0 (with a warning) when the
    negative list is empty, since the denominator degenerates to the positive
    term alone.
    """
    if temperature <= 0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    q = np.asarray(q, dtype=np.float64)
    positive = np.asarray(positive, dtype=np.float64)
    if positive.shape != q.shape:
        raise ValidationError("query and positive dims differ")
    if len(negatives) == 0:
        warnings.warn(
            "infonce_loss called with no negatives; returning 0.0", stacklevel=2
        )
        return 0.0
    s_pos = _cosine(q, positive) / temperature
    scores = [s_pos]
    for n in negatives:
        n = np.asarray(n, dtype=np.float64)
        if n.shape != q.shape:
            raise ValidationError("negative vector dim differs from query")
        scores.append(_cosine(q, n) / temperature)
    m = max(scores)
    lse = m + math.log(sum(math.exp(s - m) for s in scores))
    return max(lse - s_pos, 0.0)


def filter_pairs_with_judge(
    triplets: Sequence[TrainingTriplet],
    judge: PairJudge,
    doc_texts: Mapping[str, str],
    cfg: ContrastiveConfig,
    retries: int = 1,
) -> FilterResult:
    """Drop insufficient positives and answerable negatives per judge verdicts.

    A judge transport failure is retried; if it still fails the item is kept
    and an error line is recorded so the pipeline can continue. Triplets that
    fall below the configured positive/negative counts are removed and listed
    in the result.
    """
    kept: list[TrainingTriplet] = []
    removed: list[SkippedQuery] = []
    errors: list[str] = []

    def ask(query_text: str, doc_id: str, check: str) -> bool | None:
        if doc_id not in doc_texts:
            raise ValidationError(f"no text for doc {doc_id!r}")
        for attempt in range(retries + 1):
            try:
                return judge.judge_pair(query_text, doc_texts[doc_id], check).verdict
            except JudgeError as exc:
                if attempt == retries:
                    errors.append(f"{doc_id}/{check}: {exc}")
                    return None
        return None

    for t in triplets:
        positives = []
        for did in t.positives:
            verdict = ask(t.query_text, did, CHECK_SUFFICIENCY)
            if verdict is None or verdict:
                positives.append(did)
        negatives = []
        for did in t.negatives:
            verdict = ask(t.query_text, did, CHECK_ANSWERABILITY)
            if verdict is None or not verdict:
                negatives.append(did)
        if len(positives) < cfg.pos_per_query or len(negatives) < cfg.neg_per_query:
            removed.append(
                SkippedQuery(
                    t.query_id,
                    f"{len(positives)} positives / {len(negatives)} negatives "
                    f"after filtering < {cfg.pos_per_query}/{cfg.neg_per_query}",
                )
            )
            continue
        kept.append(
            TrainingTriplet(
                query_id=t.query_id,
                query_text=t.query_text,
                positives=positives,
                negatives=negatives,
            )
        )
    return FilterResult(triplets=kept, removed=removed, errors=errors)
