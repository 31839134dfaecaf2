"""Topic descriptors via class-based TF-IDF and the label-free evaluation
suite: clustering quality indices, topic diversity, outlier statistics, and
subjective topic scoring through an external judge.

Clustering indices are computed in whatever space the labels were produced
in (the reduced space in the standard pipeline), always excluding outliers.
"""

from __future__ import annotations

import json
import math
import random
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from fintext.cluster import OUTLIER
from fintext.errors import (
    JudgeError,
    JudgeFailureError,
    MetricUndefinedError,
    ValidationError,
)
from fintext.judge import TopicJudge


@dataclass
class Topic:
    label: int
    descriptors: list[tuple[str, float]]  # sorted by descending weight
    doc_count: int = 0

    def __post_init__(self):
        weights = [w for _, w in self.descriptors]
        if any(weights[i] < weights[i + 1] for i in range(len(weights) - 1)):
            raise ValidationError(
                f"topic {self.label}: descriptors must be sorted by descending weight"
            )

    @property
    def terms(self) -> list[str]:
        return [t for t, _ in self.descriptors]


@dataclass
class JudgeScores:
    coherence: float
    conciseness: float
    informativity: float
    scored: int = 0
    skipped: int = 0


class TopicStats(NamedTuple):
    count: int
    avg: float
    sd: float


@dataclass
class TopicEvalReport:
    silhouette: float
    calinski_harabasz: float
    davies_bouldin: float
    topic_diversity: float
    outlier_rate: float
    topic_count: int
    avg_docs_per_topic: float
    sd_docs_per_topic: float
    judge_scores: JudgeScores | None = None

    def to_dict(self) -> dict:
        out = {
            "silhouette": self.silhouette,
            "calinski_harabasz": self.calinski_harabasz,
            "davies_bouldin": self.davies_bouldin,
            "topic_diversity": self.topic_diversity,
            "outlier_rate": self.outlier_rate,
            "topic_count": self.topic_count,
            "avg_docs_per_topic": self.avg_docs_per_topic,
            "sd_docs_per_topic": self.sd_docs_per_topic,
        }
        if self.judge_scores is not None:
            out["judge_scores"] = {
                "coherence": self.judge_scores.coherence,
                "conciseness": self.judge_scores.conciseness,
                "informativity": self.judge_scores.informativity,
                "scored": self.judge_scores.scored,
                "skipped": self.judge_scores.skipped,
            }
        return out


# ---------------------------------------------------------------------------
# class-based TF-IDF
# ---------------------------------------------------------------------------


def class_term_counts(
    token_lists: Sequence[Sequence[str]],
    labels: Sequence[int],
    include_outliers: bool = False,
) -> dict[int, dict[str, int]]:
    """Aggregate token counts per cluster label."""
    if len(token_lists) != len(labels):
        raise ValidationError("token lists and labels must align")
    counts: dict[int, dict[str, int]] = {}
    for tokens, label in zip(token_lists, labels):
        label = int(label)
        if label == OUTLIER and not include_outliers:
            continue
        per = counts.setdefault(label, {})
        for token in tokens:
            per[token] = per.get(token, 0) + 1
    return counts


def ctfidf(
    counts: Mapping[int, Mapping[str, int]],
    n_classes: int | None = None,
) -> dict[int, dict[str, float]]:
    """Per-class term weights ``tf(t, c) * ln(1 + A / f(t))``.

    ``tf`` is the within-class frequency ratio, ``f(t)`` the total corpus
    frequency of the term, and ``A`` the average total term count per class.
    Empty classes yield zero vectors.
    """
    n_classes = n_classes if n_classes is not None else len(counts)
    if n_classes <= 0:
        raise ValidationError("need at least one class")
    total_freq: dict[str, int] = {}
    grand_total = 0
    for per in counts.values():
        for term, count in per.items():
            if count < 0:
                raise ValidationError(f"negative count for term {term!r}")
            total_freq[term] = total_freq.get(term, 0) + count
            grand_total += count
    if grand_total == 0:
        raise ValidationError("all classes are empty")
    avg_per_class = grand_total / n_classes
    weights: dict[int, dict[str, float]] = {}
    for label, per in counts.items():
        class_total = sum(per.values())
        if class_total == 0:
            weights[label] = {}
            continue
        weights[label] = {
            term: (count / class_total) * math.log(1.0 + avg_per_class / total_freq[term])
            for term, count in per.items()
            if count > 0
        }
    return weights


def top_terms(
    weights: Mapping[int, Mapping[str, float]],
    k: int = 10,
    doc_counts: Mapping[int, int] | None = None,
) -> list[Topic]:
    """Top-k descriptor terms per class, weight ties broken lexicographically."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    doc_counts = doc_counts or {}
    topics = []
    for label in sorted(weights):
        ranked = sorted(weights[label].items(), key=lambda kv: (-kv[1], kv[0]))[:k]
        topics.append(
            Topic(label=label, descriptors=ranked, doc_count=int(doc_counts.get(label, 0)))
        )
    return topics


# ---------------------------------------------------------------------------
# clustering quality indices (outliers excluded)
# ---------------------------------------------------------------------------


def _clustered_points(X, labels) -> tuple[np.ndarray, np.ndarray, list[int]]:
    arr = np.asarray(getattr(X, "data", X), dtype=np.float64)
    labels = np.asarray(labels)
    mask = labels != OUTLIER
    kept_labels = labels[mask]
    uniques = sorted(set(int(v) for v in kept_labels))
    if len(uniques) < 2:
        raise MetricUndefinedError(
            f"{len(uniques)} cluster(s) after excluding outliers; need >= 2"
        )
    return arr[mask], kept_labels, uniques


def silhouette(X, labels) -> float:
    """Mean of (b - a) / max(a, b); singleton clusters contribute 0."""
    points, labels, uniques = _clustered_points(X, labels)
    n = points.shape[0]
    # direct pairwise form: the squared-norm expansion loses ~1e-9 accuracy
    dist = cdist(points, points)
    onehot = np.stack([labels == u for u in uniques], axis=1).astype(np.float64)
    sizes = onehot.sum(axis=0)
    cluster_sums = dist @ onehot  # (n, T) total distance to each cluster
    own = np.array([uniques.index(int(v)) for v in labels])
    scores = np.zeros(n)
    for i in range(n):
        size_own = sizes[own[i]]
        if size_own <= 1:
            continue  # convention: singleton silhouette is 0
        a = cluster_sums[i, own[i]] / (size_own - 1)
        other = [
            cluster_sums[i, t] / sizes[t]
            for t in range(len(uniques))
            if t != own[i]
        ]
        b = min(other)
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(np.mean(scores))


def calinski_harabasz(X, labels) -> float:
    """Between-cluster dispersion over within-cluster dispersion, each
    normalized by its degrees of freedom."""
    points, labels, uniques = _clustered_points(X, labels)
    n = points.shape[0]
    t = len(uniques)
    grand = points.mean(axis=0)
    between = 0.0
    within = 0.0
    for u in uniques:
        cluster = points[labels == u]
        centroid = cluster.mean(axis=0)
        between += cluster.shape[0] * float(np.sum((centroid - grand) ** 2))
        within += float(np.sum((cluster - centroid) ** 2))
    if within == 0.0:
        return np.inf
    return (between / (t - 1)) / (within / (n - t))


def davies_bouldin(X, labels) -> float:
    """Mean over clusters of the worst (s_i + s_j) / d_ij ratio."""
    points, labels, uniques = _clustered_points(X, labels)
    centroids = np.stack([points[labels == u].mean(axis=0) for u in uniques])
    scatters = np.array(
        [
            float(np.mean(np.linalg.norm(points[labels == u] - centroids[t], axis=1)))
            for t, u in enumerate(uniques)
        ]
    )
    t = len(uniques)
    worst = np.zeros(t)
    for i in range(t):
        ratios = []
        for j in range(t):
            if i == j:
                continue
            gap = float(np.linalg.norm(centroids[i] - centroids[j]))
            ratios.append(np.inf if gap == 0.0 else (scatters[i] + scatters[j]) / gap)
        worst[i] = max(ratios)
    return float(np.mean(worst))


# ---------------------------------------------------------------------------
# diversity and outlier statistics
# ---------------------------------------------------------------------------


def topic_diversity(topics: Sequence[Topic], k: int = 10) -> float:
    """Unique terms among all top-k descriptor lists over total terms
    collected; truncated lists count by their actual length."""
    if not topics:
        raise ValidationError("no topics given")
    seen: set[str] = set()
    total = 0
    for topic in topics:
        if not topic.descriptors:
            raise ValidationError(f"topic {topic.label} has no descriptors")
        terms = topic.terms[:k]
        seen.update(terms)
        total += len(terms)
    return len(seen) / total


def outlier_rate(labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValidationError("labels are empty")
    return float(np.mean(labels == OUTLIER))


def topic_stats(labels) -> TopicStats:
    """Topic count (excluding outliers) plus mean and population standard
    deviation of per-topic sizes."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValidationError("labels are empty")
    sizes = np.array(
        [np.sum(labels == u) for u in sorted(set(labels.tolist())) if u != OUTLIER]
    )
    if sizes.size == 0:
        return TopicStats(count=0, avg=0.0, sd=0.0)
    return TopicStats(
        count=int(sizes.size),
        avg=float(np.mean(sizes)),
        sd=float(np.std(sizes)),
    )


# ---------------------------------------------------------------------------
# subjective topic scoring
# ---------------------------------------------------------------------------

_CRITERIA = ("Coherence", "Conciseness", "Informativity")

_PROMPT_TEMPLATE = """You are reviewing the keyword list of one automatically discovered topic.
Rate each criterion on a scale of 1 to 3 (1 = poor, 2 = average, 3 = excellent)
and give a one-sentence explanation per score.

Criteria:
1. Coherence: the keywords are semantically related and together describe one
   topic or a few closely related topics.
2. Conciseness: the list is free of noise words, irrelevant terms, and
   semantically redundant entries.
3. Informativity: the list conveys specific, meaningful information and covers
   different aspects of the topic.

Keyword list: {keywords}

Respond with JSON of the form:
{{"Evaluation": {{"Coherence": {{"Score": <1-3>, "Explanation": "..."}},
 "Conciseness": {{"Score": <1-3>, "Explanation": "..."}},
 "Informativity": {{"Score": <1-3>, "Explanation": "..."}}}}}}"""


def render_topic_prompt(terms: Sequence[str]) -> str:
    return _PROMPT_TEMPLATE.format(keywords=json.dumps(list(terms), ensure_ascii=False))


def parse_judge_response(text: str) -> tuple[int, int, int] | None:
    """Extract the three 1..3 criterion scores; None when malformed."""
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end <= start:
        return None
    try:
        body = json.loads(text[start : end + 1])
    except json.JSONDecodeError:
        return None
    evaluation = body.get("Evaluation", body) if isinstance(body, dict) else None
    if not isinstance(evaluation, dict):
        return None
    scores = []
    for criterion in _CRITERIA:
        entry = evaluation.get(criterion)
        score = entry.get("Score") if isinstance(entry, dict) else entry
        if not isinstance(score, int) or not 1 <= score <= 3:
            return None
        scores.append(score)
    return tuple(scores)  # type: ignore[return-value]


def judge_topics(
    topics: Sequence[Topic],
    judge: TopicJudge,
    sample: int = 200,
    seed: int = 0,
    concurrency: int = 4,
) -> JudgeScores:
    """Average coherence/conciseness/informativity over a seeded topic sample.

    Each topic's descriptor list is rendered into the scoring prompt; a
    malformed response is retried once, then skipped and counted. If every
    response is malformed the call fails with the transcript attached.
    """
    if not topics:
        raise ValidationError("no topics to judge")
    pool = sorted(topics, key=lambda t: t.label)
    if sample < len(pool):
        rng = random.Random(seed)
        pool = rng.sample(pool, sample)
    transcript: list[str] = []
    transcript_lock = threading.Lock()

    def score_topic(topic: Topic) -> tuple[int, int, int] | None:
        prompt = render_topic_prompt(topic.terms)
        for _ in range(2):  # one retry on malformed or failed responses
            try:
                response = judge.score(prompt)
            except JudgeError as exc:
                with transcript_lock:
                    transcript.append(f"topic {topic.label}: transport error: {exc}")
                continue
            parsed = parse_judge_response(response)
            with transcript_lock:
                transcript.append(f"topic {topic.label}: {response}")
            if parsed is not None:
                return parsed
        return None

    if concurrency <= 1:
        results = [score_topic(t) for t in pool]
    else:
        with ThreadPoolExecutor(max_workers=concurrency) as pool_exec:
            results = list(pool_exec.map(score_topic, pool))

    scored = [r for r in results if r is not None]
    skipped = len(results) - len(scored)
    if not scored:
        raise JudgeFailureError(
            f"all {len(results)} judge responses were malformed", transcript
        )
    arr = np.array(scored, dtype=np.float64)
    return JudgeScores(
        coherence=float(arr[:, 0].mean()),
        conciseness=float(arr[:, 1].mean()),
        informativity=float(arr[:, 2].mean()),
        scored=len(scored),
        skipped=skipped,
    )


def evaluate_topics(
    X,
    labels,
    topics: Sequence[Topic],
    diversity_k: int = 10,
    judge: TopicJudge | None = None,
    judge_sample: int = 200,
    seed: int = 0,
    judge_concurrency: int = 4,
) -> TopicEvalReport:
    """Assemble the full label-free evaluation report."""
    stats = topic_stats(labels)
    judge_scores = None
    if judge is not None:
        judge_scores = judge_topics(
            topics, judge, sample=judge_sample, seed=seed, concurrency=judge_concurrency
        )
    return TopicEvalReport(
        silhouette=silhouette(X, labels),
        calinski_harabasz=calinski_harabasz(X, labels),
        davies_bouldin=davies_bouldin(X, labels),
        topic_diversity=topic_diversity(topics, k=diversity_k),
        outlier_rate=outlier_rate(labels),
        topic_count=stats.count,
        avg_docs_per_topic=stats.avg,
        sd_docs_per_topic=stats.sd,
        judge_scores=judge_scores,
    )
