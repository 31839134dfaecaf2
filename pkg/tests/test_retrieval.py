"""Cosine retrieval, ranking metrics, mining, pair construction, InfoNCE,
and judge filtering."""

import math

import numpy as np
import pytest

from fintext.corpusio import EmbeddingMatrix, QRels, RetrievalRun
from fintext.errors import (
    MetricUndefinedError,
    ParameterError,
    ValidationError,
)
from fintext.judge import StubPairJudge, Verdict
from fintext.retrieval import (
    ContrastiveConfig,
    TrainingTriplet,
    build_training_pairs,
    cosine_topk,
    filter_pairs_with_judge,
    infonce_loss,
    mine_hard_negatives,
    ndcg_at_k,
    recall_at_k,
)
from oracles import cosine_rank_oracle, ndcg_oracle, recall_oracle


def matrix(ids, rows):
    rows = np.asarray(rows, dtype=np.float32)
    return EmbeddingMatrix(ids=list(ids), dim=rows.shape[1], data=rows)


class TestCosineTopk:
    def test_self_similarity_is_one(self):
        docs = matrix(["a", "b"], [[1, 0], [0, 1]])
        queries = matrix(["q"], [[1, 0]])
        run = cosine_topk(queries, docs, k=1)
        assert run.entries["q"] == [("a", 1.0)]

    def test_orthogonal_scores(self):
        docs = matrix(["a", "b"], [[1, 0], [0, 1]])
        queries = matrix(["q"], [[1, 0]])
        run = cosine_topk(queries, docs, k=2)
        assert run.entries["q"] == [("a", 1.0), ("b", 0.0)]

    def test_matches_full_sort_oracle(self):
        rng = np.random.default_rng(0)
        docs = matrix([f"d{i:02d}" for i in range(20)], rng.normal(size=(20, 6)))
        queries = matrix(["q0", "q1"], rng.normal(size=(2, 6)))
        run = cosine_topk(queries, docs, k=5)
        for qi, qid in enumerate(queries.ids):
            expected = cosine_rank_oracle(
                queries.data[qi].astype(np.float64), docs.ids, docs.data.astype(np.float64), 5
            )
            assert [d for d, _ in run.entries[qid]] == [d for d, _ in expected]
            for (_, got), (_, want) in zip(run.entries[qid], expected):
                assert got == pytest.approx(want, abs=1e-6)

    def test_ties_break_by_ascending_doc_id(self):
        docs = matrix(["zz", "aa", "mm"], [[1, 0], [1, 0], [1, 0]])
        queries = matrix(["q"], [[1, 0]])
        run = cosine_topk(queries, docs, k=3)
        assert [d for d, _ in run.entries["q"]] == ["aa", "mm", "zz"]

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            cosine_topk(matrix(["q"], [[1, 0]]), matrix(["d"], [[1, 0, 0]]), k=1)

    def test_zero_norm_row_names_id(self):
        docs = matrix(["good", "zero"], [[1, 0], [0, 0]])
        with pytest.raises(ValidationError, match="zero"):
            cosine_topk(matrix(["q"], [[1, 0]]), docs, k=1)


class TestRecall:
    def test_perfect_single_relevant(self):
        run = RetrievalRun(entries={"q": [("d1", 0.9)]})
        qrels = QRels(entries={"q": {"d1": 1}})
        per_query, mean = recall_at_k(run, qrels, k=1)
        assert per_query["q"] == 1.0 and mean == 1.0

    def test_half_found(self):
        run = RetrievalRun(entries={"q": [("d1", 0.9), ("x", 0.5), ("y", 0.4)]})
        qrels = QRels(entries={"q": {"d1": 1, "d2": 1}})
        per_query, _ = recall_at_k(run, qrels, k=3)
        assert per_query["q"] == 0.5

    def test_denominator_is_all_relevant_even_beyond_k(self):
        # 14 relevant docs, k=5: only 5 can be found, recall capped at 5/14
        ranking = [(f"d{i}", 1.0 - i * 0.01) for i in range(5)]
        run = RetrievalRun(entries={"q": ranking})
        qrels = QRels(entries={"q": {f"d{i}": 1 for i in range(14)}})
        per_query, _ = recall_at_k(run, qrels, k=5)
        assert per_query["q"] == pytest.approx(5 / 14)

    def test_no_relevant_docs_is_undefined(self):
        run = RetrievalRun(entries={"q": [("d1", 0.9)]})
        qrels = QRels(entries={"q": {"d1": 0}})
        with pytest.raises(MetricUndefinedError):
            recall_at_k(run, qrels, k=1)

    def test_monotone_score_transform_invariance(self):
        rng = np.random.default_rng(3)
        ranking = [(f"d{i}", float(s)) for i, s in enumerate(sorted(rng.uniform(0, 1, 8), reverse=True))]
        run = RetrievalRun(entries={"q": ranking})
        transformed = RetrievalRun(
            entries={"q": [(d, math.exp(3 * s)) for d, s in sorted(ranking, key=lambda p: -p[1])]}
        )
        qrels = QRels(entries={"q": {"d1": 1, "d4": 1, "d6": 1}})
        assert recall_at_k(run, qrels, 4) == recall_at_k(transformed, qrels, 4)
        assert ndcg_at_k(run, qrels, 4) == ndcg_at_k(transformed, qrels, 4)


class TestNdcg:
    def test_single_relevant_ranked_first(self):
        run = RetrievalRun(entries={"q": [("d1", 0.9), ("x", 0.2)]})
        qrels = QRels(entries={"q": {"d1": 1}})
        _, mean = ndcg_at_k(run, qrels, k=10)
        assert mean == 1.0

    def test_single_relevant_ranked_second(self):
        run = RetrievalRun(entries={"q": [("x", 0.9), ("d1", 0.2)]})
        qrels = QRels(entries={"q": {"d1": 1}})
        per_query, _ = ndcg_at_k(run, qrels, k=10)
        assert per_query["q"] == pytest.approx(1 / math.log2(3), abs=1e-9)

    def test_graded_relevance_matches_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            n_docs = rng.integers(2, 8)
            docs = [f"d{i}" for i in range(n_docs)]
            rels = {d: int(rng.integers(0, 4)) for d in docs}
            if not any(r > 0 for r in rels.values()):
                rels[docs[0]] = 1
            order = list(rng.permutation(docs))
            ranking = [(d, float(n_docs - i)) for i, d in enumerate(order)]
            run = RetrievalRun(entries={"q": ranking})
            qrels = QRels(entries={"q": rels})
            k = int(rng.integers(1, 9))
            per_query, _ = ndcg_at_k(run, qrels, k=k)
            assert per_query["q"] == pytest.approx(ndcg_oracle(order, rels, k), abs=1e-12)

    def test_range_and_perfect_ranking(self):
        qrels = QRels(entries={"q": {"a": 3, "b": 1}})
        run = RetrievalRun(entries={"q": [("a", 0.9), ("b", 0.5), ("c", 0.1)]})
        per_query, _ = ndcg_at_k(run, qrels, k=10)
        assert per_query["q"] == 1.0
        _, recall_mean = recall_at_k(run, qrels, k=10)
        assert recall_mean == 1.0


class TestMining:
    def test_corpus_of_only_positives_gives_empty(self):
        docs = matrix(["p1", "p2"], [[1, 0], [0.9, 0.1]])
        out = mine_hard_negatives("q", np.array([1.0, 0.0]), ["p1", "p2"], docs)
        assert out == []

    def test_small_corpus_in_similarity_order(self):
        rng = np.random.default_rng(5)
        vectors = rng.normal(size=(5, 4))
        docs = matrix([f"d{i}" for i in range(5)], vectors)
        q = rng.normal(size=4)
        out = mine_hard_negatives("q", q, ["d0"], docs, max_n=50)
        ranked = cosine_rank_oracle(q, docs.ids, vectors.astype(np.float64), 5)
        assert out == [d for d, _ in ranked if d != "d0"]

    def test_max_n_caps_output(self):
        rng = np.random.default_rng(6)
        vectors = rng.normal(size=(10, 4))
        docs = matrix([f"d{i}" for i in range(10)], vectors)
        q = rng.normal(size=4)
        out = mine_hard_negatives("q", q, ["d3"], docs, max_n=2)
        ranked = [d for d, _ in cosine_rank_oracle(q, docs.ids, vectors.astype(np.float64), 10) if d != "d3"]
        assert out == ranked[:2]

    def test_unknown_positive_rejected(self):
        docs = matrix(["d0"], [[1, 0]])
        with pytest.raises(ValidationError):
            mine_hard_negatives("q", np.array([1.0, 0.0]), ["ghost"], docs)


class TestBuildPairs:
    def test_exact_default_ratio(self):
        qrels = QRels(entries={"q": {"p1": 1, "p2": 1}})
        mined = {"q": [f"n{i}" for i in range(8)]}
        result = build_training_pairs(qrels, mined, ContrastiveConfig(), seed=0)
        assert len(result.triplets) == 1
        t = result.triplets[0]
        assert sorted(t.positives) == ["p1", "p2"]
        assert sorted(t.negatives) == sorted(mined["q"])
        assert not result.skipped

    def test_insufficient_positives_skipped_and_reported(self):
        qrels = QRels(entries={"q": {"p1": 1}})
        mined = {"q": [f"n{i}" for i in range(8)]}
        result = build_training_pairs(qrels, mined, ContrastiveConfig(), seed=0)
        assert not result.triplets
        assert result.skipped[0].query_id == "q"
        assert "positives" in result.skipped[0].reason

    def test_large_preset_is_deterministic_15_subset(self):
        qrels = QRels(entries={"q": {"p1": 1, "p2": 1, "p3": 1}})
        mined = {"q": [f"n{i:02d}" for i in range(20)]}
        cfg = ContrastiveConfig.large()
        assert cfg.neg_per_query == 15
        first = build_training_pairs(qrels, mined, cfg, seed=11)
        second = build_training_pairs(qrels, mined, cfg, seed=11)
        assert first.triplets[0].negatives == second.triplets[0].negatives
        assert len(first.triplets[0].negatives) == 15
        different = build_training_pairs(qrels, mined, cfg, seed=12)
        assert different.triplets[0].negatives != first.triplets[0].negatives

    def test_positives_never_sampled_as_negatives(self):
        qrels = QRels(entries={"q": {"p1": 1, "p2": 1}})
        mined = {"q": ["p1"] + [f"n{i}" for i in range(8)]}
        result = build_training_pairs(qrels, mined, ContrastiveConfig(), seed=0)
        t = result.triplets[0]
        assert set(t.positives).isdisjoint(t.negatives)

    def test_mined_list_truncated_to_cap(self):
        qrels = QRels(entries={"q": {"p1": 1, "p2": 1}})
        mined = {"q": [f"n{i:03d}" for i in range(60)]}
        cfg = ContrastiveConfig(max_mined_negatives=50)
        result = build_training_pairs(qrels, mined, cfg, seed=0)
        assert set(result.triplets[0].negatives) <= set(mined["q"][:50])

    def test_triplet_disjointness_enforced_by_type(self):
        with pytest.raises(ValidationError):
            TrainingTriplet(query_id="q", query_text="", positives=["a"], negatives=["a"])


class TestInfoNCE:
    def test_equal_scores_give_ln2(self):
        v = np.array([1.0, 0.0])
        assert infonce_loss(v, v, [v]) == pytest.approx(math.log(2), abs=1e-12)

    def test_separated_scores_tiny_loss(self):
        q = np.array([1.0, 0.0])
        p = np.array([1.0, 0.0])
        n = np.array([0.0, 1.0])
        expected = math.log(1 + math.exp(-10))
        assert infonce_loss(q, p, [n], temperature=0.1) == pytest.approx(expected, abs=1e-12)

    def test_n_way_equal_scores_give_ln_n(self):
        v = np.array([0.3, 0.4])
        for n in (2, 5, 17):
            loss = infonce_loss(v, v, [v] * (n - 1))
            assert loss == pytest.approx(math.log(n), abs=1e-12)

    def test_loss_decreases_as_positive_score_rises(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            s_p = rng.uniform(-0.9, 0.9)
            negs = rng.uniform(-1, 1, size=rng.integers(1, 6))
            q = np.array([1.0, 0.0])
            vec = lambda s: np.array([s, math.sqrt(1 - s * s)])
            low = infonce_loss(q, vec(s_p), [vec(s) for s in negs])
            high = infonce_loss(q, vec(s_p + 0.05), [vec(s) for s in negs])
            assert high < low

    def test_empty_negatives_warns_and_returns_zero(self):
        v = np.array([1.0, 0.0])
        with pytest.warns(UserWarning):
            assert infonce_loss(v, v, []) == 0.0

    def test_bad_temperature_rejected(self):
        v = np.array([1.0, 0.0])
        with pytest.raises(ParameterError):
            infonce_loss(v, v, [v], temperature=0.0)


class _ScriptedJudge:
    """Rejects exactly the (doc, check) pairs given."""

    def __init__(self, rejects_sufficiency=(), answerable=()):
        self.rejects_sufficiency = set(rejects_sufficiency)
        self.answerable = set(answerable)
        self.doc_to_text = None

    def judge_pair(self, query_text, doc_text, check_type):
        if check_type == "sufficiency":
            return Verdict(verdict=doc_text not in self.rejects_sufficiency)
        return Verdict(verdict=doc_text in self.answerable)


class TestFilterPairs:
    def _triplets(self):
        return [
            TrainingTriplet(
                query_id="q",
                query_text="question",
                positives=["p1", "p2", "p3"],
                negatives=["n1", "n2", "n3", "n4", "n5", "n6", "n7", "n8", "n9"],
            )
        ]

    def _texts(self):
        ids = ["p1", "p2", "p3"] + [f"n{i}" for i in range(1, 10)]
        return {d: f"text:{d}" for d in ids}

    def test_accept_everything_is_identity(self):
        cfg = ContrastiveConfig()
        judge = StubPairJudge(default=True, overrides=[
            {"check_type": "answerability", "verdict": False}
        ])
        result = filter_pairs_with_judge(self._triplets(), judge, self._texts(), cfg)
        assert result.triplets[0].positives == ["p1", "p2", "p3"]
        assert len(result.triplets[0].negatives) == 9
        assert not result.removed and not result.errors

    def test_rejected_positive_dropped(self):
        cfg = ContrastiveConfig()
        judge = _ScriptedJudge(rejects_sufficiency={"text:p2"})
        result = filter_pairs_with_judge(self._triplets(), judge, self._texts(), cfg)
        assert result.triplets[0].positives == ["p1", "p3"]

    def test_answerable_negative_dropped(self):
        cfg = ContrastiveConfig()
        judge = _ScriptedJudge(answerable={"text:n4"})
        result = filter_pairs_with_judge(self._triplets(), judge, self._texts(), cfg)
        assert "n4" not in result.triplets[0].negatives
        assert len(result.triplets[0].negatives) == 8

    def test_triplet_below_minimums_removed_and_reported(self):
        cfg = ContrastiveConfig()  # needs 2 positives
        judge = _ScriptedJudge(rejects_sufficiency={"text:p1", "text:p2"})
        result = filter_pairs_with_judge(self._triplets(), judge, self._texts(), cfg)
        assert not result.triplets
        assert result.removed[0].query_id == "q"

    def test_transport_failure_keeps_item_and_records_error(self):
        from fintext.errors import JudgeError

        class FlakyJudge:
            def judge_pair(self, query_text, doc_text, check_type):
                raise JudgeError("endpoint down")

        cfg = ContrastiveConfig()
        result = filter_pairs_with_judge(self._triplets(), FlakyJudge(), self._texts(), cfg)
        assert len(result.triplets) == 1  # fail-open: items kept
        assert result.errors
