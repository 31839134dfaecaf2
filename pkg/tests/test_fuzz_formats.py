"""Loader fuzzing and format round-trip properties.

Every loader must either return a value satisfying its type invariants or
raise a typed toolkit error; no input may produce a corrupt value or leak a
foreign exception. Writers must round-trip everything they accept.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fintext.corpusio import (
    Document,
    EmbeddingMatrix,
    QRels,
    RetrievalRun,
    load_corpus,
    load_embeddings,
    load_qrels,
    load_run,
    write_corpus,
    write_embeddings,
    write_qrels,
    write_run,
)
from fintext.errors import FintextError, ValidationError

ids_strategy = st.text(
    alphabet=st.characters(blacklist_characters="\t\n\r", blacklist_categories=("Cs",)),
    min_size=1,
    max_size=12,
)


class TestLoaderFuzz:
    @given(blob=st.text(max_size=400))
    @settings(max_examples=300, deadline=None)
    def test_corpus_loader_total(self, tmp_path_factory, blob):
        path = tmp_path_factory.mktemp("fuzz") / "corpus.jsonl"
        path.write_text(blob, encoding="utf-8")
        try:
            docs = load_corpus(path)
        except FintextError:
            return
        seen = set()
        for doc in docs:
            assert doc.id and doc.id not in seen
            seen.add(doc.id)
            assert doc.text != "" or doc.meta

    @given(blob=st.text(max_size=400))
    @settings(max_examples=300, deadline=None)
    def test_qrels_loader_total(self, tmp_path_factory, blob):
        path = tmp_path_factory.mktemp("fuzz") / "qrels.tsv"
        path.write_text(blob, encoding="utf-8")
        try:
            qrels = load_qrels(path)
        except FintextError:
            return
        for docs in qrels.entries.values():
            assert all(rel >= 0 for rel in docs.values())

    @given(blob=st.text(max_size=400))
    @settings(max_examples=300, deadline=None)
    def test_run_loader_total(self, tmp_path_factory, blob):
        path = tmp_path_factory.mktemp("fuzz") / "run.tsv"
        path.write_text(blob, encoding="utf-8")
        try:
            run = load_run(path)
        except FintextError:
            return
        for ranking in run.entries.values():
            scores = [s for _, s in ranking]
            assert all(map(math.isfinite, scores))
            assert scores == sorted(scores, reverse=True)
            assert len({d for d, _ in ranking}) == len(ranking)

    @given(blob=st.binary(max_size=300))
    @settings(max_examples=300, deadline=None)
    def test_embedding_loader_total_on_random_bytes(self, tmp_path_factory, blob):
        directory = tmp_path_factory.mktemp("fuzz")
        path = directory / "m.emb"
        path.write_bytes(blob)
        (directory / "m.emb.ids").write_text("a\nb\nc\n")
        try:
            matrix = load_embeddings(path)
        except FintextError:
            return
        matrix.validate()

    @given(position=st.integers(min_value=0, max_value=200), value=st.integers(min_value=0, max_value=255))
    @settings(max_examples=200, deadline=None)
    def test_embedding_loader_total_on_corrupted_valid_file(
        self, tmp_path_factory, position, value
    ):
        directory = tmp_path_factory.mktemp("fuzz")
        path = directory / "m.emb"
        rng = np.random.default_rng(0)
        matrix = EmbeddingMatrix(
            ids=["a", "b", "c"],
            dim=4,
            data=rng.normal(size=(3, 4)).astype(np.float32),
        )
        write_embeddings(matrix, path)
        raw = bytearray(path.read_bytes())
        if position < len(raw):
            raw[position] = value
        path.write_bytes(bytes(raw[: max(1, position)]))  # also truncate
        try:
            loaded = load_embeddings(path)
        except FintextError:
            return
        loaded.validate()


class TestRoundTripProperties:
    @given(
        records=st.lists(
            st.tuples(
                ids_strategy,
                st.text(min_size=1, max_size=30),
            ),
            max_size=20,
            unique_by=lambda pair: pair[0],
        )
    )
    @settings(max_examples=200, deadline=None)
    def test_corpus_round_trip(self, tmp_path_factory, records):
        docs = [Document(id=i, text=t) for i, t in records]
        path = tmp_path_factory.mktemp("rt") / "corpus.jsonl"
        write_corpus(docs, path)
        assert load_corpus(path) == docs

    @given(
        rows=st.integers(min_value=1, max_value=12),
        dim=st.integers(min_value=1, max_value=8),
        seed=st.integers(min_value=0, max_value=2**32 - 1),
    )
    @settings(max_examples=200, deadline=None)
    def test_embeddings_round_trip_bit_exact(self, tmp_path_factory, rows, dim, seed):
        rng = np.random.default_rng(seed)
        scale = rng.choice([1e-30, 1.0, 1e30])
        data = (rng.normal(size=(rows, dim)) * scale).astype(np.float32)
        matrix = EmbeddingMatrix(
            ids=[f"r{i}" for i in range(rows)], dim=dim, data=data
        )
        path = tmp_path_factory.mktemp("rt") / "m.emb"
        write_embeddings(matrix, path)
        loaded = load_embeddings(path)
        assert loaded.ids == matrix.ids
        assert loaded.data.tobytes() == matrix.data.tobytes()

    @given(
        entries=st.dictionaries(
            ids_strategy,
            st.dictionaries(ids_strategy, st.integers(min_value=0, max_value=5), max_size=6),
            max_size=6,
        )
    )
    @settings(max_examples=200, deadline=None)
    def test_qrels_round_trip(self, tmp_path_factory, entries):
        qrels = QRels(entries=entries)
        path = tmp_path_factory.mktemp("rt") / "qrels.tsv"
        write_qrels(qrels, path)
        loaded = load_qrels(path)
        assert {q: docs for q, docs in loaded.entries.items() if docs} == {
            q: docs for q, docs in entries.items() if docs
        }

    @given(
        raw=st.dictionaries(
            ids_strategy,
            st.lists(
                st.floats(
                    min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False
                ),
                min_size=1,
                max_size=8,
            ),
            max_size=5,
        )
    )
    @settings(max_examples=200, deadline=None)
    def test_run_round_trip(self, tmp_path_factory, raw):
        entries = {
            qid: [(f"d{i}", s) for i, s in enumerate(sorted(scores, reverse=True))]
            for qid, scores in raw.items()
        }
        run = RetrievalRun(entries=entries)
        path = tmp_path_factory.mktemp("rt") / "run.tsv"
        write_run(run, path)
        assert load_run(path).entries == entries


class TestWriterGuards:
    def test_embedding_id_with_newline_rejected_at_write(self, tmp_path):
        matrix = EmbeddingMatrix(
            ids=["ok", "bad\nid"], dim=2, data=np.zeros((2, 2), dtype=np.float32)
        )
        with pytest.raises(ValidationError, match="separator"):
            write_embeddings(matrix, tmp_path / "m.emb")

    def test_qrels_id_with_tab_rejected_at_write(self, tmp_path):
        qrels = QRels(entries={"q\t1": {"d": 1}})
        with pytest.raises(ValidationError, match="separator"):
            write_qrels(qrels, tmp_path / "q.tsv")

    def test_run_id_with_tab_rejected_at_write(self, tmp_path):
        run = RetrievalRun(entries={"q": [("d\t0", 1.0)]})
        with pytest.raises(ValidationError, match="separator"):
            write_run(run, tmp_path / "r.tsv")

    def test_nan_score_rejected_by_run_type(self):
        with pytest.raises(ValidationError, match="non-finite"):
            RetrievalRun(entries={"q": [("d", float("nan"))]})
