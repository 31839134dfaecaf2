#!/usr/bin/env python3
"""Regenerate the bundled 500-title fixture under tests/fixtures/.

Titles are drawn from twelve themed word pools plus shared filler words, and
the fixture embeddings are a seeded random projection of title bag-of-words
vectors. Everything is deterministic; the outputs are committed so the test
suite and the pipeline demo run without this script.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

import numpy as np

from fintext.corpusio import Document, EmbeddingMatrix, write_corpus, write_embeddings

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "tests" / "fixtures"

SEED = 20250810
N_TITLES = 500
EMBED_DIM = 64

POOLS = {
    "bonds": ["treasury", "yield", "bond", "coupon", "duration", "issuance", "maturity", "spread"],
    "equities": ["stock", "share", "dividend", "buyback", "listing", "valuation", "index", "ipo"],
    "banking": ["bank", "loan", "deposit", "lending", "credit", "branch", "capital", "reserve"],
    "energy": ["oil", "gas", "crude", "refinery", "pipeline", "barrel", "drilling", "petroleum"],
    "insurance": ["policy", "premium", "claim", "underwriting", "actuarial", "coverage", "reinsurance", "annuity"],
    "tech": ["semiconductor", "chip", "software", "cloud", "platform", "wafer", "foundry", "datacenter"],
    "realestate": ["property", "housing", "mortgage", "developer", "rent", "construction", "land", "residential"],
    "commodities": ["copper", "gold", "silver", "iron", "ore", "futures", "metal", "warehouse"],
    "fx": ["currency", "dollar", "exchange", "devaluation", "peg", "remittance", "forex", "hedging"],
    "macro": ["inflation", "gdp", "unemployment", "stimulus", "deficit", "tariff", "exports", "policy"],
    "autos": ["vehicle", "automaker", "battery", "dealership", "chassis", "emissions", "assembly", "suv"],
    "healthcare": ["pharma", "drug", "clinical", "hospital", "biotech", "vaccine", "trial", "patent"],
}

FILLERS = ["market", "report", "update", "quarterly", "outlook", "review", "brief", "notes"]

ENTITIES = [
    "new york exchange",
    "golden dragon capital",
    "pacific rim holdings",
    "blue harbor securities",
]

JUDGE_RESPONSES = [
    {
        "Evaluation": {
            "Coherence": {"Score": 3, "Explanation": "terms describe one theme"},
            "Conciseness": {"Score": 2, "Explanation": "one filler term present"},
            "Informativity": {"Score": 3, "Explanation": "specific instruments named"},
        }
    },
    {
        "Evaluation": {
            "Coherence": {"Score": 2, "Explanation": "two related themes mixed"},
            "Conciseness": {"Score": 3, "Explanation": "no noise terms"},
            "Informativity": {"Score": 2, "Explanation": "somewhat generic"},
        }
    },
]


def make_titles(rng: random.Random) -> list[Document]:
    docs = []
    themes = list(POOLS)
    for i in range(N_TITLES):
        theme = themes[i % len(themes)]
        words = rng.sample(POOLS[theme], 4) + rng.sample(FILLERS, 2)
        rng.shuffle(words)
        if rng.random() < 0.15:
            words.insert(rng.randrange(len(words)), rng.choice(ENTITIES))
        docs.append(
            Document(
                id=f"t{i:04d}",
                text=" ".join(words),
                meta={"theme": theme},
            )
        )
    return docs


def embed(docs: list[Document], rng: np.random.Generator) -> EmbeddingMatrix:
    vocab = sorted({w for doc in docs for w in doc.text.split()})
    index = {w: i for i, w in enumerate(vocab)}
    bow = np.zeros((len(docs), len(vocab)), dtype=np.float64)
    for r, doc in enumerate(docs):
        for w in doc.text.split():
            bow[r, index[w]] += 1.0
    projection = rng.normal(0.0, 1.0, size=(len(vocab), EMBED_DIM))
    dense = bow @ projection
    dense /= np.linalg.norm(dense, axis=1, keepdims=True)
    return EmbeddingMatrix(
        ids=[d.id for d in docs], dim=EMBED_DIM, data=dense.astype(np.float32)
    )


def main() -> None:
    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    rng = random.Random(SEED)
    docs = make_titles(rng)
    write_corpus(docs, FIXTURE_DIR / "titles.jsonl")
    matrix = embed(docs, np.random.default_rng(SEED))
    write_embeddings(matrix, FIXTURE_DIR / "titles.emb")

    (FIXTURE_DIR / "stopwords.txt").write_text(
        "\n".join(FILLERS) + "\n", encoding="utf-8"
    )
    (FIXTURE_DIR / "entities.txt").write_text(
        "\n".join(ENTITIES) + "\n", encoding="utf-8"
    )
    (FIXTURE_DIR / "judge_stub.jsonl").write_text(
        "\n".join(json.dumps(r) for r in JUDGE_RESPONSES) + "\n", encoding="utf-8"
    )
    config = {
        "corpus": "tests/fixtures/titles.jsonl",
        "embeddings": "tests/fixtures/titles.emb",
        "out_dir": "pipeline-out",
        "seed": 7,
        "threads": 1,
        "umap": {"n_neighbors": 15, "out_dim": 32, "min_dist": 0.0, "metric": "cosine"},
        "hdbscan": {"min_cluster_size": 2, "min_samples": 1},
        "topics": {
            "top_k": 10,
            "dictionary": "tests/fixtures/entities.txt",
            "stopwords": "tests/fixtures/stopwords.txt",
        },
    }
    (FIXTURE_DIR / "pipeline_config.json").write_text(
        json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"fixtures written to {FIXTURE_DIR}")


if __name__ == "__main__":
    main()
