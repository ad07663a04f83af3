import json

import numpy as np
import pytest

from synthaudit.corpus import Corpus, CorpusKind, Post, tokenize, write_corpus


def make_corpus(rows, kind=CorpusKind.REAL, label="toy"):
    posts = [Post(*r) if isinstance(r, tuple) else r for r in rows]
    return Corpus(posts, kind, label)


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False) + "\n")
    return path


def write_embedding_table(path, corpora, dim=8, seed=0):
    vocab = sorted({w for c in corpora for p in c for w in tokenize(p).word_tokens})
    rng = np.random.default_rng(seed)
    with open(path, "w", encoding="utf-8") as fh:
        for w in vocab:
            fh.write(w + " " + " ".join(f"{v:.6f}" for v in rng.normal(size=dim)) + "\n")
    return path


@pytest.fixture
def toy_corpus():
    return make_corpus(
        [
            ("p1", "amy", "great day! #sun @bob 😀"),
            ("p2", "amy", "bad weather today."),
            ("p3", "bob", "visit https://a.b now"),
            ("p4", "bob", "what a wonderful game. so good!"),
            ("p5", "cas", "hello there"),
        ]
    )


@pytest.fixture
def desk_files(tmp_path):
    """Small real + perturbed corpora with an embedding table on disk."""
    from synthaudit.desk import perturb, procedural_corpus

    real = procedural_corpus(n_authors=6, posts_per_author=30, seed=1)
    syn = perturb(real, seed=2)
    write_corpus(real, tmp_path / "real.jsonl")
    write_corpus(syn, tmp_path / "syn.jsonl")
    write_embedding_table(tmp_path / "emb.txt", [real, syn])
    cfg = {
        "real_corpus": "real.jsonl",
        "seed": 7,
        "embedding_table": "emb.txt",
        "synthetic_corpora": {"perturbed": {"path": "syn.jsonl", "persona": True}},
        "sampling": {"enabled": True, "error_margin": 0.05},
        "attack": {"models": ["stylometric", "tfidf", "ensemble"], "epochs": 40},
        "fidelity": {"min_topic_size": 5, "centroid_k": 10},
    }
    (tmp_path / "cfg.json").write_text(json.dumps(cfg, indent=1), encoding="utf-8")
    return tmp_path


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
