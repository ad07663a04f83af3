"""Fidelity metrics between a real corpus and a synthetic counterpart.

Trait means, sentiment distribution and per-pair preservation, topic overlap
via greedy cosine matching, and centroid-distance geometry per persona writer.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from itertools import combinations
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import AlignedCorpus, Corpus, TokenizedPost, tokenize
from .embedding import Clustering, embedding_matrix, kmeans
from .features import lexical_diversity, readability

SENTIMENTS = ("negative", "neutral", "positive")


class FidelityError(ValueError):
    pass


# ---------------------------------------------------------------------------
# traits


TRAIT_FIELDS = (
    "hashtags",
    "mentions",
    "urls",
    "emojis",
    "text_length",
    "readability",
    "lexical_diversity",
    "avg_sentence_length",
    "punctuation",
)


@dataclass
class TraitsSummary:
    hashtags: float
    mentions: float
    urls: float
    emojis: float
    text_length: float
    readability: float | None
    lexical_diversity: float | None
    avg_sentence_length: float | None
    punctuation: float
    n_posts: int = 0
    n_valid: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _mean(values):
    return float(math.fsum(values) / len(values)) if values else None


def traits_summary(corpus: Corpus | Sequence[TokenizedPost]) -> TraitsSummary:
    """Per-post trait means; readability and diversity skip posts where they are undefined."""
    toks = [tokenize(p) for p in corpus] if isinstance(corpus, Corpus) else list(corpus)
    if not toks:
        raise FidelityError("traits_summary needs a non-empty corpus")
    fre, ttr, sent_len = [], [], []
    for t in toks:
        r, _ = readability(t)
        if r is not None:
            fre.append(r)
        d = lexical_diversity(t)
        if d is not None:
            ttr.append(d)
        if t.n_sentences:
            sent_len.append(t.n_words / t.n_sentences)
    return TraitsSummary(
        hashtags=_mean([len(t.hashtags) for t in toks]),
        mentions=_mean([len(t.mentions) for t in toks]),
        urls=_mean([len(t.urls) for t in toks]),
        emojis=_mean([len(t.emojis) for t in toks]),
        text_length=_mean([t.n_words for t in toks]),
        readability=_mean(fre),
        lexical_diversity=_mean(ttr),
        avg_sentence_length=_mean(sent_len),
        punctuation=_mean([t.punctuation_count for t in toks]),
        n_posts=len(toks),
        n_valid=len(fre),
    )


# ---------------------------------------------------------------------------
# sentiment


@dataclass
class SentimentLabels:
    labels: dict[str, str]
    source: str = "imported"

    def __post_init__(self):
        bad = {v for v in self.labels.values() if v not in SENTIMENTS}
        if bad:
            raise FidelityError(f"unknown sentiment labels {sorted(bad)}")


def load_sentiment_labels(path) -> SentimentLabels:
    labels = {}
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"post_id", "label"} <= set(reader.fieldnames):
            raise FidelityError(f"{path}: header must contain post_id,label")
        for lineno, row in enumerate(reader, start=2):
            label = row["label"].strip().lower()
            if label not in SENTIMENTS:
                raise FidelityError(f"{path}:{lineno}: unknown sentiment label {row['label']!r}")
            labels[row["post_id"]] = label
    return SentimentLabels(labels, "imported")


@lru_cache(maxsize=None)
def sentiment_lexicon() -> dict[str, int]:
    text = resources.files("synthaudit.data").joinpath("sentiment_lexicon.tsv").read_text("utf-8")
    out = {}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        word, pol = line.split("\t")
        out[word] = int(pol)
    return out


def lexicon_sentiment(tokenized: TokenizedPost, lexicon: Mapping[str, int] | None = None) -> str:
    lex = sentiment_lexicon() if lexicon is None else lexicon
    score = sum(lex.get(w, 0) for w in tokenized.word_tokens)
    if score > 0:
        return "positive"
    if score < 0:
        return "negative"
    return "neutral"


def lexicon_labels(corpus: Corpus) -> SentimentLabels:
    return SentimentLabels({p.id: lexicon_sentiment(tokenize(p)) for p in corpus}, "lexicon_fallback")


def sentiment_distribution(labels: SentimentLabels, corpus: Corpus) -> dict[str, float]:
    counts = Counter()
    for p in corpus:
        if p.id not in labels.labels:
            raise FidelityError(f"post {p.id!r} has no sentiment label")
        counts[labels.labels[p.id]] += 1
    n = len(corpus)
    if n == 0:
        raise FidelityError("empty corpus")
    return {s: counts[s] / n for s in SENTIMENTS}


def sentiment_preservation(
    aligned: AlignedCorpus, real_labels: SentimentLabels, synth_labels: SentimentLabels
) -> dict[str, float | None]:
    """Percent of pairs keeping the real post's label, per real label; None without support."""
    support = Counter()
    kept = Counter()
    for real, synth in aligned.pairs:
        if real.id not in real_labels.labels:
            raise FidelityError(f"paired real post {real.id!r} has no sentiment label")
        if synth.id not in synth_labels.labels:
            raise FidelityError(f"paired synthetic post {synth.id!r} has no sentiment label")
        r = real_labels.labels[real.id]
        support[r] += 1
        if synth_labels.labels[synth.id] == r:
            kept[r] += 1
    return {s: (100.0 * kept[s] / support[s] if support[s] else None) for s in SENTIMENTS}


# ---------------------------------------------------------------------------
# topics


@dataclass
class Topic:
    id: int
    vector: np.ndarray
    keywords: list[str]
    size: int


@dataclass
class TopicSet:
    topics: list[Topic]
    degenerate: bool = False

    def matrix(self) -> np.ndarray:
        if not self.topics:
            return np.zeros((0, 0))
        return np.stack([np.asarray(t.vector, dtype=float) for t in self.topics])

    def to_json(self) -> str:
        return json.dumps(
            {
                "topics": [
                    {"id": t.id, "vector": [float(v) for v in t.vector], "keywords": t.keywords, "size": t.size}
                    for t in self.topics
                ]
            },
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, text: str) -> "TopicSet":
        d = json.loads(text)
        topics = [
            Topic(int(t["id"]), np.asarray(t["vector"], dtype=float), list(t.get("keywords", []))[:10], int(t.get("size", 0)))
            for t in d["topics"]
        ]
        dims = {t.vector.shape for t in topics}
        if len(dims) > 1:
            raise FidelityError("topic vectors have different dimensions")
        return cls(topics)


def load_topics(path) -> TopicSet:
    return TopicSet.from_json(Path(path).read_text(encoding="utf-8"))


def _canonical_order(X: np.ndarray) -> np.ndarray:
    # lexicographic row order so clustering does not depend on input order
    return np.lexsort(X.T[::-1]) if X.size else np.arange(X.shape[0])


def class_tfidf_keywords(clusters: Sequence[Sequence[TokenizedPost]], top: int = 10) -> list[list[str]]:
    """Top terms per cluster by (term count in cluster) * ln(1 + K / clusters containing term)."""
    tfs = [Counter(w for t in c for w in t.word_tokens) for c in clusters]
    df = Counter()
    for tf in tfs:
        df.update(tf.keys())
    K = len(clusters)
    out = []
    for tf in tfs:
        scored = sorted(((-n * math.log(1 + K / df[w]), w) for w, n in tf.items()))
        out.append([w for _, w in scored[:top]])
    return out


def extract_topics(
    corpus: Corpus, embeddings, min_topic_size: int = 10, seed: int = 0, max_topics: int = 50
) -> TopicSet:
    """k-means topics over post embeddings; undersized clusters fold into the nearest kept one."""
    X = embedding_matrix(embeddings)
    n = X.shape[0]
    if n != len(corpus):
        raise FidelityError("one embedding per post is required")
    if n < 2 * min_topic_size:
        raise FidelityError(f"topic extraction needs at least {2 * min_topic_size} posts, got {n}")
    k = min(max(n // (4 * min_topic_size), 2), max_topics)
    order = _canonical_order(X)
    cl = kmeans(X[order], k, seed)
    assign = np.empty(n, dtype=int)
    assign[order] = cl.assignments
    centroids = cl.centroids.copy()
    alive = [j for j in range(k)]
    while True:
        sizes = {j: int(np.sum(assign == j)) for j in alive}
        small = [j for j in alive if sizes[j] < min_topic_size]
        if not small or len(alive) == 1:
            break
        victim = min(small, key=lambda j: (sizes[j], j))
        others = [j for j in alive if j != victim]
        d = [float(np.sum((centroids[victim] - centroids[j]) ** 2)) for j in others]
        target = others[int(np.argmin(d))]
        assign[assign == victim] = target
        alive.remove(victim)
        centroids[target] = X[assign == target].mean(axis=0)
    toks = [tokenize(p) for p in corpus]
    groups = [[toks[i] for i in np.flatnonzero(assign == j)] for j in alive]
    keywords = class_tfidf_keywords(groups)
    topics = [
        Topic(i, X[assign == j].mean(axis=0), keywords[i], int(np.sum(assign == j))) for i, j in enumerate(alive)
    ]
    degenerate = len(topics) < 2 or not np.any(X - X.mean(axis=0))
    return TopicSet(topics, degenerate)


def topic_cosine_matrix(real: TopicSet, synth: TopicSet) -> np.ndarray:
    A, B = real.matrix(), synth.matrix()
    if A.size and B.size and A.shape[1] != B.shape[1]:
        raise FidelityError(f"topic dimensions differ: {A.shape[1]} vs {B.shape[1]}")
    return cosine_matrix(A, B)


def cosine_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape[0] == 0 or B.shape[0] == 0:
        return np.zeros((A.shape[0], B.shape[0]))
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    S = np.zeros((A.shape[0], B.shape[0]))
    for i in range(A.shape[0]):
        for j in range(B.shape[0]):
            if na[i] > 0 and nb[j] > 0:
                S[i, j] = float(np.dot(A[i], B[j])) / (na[i] * nb[j])
    return np.clip(S, -1.0, 1.0)


@dataclass
class TopicMatchReport:
    shared: int
    unique_real: int
    unique_synth: int
    pairs: list[tuple[int, int, float]] = field(default_factory=list)
    threshold: float = 0.7

    def to_dict(self) -> dict:
        return {
            "shared": self.shared,
            "unique_real": self.unique_real,
            "unique_synth": self.unique_synth,
            "threshold": self.threshold,
            "pairs": [{"real": i, "synth": j, "similarity": s} for i, j, s in self.pairs],
        }


def greedy_match(matrix, threshold: float = 0.7) -> TopicMatchReport:
    """Take the highest remaining similarity >= threshold with both sides free.

    Ties go to the lower row index, then the lower column index.
    """
    S = np.asarray(matrix, dtype=float)
    if S.ndim != 2:
        raise FidelityError("similarity matrix must be 2-D")
    if not np.all(np.isfinite(S)):
        raise FidelityError("similarity matrix must be finite")
    rows, cols = S.shape
    candidates = sorted(
        ((-S[i, j], i, j) for i in range(rows) for j in range(cols) if S[i, j] >= threshold)
    )
    used_r, used_c = set(), set()
    pairs = []
    for neg, i, j in candidates:
        if i in used_r or j in used_c:
            continue
        used_r.add(i)
        used_c.add(j)
        pairs.append((i, j, float(-neg)))
    return TopicMatchReport(len(pairs), rows - len(pairs), cols - len(pairs), pairs, threshold)


# ---------------------------------------------------------------------------
# centroid geometry


def mean_pairwise_distance(centroids: np.ndarray) -> float | None:
    C = np.asarray(centroids, dtype=float)
    if C.shape[0] < 2:
        return None
    dists = [math.sqrt(float(np.sum((C[i] - C[j]) ** 2))) for i, j in combinations(range(C.shape[0]), 2)]
    return math.fsum(dists) / len(dists)


@dataclass
class CentroidAnalysis:
    clustering: Clustering
    d_global: float | None

    @property
    def degenerate(self) -> bool:
        return self.d_global is None


def _cluster_canonical(X: np.ndarray, k: int, seed: int) -> Clustering:
    order = _canonical_order(X)
    cl = kmeans(X[order], k, seed)
    assign = np.empty_like(cl.assignments)
    assign[order] = cl.assignments
    cl.assignments = assign
    return cl


def centroid_analysis(embeddings, k: int = 50, seed: int = 0) -> CentroidAnalysis:
    X = embedding_matrix(embeddings)
    if X.shape[0] < k:
        raise FidelityError(f"centroid analysis needs at least k={k} points, got {X.shape[0]}")
    cl = _cluster_canonical(X, k, seed)
    return CentroidAnalysis(cl, mean_pairwise_distance(cl.centroids))


@dataclass
class CentroidReport:
    d_global: float
    d_intra: dict[str, float | None]
    delta: dict[str, float | None]
    k: int
    mode: str = "per_writer"

    def to_dict(self) -> dict:
        return asdict(self)


def persona_delta(
    groups: Mapping[str, np.ndarray], k: int = 50, seed: int = 0, mode: str = "per_writer"
) -> CentroidReport:
    """Per-writer intra-centroid spread minus the global mean centroid distance.

    ``mode="per_writer"`` clusters each writer's posts separately with
    max(2, floor(k * share)) centroids; ``mode="shared"`` reuses the global
    clustering and measures the centroids that the writer's posts fall into.
    """
    if mode not in ("per_writer", "shared"):
        raise FidelityError(f"unknown persona_delta mode {mode!r}")
    names = sorted(groups)
    mats = {w: embedding_matrix(groups[w]) for w in names}
    for w in names:
        if mats[w].shape[0] < 2:
            raise FidelityError(f"writer group {w!r} has fewer than 2 posts")
    X = np.vstack([mats[w] for w in names])
    glob = centroid_analysis(X, k, seed)
    if glob.d_global is None:
        raise FidelityError("global clustering has a single centroid; delta undefined")
    d_intra: dict[str, float | None] = {}
    if mode == "per_writer":
        total = X.shape[0]
        for w in names:
            Xw = mats[w]
            kw = max(2, math.floor(k * Xw.shape[0] / total))
            kw = min(kw, Xw.shape[0])
            d_intra[w] = mean_pairwise_distance(_cluster_canonical(Xw, kw, seed).centroids)
    else:
        assign = glob.clustering.assignments
        start = 0
        for w in names:
            n_w = mats[w].shape[0]
            used = sorted(set(int(a) for a in assign[start:start + n_w]))
            start += n_w
            d_intra[w] = mean_pairwise_distance(glob.clustering.centroids[used])
    delta = {w: (None if d is None else d - glob.d_global) for w, d in d_intra.items()}
    return CentroidReport(glob.d_global, d_intra, delta, k, mode)


# ---------------------------------------------------------------------------
# aggregate


@dataclass
class FidelityReport:
    traits_real: TraitsSummary
    traits_synth: TraitsSummary
    sentiment_source: str
    sentiment_real: dict[str, float]
    sentiment_synth: dict[str, float]
    preservation: dict[str, float | None] | None
    topics: TopicMatchReport | None = None
    n_topics_real: int = 0
    n_topics_synth: int = 0
    centroids: CentroidReport | None = None
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "traits": {"real": self.traits_real.to_dict(), "synthetic": self.traits_synth.to_dict()},
            "sentiment": {
                "source": self.sentiment_source,
                "real": self.sentiment_real,
                "synthetic": self.sentiment_synth,
                "preservation": self.preservation,
            },
            "topics": None
            if self.topics is None
            else {**self.topics.to_dict(), "n_real": self.n_topics_real, "n_synth": self.n_topics_synth},
            "centroids": None if self.centroids is None else self.centroids.to_dict(),
            "warnings": list(self.warnings),
        }
