"""Feature extraction for the attribution attacks and the fidelity traits.

Three representations are produced per post: a fixed-slot stylometric vector,
counts of the corpus' most frequent word bi-/trigrams, and smoothed TF-IDF over
unigrams and bigrams.
"""

from __future__ import annotations

import csv
import json
import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import SPECIAL_CHARS, TokenizedPost

LETTERS = "abcdefghijklmnopqrstuvwxyz"
DIGITS = "0123456789"

BASE_SLOTS = (
    "total_words",
    "total_sentences",
    "avg_word_length",
    "lexical_richness",
    "flesch_reading_ease",
    "flesch_kincaid_grade",
    "digit_count",
    "punctuation_count",
    "special_count",
    "emoji_count",
    "emoticon_count",
    "emoji_density",
    "emoticon_density",
    "hashtag_density",
    "mention_density",
    "url_density",
    "repeated_word_count",
    "repeated_emoji_count",
)
STYLOMETRIC_COLUMNS = (
    BASE_SLOTS
    + tuple(f"letter_freq_{c}" for c in LETTERS)
    + tuple(f"digit_freq_{c}" for c in DIGITS)
    + tuple(f"special_freq_{i}" for i in range(len(SPECIAL_CHARS)))
)


@dataclass
class FeatureMatrix:
    post_ids: list[str]
    columns: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.post_ids), len(self.columns))
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature matrix contains NaN or inf")

    @property
    def shape(self):
        return self.values.shape

    def rows(self, ids: Iterable[str]) -> "FeatureMatrix":
        pos = {pid: i for i, pid in enumerate(self.post_ids)}
        ids = list(ids)
        return FeatureMatrix(ids, list(self.columns), self.values[[pos[i] for i in ids]])

    def to_csv(self, path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["post_id", *self.columns])
            for pid, row in zip(self.post_ids, self.values):
                w.writerow([pid, *(repr(float(v)) for v in row)])


# ---------------------------------------------------------------------------
# readability


_VOWEL_RUN = re.compile(r"[aeiouy]+")


def count_syllables(word: str) -> int:
    """Vowel-group heuristic: runs of aeiouy, minus a silent final 'e', at least 1."""
    word = "".join(c for c in unicodedata.normalize("NFD", word.lower()) if not unicodedata.combining(c))
    n = len(_VOWEL_RUN.findall(word))
    if word.endswith("e") and n > 1:
        n -= 1
    return max(n, 1)


def flesch_reading_ease(words: int, sentences: int, syllables: int) -> float | None:
    """None marks an undefined score (no words or no sentences)."""
    if words < 1 or sentences < 1:
        return None
    return 206.835 - 1.015 * (words / sentences) - 84.6 * (syllables / words)


def flesch_kincaid_grade(words: int, sentences: int, syllables: int) -> float | None:
    if words < 1 or sentences < 1:
        return None
    return 0.39 * (words / sentences) + 11.8 * (syllables / words) - 15.59


def lexical_diversity(tokenized: TokenizedPost) -> float | None:
    """Type-token ratio of the word tokens; None for posts without words."""
    words = tokenized.word_tokens
    if not words:
        return None
    return len(set(words)) / len(words)


def readability(tokenized: TokenizedPost) -> tuple[float | None, float | None]:
    words = tokenized.n_words
    sents = tokenized.n_sentences
    syl = sum(count_syllables(w) for w in tokenized.word_tokens)
    return flesch_reading_ease(words, sents, syl), flesch_kincaid_grade(words, sents, syl)


# ---------------------------------------------------------------------------
# stylometric vector


def extract_stylometric(tokenized: TokenizedPost) -> dict[str, float]:
    """Named stylometric slots for one post, in ``STYLOMETRIC_COLUMNS`` order."""
    t = tokenized
    n_words = t.n_words
    denom = max(1, n_words)
    fre, fkg = readability(t)
    ttr = lexical_diversity(t)
    word_counts = Counter(t.word_tokens)
    emoji_counts = Counter(t.emojis)
    out = {
        "total_words": float(n_words),
        "total_sentences": float(t.n_sentences),
        "avg_word_length": (sum(len(w) for w in t.word_tokens) / n_words) if n_words else 0.0,
        "lexical_richness": ttr or 0.0,
        "flesch_reading_ease": fre if fre is not None else 0.0,
        "flesch_kincaid_grade": fkg if fkg is not None else 0.0,
        "digit_count": float(t.digits_count),
        "punctuation_count": float(t.punctuation_count),
        "special_count": float(t.special_count),
        "emoji_count": float(len(t.emojis)),
        "emoticon_count": float(len(t.emoticons)),
        "emoji_density": len(t.emojis) / denom,
        "emoticon_density": len(t.emoticons) / denom,
        "hashtag_density": len(t.hashtags) / denom,
        "mention_density": len(t.mentions) / denom,
        "url_density": len(t.urls) / denom,
        "repeated_word_count": float(sum(1 for c in word_counts.values() if c > 1)),
        "repeated_emoji_count": float(sum(1 for c in emoji_counts.values() if c > 1)),
    }
    for c, f in zip(LETTERS, t.letter_frequencies):
        out[f"letter_freq_{c}"] = f
    for c, f in zip(DIGITS, t.digit_frequencies):
        out[f"digit_freq_{c}"] = f
    specials = t.special_frequencies or (0.0,) * len(SPECIAL_CHARS)
    for i, f in enumerate(specials):
        out[f"special_freq_{i}"] = f
    return out


def stylometric_matrix(tokenized: Sequence[TokenizedPost]) -> FeatureMatrix:
    rows = []
    for t in tokenized:
        slots = extract_stylometric(t)
        rows.append([slots[c] for c in STYLOMETRIC_COLUMNS])
    values = np.array(rows, dtype=float) if rows else np.zeros((0, len(STYLOMETRIC_COLUMNS)))
    return FeatureMatrix([t.post_id for t in tokenized], list(STYLOMETRIC_COLUMNS), values)


# ---------------------------------------------------------------------------
# word n-grams


def _ngrams(words: Sequence[str], n: int) -> list[tuple[str, ...]]:
    return [tuple(words[i:i + n]) for i in range(len(words) - n + 1)]


@dataclass
class NGramVocabulary:
    sizes: tuple[int, ...] = (2, 3)
    top_k: int = 100
    entries: dict[int, list[tuple[tuple[str, ...], int]]] = field(default_factory=dict)

    @property
    def width(self) -> int:
        return self.top_k * len(self.sizes)

    @property
    def columns(self) -> list[str]:
        cols = []
        for n in self.sizes:
            grams = self.entries.get(n, [])
            for i in range(self.top_k):
                cols.append(" ".join(grams[i][0]) if i < len(grams) else f"<{n}gram_pad_{i}>")
        return cols

    def to_json(self) -> str:
        payload = {
            "sizes": list(self.sizes),
            "top_k": self.top_k,
            "entries": {str(n): [[list(g), c] for g, c in self.entries.get(n, [])] for n in self.sizes},
        }
        return json.dumps(payload, ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NGramVocabulary":
        d = json.loads(text)
        entries = {int(n): [(tuple(g), int(c)) for g, c in v] for n, v in d["entries"].items()}
        return cls(tuple(d["sizes"]), int(d["top_k"]), entries)


def build_ngram_vocab(tokenized: Iterable[TokenizedPost], sizes=(2, 3), top_k: int = 100) -> NGramVocabulary:
    """Most frequent n-grams per size; ties go to the lexicographically smaller n-gram."""
    counters = {n: Counter() for n in sizes}
    for t in tokenized:
        for n in sizes:
            counters[n].update(_ngrams(t.word_tokens, n))
    entries = {
        n: sorted(counters[n].items(), key=lambda kv: (-kv[1], kv[0]))[:top_k] for n in sizes
    }
    return NGramVocabulary(tuple(sizes), top_k, entries)


def ngram_features(tokenized: TokenizedPost, vocab: NGramVocabulary) -> np.ndarray:
    vec = np.zeros(vocab.width)
    for block, n in enumerate(vocab.sizes):
        counts = Counter(_ngrams(tokenized.word_tokens, n))
        for i, (gram, _) in enumerate(vocab.entries.get(n, [])):
            vec[block * vocab.top_k + i] = counts.get(gram, 0)
    return vec


def ngram_matrix(tokenized: Sequence[TokenizedPost], vocab: NGramVocabulary) -> FeatureMatrix:
    values = np.array([ngram_features(t, vocab) for t in tokenized]).reshape(len(tokenized), vocab.width)
    return FeatureMatrix([t.post_id for t in tokenized], vocab.columns, values)


# ---------------------------------------------------------------------------
# TF-IDF


def _terms(words: Sequence[str], ngram_range: tuple[int, int]) -> list[str]:
    lo, hi = ngram_range
    out = []
    for n in range(lo, hi + 1):
        out.extend(" ".join(g) for g in _ngrams(words, n))
    return out


@dataclass
class TfidfVocabulary:
    terms: list[str]
    document_frequencies: list[int]
    n_documents: int
    ngram_range: tuple[int, int] = (1, 2)

    def __post_init__(self):
        self.ngram_range = tuple(self.ngram_range)
        self._index = {t: i for i, t in enumerate(self.terms)}
        self.idf = np.array(
            [math.log((1 + self.n_documents) / (1 + df)) + 1.0 for df in self.document_frequencies]
        )

    def index(self, term: str) -> int | None:
        return self._index.get(term)

    def to_json(self) -> str:
        return json.dumps(
            {
                "terms": self.terms,
                "document_frequencies": self.document_frequencies,
                "n_documents": self.n_documents,
                "ngram_range": list(self.ngram_range),
            },
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, text: str) -> "TfidfVocabulary":
        d = json.loads(text)
        return cls(d["terms"], d["document_frequencies"], d["n_documents"], tuple(d["ngram_range"]))


def build_tfidf_vocab(
    tokenized: Iterable[TokenizedPost], max_terms: int = 3000, ngram_range=(1, 2)
) -> TfidfVocabulary:
    """Keep the ``max_terms`` terms with the highest document frequency (ties lexicographic)."""
    df = Counter()
    n_docs = 0
    for t in tokenized:
        n_docs += 1
        df.update(set(_terms(t.word_tokens, ngram_range)))
    ranked = sorted(df.items(), key=lambda kv: (-kv[1], kv[0]))[:max_terms]
    return TfidfVocabulary([t for t, _ in ranked], [c for _, c in ranked], n_docs, tuple(ngram_range))


def tfidf_features(tokenized: TokenizedPost, vocab: TfidfVocabulary) -> np.ndarray:
    vec = np.zeros(len(vocab.terms))
    for term, count in Counter(_terms(tokenized.word_tokens, vocab.ngram_range)).items():
        i = vocab.index(term)
        if i is not None:
            vec[i] = count * vocab.idf[i]
    norm = math.sqrt(math.fsum(v * v for v in vec[vec != 0]))
    return vec / norm if norm > 0 else vec


def tfidf_matrix(tokenized: Sequence[TokenizedPost], vocab: TfidfVocabulary) -> FeatureMatrix:
    values = np.array([tfidf_features(t, vocab) for t in tokenized]).reshape(len(tokenized), len(vocab.terms))
    return FeatureMatrix([t.post_id for t in tokenized], list(vocab.terms), values)
