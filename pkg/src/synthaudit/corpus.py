"""Corpus ingestion, tokenization, real/synthetic alignment and per-author statistics.

Corpus files are UTF-8 JSON lines with the fields ``id``, ``author``, ``text``
and optionally ``timestamp`` and ``source_id``.
"""

from __future__ import annotations

import json
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np


class CorpusError(ValueError):
    """Raised for malformed corpus files or inconsistent corpus contents."""


class CorpusKind(str, Enum):
    REAL = "real"
    SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class Post:
    id: str
    author: str
    text: str
    timestamp: str | None = None
    source_id: str | None = None

    @property
    def degenerate(self) -> bool:
        return not self.text.strip()


@dataclass(frozen=True)
class Corpus:
    posts: tuple[Post, ...]
    kind: CorpusKind = CorpusKind.REAL
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "posts", tuple(self.posts))
        object.__setattr__(self, "kind", CorpusKind(self.kind))
        seen = set()
        for post in self.posts:
            if not post.id:
                raise CorpusError("post id must be non-empty")
            if not post.author:
                raise CorpusError(f"post {post.id!r} has an empty author")
            if post.id in seen:
                raise CorpusError(f"duplicate post id {post.id!r}")
            seen.add(post.id)

    def __len__(self) -> int:
        return len(self.posts)

    def __iter__(self) -> Iterator[Post]:
        return iter(self.posts)

    @property
    def authors(self) -> list[str]:
        """Distinct author labels in first-appearance order."""
        return list(dict.fromkeys(p.author for p in self.posts))

    @property
    def degenerate_ids(self) -> list[str]:
        return [p.id for p in self.posts if p.degenerate]

    def by_id(self) -> dict[str, Post]:
        return {p.id: p for p in self.posts}

    def subset(self, ids: Iterable[str], label: str | None = None) -> "Corpus":
        """Return the posts whose ids are in ``ids``, keeping corpus order."""
        wanted = set(ids)
        posts = [p for p in self.posts if p.id in wanted]
        return Corpus(posts, self.kind, self.label if label is None else label)


_FIELDS = ("id", "author", "text", "timestamp", "source_id")
_REQUIRED = ("id", "author", "text")


def load_corpus(path, kind=CorpusKind.REAL, label: str | None = None) -> Corpus:
    """Read a JSON-lines corpus file. Text is lowercased on load."""
    path = Path(path)
    posts = []
    seen: dict[str, int] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON record ({exc.msg})") from None
            if not isinstance(record, dict):
                raise CorpusError(f"{path}:{lineno}: record is not a JSON object")
            for name in _REQUIRED:
                if name not in record or record[name] is None:
                    raise CorpusError(f"{path}:{lineno}: missing required field {name!r}")
            for name in _FIELDS:
                value = record.get(name)
                if value is not None and not isinstance(value, str):
                    raise CorpusError(f"{path}:{lineno}: field {name!r} must be a string")
            pid = record["id"]
            if not pid:
                raise CorpusError(f"{path}:{lineno}: empty id")
            if not record["author"]:
                raise CorpusError(f"{path}:{lineno}: empty author")
            if pid in seen:
                raise CorpusError(
                    f"{path}:{lineno}: duplicate id {pid!r} (first seen on line {seen[pid]})"
                )
            seen[pid] = lineno
            posts.append(
                Post(
                    id=pid,
                    author=record["author"],
                    text=record["text"].lower(),
                    timestamp=record.get("timestamp"),
                    source_id=record.get("source_id"),
                )
            )
    return Corpus(posts, kind, path.stem if label is None else label)


def dump_post(post: Post) -> str:
    record = {"id": post.id, "author": post.author, "text": post.text}
    if post.timestamp is not None:
        record["timestamp"] = post.timestamp
    if post.source_id is not None:
        record["source_id"] = post.source_id
    return json.dumps(record, ensure_ascii=False)


def write_corpus(corpus: Corpus | Iterable[Post], path) -> None:
    """Write posts in the canonical JSON-lines layout (fixed key order, LF endings)."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for post in corpus:
            fh.write(dump_post(post) + "\n")


# ---------------------------------------------------------------------------
# tokenization


@dataclass(frozen=True)
class TokenizedPost:
    post_id: str
    word_tokens: tuple[str, ...] = ()
    sentences: tuple[tuple[int, int], ...] = ()
    emojis: tuple[str, ...] = ()
    emoticons: tuple[str, ...] = ()
    hashtags: tuple[str, ...] = ()
    mentions: tuple[str, ...] = ()
    urls: tuple[str, ...] = ()
    digits_count: int = 0
    punctuation_count: int = 0
    special_count: int = 0
    letter_frequencies: tuple[float, ...] = (0.0,) * 26
    digit_frequencies: tuple[float, ...] = (0.0,) * 10
    special_frequencies: tuple[float, ...] = field(default=())

    @property
    def n_words(self) -> int:
        return len(self.word_tokens)

    @property
    def n_sentences(self) -> int:
        return len(self.sentences)


SPECIAL_CHARS = "#@/\\_-*&%$+=~^"

_URL_RE = re.compile(r"https?://\S+")
_HASHTAG_RE = re.compile(r"#\w+")
_MENTION_RE = re.compile(r"@\w+")
_WORD_RE = re.compile(r"(?:[^\W\d_]|')+")
_TERMINATOR_RE = re.compile(r"[!?…]+|\.+(?!\d)|\n")

_EMOJI_MODIFIERS = {0xFE0E, 0xFE0F, 0x20E3} | set(range(0x1F3FB, 0x1F400)) | set(range(0xE0020, 0xE0080))
_ZWJ = 0x200D
_REGIONAL = range(0x1F1E6, 0x1F200)


@lru_cache(maxsize=None)
def emoji_ranges() -> tuple[tuple[int, int], ...]:
    text = resources.files("synthaudit.data").joinpath("emoji_ranges.txt").read_text("utf-8")
    out = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        lo, hi = line.split()
        out.append((int(lo, 16), int(hi, 16)))
    return tuple(out)


@lru_cache(maxsize=None)
def emoticon_list() -> tuple[str, ...]:
    text = resources.files("synthaudit.data").joinpath("emoticons.txt").read_text("utf-8")
    return tuple(line for line in text.splitlines() if line.strip())


@lru_cache(maxsize=None)
def _emoticon_re() -> re.Pattern:
    alts = sorted(emoticon_list(), key=lambda s: (-len(s), s))
    return re.compile(r"(?<!\S)(?:" + "|".join(re.escape(a) for a in alts) + r")(?!\S)")


def is_emoji_base(ch: str) -> bool:
    cp = ord(ch)
    if cp in _EMOJI_MODIFIERS:
        return False
    return any(lo <= cp <= hi for lo, hi in emoji_ranges())


def _emoji_spans(text: str, taken: np.ndarray) -> list[tuple[int, int]]:
    # base codepoint + trailing modifiers; ZWJ joins the next base into the same sequence
    spans = []
    i, n = 0, len(text)
    while i < n:
        if taken[i] or not is_emoji_base(text[i]):
            i += 1
            continue
        start = i
        if ord(text[i]) in _REGIONAL and i + 1 < n and ord(text[i + 1]) in _REGIONAL:
            i += 2
        else:
            i += 1
        while i < n:
            cp = ord(text[i])
            if cp in _EMOJI_MODIFIERS:
                i += 1
            elif cp == _ZWJ and i + 1 < n and is_emoji_base(text[i + 1]):
                i += 2
            else:
                break
        spans.append((start, i))
    return spans


def _claim(pattern: re.Pattern, text: str, taken: np.ndarray) -> list[tuple[int, int]]:
    spans = []
    for m in pattern.finditer(text):
        s, e = m.span()
        if taken[s:e].any():
            continue
        taken[s:e] = True
        spans.append((s, e))
    return spans


def _freqs(counter: Counter, alphabet: str) -> tuple[float, ...]:
    total = sum(counter[c] for c in alphabet)
    if total == 0:
        return (0.0,) * len(alphabet)
    return tuple(counter[c] / total for c in alphabet)


def token_spans(text: str) -> dict[str, list[tuple[int, int]]]:
    """Character spans of every extracted token, keyed by token type.

    Extraction order is urls, mentions, hashtags, emoticons, emojis, words; a
    character belongs to at most one span.
    """
    taken = np.zeros(len(text), dtype=bool)
    spans = {
        "urls": _claim(_URL_RE, text, taken),
        "mentions": _claim(_MENTION_RE, text, taken),
        "hashtags": _claim(_HASHTAG_RE, text, taken),
        "emoticons": _claim(_emoticon_re(), text, taken),
    }
    emoji = _emoji_spans(text, taken)
    for s, e in emoji:
        taken[s:e] = True
    spans["emojis"] = emoji
    # claimed characters are blanked so word runs cannot reach into them
    masked = "".join(" " if t else c for c, t in zip(text, taken))
    words = []
    for m in _WORD_RE.finditer(masked):
        s, e = m.span()
        while s < e and text[s] == "'":
            s += 1
        while e > s and text[e - 1] == "'":
            e -= 1
        if s < e:
            words.append((s, e))
    for s, e in words:
        taken[s:e] = True
    spans["words"] = words
    return spans


def tokenize(post: Post) -> TokenizedPost:
    text = post.text.lower()
    if not text:
        return TokenizedPost(post.id, special_frequencies=(0.0,) * len(SPECIAL_CHARS))
    spans = token_spans(text)
    word_spans = spans["words"]
    words = tuple(text[s:e] for s, e in word_spans)

    url_mask = np.zeros(len(text), dtype=bool)
    for s, e in spans["urls"]:
        url_mask[s:e] = True
    emoticon_mask = np.zeros(len(text), dtype=bool)
    for s, e in spans["emoticons"]:
        emoticon_mask[s:e] = True

    # sentences are runs of word tokens between terminators; empty runs are dropped
    plain = "".join(" " if u or m else c for c, u, m in zip(text, url_mask, emoticon_mask))
    boundaries = [m.start() for m in _TERMINATOR_RE.finditer(plain)]
    sentences = []
    start_tok = 0
    b = 0
    for idx, (s, _e) in enumerate(word_spans):
        crossed = False
        while b < len(boundaries) and boundaries[b] < s:
            b += 1
            crossed = True
        if crossed and idx > start_tok:
            sentences.append((start_tok, idx))
            start_tok = idx
        elif crossed:
            start_tok = idx
    if start_tok < len(word_spans):
        sentences.append((start_tok, len(word_spans)))

    chars = Counter()
    digits = punct = special = 0
    for i, ch in enumerate(text):
        if url_mask[i]:
            continue
        chars[ch] += 1
        if ch in SPECIAL_CHARS:
            special += 1
        elif ch.isdecimal() and ch in "0123456789":
            digits += 1
        elif not emoticon_mask[i] and unicodedata.category(ch).startswith("P"):
            punct += 1

    return TokenizedPost(
        post_id=post.id,
        word_tokens=words,
        sentences=tuple(sentences),
        emojis=tuple(text[s:e] for s, e in spans["emojis"]),
        emoticons=tuple(text[s:e] for s, e in spans["emoticons"]),
        hashtags=tuple(text[s:e] for s, e in spans["hashtags"]),
        mentions=tuple(text[s:e] for s, e in spans["mentions"]),
        urls=tuple(text[s:e] for s, e in spans["urls"]),
        digits_count=digits,
        punctuation_count=punct,
        special_count=special,
        letter_frequencies=_freqs(chars, "abcdefghijklmnopqrstuvwxyz"),
        digit_frequencies=_freqs(chars, "0123456789"),
        special_frequencies=_freqs(chars, SPECIAL_CHARS),
    )


def tokenize_corpus(corpus: Corpus) -> list[TokenizedPost]:
    return [tokenize(p) for p in corpus]


# ---------------------------------------------------------------------------
# alignment


@dataclass(frozen=True)
class AlignedCorpus:
    pairs: tuple[tuple[Post, Post], ...]
    unmatched_real: tuple[Post, ...]
    unmatched_synth: tuple[Post, ...]
    dangling_source_ids: int = 0


def align(real: Corpus, synth: Corpus) -> AlignedCorpus:
    """Pair synthetic posts with the real post named by their ``source_id``."""
    real_by_id = real.by_id()
    claimed: dict[str, str] = {}
    pairs = []
    unmatched_synth = []
    dangling = 0
    for post in synth:
        src = post.source_id
        if src is None or src not in real_by_id:
            if src is not None:
                dangling += 1
            unmatched_synth.append(post)
            continue
        if src in claimed:
            raise CorpusError(
                f"real post {src!r} doubly claimed by synthetic posts {claimed[src]!r} and {post.id!r}"
            )
        claimed[src] = post.id
        pairs.append((real_by_id[src], post))
    unmatched_real = [p for p in real if p.id not in claimed]
    return AlignedCorpus(tuple(pairs), tuple(unmatched_real), tuple(unmatched_synth), dangling)


# ---------------------------------------------------------------------------
# per-author statistics


@dataclass
class AuthorStats:
    counts: list[tuple[str, int]]
    post_count_histogram: tuple[list[int], list[float]]
    length_histogram: tuple[list[int], list[float]]
    median_length: float


def author_counts(corpus: Corpus) -> list[tuple[str, int]]:
    """Posts per author, most prolific first; ties broken by label."""
    tally = Counter(p.author for p in corpus)
    return sorted(tally.items(), key=lambda kv: (-kv[1], kv[0]))


def author_stats(corpus: Corpus, bins: int = 30) -> AuthorStats:
    if len(corpus) == 0:
        raise CorpusError("author_stats needs a non-empty corpus")
    counts = author_counts(corpus)
    per_author = np.array([c for _, c in counts], dtype=float)
    lengths = np.array([tokenize(p).n_words for p in corpus], dtype=float)
    ph, pe = np.histogram(per_author, bins=bins)
    lh, le = np.histogram(lengths, bins=bins)
    return AuthorStats(
        counts=counts,
        post_count_histogram=(ph.tolist(), pe.tolist()),
        length_histogram=(lh.tolist(), le.tolist()),
        median_length=float(np.median(lengths)),
    )
