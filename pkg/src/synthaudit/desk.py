"""Procedural author-labelled corpora for desk-scale experiments and tests.

Each author gets a private word pool, preferred hashtags and emojis, and a
sentence-length habit; posts mix those with a shared function-word pool.
``perturb`` imitates synthetic regeneration by stripping platform markers and
swapping author words for shared synonyms.
"""

from __future__ import annotations

import re

import numpy as np

from .corpus import Corpus, CorpusKind, Post

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "kl", "tr", "sn", "gr"]
_VOWELS = ["a", "e", "i", "o", "u", "oe", "ie", "aa"]
_CODAS = ["", "n", "r", "s", "t", "k", "m", "nd", "ls"]

COMMON_WORDS = (
    "the a and to of in is it that for on with this my was so we you are be at "
    "have just today all what love your new time but me not from they one more"
).split()
EMOJIS = ["😀", "😍", "🔥", "🎉", "🌞", "💪", "🙏", "✨", "🍕", "🌈", "⚽", "🎶", "🚀", "💖", "😂", "🌸"]


def _pseudo_word(rng: np.random.Generator) -> str:
    parts = []
    for _ in range(int(rng.integers(2, 4))):
        parts.append(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))])
    return "".join(parts) + _CODAS[rng.integers(len(_CODAS))]


def _lexicon(rng: np.random.Generator, size: int) -> list[str]:
    words: list[str] = []
    seen = set(COMMON_WORDS)
    while len(words) < size:
        w = _pseudo_word(rng)
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def procedural_corpus(
    n_authors: int = 12,
    posts_per_author: int | list[int] = 60,
    seed: int = 0,
    pool_size: int = 40,
    author_word_rate: float = 0.35,
) -> Corpus:
    rng = np.random.default_rng(seed)
    lexicon = _lexicon(rng, n_authors * pool_size)
    counts = (
        [posts_per_author] * n_authors if isinstance(posts_per_author, int) else list(posts_per_author)
    )
    posts = []
    for a in range(n_authors):
        author = f"author{a:02d}"
        pool = lexicon[a * pool_size:(a + 1) * pool_size]
        tags = [f"#{w}" for w in rng.choice(pool, size=3, replace=False)]
        emo = list(rng.choice(EMOJIS, size=2, replace=False))
        emoji_rate = float(rng.uniform(0.0, 2.0))
        tag_rate = float(rng.uniform(0.0, 2.5))
        mention_rate = float(rng.uniform(0.0, 0.8))
        sent_len = float(rng.uniform(4, 14))
        terminator = str(rng.choice([".", "!", "...", "!!"]))
        for j in range(counts[a]):
            sentences = []
            for _ in range(int(rng.integers(1, 4))):
                length = max(2, int(rng.poisson(sent_len)))
                words = [
                    str(rng.choice(pool)) if rng.random() < author_word_rate else str(rng.choice(COMMON_WORDS))
                    for _ in range(length)
                ]
                sentences.append(" ".join(words) + terminator)
            extras = []
            extras += [str(rng.choice(tags)) for _ in range(int(rng.poisson(tag_rate)))]
            extras += [f"@friend{int(rng.integers(5))}" for _ in range(int(rng.poisson(mention_rate)))]
            extras += [str(rng.choice(emo)) for _ in range(int(rng.poisson(emoji_rate)))]
            text = " ".join(sentences + extras)
            posts.append(Post(f"{author}-{j:03d}", author, text))
    return Corpus(posts, CorpusKind.REAL, f"procedural-{seed}")


_MARKER_RE = re.compile(r"(?:#\w+|@\w+|https?://\S+)")


def perturb(corpus: Corpus, seed: int = 0, swap_rate: float = 0.9, n_synonyms: int = 60) -> Corpus:
    """Marker-stripped, synonym-swapped copies of every post (``source_id`` set)."""
    from .corpus import is_emoji_base

    rng = np.random.default_rng(seed)
    shared = _lexicon(np.random.default_rng(seed + 10_000), n_synonyms)
    mapping: dict[str, str] = {}
    posts = []
    for p in corpus:
        text = _MARKER_RE.sub("", p.text)
        text = "".join(ch for ch in text if not is_emoji_base(ch) and ord(ch) not in (0xFE0F, 0x200D))
        out = []
        for tok in text.split():
            core = tok.rstrip(".!?")
            tail = tok[len(core):]
            if core and core not in COMMON_WORDS and rng.random() < swap_rate:
                if core not in mapping:
                    mapping[core] = shared[int(rng.integers(len(shared)))]
                core = mapping[core]
            out.append(core + tail)
        posts.append(Post(f"syn-{p.id}", p.author, " ".join(out), source_id=p.id))
    return Corpus(posts, CorpusKind.SYNTHETIC, f"{corpus.label}:perturbed")
