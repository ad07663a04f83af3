import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthaudit.corpus import (
    CorpusError,
    CorpusKind,
    Post,
    align,
    author_counts,
    author_stats,
    emoticon_list,
    load_corpus,
    tokenize,
    write_corpus,
)

from conftest import make_corpus, write_jsonl


def test_load_two_records(tmp_path):
    path = write_jsonl(tmp_path / "c.jsonl", [{"id": "p1", "author": "a", "text": "Hi"}, {"id": "p2", "author": "b", "text": "Yo"}])
    c = load_corpus(path, CorpusKind.REAL)
    assert len(c) == 2
    assert [p.text for p in c] == ["hi", "yo"]  # lowercased on load


def test_duplicate_id_named(tmp_path):
    path = write_jsonl(tmp_path / "c.jsonl", [{"id": "p1", "author": "a", "text": "x"}, {"id": "p1", "author": "b", "text": "y"}])
    with pytest.raises(CorpusError, match="p1"):
        load_corpus(path)


def test_missing_author_reports_line(tmp_path):
    path = write_jsonl(tmp_path / "c.jsonl", [{"id": "p1", "author": "a", "text": "x"}, {"id": "p2", "text": "y"}])
    with pytest.raises(CorpusError, match=r":2: missing required field 'author'"):
        load_corpus(path)


def test_malformed_json_line(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('{"id": "p1", "author": "a", "text": "x"}\n{oops\n', encoding="utf-8")
    with pytest.raises(CorpusError, match=":2:"):
        load_corpus(path)


def test_tokenize_mixed_markers():
    t = tokenize(Post("p", "a", "great day! #sun @amy 😀"))
    assert t.word_tokens == ("great", "day")
    assert t.hashtags == ("#sun",)
    assert t.mentions == ("@amy",)
    assert t.emojis == ("😀",)
    assert t.n_sentences == 1


def test_tokenize_empty():
    t = tokenize(Post("p", "a", ""))
    assert t.n_words == 0 and t.n_sentences == 0
    assert t.punctuation_count == t.special_count == t.digits_count == 0
    assert sum(t.letter_frequencies) == 0


def test_tokenize_url():
    t = tokenize(Post("p", "a", "visit https://a.b now"))
    assert t.urls == ("https://a.b",)
    assert t.word_tokens == ("visit", "now")
    assert t.n_sentences == 1  # the dot inside the url does not split


def test_sentence_split_rules():
    assert tokenize(Post("p", "a", "one. two! three? four… five\nsix")).n_sentences == 6
    assert tokenize(Post("p", "a", "no terminal punctuation")).n_sentences == 1
    assert tokenize(Post("p", "a", "pi is 3.14 ok")).n_sentences == 1
    assert tokenize(Post("p", "a", "!!! ...")).n_sentences == 0


def test_emoticons_not_punctuation():
    t = tokenize(Post("p", "a", "nice :) see you ;)"))
    assert t.emoticons == (":)", ";)")
    assert t.punctuation_count == 0
    assert len(emoticon_list()) == 40


def test_emoji_sequences_grouped():
    # skin-tone modifier and ZWJ family stay one sequence each; flag pair is one
    t = tokenize(Post("p", "a", "👍🏽 👨‍👩‍👧 🇳🇱"))
    assert len(t.emojis) == 3


def test_frequencies_sum_to_one():
    t = tokenize(Post("p", "a", "abc 123 zz"))
    assert sum(t.letter_frequencies) == pytest.approx(1.0)
    assert sum(t.digit_frequencies) == pytest.approx(1.0)
    assert t.digits_count == 3


def test_tokenize_deterministic():
    p = Post("p", "a", "hey @x #y https://z.q/a?b=1 :D 🎉 it's fine...")
    assert tokenize(p) == tokenize(p)


_pieces = list("abc xyz#@:)./!?'é😀🏽\n-") + ["https://", "😂", ":d", "3.5"]
_text = st.lists(st.sampled_from(_pieces), max_size=30).map("".join)


@settings(max_examples=200, deadline=None)
@given(_text)
def test_token_coverage_no_double_count(text):
    t = tokenize(Post("p", "a", text))
    words = "".join(t.word_tokens)
    # every letter of the text lands in exactly one product
    letters_in_products = sum(
        sum(ch.isalpha() for ch in s) for s in (words, *t.hashtags, *t.mentions, *t.urls, *t.emoticons)
    )
    assert letters_in_products == sum(ch.isalpha() for ch in text)
    for f in (t.letter_frequencies, t.digit_frequencies):
        assert all(0 <= v <= 1 for v in f)
        assert sum(f) == pytest.approx(1.0) or sum(f) == 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.text(min_size=1, max_size=8), st.text(max_size=40)), min_size=1, max_size=10))
def test_write_load_roundtrip(tmp_path_factory, rows):
    posts = [Post(f"id{i}", a, t.lower(), "2024-01-01T00:00:00Z" if i % 2 else None) for i, (a, t) in enumerate(rows)]
    c = make_corpus(posts)
    path = tmp_path_factory.mktemp("rt") / "c.jsonl"
    write_corpus(c, path)
    back = load_corpus(path, CorpusKind.REAL, "toy")
    assert back.posts == c.posts
    raw = path.read_bytes()
    assert b"\r\n" not in raw
    assert list(json.loads(raw.splitlines()[0]).keys())[:3] == ["id", "author", "text"]


def test_align_cases():
    real = make_corpus([("p1", "a", "x"), ("p2", "a", "y")])
    syn = make_corpus([Post("s1", "a", "x", source_id="p1")], CorpusKind.SYNTHETIC)
    al = align(real, syn)
    assert len(al.pairs) == 1 and [p.id for p in al.unmatched_real] == ["p2"]

    syn = make_corpus([Post("s1", "a", "x", source_id="p9")], CorpusKind.SYNTHETIC)
    al = align(real, syn)
    assert al.pairs == () and [p.id for p in al.unmatched_synth] == ["s1"]
    assert al.dangling_source_ids == 1

    syn = make_corpus([Post("s1", "a", "x", source_id="p1"), Post("s2", "a", "y", source_id="p1")], CorpusKind.SYNTHETIC)
    with pytest.raises(CorpusError, match="doubly claimed"):
        align(real, syn)


def test_author_counts():
    c = make_corpus([("1", "a", "x"), ("2", "a", "x"), ("3", "b", "y"), ("4", "a", "z")])
    assert author_counts(c) == [("a", 3), ("b", 1)]
    assert author_counts(make_corpus([("1", "solo", "x")])) == [("solo", 1)]


def test_author_stats_tally():
    rows = [(f"p{i}", f"w{i % 5}", "word " * (i % 7)) for i in range(37)]
    c = make_corpus(rows)
    stats = author_stats(c)
    tally = {}
    for _, a, _ in rows:
        tally[a] = tally.get(a, 0) + 1
    assert dict(stats.counts) == tally
    assert sum(stats.length_histogram[0]) == 37
    with pytest.raises(CorpusError):
        author_stats(make_corpus([]))


def test_degenerate_posts_flagged():
    c = make_corpus([("1", "a", ""), ("2", "a", "ok")])
    assert c.degenerate_ids == ["1"]
