import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthaudit.attack import (
    AttackError,
    PredictionSet,
    TrainConfig,
    build_subsets,
    evaluate,
    fit_attacker,
    kfold_assignments,
    load_external_predictions,
    loss_and_grad,
    predict_proba,
    relative_reduction,
    run_subset_attack,
    softmax,
    stack_ensemble,
    stratified_split,
    train_logreg,
    write_predictions_csv,
)
from synthaudit.corpus import Post, tokenize
from synthaudit.desk import procedural_corpus

from conftest import make_corpus


def _corpus_with_counts(counts):
    rows = []
    for author, n in counts.items():
        rows += [(f"{author}-{i}", author, f"text {i}") for i in range(n)]
    return make_corpus(rows)


def test_subsets_eight_authors():
    c = _corpus_with_counts({f"a{i}": 10 - i for i in range(8)})
    q, full = build_subsets(c, [0.25, 1.0])
    assert sorted({p.author for p in q}) == ["a0", "a1"]
    assert full.posts == c.posts


def test_subsets_tie_lexicographic():
    c = _corpus_with_counts({"z": 5, "y": 3, "x": 3, "w": 1})
    (half,) = build_subsets(c, [0.5])
    assert {p.author for p in half} == {"z", "x"}
    with pytest.raises(AttackError):
        build_subsets(make_corpus([]), [0.5])


def test_stratified_split_rules():
    c = _corpus_with_counts({"ten": 10, "two": 2, "one": 1})
    s = stratified_split(c, 0.2, seed=3)
    test_authors = [i.split("-")[0] for i in s.test_ids]
    assert test_authors.count("ten") == 2 and test_authors.count("two") == 1
    assert s.flagged_authors == ["one"]
    assert set(s.train_ids).isdisjoint(s.test_ids)
    assert stratified_split(c, 0.2, seed=3) == s


def test_split_full_toy_corpus():
    c = procedural_corpus(n_authors=5, posts_per_author=[3, 7, 12, 2, 9], seed=0)
    s = stratified_split(c, 0.2, seed=1)
    by_id = c.by_id()
    assert {by_id[i].author for i in s.train_ids} == {by_id[i].author for i in s.test_ids}
    assert set(s.train_ids) | set(s.test_ids) == set(by_id)
    assert not set(s.train_ids) & set(s.test_ids)


def test_gradient_finite_differences():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(5, 4))
    Y = np.eye(3)[[0, 1, 2, 1, 0]]
    W = rng.normal(size=(3, 4))
    b = rng.normal(size=3)
    _, gW, gb = loss_and_grad(W, b, X, Y, lam=0.7)
    h = 1e-6
    num_W = np.zeros_like(W)
    for idx in np.ndindex(*W.shape):
        Wp, Wm = W.copy(), W.copy()
        Wp[idx] += h
        Wm[idx] -= h
        num_W[idx] = (loss_and_grad(Wp, b, X, Y, 0.7)[0] - loss_and_grad(Wm, b, X, Y, 0.7)[0]) / (2 * h)
    num_b = np.array(
        [(loss_and_grad(W, b + h * e, X, Y, 0.7)[0] - loss_and_grad(W, b - h * e, X, Y, 0.7)[0]) / (2 * h) for e in np.eye(3)]
    )
    rel = np.abs(np.concatenate([(gW - num_W).ravel(), gb - num_b])) / np.maximum(
        1e-8, np.abs(np.concatenate([gW.ravel(), gb])) + np.abs(np.concatenate([num_W.ravel(), num_b]))
    )
    assert rel.max() < 1e-5


def _clusters(seed=0, n=40):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(-3, 0.5, size=(n, 2)), rng.normal(3, 0.5, size=(n, 2))])
    y = ["left"] * n + ["right"] * n
    return X, y


def test_separable_clusters():
    X, y = _clusters()
    m = train_logreg(X, y, lam=0.01, epochs=100)
    ps = predict_proba(m, X)
    assert ps.predicted() == y
    np.testing.assert_allclose(ps.probabilities.sum(axis=1), 1, atol=1e-6)


def test_huge_lambda_gives_priors():
    X, y = _clusters()
    X, y = X[:60], y[:60]  # 40 left, 20 right
    m = train_logreg(X, y, lam=1e6, epochs=50)
    assert np.abs(m.weights).max() < 1e-3
    p = predict_proba(m, X).probabilities[0]
    np.testing.assert_allclose(p, [40 / 60, 20 / 60], atol=1e-3)


def test_zero_weights_uniform():
    P = softmax(np.zeros((3, 4)))
    np.testing.assert_allclose(P, 0.25)


@pytest.mark.parametrize("batch", [0, 8])
def test_loss_history_non_increasing(batch):
    X, y = _clusters(seed=2, n=25)
    X = X + np.random.default_rng(1).normal(scale=2.0, size=X.shape)
    m = train_logreg(X, y, lam=1.0, epochs=60, lr=5.0, batch=batch)
    h = m.loss_history
    assert all(b <= a + 1e-6 for a, b in zip(h, h[1:]))


def test_training_bit_deterministic():
    X, y = _clusters(seed=4)
    a = train_logreg(X, y, seed=9, epochs=30)
    b = train_logreg(X, y, seed=9, epochs=30)
    assert np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)


def test_training_errors():
    X, y = _clusters()
    with pytest.raises(AttackError):
        train_logreg(X, ["left"] * len(y))
    bad = X.copy()
    bad[0, 0] = np.nan
    with pytest.raises(AttackError):
        train_logreg(bad, y)
    m = train_logreg(X, y, epochs=5)
    with pytest.raises(AttackError):
        predict_proba(m, np.zeros((2, 3)))


def _ps(ids, labels, pred_labels):
    P = np.array([[1.0 if l == p else 0.0 for l in labels] for p in pred_labels])
    return PredictionSet(ids, labels, P)


def test_evaluate_hand_case():
    ids = ["1", "2", "3", "4"]
    acc, f1 = evaluate(_ps(ids, ["a", "b"], ["a", "b", "b", "b"]), dict(zip(ids, "aabb")))
    assert acc == 0.75
    assert f1 == pytest.approx((2 / 3 + 0.8) / 2, abs=1e-12)


def test_evaluate_edges():
    ids = ["1", "2", "3", "4"]
    assert evaluate(_ps(ids, ["a", "b"], list("aabb")), dict(zip(ids, "aabb"))) == (1.0, 1.0)
    assert evaluate(_ps(ids, ["a", "b"], list("aaaa")), dict(zip(ids, "aabb")))[0] == 0.5
    # label "c" has no support and no predictions: it counts as F1 = 0
    assert evaluate(_ps(ids, ["a", "b", "c"], list("aabb")), dict(zip(ids, "aabb")))[1] == pytest.approx(2 / 3)
    with pytest.raises(AttackError):
        evaluate(_ps(ids, ["a"], list("aaaa")), {"9": "a"})


@settings(max_examples=50, deadline=None)
@given(st.permutations(list(range(12))))
def test_accuracy_permutation_invariant(perm):
    rng = np.random.default_rng(0)
    ids = [str(i) for i in range(12)]
    P = rng.random((12, 3))
    truth = {i: "abc"[j % 3] for j, i in enumerate(ids)}
    base = evaluate(PredictionSet(ids, list("abc"), P), truth)
    shuffled = evaluate(PredictionSet([ids[i] for i in perm], list("abc"), P[list(perm)]), truth)
    assert base == shuffled


def test_relative_reduction_anchors():
    assert relative_reduction(0.81, 0.297) == pytest.approx(63.33, abs=0.01)
    assert relative_reduction(0.81, 0.165) == pytest.approx(79.63, abs=0.01)
    assert relative_reduction(0.5, 0.5) == 0
    with pytest.raises(AttackError):
        relative_reduction(0, 0.1)


def _train_test_sources(rng, n_train=60, n_test=30, labels=("a", "b", "c")):
    tr_ids = [f"t{i}" for i in range(n_train)]
    te_ids = [f"e{i}" for i in range(n_test)]
    tr_y = {i: labels[k % 3] for k, i in enumerate(tr_ids)}
    te_y = {i: labels[k % 3] for k, i in enumerate(te_ids)}
    return tr_ids, te_ids, tr_y, te_y


def _noisy(ids, truth, labels, rng, acc):
    P = np.full((len(ids), len(labels)), 0.1)
    for r, i in enumerate(ids):
        j = labels.index(truth[i]) if rng.random() < acc else int(rng.integers(len(labels)))
        P[r, j] = 0.8
    return PredictionSet(ids, list(labels), P / P.sum(axis=1, keepdims=True))


def test_ensemble_identical_sources():
    rng = np.random.default_rng(0)
    labels = ["a", "b", "c"]
    tr_ids, te_ids, tr_y, te_y = _train_test_sources(rng)
    tr, te = _noisy(tr_ids, tr_y, labels, rng, 0.7), _noisy(te_ids, te_y, labels, rng, 0.7)
    ens = stack_ensemble([tr, tr], [te, te], tr_y, seed=0, config=TrainConfig(epochs=100))
    base_acc = evaluate(te, te_y)[0]
    assert abs(evaluate(ens, te_y)[0] - base_acc) <= 1 / len(te_ids) + 1e-12


def test_ensemble_perfect_plus_uniform():
    rng = np.random.default_rng(1)
    labels = ["a", "b", "c"]
    tr_ids, te_ids, tr_y, te_y = _train_test_sources(rng)
    perfect_tr, perfect_te = _noisy(tr_ids, tr_y, labels, rng, 1.0), _noisy(te_ids, te_y, labels, rng, 1.0)
    uni_tr = PredictionSet(tr_ids, labels, np.full((len(tr_ids), 3), 1 / 3))
    uni_te = PredictionSet(te_ids, labels, np.full((len(te_ids), 3), 1 / 3))
    ens = stack_ensemble([perfect_tr, uni_tr], [perfect_te, uni_te], tr_y, seed=0, config=TrainConfig(epochs=100))
    assert evaluate(ens, te_y)[0] >= 1.0 - 1 / len(te_ids)


def test_ensemble_needs_two_sources():
    ps = PredictionSet(["1"], ["a"], [[1.0]])
    with pytest.raises(AttackError):
        stack_ensemble([ps], [ps], {"1": "a"}, 0)


def test_kfold_stratified():
    labels = ["a"] * 10 + ["b"] * 7
    f = kfold_assignments(labels, 5, seed=0)
    for l in "ab":
        counts = np.bincount(f[[i for i, x in enumerate(labels) if x == l]], minlength=5)
        assert counts.max() - counts.min() <= 1


def test_external_predictions(tmp_path):
    p = tmp_path / "ext.csv"
    p.write_text("post_id,a,b\n1,0.25,0.75\n2,0.25,0.25\n")
    ps = load_external_predictions(p, ["a", "b"])
    assert ps.post_ids == ["1", "2"] and ps.warnings == 1
    np.testing.assert_allclose(ps.probabilities[1], [0.5, 0.5])
    with pytest.raises(AttackError, match="'c'"):
        load_external_predictions(p, ["a", "c"])
    p.write_text("post_id,a,b\n1,-0.1,1.1\n")
    with pytest.raises(AttackError, match="negative"):
        load_external_predictions(p, ["a", "b"])
    out = tmp_path / "round.csv"
    write_predictions_csv(ps, out)
    np.testing.assert_allclose(load_external_predictions(out, ["a", "b"]).probabilities, ps.probabilities)


def test_ngram_attacker_learns_phrases():
    rows = []
    phrases = {"ann": "over the moon", "bob": "under the weather", "cat": "on cloud nine"}
    rng = np.random.default_rng(0)
    filler = ["just", "today", "really", "so", "we", "are"]
    for a, ph in phrases.items():
        for i in range(20):
            words = list(rng.choice(filler, size=4))
            rows.append(Post(f"{a}{i}", a, " ".join(words[:2]) + " " + ph + " " + " ".join(words[2:])))
    toks = [tokenize(p) for p in rows]
    y = [p.author for p in rows]
    att = fit_attacker("ngram", toks[::2], y[::2], seed=0, config=TrainConfig(epochs=80))
    acc, _ = evaluate(att.predict(toks[1::2]), {p.id: p.author for p in rows[1::2]})
    assert acc == 1.0


def test_run_subset_attack_smoke():
    c = procedural_corpus(n_authors=4, posts_per_author=20, seed=3)
    rep = run_subset_attack(c, ["stylometric", "tfidf", "ensemble"], seed=0, config=TrainConfig(epochs=30))
    d = rep.to_dict()
    assert set(d["scores"]) == {"stylometric", "tfidf", "ensemble"}
    assert all(0 <= s["accuracy"] <= 1 and 0 <= s["macro_f1"] <= 1 for s in d["scores"].values())
    assert d["n_test"] == 4 * 4
