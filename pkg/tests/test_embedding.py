import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from synthaudit.corpus import Post, tokenize
from synthaudit.embedding import (
    EmbeddingError,
    EmbeddingTable,
    covariance_summary,
    embed_post,
    jacobi_eigh,
    kmeans,
    load_embedding_table,
    normality_check,
    pca_project,
    shapiro_wilk_w,
    write_projection_csv,
)


def _table(**vecs):
    return EmbeddingTable(len(next(iter(vecs.values()))), {k: np.array(v, float) for k, v in vecs.items()})


def test_load_table(tmp_path):
    p = tmp_path / "e.txt"
    p.write_text("a 1 2 3\nb 4 5 6\n")
    t = load_embedding_table(p)
    assert t.dimension == 3 and len(t) == 2
    np.testing.assert_array_equal(t.vectors["b"], [4, 5, 6])


@pytest.mark.parametrize(
    "body,match",
    [
        ("a 1 2 3\nb 4 5\n", ":2: dimension mismatch"),
        ("a 1 2\na 3 4\n", "repeated token 'a'"),
        ("a 1 x\n", ":1: non-numeric"),
    ],
)
def test_load_table_errors(tmp_path, body, match):
    p = tmp_path / "e.txt"
    p.write_text(body)
    with pytest.raises(EmbeddingError, match=match):
        load_embedding_table(p)


def test_embed_mean():
    t = _table(a=[1, 0], b=[0, 1])
    e = embed_post(tokenize(Post("p", "x", "a b")), t)
    np.testing.assert_allclose(e.vector, [0.5, 0.5])
    assert e.oov_fraction == 0


def test_embed_all_oov_and_empty():
    t = _table(a=[1, 0])
    e = embed_post(tokenize(Post("p", "x", "zz qq")), t)
    assert e.oov_fraction == 1 and not e.vector.any()
    e = embed_post(tokenize(Post("p", "x", "")), t)
    assert e.oov_fraction == 0 and not e.vector.any()


def test_embed_skips_oov_instead_of_zero():
    t = _table(a=[2, 0])
    e = embed_post(tokenize(Post("p", "x", "a zz")), t)
    np.testing.assert_allclose(e.vector, [2, 0])
    assert e.oov_fraction == 0.5


@settings(max_examples=50, deadline=None)
@given(st.permutations(["a", "b", "c", "d", "a", "c"]))
def test_embed_permutation_invariant(words):
    rng = np.random.default_rng(3)
    t = EmbeddingTable(5, {w: rng.normal(size=5) for w in "abcd"})
    ref = embed_post(tokenize(Post("p", "x", "a b c d a c")), t).vector
    got = embed_post(tokenize(Post("p", "x", " ".join(words))), t).vector
    assert np.array_equal(ref, got)


def test_covariance_examples():
    s = covariance_summary(np.array([[0.0, 0.0], [2.0, 0.0]]))
    np.testing.assert_allclose(s.variances, [2, 0])
    assert s.trace == pytest.approx(2.0, abs=1e-12)
    assert covariance_summary(np.ones((4, 3))).trace == 0
    assert covariance_summary(np.array([[1.0], [2.0], [3.0]])).trace == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(EmbeddingError):
        covariance_summary(np.ones((1, 3)))


def test_trace_rotation_invariant():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(40, 6)) * np.arange(1, 7)
    Q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    a, b = covariance_summary(X).trace, covariance_summary(X @ Q).trace
    assert abs(a - b) <= 1e-9 * a
    s = covariance_summary(X)
    assert abs(s.trace - s.variances.sum()) <= 1e-9 * s.trace


@pytest.mark.parametrize("n", [3, 4, 5, 7, 11, 12, 20, 50, 137, 1000, 5000])
def test_shapiro_w_matches_reference(n):
    x = np.random.default_rng(n).normal(size=n) ** 3
    assert shapiro_wilk_w(x) == pytest.approx(stats.shapiro(x).statistic, abs=1e-6)


def test_normality_examples():
    rng = np.random.default_rng(0)
    rep = normality_check(rng.normal(size=(50, 4)), seed=0)
    assert (rep.w >= 0.9).all()
    ref = [stats.shapiro(c).statistic for c in rng.normal(size=(50, 4)).T]
    assert all(0 < w <= 1 for w in ref)

    mix = np.where(np.random.default_rng(1).random((50, 1)) < 0.5, 0.0, 100.0)
    assert normality_check(mix).w[0] < 0.9

    const = np.column_stack([np.ones(20), np.arange(20.0)])
    rep = normality_check(const)
    assert rep.degenerate_dims == [0] and np.isnan(rep.w[0])
    with pytest.raises(EmbeddingError):
        normality_check(np.zeros((2, 2)))


def test_normality_subsamples():
    X = np.random.default_rng(0).normal(size=(300, 2))
    a = normality_check(X, max_n=100, seed=4)
    b = normality_check(X, max_n=100, seed=4)
    assert a.n_used == 100 and np.array_equal(a.w, b.w)


def test_kmeans_square_corners():
    pts = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], float)
    c = kmeans(pts, 4, seed=0)
    assert c.inertia == 0
    assert sorted(c.assignments.tolist()) == [0, 1, 2, 3]


def _brute_force_1d(x, k):
    best = None
    for labels in itertools.product(range(k), repeat=len(x)):
        if len(set(labels)) < k:
            continue
        lab = np.array(labels)
        cost = sum(((x[lab == j] - x[lab == j].mean()) ** 2).sum() for j in range(k))
        if best is None or cost < best[0] - 1e-15:
            best = (cost, lab)
    return best


def test_kmeans_1d_brute_force():
    x = np.array([0.0, 0.1, 10.0, 10.1])
    c = kmeans(x[:, None], 2, seed=0)
    cost, lab = _brute_force_1d(x, 2)
    assert sorted(c.centroids[:, 0].tolist()) == pytest.approx([0.05, 10.05], abs=1e-12)
    assert c.inertia == pytest.approx(0.01, abs=1e-12)
    assert c.inertia == pytest.approx(cost, abs=1e-12)
    # same partition up to relabelling
    assert len(set(zip(c.assignments.tolist(), lab.tolist()))) == 2


def test_kmeans_k1_is_mean():
    X = np.random.default_rng(2).normal(size=(30, 3))
    c = kmeans(X, 1)
    np.testing.assert_allclose(c.centroids[0], X.mean(axis=0), atol=1e-12)


def test_kmeans_errors():
    with pytest.raises(EmbeddingError):
        kmeans(np.zeros((3, 2)), 4)
    with pytest.raises(EmbeddingError):
        kmeans(np.zeros((3, 2)), 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12))
def test_kmeans_inertia_non_increasing(seed, k):
    X = np.random.default_rng(seed).normal(size=(80, 3))
    c = kmeans(X, k, seed=seed)
    h = c.inertia_history
    assert all(b <= a + 1e-9 for a, b in zip(h, h[1:]))
    assert c.assignments.min() >= 0 and c.assignments.max() < k
    assert c.inertia == pytest.approx(((X - c.centroids[c.assignments]) ** 2).sum(), rel=1e-12)


def test_kmeans_deterministic():
    X = np.random.default_rng(5).normal(size=(200, 4))
    a, b = kmeans(X, 7, seed=3), kmeans(X, 7, seed=3)
    assert np.array_equal(a.centroids, b.centroids) and np.array_equal(a.assignments, b.assignments)


def test_kmeans_duplicate_points():
    X = np.zeros((6, 2))
    X[3:] = 1
    c = kmeans(X, 3, seed=0)
    assert c.inertia == 0


def test_jacobi_matches_numpy():
    rng = np.random.default_rng(9)
    A = rng.normal(size=(6, 6))
    A = A + A.T
    vals, vecs = jacobi_eigh(A)
    np.testing.assert_allclose(vals, np.sort(np.linalg.eigvalsh(A))[::-1], atol=1e-10)
    np.testing.assert_allclose(A @ vecs, vecs * vals, atol=1e-9)


def test_pca_collinear():
    t = np.linspace(0, 1, 10)
    p = pca_project(np.column_stack([t, 2 * t]))
    assert np.abs(p.coords[:, 1]).max() < 1e-9


def test_pca_2d_preserves_distances():
    X = np.random.default_rng(1).normal(size=(15, 2))
    p = pca_project(X, 2)
    d0 = np.linalg.norm(X[:, None] - X[None], axis=-1)
    d1 = np.linalg.norm(p.coords[:, None] - p.coords[None], axis=-1)
    np.testing.assert_allclose(d0, d1, atol=1e-9)


def test_pca_explained_variance_oracle():
    X = np.random.default_rng(4).normal(size=(25, 3)) * [3, 2, 0.5]
    p = pca_project(X, 2)
    oracle = np.sort(np.linalg.eigvalsh(np.cov(X, rowvar=False)))[::-1][:2]
    np.testing.assert_allclose(p.explained_variance, oracle, atol=1e-9)
    for j in range(2):
        i = np.argmax(np.abs(p.components[:, j]))
        assert p.components[i, j] > 0


def test_pca_degenerate():
    p = pca_project(np.ones((5, 3)))
    assert p.degenerate and not p.coords.any()


def test_projection_csv(tmp_path):
    path = tmp_path / "p.csv"
    write_projection_csv(path, ["a", "b"], np.array([[1.0, 2.0], [3.0, 4.0]]), [0, 1])
    assert path.read_text().splitlines() == ["post_id,x,y,cluster", "a,1,2,0", "b,3,4,1"]
