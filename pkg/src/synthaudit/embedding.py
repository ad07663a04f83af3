"""Word-vector tables, mean-pooled post embeddings and the shared numeric kit.

Covers the covariance trace used as the population variance, a per-dimension
Shapiro-Wilk W (Royston's approximation), seeded k-means++ / Lloyd clustering
and a Jacobi-eigensolver PCA for 2-D plot coordinates.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .corpus import TokenizedPost


class EmbeddingError(ValueError):
    pass


@dataclass
class EmbeddingTable:
    dimension: int
    vectors: dict[str, np.ndarray]

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)


@dataclass
class PostEmbedding:
    post_id: str
    vector: np.ndarray
    oov_fraction: float


def load_embedding_table(path) -> EmbeddingTable:
    """Parse a GloVe-style text file: ``token v1 v2 ... vD`` per line."""
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            token, comps = parts[0], parts[1:]
            if dim is None:
                if not comps:
                    raise EmbeddingError(f"{path}:{lineno}: no vector components")
                dim = len(comps)
            elif len(comps) != dim:
                raise EmbeddingError(
                    f"{path}:{lineno}: dimension mismatch, expected {dim} got {len(comps)}"
                )
            try:
                vec = np.array([float(c) for c in comps], dtype=float)
            except ValueError:
                raise EmbeddingError(f"{path}:{lineno}: non-numeric component") from None
            if not np.all(np.isfinite(vec)):
                raise EmbeddingError(f"{path}:{lineno}: non-finite component")
            if token in vectors:
                raise EmbeddingError(f"{path}:{lineno}: repeated token {token!r}")
            vectors[token] = vec
    if dim is None:
        raise EmbeddingError(f"{path}: empty embedding table")
    return EmbeddingTable(dim, vectors)


def embed_post(tokenized: TokenizedPost, table: EmbeddingTable) -> PostEmbedding:
    # OOV tokens are skipped, not averaged in as zeros
    words = tokenized.word_tokens
    hits = sorted(w for w in words if w in table.vectors)
    if not words:
        return PostEmbedding(tokenized.post_id, np.zeros(table.dimension), 0.0)
    oov = (len(words) - len(hits)) / len(words)
    if not hits:
        return PostEmbedding(tokenized.post_id, np.zeros(table.dimension), oov)
    # sorted summation keeps the mean bit-identical under token reordering
    vec = np.sum(np.stack([table.vectors[w] for w in hits]), axis=0) / len(hits)
    return PostEmbedding(tokenized.post_id, vec, oov)


def embedding_matrix(embeddings: Sequence[PostEmbedding] | np.ndarray) -> np.ndarray:
    if isinstance(embeddings, np.ndarray):
        return np.atleast_2d(np.asarray(embeddings, dtype=float))
    if not embeddings:
        return np.zeros((0, 0))
    return np.stack([e.vector for e in embeddings]).astype(float)


# ---------------------------------------------------------------------------
# covariance trace


@dataclass
class CovarianceSummary:
    trace: float
    variances: np.ndarray


def covariance_summary(embeddings) -> CovarianceSummary:
    X = embedding_matrix(embeddings)
    if X.shape[0] < 2:
        raise EmbeddingError("covariance needs at least 2 points")
    variances = X.var(axis=0, ddof=1)
    return CovarianceSummary(float(variances.sum()), variances)


# ---------------------------------------------------------------------------
# Shapiro-Wilk


@dataclass
class NormalityReport:
    w: np.ndarray
    n_used: int
    degenerate_dims: list[int] = field(default_factory=list)

    @property
    def valid_w(self) -> np.ndarray:
        return self.w[np.isfinite(self.w)]


_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)


def _poly(coefs, x):
    return sum(c * x**i for i, c in enumerate(coefs))


def shapiro_wilk_coefficients(n: int) -> np.ndarray:
    """Royston's approximation to the Shapiro-Wilk weights, ordered to match ascending data."""
    if n < 3:
        raise EmbeddingError("Shapiro-Wilk needs n >= 3")
    half = n // 2
    a = np.zeros(n)
    if n == 3:
        a[-1] = math.sqrt(0.5)
    else:
        nd = NormalDist()
        m = np.array([nd.inv_cdf((i - 0.375) / (n + 0.25)) for i in range(1, n + 1)])
        summ2 = float(np.sum(m**2))
        ssumm2 = math.sqrt(summ2)
        rsn = 1.0 / math.sqrt(n)
        a_n = m[-1] / ssumm2 + _poly(_C1, rsn)
        if n > 5:
            a_n1 = m[-2] / ssumm2 + _poly(_C2, rsn)
            fac = math.sqrt((summ2 - 2 * m[-1] ** 2 - 2 * m[-2] ** 2) / (1 - 2 * a_n**2 - 2 * a_n1**2))
            a[-2] = a_n1
            first_free = 2
        else:
            fac = math.sqrt((summ2 - 2 * m[-1] ** 2) / (1 - 2 * a_n**2))
            first_free = 1
        a[-1] = a_n
        for i in range(first_free, half):
            a[n - 1 - i] = m[n - 1 - i] / fac
    a[:half] = -a[n - half:][::-1]
    return a


def shapiro_wilk_w(x: np.ndarray) -> float:
    """W statistic for one sample; NaN when the sample has zero range."""
    x = np.sort(np.asarray(x, dtype=float))
    n = x.size
    if n < 3:
        raise EmbeddingError("Shapiro-Wilk needs n >= 3")
    if x[-1] - x[0] == 0:
        return float("nan")
    a = shapiro_wilk_coefficients(n)
    centered = x - x.mean()
    w = float(np.dot(a, x) ** 2 / np.dot(centered, centered))
    return min(w, 1.0)


def normality_check(embeddings, max_n: int = 5000, seed: int = 0) -> NormalityReport:
    X = embedding_matrix(embeddings)
    n = X.shape[0]
    if n < 3:
        raise EmbeddingError("normality check needs at least 3 points")
    if n > max_n:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(n, size=max_n, replace=False))
        X = X[idx]
    ws = np.array([shapiro_wilk_w(X[:, d]) for d in range(X.shape[1])])
    degenerate = [int(d) for d in np.flatnonzero(~np.isfinite(ws))]
    return NormalityReport(ws, X.shape[0], degenerate)


# ---------------------------------------------------------------------------
# k-means


@dataclass
class Clustering:
    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    n_iter: int = 0
    inertia_history: list[float] = field(default_factory=list)


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    # explicit broadcast instead of BLAS so results do not depend on thread count
    out = np.empty((X.shape[0], C.shape[0]))
    step = max(1, 2_000_000 // max(1, C.shape[0] * X.shape[1]))
    for s in range(0, X.shape[0], step):
        diff = X[s:s + step, None, :] - C[None, :, :]
        out[s:s + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [int(rng.integers(n))]
    closest = _sq_dists(X, X[centers]).min(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # every point already coincides with a chosen center
            remaining = [i for i in range(n) if i not in set(centers)]
            nxt = remaining[int(rng.integers(len(remaining)))]
        else:
            nxt = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            nxt = min(nxt, n - 1)
        centers.append(nxt)
        closest = np.minimum(closest, _sq_dists(X, X[[nxt]])[:, 0])
    return X[centers].copy()


def kmeans(points, k: int, seed: int = 0, max_iter: int = 300) -> Clustering:
    """k-means++ seeding followed by Lloyd iterations until assignments stop changing."""
    X = embedding_matrix(points)
    n = X.shape[0]
    if k < 1:
        raise EmbeddingError("k must be >= 1")
    if k > n:
        raise EmbeddingError(f"k={k} exceeds the number of points ({n})")
    rng = np.random.default_rng(seed)
    C = _kmeanspp(X, k, rng)
    assign = None
    history: list[float] = []
    it = 0
    for it in range(1, max_iter + 1):
        d = _sq_dists(X, C)
        new_assign = d.argmin(axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        point_d = d[np.arange(n), assign]
        for j in range(k):
            members = assign == j
            if members.any():
                C[j] = X[members].mean(axis=0)
            else:
                far = int(point_d.argmax())
                C[j] = X[far]
                assign[far] = j
                point_d[far] = 0.0
        history.append(float(_sq_dists(X, C)[np.arange(n), assign].sum()))
    d = _sq_dists(X, C)
    assign = d.argmin(axis=1)
    inertia = float(d[np.arange(n), assign].sum())
    return Clustering(k, C, assign, inertia, it, history)


# ---------------------------------------------------------------------------
# PCA via cyclic Jacobi


def jacobi_eigh(A: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns eigenvalues in descending order and the matching eigenvectors as columns.
    """
    A = np.array(A, dtype=float)
    d = A.shape[0]
    V = np.eye(d)
    scale = max(float(np.abs(A).max()), 1e-300)
    for _ in range(max_sweeps):
        off = float(np.sqrt(np.sum(np.triu(A, 1) ** 2)))
        if off <= tol * scale:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = A[:, p].copy()
                aq = A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap = A[p, :].copy()
                aq = A[q, :].copy()
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    evals = np.diag(A).copy()
    order = sorted(range(d), key=lambda i: (-evals[i], i))
    return evals[order], V[:, order]


@dataclass
class Projection:
    coords: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    degenerate: bool = False


def pca_project(points, out_dim: int = 2) -> Projection:
    X = embedding_matrix(points)
    n, dim = X.shape
    if n < out_dim or dim < out_dim:
        raise EmbeddingError(f"need at least {out_dim} points and {out_dim} dimensions")
    centered = X - X.mean(axis=0)
    if not np.any(centered):
        return Projection(np.zeros((n, out_dim)), np.zeros((dim, out_dim)), np.zeros(out_dim), True)
    cov = _cov(centered, n)
    evals, evecs = jacobi_eigh(cov)
    comps = evecs[:, :out_dim].copy()
    for j in range(out_dim):
        # largest-magnitude entry positive (first such index on ties)
        i = int(np.argmax(np.abs(comps[:, j])))
        if comps[i, j] < 0:
            comps[:, j] = -comps[:, j]
    coords = np.einsum("nd,dk->nk", centered, comps)
    return Projection(coords, comps, np.clip(evals[:out_dim], 0.0, None), False)


def _cov(centered: np.ndarray, n: int) -> np.ndarray:
    return np.einsum("ni,nj->ij", centered, centered) / max(1, n - 1)


def write_projection_csv(path, post_ids: Sequence[str], coords: np.ndarray, clusters=None) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["post_id", "x", "y", "cluster"])
        for i, pid in enumerate(post_ids):
            c = "" if clusters is None else int(clusters[i])
            w.writerow([pid, f"{coords[i, 0]:.10g}", f"{coords[i, 1]:.10g}", c])
