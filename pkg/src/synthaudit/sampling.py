"""Representative sample sizing (Cochran) and per-author Neyman allocation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .corpus import Corpus
from .embedding import covariance_summary, embedding_matrix

DEFAULT_Z = 1.96  # 95% confidence; the source corpus' Z and E are unknown


class SamplingError(ValueError):
    pass


@dataclass
class SamplingPlan:
    Z: float
    E: float
    sigma2: float
    N: int
    n: int
    n_infinite: float = 0.0
    n_allocated: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Stratum:
    author: str
    N_w: int
    sigma_w: float
    n_w: int = 0
    raw_share: float = 0.0


def _check(Z, E, sigma2):
    if not Z > 0:
        raise SamplingError(f"Z must be positive, got {Z}")
    if not E > 0:
        raise SamplingError(f"error margin E must be positive, got {E}")
    if not sigma2 >= 0:
        raise SamplingError(f"sigma2 must be nonnegative, got {sigma2}")


def cochran_infinite(Z: float, sigma2: float, E: float) -> float:
    _check(Z, E, sigma2)
    return Z * Z * sigma2 / (E * E)


def cochran_finite(Z: float, sigma2: float, E: float, N: int) -> int:
    """Cochran's finite-population sample size, rounded up and clamped to [1, N]."""
    _check(Z, E, sigma2)
    if N < 1:
        raise SamplingError(f"population size N must be >= 1, got {N}")
    z2s = Z * Z * sigma2
    n = math.ceil(z2s * N / (E * E * (N - 1) + z2s)) if z2s > 0 else 0
    return int(min(max(n, 1), N))


def neyman_shares(n: int, strata: Sequence[tuple[int, float]]) -> list[float]:
    """Un-rounded Neyman shares n * N_w*s_w / sum(N_w*s_w)."""
    if n < 1:
        raise SamplingError("n must be >= 1")
    weights = [N_w * s_w for N_w, s_w in strata]
    if any(w < 0 for w in weights):
        raise SamplingError("stratum sizes and deviations must be nonnegative")
    total = math.fsum(weights)
    if total <= 0:
        raise SamplingError("all stratum weights N_w*sigma_w are zero")
    return [n * w / total for w in weights]


def neyman_allocate(n: int, strata: Sequence[tuple[int, float]]) -> list[int]:
    """Round every share up, then floor at 1 and cap at the stratum size.

    The result can sum to more than ``n``; that is the price of representing
    every stratum.
    """
    raw = neyman_shares(n, strata)
    out = []
    for share, (N_w, _) in zip(raw, strata):
        # guard against 3.0000000000000004 rounding up to 4
        k = math.ceil(share - 1e-9 * max(1.0, share))
        out.append(int(min(max(k, 1), N_w)))
    return out


def build_strata(corpus: Corpus, vectors) -> list[Stratum]:
    """Per-author strata with sigma_w = sqrt(tr(Cov_w)); singletons get sigma 0."""
    X = embedding_matrix(vectors)
    rows: dict[str, list[int]] = {}
    for i, post in enumerate(corpus):
        rows.setdefault(post.author, []).append(i)
    strata = []
    for author in sorted(rows):
        idx = rows[author]
        if len(idx) >= 2:
            sigma = math.sqrt(covariance_summary(X[idx]).trace)
        else:
            sigma = 0.0
        strata.append(Stratum(author, len(idx), sigma))
    return strata


def plan_sample(corpus: Corpus, vectors, E: float, Z: float = DEFAULT_Z) -> tuple[SamplingPlan, list[Stratum]]:
    X = embedding_matrix(vectors)
    if X.shape[0] != len(corpus):
        raise SamplingError("one embedding per post is required")
    sigma2 = covariance_summary(X).trace
    N = len(corpus)
    n = cochran_finite(Z, sigma2, E, N)
    strata = build_strata(corpus, X)
    pairs = [(s.N_w, s.sigma_w) for s in strata]
    raw = neyman_shares(n, pairs)
    alloc = neyman_allocate(n, pairs)
    for s, r, a in zip(strata, raw, alloc):
        s.raw_share = r
        s.n_w = a
    plan = SamplingPlan(Z, E, sigma2, N, n, cochran_infinite(Z, sigma2, E), sum(alloc))
    return plan, strata


def draw_sample(corpus: Corpus, allocations: Mapping[str, int], seed: int) -> Corpus:
    """Seeded per-author draw without replacement; output keeps corpus order."""
    by_author: dict[str, list[str]] = {}
    for post in corpus:
        by_author.setdefault(post.author, []).append(post.id)
    rng = np.random.default_rng(seed)
    chosen: set[str] = set()
    for author in sorted(allocations):
        k = allocations[author]
        ids = by_author.get(author, [])
        if k > len(ids):
            raise SamplingError(f"allocation {k} for {author!r} exceeds its {len(ids)} posts")
        if k < 0:
            raise SamplingError(f"negative allocation for {author!r}")
        pick = rng.choice(len(ids), size=k, replace=False) if k else []
        chosen.update(ids[i] for i in pick)
    return corpus.subset(chosen, label=f"{corpus.label}:sample")
