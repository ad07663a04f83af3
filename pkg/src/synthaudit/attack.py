"""Authorship-attribution attackers and privacy metrics.

The shallow attackers are L2-regularised multinomial logistic regressions over
stylometric, word n-gram or TF-IDF features. Transformer attackers are run out
of process and imported as probability CSVs. Stacked ensembles use 5-fold
out-of-fold probabilities on the training side.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .corpus import Corpus, TokenizedPost, author_counts, tokenize
from .features import (
    FeatureMatrix,
    build_ngram_vocab,
    build_tfidf_vocab,
    ngram_matrix,
    stylometric_matrix,
    tfidf_matrix,
)

log = logging.getLogger(__name__)

SHALLOW_MODELS = ("stylometric", "ngram", "tfidf")


class AttackError(ValueError):
    pass


# ---------------------------------------------------------------------------
# subsets and splits


def build_subsets(corpus: Corpus, fractions: Sequence[float] = (0.25, 0.5, 0.75, 1.0)) -> list[Corpus]:
    """Posts of the top ceil(f * A) most prolific authors for each fraction f."""
    if len(corpus) == 0:
        raise AttackError("cannot build subsets of an empty corpus")
    ranked = [a for a, _ in author_counts(corpus)]
    out = []
    for f in fractions:
        if not 0 < f <= 1:
            raise AttackError(f"subset fraction must be in (0, 1], got {f}")
        # the epsilon keeps 0.25 * 8 from becoming ceil(2.0000000001) = 3
        keep = set(ranked[: max(1, math.ceil(f * len(ranked) - 1e-9))])
        out.append(Corpus([p for p in corpus if p.author in keep], corpus.kind, f"{corpus.label}@{f:g}"))
    return out


@dataclass
class Split:
    train_ids: list[str]
    test_ids: list[str]
    labels: list[str]
    flagged_authors: list[str] = field(default_factory=list)


def stratified_split(corpus: Corpus, test_fraction: float = 0.2, seed: int = 0) -> Split:
    """Per-author seeded draw of floor(f * count) test posts (at least 1).

    Authors with a single post are flagged and kept entirely in training.
    """
    by_author: dict[str, list[str]] = {}
    for p in corpus:
        by_author.setdefault(p.author, []).append(p.id)
    rng = np.random.default_rng(seed)
    test: set[str] = set()
    flagged = []
    for author in sorted(by_author):
        ids = by_author[author]
        if len(ids) < 2:
            flagged.append(author)
            continue
        k = max(1, math.floor(test_fraction * len(ids)))
        test.update(ids[i] for i in rng.choice(len(ids), size=k, replace=False))
    train_ids = [p.id for p in corpus if p.id not in test]
    test_ids = [p.id for p in corpus if p.id in test]
    return Split(train_ids, test_ids, sorted(by_author), flagged)


# ---------------------------------------------------------------------------
# logistic regression


@dataclass
class LogRegModel:
    labels: list[str]
    weights: np.ndarray  # (labels, features)
    bias: np.ndarray
    lam: float
    mean: np.ndarray
    scale: np.ndarray
    seed: int
    epochs: int
    lr: float
    loss_history: list[float] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(W, b, X, Y, lam: float, n_total: int | None = None):
    """Mean cross-entropy plus lam/(2 n) * ||W||^2 and its gradient.

    ``n_total`` is the training-set size the penalty is scaled by, so that
    the objective is (sum of cross-entropies + lam/2 ||W||^2) / n.
    """
    n = X.shape[0]
    n_total = n if n_total is None else n_total
    P = softmax(X @ W.T + b)
    ce = -float(np.sum(Y * np.log(np.clip(P, 1e-300, None)))) / n
    loss = ce + lam / (2.0 * n_total) * float(np.sum(W * W))
    D = (P - Y) / n
    gW = D.T @ X + (lam / n_total) * W
    gb = D.sum(axis=0)
    return loss, gW, gb


def _one_hot(y_idx: np.ndarray, k: int) -> np.ndarray:
    Y = np.zeros((y_idx.size, k))
    Y[np.arange(y_idx.size), y_idx] = 1.0
    return Y


def train_logreg(
    features: FeatureMatrix | np.ndarray,
    labels: Sequence[str],
    lam: float = 1.0,
    epochs: int = 200,
    lr: float = 0.1,
    batch: int = 32,
    seed: int = 0,
    standardize: bool = True,
    label_order: Sequence[str] | None = None,
) -> LogRegModel:
    """Mini-batch gradient descent on the regularised softmax objective.

    The L2 shrinkage is applied as a proximal step so very large ``lam`` stays
    stable. An epoch whose end-of-epoch loss rises is rolled back and the step
    size halved, which keeps the recorded loss history non-increasing.
    ``batch <= 0`` or ``batch >= n`` gives full-batch descent.
    """
    X = features.values if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=float)
    labels = list(labels)
    if X.shape[0] != len(labels):
        raise AttackError(f"{X.shape[0]} feature rows but {len(labels)} labels")
    if not np.all(np.isfinite(X)):
        raise AttackError("features contain NaN or inf")
    order = list(label_order) if label_order is not None else sorted(set(labels))
    if len(set(labels)) < 2:
        raise AttackError("training needs at least two distinct labels")
    index = {l: i for i, l in enumerate(order)}
    y = np.array([index[l] for l in labels])
    n, d = X.shape
    k = len(order)

    if standardize:
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
    else:
        mean = np.zeros(d)
        scale = np.ones(d)
    Xs = (X - mean) / scale
    Y = _one_hot(y, k)

    W = np.zeros((k, d))
    # priors as the starting bias speeds up convergence without changing the optimum
    counts = np.bincount(y, minlength=k).astype(float)
    b = np.log(np.clip(counts / n, 1e-12, None))
    b -= b.mean()

    rng = np.random.default_rng(seed)
    bs = n if batch <= 0 or batch >= n else batch
    step = lr
    history = [loss_and_grad(W, b, Xs, Y, lam, n)[0]]
    for _ in range(epochs):
        perm = rng.permutation(n) if bs < n else np.arange(n)
        W_prev, b_prev = W.copy(), b.copy()
        for s in range(0, n, bs):
            idx = perm[s:s + bs]
            _, gW, gb = loss_and_grad(W, b, Xs[idx], Y[idx], 0.0)
            W = (W - step * gW) / (1.0 + step * lam / n)
            b = b - step * gb
        loss = loss_and_grad(W, b, Xs, Y, lam, n)[0]
        if loss > history[-1]:
            W, b = W_prev, b_prev
            step *= 0.5
            history.append(history[-1])
            continue
        history.append(loss)
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
        raise AttackError("training diverged")
    return LogRegModel(order, W, b, lam, mean, scale, seed, epochs, lr, history)


@dataclass
class PredictionSet:
    post_ids: list[str]
    labels: list[str]
    probabilities: np.ndarray
    source: str = "external"
    warnings: int = 0

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=float).reshape(len(self.post_ids), len(self.labels))

    def predicted(self) -> list[str]:
        return [self.labels[i] for i in self.probabilities.argmax(axis=1)]

    def reindex(self, labels: Sequence[str]) -> "PredictionSet":
        """Same rows over another label order; labels unknown here get probability 0."""
        pos = {l: i for i, l in enumerate(self.labels)}
        P = np.zeros((len(self.post_ids), len(labels)))
        for j, l in enumerate(labels):
            if l in pos:
                P[:, j] = self.probabilities[:, pos[l]]
        return PredictionSet(list(self.post_ids), list(labels), P, self.source, self.warnings)

    def rows(self, ids: Sequence[str]) -> "PredictionSet":
        pos = {pid: i for i, pid in enumerate(self.post_ids)}
        missing = [i for i in ids if i not in pos]
        if missing:
            raise AttackError(f"{len(missing)} post ids missing from {self.source} predictions, e.g. {missing[0]!r}")
        return PredictionSet(list(ids), list(self.labels), self.probabilities[[pos[i] for i in ids]], self.source)


def predict_proba(model: LogRegModel, features: FeatureMatrix | np.ndarray, post_ids=None, source="external") -> PredictionSet:
    if isinstance(features, FeatureMatrix):
        X, post_ids = features.values, features.post_ids if post_ids is None else post_ids
    else:
        X = np.asarray(features, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise AttackError(f"feature width {X.shape[-1]} does not match model width {model.n_features}")
    if post_ids is None:
        post_ids = [str(i) for i in range(X.shape[0])]
    P = softmax(((X - model.mean) / model.scale) @ model.weights.T + model.bias)
    return PredictionSet(list(post_ids), list(model.labels), P, source)


# ---------------------------------------------------------------------------
# metrics


def evaluate(predictions: PredictionSet, truth: Mapping[str, str], labels: Sequence[str] | None = None) -> tuple[float, float]:
    """Accuracy and macro-F1 over the union of predicted and true labels.

    Labels with neither true nor predicted instances count as F1 = 0.
    """
    if set(predictions.post_ids) != set(truth):
        raise AttackError("prediction ids and truth ids differ")
    if not predictions.post_ids:
        raise AttackError("nothing to evaluate")
    pred = predictions.predicted()
    gold = [truth[i] for i in predictions.post_ids]
    label_set = list(labels) if labels is not None else sorted(set(predictions.labels) | set(gold))
    acc = sum(p == g for p, g in zip(pred, gold)) / len(gold)
    f1s = []
    for l in label_set:
        tp = sum(1 for p, g in zip(pred, gold) if p == l and g == l)
        fp = sum(1 for p, g in zip(pred, gold) if p == l and g != l)
        fn = sum(1 for p, g in zip(pred, gold) if p != l and g == l)
        f1s.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    return acc, float(np.mean(f1s))


def relative_reduction(baseline_acc: float, synthetic_acc: float) -> float:
    """Percent drop of ``synthetic_acc`` relative to ``baseline_acc``."""
    if baseline_acc <= 0:
        raise AttackError("baseline accuracy must be positive")
    return 100.0 * (baseline_acc - synthetic_acc) / baseline_acc


# ---------------------------------------------------------------------------
# feature-based attackers


@dataclass
class TrainConfig:
    lam: float = 1.0
    epochs: int = 200
    lr: float = 0.1
    batch: int = 32
    max_tfidf_terms: int = 3000
    ngram_top_k: int = 100


@dataclass
class FittedAttacker:
    kind: str
    model: LogRegModel
    featurize: Callable[[Sequence[TokenizedPost]], FeatureMatrix]

    def predict(self, tokenized: Sequence[TokenizedPost]) -> PredictionSet:
        fm = self.featurize(tokenized)
        return predict_proba(self.model, fm, source=self.kind)


def fit_attacker(
    kind: str,
    tokenized: Sequence[TokenizedPost],
    labels: Sequence[str],
    seed: int,
    config: TrainConfig | None = None,
    label_order: Sequence[str] | None = None,
) -> FittedAttacker:
    """Build the vocabulary on the training posts only, then train the classifier."""
    cfg = config or TrainConfig()
    if kind == "stylometric":
        featurize = stylometric_matrix
        standardize = True
    elif kind == "ngram":
        vocab = build_ngram_vocab(tokenized, top_k=cfg.ngram_top_k)
        featurize = lambda ts, v=vocab: ngram_matrix(ts, v)  # noqa: E731
        standardize = True
    elif kind == "tfidf":
        tv = build_tfidf_vocab(tokenized, max_terms=cfg.max_tfidf_terms)
        featurize = lambda ts, v=tv: tfidf_matrix(ts, v)  # noqa: E731
        standardize = False
    else:
        raise AttackError(f"unknown attacker {kind!r}")
    model = train_logreg(
        featurize(tokenized), labels, cfg.lam, cfg.epochs, cfg.lr, cfg.batch, seed, standardize, label_order
    )
    return FittedAttacker(kind, model, featurize)


def kfold_assignments(labels: Sequence[str], folds: int, seed: int) -> np.ndarray:
    """Author-stratified fold index per row: seeded shuffle within each label, then round-robin."""
    rng = np.random.default_rng(seed)
    out = np.zeros(len(labels), dtype=int)
    by_label: dict[str, list[int]] = {}
    for i, l in enumerate(labels):
        by_label.setdefault(l, []).append(i)
    offset = 0
    for l in sorted(by_label):
        idx = by_label[l]
        for j, r in enumerate(rng.permutation(len(idx))):
            out[idx[r]] = (offset + j) % folds
        offset += len(idx)
    return out


def out_of_fold_predictions(
    kind: str,
    tokenized: Sequence[TokenizedPost],
    labels: Sequence[str],
    seed: int,
    config: TrainConfig | None = None,
    folds: int = 5,
) -> PredictionSet:
    label_order = sorted(set(labels))
    fold = kfold_assignments(labels, folds, seed)
    P = np.zeros((len(labels), len(label_order)))
    for f in range(folds):
        held = np.flatnonzero(fold == f)
        kept = np.flatnonzero(fold != f)
        if held.size == 0:
            continue
        kept_labels = [labels[i] for i in kept]
        if len(set(kept_labels)) < 2:
            P[held] = 1.0 / len(label_order)
            continue
        att = fit_attacker(kind, [tokenized[i] for i in kept], kept_labels, seed + 1 + f, config)
        ps = att.predict([tokenized[i] for i in held]).reindex(label_order)
        P[held] = ps.probabilities
    return PredictionSet([t.post_id for t in tokenized], label_order, P, kind)


def stack_ensemble(
    train_sources: Sequence[PredictionSet],
    test_sources: Sequence[PredictionSet],
    train_labels: Mapping[str, str],
    seed: int,
    config: TrainConfig | None = None,
) -> PredictionSet:
    """Meta logistic regression over concatenated base probabilities.

    ``train_sources`` must be out-of-fold probabilities for the training posts;
    ``test_sources`` come from base models fit on the full training split.
    """
    if len(train_sources) < 2 or len(test_sources) < 2:
        raise AttackError("stacking needs at least two base sources")
    if len(train_sources) != len(test_sources):
        raise AttackError("train and test source counts differ")
    cfg = config or TrainConfig()
    label_order = sorted(set(train_labels.values()))
    train_ids = list(train_sources[0].post_ids)
    test_ids = list(test_sources[0].post_ids)
    for s in train_sources:
        if set(s.post_ids) != set(train_ids):
            raise AttackError(f"train post ids of source {s.source!r} do not match")
    for s in test_sources:
        if set(s.post_ids) != set(test_ids):
            raise AttackError(f"test post ids of source {s.source!r} do not match")
    Xtr = np.hstack([s.rows(train_ids).reindex(label_order).probabilities for s in train_sources])
    Xte = np.hstack([s.rows(test_ids).reindex(label_order).probabilities for s in test_sources])
    model = train_logreg(
        Xtr, [train_labels[i] for i in train_ids], cfg.lam, cfg.epochs, cfg.lr, cfg.batch, seed, True, label_order
    )
    return predict_proba(model, Xte, post_ids=test_ids, source="ensemble")


# ---------------------------------------------------------------------------
# external predictions


def load_external_predictions(path, labels: Sequence[str], source: str = "external") -> PredictionSet:
    """Read ``post_id,<label1>,...`` probability rows; rows are renormalised.

    Rows whose sum is off by more than 1e-3 are still renormalised but counted
    in ``warnings``.
    """
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise AttackError(f"{path}: empty prediction file") from None
        if not header or header[0] != "post_id":
            raise AttackError(f"{path}: first column must be post_id")
        cols = {name: i for i, name in enumerate(header)}
        for label in labels:
            if label not in cols:
                raise AttackError(f"{path}: missing probability column for label {label!r}")
        ids, rows, warnings = [], [], 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                probs = np.array([float(row[cols[l]]) for l in labels])
            except (ValueError, IndexError):
                raise AttackError(f"{path}:{lineno}: bad probability value") from None
            if np.any(probs < 0) or not np.all(np.isfinite(probs)):
                raise AttackError(f"{path}:{lineno}: negative or non-finite probability")
            total = probs.sum()
            if total <= 0:
                raise AttackError(f"{path}:{lineno}: probabilities sum to zero")
            if abs(total - 1.0) > 1e-3:
                warnings += 1
                log.warning("%s:%d: probabilities sum to %.6g, renormalising", path, lineno, total)
            ids.append(row[0])
            rows.append(probs / total)
    if len(set(ids)) != len(ids):
        raise AttackError(f"{path}: duplicate post ids")
    return PredictionSet(ids, list(labels), np.array(rows).reshape(len(ids), len(labels)), source, warnings)


def write_predictions_csv(predictions: PredictionSet, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["post_id", *predictions.labels])
        for pid, row in zip(predictions.post_ids, predictions.probabilities):
            w.writerow([pid, *(repr(float(v)) for v in row)])


# ---------------------------------------------------------------------------
# experiment driver


@dataclass
class ModelScore:
    accuracy: float
    macro_f1: float


@dataclass
class AttackReport:
    subset_fraction: float
    n_authors: int
    n_train: int
    n_test: int
    scores: dict[str, ModelScore]
    baseline_accuracy: float | None = None
    synthetic: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "subset_fraction": self.subset_fraction,
            "n_authors": self.n_authors,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "scores": {k: {"accuracy": v.accuracy, "macro_f1": v.macro_f1} for k, v in self.scores.items()},
            "baseline_accuracy": self.baseline_accuracy,
            "synthetic": self.synthetic,
        }


def run_subset_attack(
    corpus: Corpus,
    models: Sequence[str],
    seed: int,
    config: TrainConfig | None = None,
    external: PredictionSet | None = None,
    fraction: float = 1.0,
    synthetic: Mapping[str, Corpus] | None = None,
    ensemble_sources: Sequence[str] | None = None,
) -> AttackReport:
    """Split one author subset 80/20, fit each requested attacker and score it.

    When ``synthetic`` corpora are given, the fitted attacker with the best
    real test accuracy is also applied to each synthetic corpus (labels are the
    synthetic posts' author field) and the relative reduction against the
    real-data test accuracy is recorded.
    """
    split = stratified_split(corpus, 0.2, seed)
    by_id = corpus.by_id()
    tok = {p.id: tokenize(p) for p in corpus}
    train_tok = [tok[i] for i in split.train_ids]
    test_tok = [tok[i] for i in split.test_ids]
    train_y = [by_id[i].author for i in split.train_ids]
    truth = {i: by_id[i].author for i in split.test_ids}
    label_order = sorted(set(train_y))

    scores: dict[str, ModelScore] = {}
    fitted: dict[str, FittedAttacker] = {}
    test_preds: dict[str, PredictionSet] = {}
    for m in models:
        if m in SHALLOW_MODELS:
            fitted[m] = fit_attacker(m, train_tok, train_y, seed, config, label_order)
            test_preds[m] = fitted[m].predict(test_tok)
        elif m == "external":
            if external is None:
                raise AttackError("external model requested without an external prediction file")
            test_preds[m] = external.rows(split.test_ids).reindex(label_order)
        elif m == "ensemble":
            continue
        else:
            raise AttackError(f"unknown model {m!r}")
        scores[m] = ModelScore(*evaluate(test_preds[m], truth))

    if "ensemble" in models:
        bases = list(ensemble_sources or [m for m in models if m in SHALLOW_MODELS])
        if len(bases) < 2:
            bases = ["tfidf", "stylometric"]
        tr_sources, te_sources = [], []
        for m in bases:
            if m == "external":
                tr_sources.append(external.rows(split.train_ids).reindex(label_order))
            else:
                tr_sources.append(out_of_fold_predictions(m, train_tok, train_y, seed, config))
            if m not in test_preds:
                fitted[m] = fit_attacker(m, train_tok, train_y, seed, config, label_order)
                test_preds[m] = fitted[m].predict(test_tok)
            te_sources.append(test_preds[m])
        train_truth = dict(zip(split.train_ids, train_y))
        ens = stack_ensemble(tr_sources, te_sources, train_truth, seed, config)
        scores["ensemble"] = ModelScore(*evaluate(ens, truth))

    report = AttackReport(fraction, len(split.labels), len(split.train_ids), len(split.test_ids), scores)
    if synthetic:
        # strongest fitted attacker on real test data; ties keep request order
        candidates = [m for m in models if m in fitted and m in scores]
        primary = max(candidates, key=lambda m: scores[m].accuracy) if candidates else None
        if primary is not None:
            baseline = scores[primary].accuracy
            report.baseline_accuracy = baseline
            for name, synth in synthetic.items():
                syn_tok = [tokenize(p) for p in synth]
                ps = fitted[primary].predict(syn_tok)
                acc, f1 = evaluate(ps, {p.id: p.author for p in synth})
                report.synthetic[name] = {
                    "model": primary,
                    "accuracy": acc,
                    "macro_f1": f1,
                    "relative_reduction": relative_reduction(baseline, acc) if baseline > 0 else None,
                }
    return report
