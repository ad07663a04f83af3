"""End-to-end audit: ingest, optional sampling, attacks, fidelity, report."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .attack import AttackError, TrainConfig, build_subsets, load_external_predictions, run_subset_attack
from .corpus import Corpus, CorpusError, CorpusKind, align, author_stats, load_corpus, tokenize, write_corpus
from .embedding import EmbeddingError, EmbeddingTable, embed_post, load_embedding_table, pca_project, write_projection_csv
from .fidelity import (
    SENTIMENTS,
    FidelityError,
    FidelityReport,
    SentimentLabels,
    extract_topics,
    greedy_match,
    lexicon_labels,
    load_sentiment_labels,
    load_topics,
    persona_delta,
    sentiment_distribution,
    sentiment_preservation,
    topic_cosine_matrix,
    traits_summary,
)
from .genharness import assign_persona
from .sampling import SamplingError, draw_sample, plan_sample

log = logging.getLogger(__name__)

# sub-seed offsets so each stage is reproducible on its own
SEED_OFFSETS = {"sample": 1, "attack": 2, "fidelity": 3}


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    name: str
    path: Path
    persona: bool = False
    sentiment_labels: Path | None = None
    topics: Path | None = None


@dataclass
class AuditConfig:
    real_corpus: Path
    seed: int
    synthetic: list[SyntheticSpec] = field(default_factory=list)
    embedding_table: Path | None = None
    real_sentiment_labels: Path | None = None
    real_topics: Path | None = None
    external_predictions: Path | None = None
    sampling: dict[str, Any] = field(default_factory=dict)
    attack: dict[str, Any] = field(default_factory=dict)
    fidelity: dict[str, Any] = field(default_factory=dict)
    output_dir: Path | None = None
    raw: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict, base: Path | None = None) -> "AuditConfig":
        base = base or Path(".")

        def p(value, what):
            if value is None:
                return None
            if not isinstance(value, str):
                raise ConfigError(f"{what} must be a path string")
            return (base / value) if not Path(value).is_absolute() else Path(value)

        if "seed" not in data:
            raise ConfigError("seed is mandatory")
        if not isinstance(data["seed"], int) or data["seed"] < 0:
            raise ConfigError("seed must be a nonnegative integer")
        if "real_corpus" not in data:
            raise ConfigError("real_corpus is mandatory")
        synth = []
        for name, entry in sorted((data.get("synthetic_corpora") or {}).items()):
            if isinstance(entry, str):
                entry = {"path": entry}
            synth.append(
                SyntheticSpec(
                    name,
                    p(entry.get("path"), f"synthetic_corpora.{name}.path"),
                    bool(entry.get("persona", False)),
                    p(entry.get("sentiment_labels"), f"synthetic_corpora.{name}.sentiment_labels"),
                    p(entry.get("topics"), f"synthetic_corpora.{name}.topics"),
                )
            )
        cfg = cls(
            real_corpus=p(data["real_corpus"], "real_corpus"),
            seed=data["seed"],
            synthetic=synth,
            embedding_table=p(data.get("embedding_table"), "embedding_table"),
            real_sentiment_labels=p(data.get("real_sentiment_labels"), "real_sentiment_labels"),
            real_topics=p(data.get("real_topics"), "real_topics"),
            external_predictions=p(data.get("external_predictions"), "external_predictions"),
            sampling=dict(data.get("sampling") or {}),
            attack=dict(data.get("attack") or {}),
            fidelity=dict(data.get("fidelity") or {}),
            output_dir=p(data.get("output_dir"), "output_dir"),
            raw=data,
        )
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "AuditConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data, path.parent)

    def validate(self) -> None:
        def must_exist(path, what):
            if path is not None and not path.exists():
                raise ConfigError(f"{what} not found: {path}")

        must_exist(self.real_corpus, "real corpus")
        for s in self.synthetic:
            must_exist(s.path, f"synthetic corpus {s.name!r}")
            must_exist(s.sentiment_labels, f"sentiment labels for {s.name!r}")
            must_exist(s.topics, f"topics for {s.name!r}")
        must_exist(self.real_sentiment_labels, "real sentiment labels")
        must_exist(self.real_topics, "real topics")
        must_exist(self.external_predictions, "external predictions")
        if self.sampling.get("enabled", False):
            if self.embedding_table is None:
                raise ConfigError("sampling requires embedding_table")
            if "error_margin" not in self.sampling:
                raise ConfigError("sampling requires error_margin")
        if self.fidelity.get("topic_fallback", False) and self.real_topics is None and self.embedding_table is None:
            raise ConfigError("topic fallback requested but embedding_table is not configured")
        must_exist(self.embedding_table, "embedding table")
        models = self.attack.get("models", ["stylometric", "ngram", "tfidf"])
        for m in models:
            if m not in ("stylometric", "ngram", "tfidf", "ensemble", "external"):
                raise ConfigError(f"unknown attack model {m!r}")
        if "external" in models and self.external_predictions is None:
            raise ConfigError("external model requested without external_predictions")
        mode = self.fidelity.get("persona_mode", "per_writer")
        if mode not in ("per_writer", "shared"):
            raise ConfigError(f"unknown persona_mode {mode!r}")


def _embed(corpus: Corpus, table: EmbeddingTable) -> np.ndarray:
    if len(corpus) == 0:
        return np.zeros((0, table.dimension))
    return np.stack([embed_post(tokenize(p), table).vector for p in corpus])


def _labels_for(corpus: Corpus, path: Path | None) -> SentimentLabels | None:
    return load_sentiment_labels(path) if path is not None else None


def _round(x):
    # canonical float text for the report; avoids platform-noise digits
    if isinstance(x, float):
        return float(f"{x:.12g}")
    if isinstance(x, dict):
        return {k: _round(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_round(v) for v in x]
    return x


def _fidelity_for(
    real: Corpus,
    synth: Corpus,
    spec: SyntheticSpec,
    cfg: AuditConfig,
    table: EmbeddingTable | None,
    real_emb: np.ndarray | None,
    real_topics,
    seed: int,
) -> FidelityReport:
    warnings: list[str] = []
    fopts = cfg.fidelity
    real_lab = _labels_for(real, cfg.real_sentiment_labels)
    syn_lab = _labels_for(synth, spec.sentiment_labels)
    if real_lab is None or syn_lab is None:
        # never mix imported and fallback labels inside one comparison
        if real_lab is not None or syn_lab is not None:
            warnings.append(f"{spec.name}: only one side has imported sentiment labels; using lexicon fallback for both")
        real_lab, syn_lab = lexicon_labels(real), lexicon_labels(synth)
    source = real_lab.source
    aligned = align(real, synth)
    if aligned.dangling_source_ids:
        warnings.append(f"{spec.name}: {aligned.dangling_source_ids} synthetic posts reference unknown real ids")
    report = FidelityReport(
        traits_summary(real),
        traits_summary(synth),
        source,
        sentiment_distribution(real_lab, real),
        sentiment_distribution(syn_lab, synth),
        sentiment_preservation(aligned, real_lab, syn_lab) if aligned.pairs else None,
        warnings=warnings,
    )
    threshold = float(fopts.get("topic_threshold", 0.7))
    mts = int(fopts.get("min_topic_size", 10))
    try:
        syn_topics = None
        if spec.topics is not None:
            syn_topics = load_topics(spec.topics)
        elif table is not None and fopts.get("topic_fallback", True):
            syn_topics = extract_topics(synth, _embed(synth, table), mts, seed)
        if real_topics is not None and syn_topics is not None:
            report.topics = greedy_match(topic_cosine_matrix(real_topics, syn_topics), threshold)
            report.n_topics_real = len(real_topics.topics)
            report.n_topics_synth = len(syn_topics.topics)
        else:
            warnings.append(f"{spec.name}: topic overlap not computed")
    except (FidelityError, EmbeddingError) as exc:
        warnings.append(f"{spec.name}: topic overlap failed: {exc}")
    if table is not None and spec.persona:
        try:
            groups: dict[str, list[np.ndarray]] = {}
            syn_emb = _embed(synth, table)
            for post, vec in zip(synth, syn_emb):
                groups.setdefault(assign_persona(post.author), []).append(vec)
            k = int(fopts.get("centroid_k", 50))
            if k > len(synth):
                warnings.append(f"{spec.name}: centroid k={k} reduced to {len(synth)} posts")
                k = len(synth)
            small = [w for w, g in groups.items() if len(g) < 2]
            for w in small:
                warnings.append(f"{spec.name}: persona {w!r} has fewer than 2 posts; skipped")
                del groups[w]
            report.centroids = persona_delta(
                {w: np.array(g) for w, g in groups.items()}, k, seed, fopts.get("persona_mode", "per_writer")
            )
        except (FidelityError, EmbeddingError) as exc:
            warnings.append(f"{spec.name}: centroid analysis failed: {exc}")
    return report


def run_pipeline(cfg: AuditConfig, output_dir: Path | None = None) -> dict:
    """Run every stage and return the JSON-ready report.

    Attack and fidelity failures are caught per stage and surfaced as warnings
    so one does not suppress the other. Plot-data CSVs are written when an
    output directory is given.
    """
    out_dir = output_dir or cfg.output_dir
    warnings: list[str] = []
    try:
        real = load_corpus(cfg.real_corpus, CorpusKind.REAL, "real")
        synths = {s.name: load_corpus(s.path, CorpusKind.SYNTHETIC, s.name) for s in cfg.synthetic}
        table = load_embedding_table(cfg.embedding_table) if cfg.embedding_table else None
    except (CorpusError, EmbeddingError) as exc:
        raise DataError(str(exc)) from exc
    if len(real) == 0:
        raise DataError("real corpus is empty")
    if real.degenerate_ids:
        warnings.append(f"real corpus has {len(real.degenerate_ids)} empty posts (kept, flagged)")

    stats = author_stats(real)
    report: dict[str, Any] = {
        "tool_version": __version__,
        "config": cfg.raw,
        "corpora": {
            "real": {"n_posts": len(real), "n_authors": len(stats.counts), "median_length": stats.median_length},
            **{n: {"n_posts": len(c), "n_authors": len(c.authors)} for n, c in synths.items()},
        },
        "sampling": None,
        "attack": None,
        "synthetic": {n: {"attack": None, "fidelity": None} for n in synths},
        "warnings": warnings,
    }

    real_emb = _embed(real, table) if table is not None else None
    attack_corpus = real
    if cfg.sampling.get("enabled", False):
        try:
            plan, strata = plan_sample(real, real_emb, float(cfg.sampling["error_margin"]), float(cfg.sampling.get("z", 1.96)))
            sample = draw_sample(real, {s.author: s.n_w for s in strata}, cfg.seed + SEED_OFFSETS["sample"])
            report["sampling"] = {
                "plan": plan.to_dict(),
                "strata": [
                    {"author": s.author, "N_w": s.N_w, "sigma_w": s.sigma_w, "raw_share": s.raw_share, "n_w": s.n_w}
                    for s in strata
                ],
                "sample_size": len(sample),
            }
            if cfg.sampling.get("exclude_from_attack", True):
                keep = {p.id for p in real} - {p.id for p in sample}
                attack_corpus = real.subset(keep, label="real-minus-sample")
            if out_dir is not None:
                Path(out_dir).mkdir(parents=True, exist_ok=True)
                write_corpus(sample, Path(out_dir) / "sample.jsonl")
        except (SamplingError, EmbeddingError) as exc:
            warnings.append(f"sampling failed: {exc}")

    # attack stage
    acfg = cfg.attack
    tcfg = TrainConfig(
        lam=float(acfg.get("lambda", 1.0)),
        epochs=int(acfg.get("epochs", 200)),
        lr=float(acfg.get("lr", 0.1)),
        batch=int(acfg.get("batch", 32)),
    )
    models = list(acfg.get("models", ["stylometric", "ngram", "tfidf"]))
    fractions = [float(f) for f in acfg.get("subsets", [0.25, 0.5, 0.75, 1.0])]
    try:
        external = None
        if cfg.external_predictions is not None:
            external = load_external_predictions(cfg.external_predictions, sorted(set(p.author for p in real)))
            if external.warnings:
                warnings.append(f"external predictions: {external.warnings} rows renormalised")
        subsets = build_subsets(attack_corpus, fractions)
        attack_rows = []
        attack_seed = cfg.seed + SEED_OFFSETS["attack"]
        full_idx = max(range(len(fractions)), key=lambda i: fractions[i])
        for i, (f, sub) in enumerate(zip(fractions, subsets)):
            rep = run_subset_attack(
                sub,
                models,
                attack_seed,
                tcfg,
                external,
                f,
                synthetic=synths if i == full_idx else None,
            )
            attack_rows.append(rep.to_dict())
            if i == full_idx:
                for name, res in rep.synthetic.items():
                    report["synthetic"][name]["attack"] = {**res, "baseline_accuracy": rep.baseline_accuracy}
        report["attack"] = attack_rows
    except (AttackError, CorpusError) as exc:
        warnings.append(f"attack stage failed: {exc}")

    # fidelity stage
    fseed = cfg.seed + SEED_OFFSETS["fidelity"]
    real_topics = None
    if synths:
        try:
            if cfg.real_topics is not None:
                real_topics = load_topics(cfg.real_topics)
            elif table is not None and cfg.fidelity.get("topic_fallback", True):
                real_topics = extract_topics(real, real_emb, int(cfg.fidelity.get("min_topic_size", 10)), fseed)
        except (FidelityError, EmbeddingError) as exc:
            warnings.append(f"real topic extraction failed: {exc}")
    for spec in cfg.synthetic:
        try:
            fr = _fidelity_for(real, synths[spec.name], spec, cfg, table, real_emb, real_topics, fseed)
            report["synthetic"][spec.name]["fidelity"] = fr.to_dict()
            warnings.extend(fr.warnings)
        except (FidelityError, CorpusError, EmbeddingError) as exc:
            warnings.append(f"{spec.name}: fidelity failed: {exc}")

    if out_dir is not None:
        write_plot_data(Path(out_dir), real, synths, report, table, real_emb, fseed)
    return _round(report)


def write_plot_data(out_dir: Path, real: Corpus, synths: dict[str, Corpus], report: dict, table, real_emb, seed) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    stats = author_stats(real)
    with (out_dir / "posts_per_author.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "authors"])
        counts, edges = stats.post_count_histogram
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            w.writerow([f"{lo:.6g}", f"{hi:.6g}", c])
    with (out_dir / "post_lengths.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "posts"])
        counts, edges = stats.length_histogram
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            w.writerow([f"{lo:.6g}", f"{hi:.6g}", c])
    with (out_dir / "sentiment_distribution.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["corpus", *SENTIMENTS])
        first = True
        for name in sorted(synths):
            fid = report["synthetic"][name]["fidelity"]
            if fid is None:
                continue
            if first:
                w.writerow(["real", *(f"{fid['sentiment']['real'][s]:.6f}" for s in SENTIMENTS)])
                first = False
            w.writerow([name, *(f"{fid['sentiment']['synthetic'][s]:.6f}" for s in SENTIMENTS)])
    if table is not None:
        ids, mats = [p.id for p in real], [real_emb]
        for name in sorted(synths):
            ids += [p.id for p in synths[name]]
            mats.append(_embed(synths[name], table))
        X = np.vstack(mats)
        if X.shape[0] >= 2 and X.shape[1] >= 2:
            proj = pca_project(X, 2)
            write_projection_csv(out_dir / "pca_coordinates.csv", ids, proj.coords)


def exit_code_for(report: dict) -> int:
    return 3 if report.get("warnings") else 0


def dump_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
