"""``synthaudit`` command-line entry point."""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click

from . import __version__
from .attack import AttackError, TrainConfig, build_subsets, load_external_predictions, run_subset_attack
from .corpus import CorpusError, CorpusKind, author_stats, load_corpus, write_corpus
from .embedding import EmbeddingError, load_embedding_table
from .fidelity import FidelityError, extract_topics, load_topics
from .genharness import (
    ClientConfig,
    CredentialError,
    GenerationError,
    estimate_cost,
    plan_requests,
    submit_batches,
    synthetic_corpus,
)
from .pipeline import (
    SEED_OFFSETS,
    AuditConfig,
    ConfigError,
    DataError,
    SyntheticSpec,
    _embed,
    _fidelity_for,
    _round,
    dump_report,
    exit_code_for,
    run_pipeline,
)
from .report import render_markdown, validate_report
from .sampling import SamplingError, draw_sample, plan_sample

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_PARTIAL = 0, 1, 2, 3


def _fail(code: int, msg: str):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, CredentialError) as exc:
            _fail(EXIT_CONFIG, str(exc))
        except (DataError, CorpusError, EmbeddingError, SamplingError, AttackError, FidelityError, GenerationError) as exc:
            _fail(EXIT_DATA, str(exc))

    return wrapper


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        click.echo(text, nl=False)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8", newline="\n")


def _float_list(ctx, param, value):
    if value is None:
        return None
    try:
        vals = [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter("expected comma-separated numbers") from None
    if not vals or any(not 0 < v <= 1 for v in vals):
        raise click.BadParameter("fractions must lie in (0, 1]")
    return vals


def _name_list(ctx, param, value):
    return [v.strip() for v in value.split(",") if v.strip()] if value else None


def _named_paths(values) -> dict[str, Path]:
    out = {}
    for v in values:
        if "=" not in v:
            raise click.BadParameter(f"expected NAME=PATH, got {v!r}", param_hint="'--synthetic'")
        name, path = v.split("=", 1)
        out[name] = Path(path)
    return out


existing = click.Path(exists=True, dir_okay=False, path_type=Path)


@click.group()
@click.version_option(__version__, prog_name="synthaudit")
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose: bool):
    """Audit synthetic text corpora for re-identification risk and fidelity."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.argument("corpus", type=existing)
@click.option("--kind", type=click.Choice(["real", "synthetic"]), default="real", show_default=True)
@click.option("--out", type=click.Path(path_type=Path), help="Write the normalised corpus here.")
@_guarded
def ingest(corpus: Path, kind: str, out: Path | None):
    """Validate a corpus file and print per-author statistics as JSON."""
    c = load_corpus(corpus, CorpusKind(kind), corpus.stem)
    stats = author_stats(c)
    summary = {
        "n_posts": len(c),
        "n_authors": len(stats.counts),
        "median_length": stats.median_length,
        "degenerate_posts": list(c.degenerate_ids),
        "posts_per_author": dict(stats.counts),
    }
    if out is not None:
        write_corpus(c, out)
    click.echo(json.dumps(_round(summary), indent=2, ensure_ascii=False))
    if c.degenerate_ids:
        sys.exit(EXIT_PARTIAL)


@cli.command()
@click.argument("corpus", type=existing)
@click.option("--embeddings", type=existing, required=True, help="Word embedding table.")
@click.option("--error-margin", "error_margin", type=float, required=True, help="Tolerated error E.")
@click.option("--z", type=float, default=1.96, show_default=True, help="Confidence z-score.")
@click.option("--seed", type=click.IntRange(min=0), required=True)
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), default=Path("."), show_default=True)
@_guarded
def sample(corpus: Path, embeddings: Path, error_margin: float, z: float, seed: int, out_dir: Path):
    """Size and draw a Neyman-allocated representative sample."""
    c = load_corpus(corpus, CorpusKind.REAL, "real")
    table = load_embedding_table(embeddings)
    vecs = _embed(c, table)
    plan, strata = plan_sample(c, vecs, error_margin, z)
    drawn = draw_sample(c, {s.author: s.n_w for s in strata}, seed + SEED_OFFSETS["sample"])
    out_dir.mkdir(parents=True, exist_ok=True)
    write_corpus(drawn, out_dir / "sample.jsonl")
    doc = {
        "plan": plan.to_dict(),
        "strata": [
            {"author": s.author, "N_w": s.N_w, "sigma_w": s.sigma_w, "raw_share": s.raw_share, "n_w": s.n_w}
            for s in strata
        ],
        "sample_size": len(drawn),
    }
    text = json.dumps(_round(doc), indent=2, sort_keys=True) + "\n"
    (out_dir / "sampling_plan.json").write_text(text, encoding="utf-8", newline="\n")
    click.echo(text, nl=False)


@cli.command()
@click.argument("corpus", type=existing)
@click.option("--client-config", type=existing, help="JSON endpoint/model/price settings.")
@click.option("--kind", type=click.Choice(["example_based", "persona_based"]), default="example_based", show_default=True)
@click.option("--batch-size", type=click.IntRange(min=1), default=5, show_default=True)
@click.option("--journal", type=click.Path(dir_okay=False, path_type=Path), help="Resume journal (JSONL).")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), help="Synthetic corpus output.")
@click.option("--dry-run", is_flag=True, help="Only build prompts and print the cost estimate.")
@_guarded
def generate(corpus: Path, client_config: Path | None, kind: str, batch_size: int, journal, out, dry_run: bool):
    """Build prompts from a real corpus and collect LLM-generated posts."""
    c = load_corpus(corpus, CorpusKind.REAL, "real")
    requests = plan_requests(c, kind, batch_size)
    cfg = ClientConfig.from_file(client_config) if client_config else None
    prices = {"prompt": cfg.prompt_price_per_1k, "response": cfg.response_price_per_1k} if cfg else {"prompt": 0.0}
    if dry_run:
        ledger = estimate_cost(requests, prices)
        doc = {"n_requests": len(requests), "estimate": ledger.to_dict()}
        click.echo(json.dumps(_round(doc), indent=2, ensure_ascii=False))
        return
    if cfg is None:
        raise ConfigError("--client-config is required unless --dry-run is given")
    if out is None:
        raise ConfigError("--out is required unless --dry-run is given")
    batches = submit_batches(requests, cfg, journal)
    write_corpus(synthetic_corpus(batches, out.stem), out)
    counts: dict[str, int] = {}
    for b in batches:
        counts[b.status] = counts.get(b.status, 0) + 1
    ledger = estimate_cost(batches, prices)
    click.echo(json.dumps({"statuses": dict(sorted(counts.items())), "cost": _round(ledger.to_dict())}, indent=2))
    if counts.get("ok", 0) != len(batches):
        sys.exit(EXIT_PARTIAL)


@cli.command()
@click.argument("corpus", type=existing)
@click.option("--subsets", callback=_float_list, default="0.25,0.5,0.75,1.0", show_default=True)
@click.option("--models", callback=_name_list, default="stylometric,ngram,tfidf", show_default=True)
@click.option("--external", type=existing, help="External prediction CSV (post_id,<label>...).")
@click.option("--synthetic", multiple=True, help="NAME=PATH synthetic corpus to attack (repeatable).")
@click.option("--seed", type=click.IntRange(min=0), required=True)
@click.option("--lambda", "lam", type=float, default=1.0, show_default=True)
@click.option("--epochs", type=click.IntRange(min=1), default=200, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), help="Write the JSON report here.")
@click.option("--markdown", type=click.Path(dir_okay=False, path_type=Path), help="Write a markdown table here.")
@_guarded
def attack(corpus, subsets, models, external, synthetic, seed, lam, epochs, out, markdown):
    """Run authorship-attribution attackers on author subsets."""
    for m in models:
        if m not in ("stylometric", "ngram", "tfidf", "ensemble", "external"):
            raise click.BadParameter(f"unknown model {m!r}", param_hint="'--models'")
    if "external" in models and external is None:
        raise click.BadParameter("model 'external' needs --external", param_hint="'--models'")
    real = load_corpus(corpus, CorpusKind.REAL, "real")
    synths = {n: load_corpus(p, CorpusKind.SYNTHETIC, n) for n, p in _named_paths(synthetic).items()}
    ext = load_external_predictions(external, sorted(real.authors)) if external else None
    cfg = TrainConfig(lam=lam, epochs=epochs)
    rows, syn = [], {}
    full = max(range(len(subsets)), key=lambda i: subsets[i])
    for i, (f, sub) in enumerate(zip(subsets, build_subsets(real, subsets))):
        rep = run_subset_attack(sub, models, seed + SEED_OFFSETS["attack"], cfg, ext, f, synths if i == full else None)
        rows.append(rep.to_dict())
        if i == full:
            syn = {n: {"attack": {**r, "baseline_accuracy": rep.baseline_accuracy}, "fidelity": None} for n, r in rep.synthetic.items()}
    doc = _round({"tool_version": __version__, "attack": rows, "synthetic": syn})
    _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", out)
    if markdown is not None:
        md = render_markdown({**doc, "synthetic": syn})
        _emit(md, markdown)


@cli.command()
@click.argument("real", type=existing)
@click.argument("synthetic", type=existing)
@click.option("--seed", type=click.IntRange(min=0), required=True)
@click.option("--embeddings", type=existing, help="Needed for topic fallback and persona centroids.")
@click.option("--real-labels", type=existing, help="post_id,label CSV for the real corpus.")
@click.option("--synthetic-labels", type=existing, help="post_id,label CSV for the synthetic corpus.")
@click.option("--real-topics", type=existing, help="Topic-vector JSON for the real corpus.")
@click.option("--synthetic-topics", type=existing, help="Topic-vector JSON for the synthetic corpus.")
@click.option("--persona", is_flag=True, help="Compute per-persona centroid spread.")
@click.option("--persona-mode", type=click.Choice(["per_writer", "shared"]), default="per_writer", show_default=True)
@click.option("--centroid-k", type=click.IntRange(min=2), default=50, show_default=True)
@click.option("--topic-threshold", type=float, default=0.7, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path))
@_guarded
def fidelity(real, synthetic, seed, embeddings, real_labels, synthetic_labels, real_topics, synthetic_topics,
             persona, persona_mode, centroid_k, topic_threshold, out):
    """Compare traits, sentiment, topics and persona spread of two corpora."""
    fopts = {"persona_mode": persona_mode, "centroid_k": centroid_k, "topic_threshold": topic_threshold}
    cfg = AuditConfig(
        real_corpus=real,
        seed=seed,
        embedding_table=embeddings,
        real_sentiment_labels=real_labels,
        real_topics=real_topics,
        fidelity=fopts,
    )
    spec = SyntheticSpec("synthetic", synthetic, persona, synthetic_labels, synthetic_topics)
    cfg.synthetic = [spec]
    cfg.validate()
    r = load_corpus(real, CorpusKind.REAL, "real")
    s = load_corpus(synthetic, CorpusKind.SYNTHETIC, "synthetic")
    table = load_embedding_table(embeddings) if embeddings else None
    fseed = seed + SEED_OFFSETS["fidelity"]
    r_emb = _embed(r, table) if table is not None else None
    topics = load_topics(real_topics) if real_topics else (extract_topics(r, r_emb, 10, fseed) if table else None)
    rep = _fidelity_for(r, s, spec, cfg, table, r_emb, topics, fseed)
    _emit(json.dumps(_round(rep.to_dict()), indent=2, sort_keys=True) + "\n", out)
    if rep.warnings:
        for w in rep.warnings:
            click.echo(f"warning: {w}", err=True)
        sys.exit(EXIT_PARTIAL)


@cli.command()
@click.argument("report_json", type=existing)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), help="Markdown output path.")
@click.option("--no-validate", is_flag=True, help="Skip schema validation.")
@_guarded
def report(report_json: Path, out: Path | None, no_validate: bool):
    """Render a report JSON file as markdown tables."""
    try:
        doc = json.loads(report_json.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{report_json}: {exc}") from None
    if not no_validate:
        import jsonschema

        try:
            validate_report(doc)
        except jsonschema.ValidationError as exc:
            raise DataError(f"report does not match schema: {exc.message}") from None
    _emit(render_markdown(doc), out)


@cli.command()
@click.option("--config", "config_path", type=existing, required=True, help="Audit config JSON.")
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), help="Overrides output_dir.")
@_guarded
def run(config_path: Path, out_dir: Path | None):
    """Run the whole audit and write report.json, report.md and plot CSVs."""
    cfg = AuditConfig.from_file(config_path)
    target = out_dir or cfg.output_dir or Path("synthaudit-out")
    rep = run_pipeline(cfg, target)
    validate_report(rep)
    target.mkdir(parents=True, exist_ok=True)
    (target / "report.json").write_text(dump_report(rep), encoding="utf-8", newline="\n")
    (target / "report.md").write_text(render_markdown(rep), encoding="utf-8", newline="\n")
    for w in rep["warnings"]:
        click.echo(f"warning: {w}", err=True)
    click.echo(str(target / "report.json"))
    sys.exit(exit_code_for(rep))


def main(argv=None) -> int:
    # usage mistakes count as configuration errors (exit 1), not data errors
    try:
        cli.main(args=argv, prog_name="synthaudit", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_CONFIG
    except click.UsageError as exc:
        exc.show()
        return EXIT_CONFIG
    except click.ClickException as exc:
        exc.show()
        return EXIT_CONFIG
    except SystemExit as exc:
        return int(exc.code or 0)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
