"""Markdown rendering and schema validation for audit reports."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

NOT_COMPUTED = "_not computed_"
MINUS = "−"


def pct(x: float | None) -> str:
    """Fraction -> percent with 2 decimals."""
    return "n/a" if x is None else f"{100 * x:.2f}%"


def pct_value(x: float | None) -> str:
    """Value already in percent -> 2 decimals."""
    return "n/a" if x is None else f"{x:.2f}%"


def signed4(x: float | None) -> str:
    if x is None:
        return "n/a"
    s = f"{x:+.4f}"
    if s in ("-0.0000", "+0.0000"):
        return "0.0000"
    return s.replace("-", MINUS)


def num(x: float | None, digits: int = 2) -> str:
    return "n/a" if x is None else f"{x:.{digits}f}"


def _table(header: list[str], rows: list[list[str]]) -> list[str]:
    out = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    out += ["| " + " | ".join(r) + " |" for r in rows]
    return out


def _attack_section(report: dict) -> list[str]:
    lines = ["## Authorship attribution", ""]
    rows = report.get("attack")
    if not rows:
        return lines + [NOT_COMPUTED, ""]
    models: list[str] = []
    for r in rows:
        for m in r["scores"]:
            if m not in models:
                models.append(m)
    body = []
    for r in rows:
        cells = [f"{100 * r['subset_fraction']:.0f}%", str(r["n_authors"])]
        for m in models:
            s = r["scores"].get(m)
            cells.append("n/a" if s is None else f"Acc={pct(s['accuracy'])} F1={num(s['macro_f1'])}")
        body.append(cells)
    lines += _table(["Subset", "Authors", *models], body) + [""]
    return lines


def _synthetic_attack_section(report: dict) -> list[str]:
    lines = ["## Attribution on synthetic data", ""]
    rows = []
    for name in sorted(report.get("synthetic", {})):
        a = report["synthetic"][name].get("attack")
        if a:
            rows.append([name, a["model"], pct(a["accuracy"]), pct_value(a.get("relative_reduction"))])
    if not rows:
        return lines + [NOT_COMPUTED, ""]
    return lines + _table(["Corpus", "Attacker", "Accuracy", "Rel. reduction"], rows) + [""]


TRAIT_COLUMNS = [
    ("hashtags", "Hashtags", 2),
    ("mentions", "Mentions", 2),
    ("urls", "URLs", 4),
    ("emojis", "Emojis", 2),
    ("text_length", "Text Length", 2),
    ("readability", "Readability", 2),
    ("lexical_diversity", "Lexical Diversity", 2),
    ("avg_sentence_length", "Avg. Sentence Length", 2),
    ("punctuation", "Punctuation", 2),
]


def _fidelity_sections(report: dict) -> list[str]:
    synth = {n: v["fidelity"] for n, v in sorted(report.get("synthetic", {}).items()) if v.get("fidelity")}
    lines = ["## Traits", ""]
    if not synth:
        return lines + [NOT_COMPUTED, "", "## Sentiment", "", NOT_COMPUTED, "", "## Topics", "", NOT_COMPUTED, "",
                        "## Persona centroid spread", "", NOT_COMPUTED, ""]
    rows = []
    for name, fid in synth.items():
        t = fid["traits"]["synthetic"]
        rows.append([name, *(num(t[k], d) for k, _, d in TRAIT_COLUMNS)])
    first = next(iter(synth.values()))["traits"]["real"]
    rows.append(["Original", *(num(first[k], d) for k, _, d in TRAIT_COLUMNS)])
    lines += _table(["Corpus", *(h for _, h, _ in TRAIT_COLUMNS)], rows) + [""]

    lines += ["## Sentiment", ""]
    src = {fid["sentiment"]["source"] for fid in synth.values()}
    lines += [f"Label source: {', '.join(sorted(src))}", ""]
    rows = []
    for name, fid in synth.items():
        d = fid["sentiment"]["synthetic"]
        rows.append([name, *(pct(d[s]) for s in ("negative", "neutral", "positive"))])
    d = first_real = next(iter(synth.values()))["sentiment"]["real"]
    rows.append(["Original", *(pct(first_real[s]) for s in ("negative", "neutral", "positive"))])
    lines += _table(["Corpus", "Negative", "Neutral", "Positive"], rows) + [""]
    rows = []
    for name, fid in synth.items():
        p = fid["sentiment"]["preservation"]
        if p is None:
            rows.append([name, "n/a", "n/a", "n/a"])
        else:
            rows.append([name, *(pct_value(p[s]) for s in ("negative", "neutral", "positive"))])
    lines += ["Preservation of the original label per pair:", ""]
    lines += _table(["Corpus", "Negative (%)", "Neutral (%)", "Positive (%)"], rows) + [""]

    lines += ["## Topics", ""]
    rows = []
    for name, fid in synth.items():
        t = fid.get("topics")
        if t:
            rows.append([name, str(t["shared"]), str(t["unique_real"]), str(t["unique_synth"])])
    lines += (_table(["Corpus", "Shared", "Unique (real)", "Unique (synthetic)"], rows) if rows else [NOT_COMPUTED])
    lines += [""]

    lines += ["## Persona centroid spread", ""]
    cents = {n: fid["centroids"] for n, fid in synth.items() if fid.get("centroids")}
    if not cents:
        return lines + [NOT_COMPUTED, ""]
    writers = sorted({w for c in cents.values() for w in c["delta"]})
    rows = [[w, *(signed4(c["delta"].get(w)) for c in cents.values())] for w in writers]
    lines += _table(["Writer", *(f"Δ {n}" for n in cents)], rows) + [""]
    lines += ["Global mean centroid distance: " + ", ".join(f"{n} = {c['d_global']:.4f}" for n, c in cents.items()), ""]
    return lines


def render_markdown(report: dict) -> str:
    lines = ["# Synthetic corpus audit", "", f"Tool version: {report.get('tool_version', '?')}", ""]
    if report.get("sampling"):
        plan = report["sampling"]["plan"]
        lines += ["## Representative sample", ""]
        lines += _table(
            ["Z", "E", "sigma^2", "N", "n (Cochran)", "n (allocated)"],
            [[num(plan["Z"]), f"{plan['E']:.4g}", f"{plan['sigma2']:.4f}", str(plan["N"]), str(plan["n"]), str(plan["n_allocated"])]],
        )
        lines += [""]
    lines += _attack_section(report)
    lines += _synthetic_attack_section(report)
    lines += _fidelity_sections(report)
    if report.get("warnings"):
        lines += ["## Warnings", ""] + [f"- {w}" for w in report["warnings"]] + [""]
    return "\n".join(lines)


@lru_cache(maxsize=None)
def report_schema() -> dict:
    return json.loads(resources.files("synthaudit.data").joinpath("report_schema.json").read_text("utf-8"))


def validate_report(report: dict) -> None:
    import jsonschema

    jsonschema.validate(report, report_schema())
