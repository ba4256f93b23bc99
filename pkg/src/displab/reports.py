"""Analysis reports: schema-versioned JSON plus per-layer histogram CSV.

Reports are byte-stable: dict order is fixed, floats carry 17
significant digits, and no timestamps are embedded, so seed-matched
reruns produce identical files (the comparison tooling relies on it).
"""

from __future__ import annotations

import csv
import io
import json
import math

import numpy as np

from . import jsonio
from .geometry import average_histograms, condensation_summary
from .ranks import UndefinedCorrelationError

__all__ = [
    "ReportSchemaError",
    "SCHEMA_VERSION",
    "build_analysis_report",
    "write_report",
    "write_histogram_csv",
    "read_report",
    "compare_reports",
]

SCHEMA_VERSION = 1


class ReportSchemaError(ValueError):
    pass


def build_analysis_report(traces, bins: int, extra: dict | None = None) -> dict:
    """Condensation summary + averaged histogram stack over traces."""
    hist = average_histograms(traces, bins=bins)
    try:
        summary = condensation_summary(traces)
        mu = [float(v) for v in summary.mu]
        rho: float | None = summary.spearman_rho
        tau: float | None = summary.kendall_tau
        mu_embedding = summary.mu_embedding
        mu_final = summary.mu_final_norm
    except UndefinedCorrelationError:
        # constant mu across depth (e.g. degenerate synthetic traces):
        # report the values and leave the correlations null
        from .geometry import layer_mean_similarity
        mus = np.mean([layer_mean_similarity(t) for t in traces], axis=0)
        depth = traces[0].depth
        mu = [float(v) for v in mus[1:1 + depth]]
        rho = tau = None
        mu_embedding = float(mus[0])
        mu_final = float(mus[-1]) if traces[0].final_norm is not None else None
    report = {
        "schema_version": SCHEMA_VERSION,
        "kind": "analysis",
        "n_sequences": len(traces),
        "layer_count": len(mu),
        "mu": mu,
        "mu_embedding": mu_embedding,
        "mu_final_norm": mu_final,
        "spearman_rho": rho,
        "kendall_tau": tau,
        "histogram": {
            "bins": int(hist.freqs.shape[1]),
            "edges": [float(e) for e in hist.edges],
            "labels": list(hist.labels),
            "frequencies": [[float(f) for f in row] for row in hist.freqs],
        },
    }
    if extra:
        report.update(extra)
    return report


def write_report(report: dict, path) -> None:
    jsonio.atomic_write_text(path, jsonio.dumps(report))


def write_histogram_csv(report: dict, path) -> None:
    hist = report["histogram"]
    edges = hist["edges"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["layer", "bin_left", "bin_right", "frequency"])
    for label, row in zip(hist["labels"], hist["frequencies"]):
        for b, freq in enumerate(row):
            writer.writerow([label,
                             jsonio.format_float(edges[b]),
                             jsonio.format_float(edges[b + 1]),
                             jsonio.format_float(freq)])
    jsonio.atomic_write_text(path, buf.getvalue())


def read_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        report = json.load(fh)
    if not isinstance(report, dict) or "schema_version" not in report:
        raise ReportSchemaError(f"{path}: not an analysis report")
    if report["schema_version"] != SCHEMA_VERSION:
        raise ReportSchemaError(
            f"{path}: schema version {report['schema_version']}, expected {SCHEMA_VERSION}")
    return report


def _delta(a, b):
    if a is None or b is None:
        return None
    return b - a


def compare_reports(report_a: dict, report_b: dict) -> dict:
    """Per-layer mu deltas plus a final-layer condensation verdict.

    The verdict judges which run is more condensed by final-layer mu:
    equal values tie; otherwise the larger final mu is the more
    condensed run.
    """
    for r in (report_a, report_b):
        if "mu" not in r or "layer_count" not in r:
            raise ReportSchemaError("report missing condensation fields")
    if report_a["layer_count"] != report_b["layer_count"]:
        raise ReportSchemaError(
            f"layer_count mismatch: {report_a['layer_count']} vs {report_b['layer_count']}")
    mu_a = report_a["mu"]
    mu_b = report_b["mu"]
    final_a, final_b = mu_a[-1], mu_b[-1]
    if final_a == final_b:
        verdict = "tie"
    elif final_a > final_b:
        verdict = "a_more_condensed"
    else:
        verdict = "b_more_condensed"
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "comparison",
        "layer_count": report_a["layer_count"],
        "delta_mu": [b - a for a, b in zip(mu_a, mu_b)],
        "delta_spearman_rho": _delta(report_a.get("spearman_rho"), report_b.get("spearman_rho")),
        "delta_kendall_tau": _delta(report_a.get("kendall_tau"), report_b.get("kendall_tau")),
        "final_mu_a": final_a,
        "final_mu_b": final_b,
        "verdict": verdict,
    }


def format_theory_report(checks, trials: int, seed: int) -> dict:
    rows = []
    for c in checks:
        rows.append({
            "name": c.name,
            "kind": c.kind,
            "estimate": c.estimate,
            "stderr": c.stderr,
            "lower": c.lower,
            "upper": c.upper,
            "status": c.status,
            "detail": c.detail,
        })
    counts = {s: sum(1 for c in checks if c.status == s)
              for s in ("pass", "fail", "inconclusive")}
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "theory-verification",
        "trials": trials,
        "seed": seed,
        "counts": counts,
        "checks": rows,
    }
