"""Summaries and pass/fail checks computed from the files of a run directory."""

import math
from collections import defaultdict
from pathlib import Path

import numpy as np

from ..io import read_json
from . import records
from .stats import mean_ci, significance_test

ALPHA = 0.05
MIN_SPEEDUP = 20.0


def _views(rows, tau, n):
    field = records.tau_field(tau)
    out = defaultdict(list)
    for r in sorted(rows, key=lambda r: (int(r["fold"]), int(r["cycle"]))):
        out[r["planner"]].append(n + 1 if r[field] == "" else int(r[field]))
    return {k: np.array(v, dtype=np.float64) for k, v in out.items()}


def summary_rows(run_dir):
    run = Path(run_dir)
    cfg = read_json(run / "manifest.json")["config"]
    n = cfg["evaluation"]["n"]
    rows = records.read_csv(run / "cycles.csv")
    out = []
    for tau in cfg["evaluation"]["taus"]:
        v = _views(rows, tau, n)
        for name, x in v.items():
            m, lo, hi = mean_ci(x)
            p = significance_test(x, v["random"]) if "random" in v and name != "random" else math.nan
            out.append({"planner": name, "tau": tau, "mean": m, "ci_low": lo, "ci_high": hi,
                        "n_cycles": len(x), "p_vs_random": p})
    return out


def check_cycles(metric_rows):
    """``(monotone, no_revisits)`` over every cycle in metrics.csv."""
    groups = defaultdict(list)
    for r in metric_rows:
        groups[(r["fold"], r["planner"], r["cycle"])].append(r)
    monotone = revisit_free = True
    for rows in groups.values():
        rows.sort(key=lambda r: int(r["step"]))
        R = [float(r["R"]) for r in rows]
        views = [r["view_index"] for r in rows]
        monotone &= all(b >= a for a, b in zip(R, R[1:]))
        revisit_free &= len(set(views)) == len(views)
    return monotone, revisit_free


def run_checks(run_dir):
    """List of ``(name, passed, detail)`` for every check the run's files allow."""
    run = Path(run_dir)
    checks = []
    if (run / "cycles.csv").exists():
        cfg = read_json(run / "manifest.json")["config"]
        tau, n = cfg["evaluation"]["taus"][0], cfg["evaluation"]["n"]
        v = _views(records.read_csv(run / "cycles.csv"), tau, n)
        for name in ("ssl", "voxel"):
            if name in v and "random" in v:
                p = significance_test(v[name], v["random"])
                ok = v[name].mean() < v["random"].mean() and p < ALPHA
                checks.append((f"{name} needs fewer views than random to reach {tau:g}", bool(ok),
                               f"{v[name].mean():.2f} vs {v['random'].mean():.2f}, p={p:.3g}"))
    if (run / "metrics.csv").exists():
        mono, fresh = check_cycles(records.read_csv(run / "metrics.csv"))
        checks.append(("coverage never drops within a cycle", mono, ""))
        checks.append(("no view is visited twice in a cycle", fresh, ""))
    if (run / "bench.json").exists():
        b = read_json(run / "bench.json")
        s = b["speedup_exclusive"]
        checks.append((f"learned scoring at least {MIN_SPEEDUP:g}x faster than ray casting", s >= MIN_SPEEDUP,
                       f"{s:.1f}x"))
    if (run / "annotation_curve.csv").exists():
        rows = records.read_csv(run / "annotation_curve.csv")
        hits = [float(r["ratio"]) for r in rows if r["indistinguishable"] == "1"]
        cross = min(hits) if hits else None
        ok = cross is not None and cross < 1.0
        checks.append(("online labels match the dense reference below a 1:1 label ratio", ok,
                       "never" if cross is None else f"at ratio {cross:.3f}"))
    return checks


def format_summary(rows):
    lines = [f"{'planner':<12}{'tau':>6}{'mean':>8}{'95% CI':>18}{'p vs random':>14}"]
    for r in rows:
        ci = f"[{r['ci_low']:.2f}, {r['ci_high']:.2f}]"
        p = "" if math.isnan(r["p_vs_random"]) else f"{r['p_vs_random']:.3g}"
        lines.append(f"{r['planner']:<12}{r['tau']:>6g}{r['mean']:>8.2f}{ci:>18}{p:>14}")
    return "\n".join(lines)
