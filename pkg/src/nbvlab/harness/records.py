"""CSV and JSON outputs of an experiment run.

Metric files hold only values that are pure functions of the config, so a
rerun reproduces them byte for byte. Wall-clock measurements go to a
separate timings file.
"""

import csv
import math
from pathlib import Path

from ..io import write_json

SCHEMA = "nbvlab-records/1"

METRIC_FIELDS = ("fold", "planner", "cycle", "step", "view_index", "gain", "R", "free", "occupied", "unknown")
CYCLE_FIELDS = ("fold", "planner", "cycle", "plant", "dx", "dy", "theta", "first_view", "final_R", "anomalies")
TIMING_FIELDS = ("fold", "planner", "cycle", "step", "plan_seconds")
TRAINING_FIELDS = ("fold", "t", "eps", "chosen_view", "gain", "loss", "buffer_size", "A_ssl")
CURVE_FIELDS = ("fold", "A_ssl", "A_off", "ratio", "mean_R", "reference_mean_R", "p_value", "indistinguishable")


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def write_csv(path, fields, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([_fmt(row.get(f)) for f in fields])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def tau_field(tau):
    return f"views_to_{tau:g}"


def cycle_fields(taus):
    return CYCLE_FIELDS + tuple(tau_field(t) for t in taus)


def metric_rows(ev):
    """Per-view rows of one evaluated cycle."""
    rec = ev.record
    for k, (v, g, r) in enumerate(zip(rec.views, rec.gains, rec.ratios)):
        row = {"fold": ev.fold, "planner": ev.planner, "cycle": ev.spec.cycle, "step": k + 1,
               "view_index": v, "gain": g, "R": r}
        if k < len(rec.grid_stats):
            row.update(rec.grid_stats[k])
        yield row


def cycle_row(ev, taus, views_to):
    pose = ev.spec.pose
    row = {"fold": ev.fold, "planner": ev.planner, "cycle": ev.spec.cycle, "plant": ev.spec.plant,
           "dx": pose.dx, "dy": pose.dy, "theta": pose.theta, "first_view": ev.spec.first_view,
           "final_R": ev.record.ratios[-1], "anomalies": ev.record.anomalies}
    for tau in taus:
        row[tau_field(tau)] = views_to(ev.record.ratios, tau)
    return row


def timing_rows(ev):
    for k, s in enumerate(ev.record.plan_times):
        yield {"fold": ev.fold, "planner": ev.planner, "cycle": ev.spec.cycle, "step": k + 1, "plan_seconds": s}


def write_manifest(path, payload):
    write_json(path, {"schema": SCHEMA, **payload})
