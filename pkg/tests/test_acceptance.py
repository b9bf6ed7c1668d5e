"""End-to-end acceptance checks, one test per criterion.

Criteria 7, 9 and 10 read the long experiment cached by
``acceptance_support``; the first call fills the cache (several hours on one
core). Every test records a one-line PASS/FAIL verdict that the terminal
summary prints at the end of the run.
"""

import json
import subprocess
import sys
import time

import numpy as np
import pytest

import acceptance_support as support
from nbvlab.harness import records
from nbvlab.harness.experiment import Lab, bench_ig_speed, crossing_ratio
from nbvlab.harness.report import check_cycles
from nbvlab.harness.stats import censored_views, significance_test
from nbvlab.igmetric import TargetVector, ground_truth_ig, merge_accumulated, observe
from nbvlab.learner import (
    AnnotationLedger, ExplorationSchedule, ReconstructionCycle, ReplayBuffer, SSLLearner, collect_strong_sample,
    epsilon, select_next_view,
)
from nbvlab.network import IGPredictor, backward, batch_loss, forward, init_params
from nbvlab.pointcloud import threshold_intersection
from nbvlab.scene import ScenePose
from nbvlab.sensor import CameraIntrinsics, Viewpoint, ray_directions
from nbvlab.views import initial_state
from nbvlab.voxelnbv import OccupancyGrid, raycast_ig
from test_network import numeric_gradient, toy_batch, toy_params

VERDICTS = []


def verdict(number, ok, detail):
    VERDICTS.append(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


@pytest.fixture(scope="module")
def experiment():
    cfg = support.acceptance_config()
    return cfg, support.ensure_results(cfg)


def brute_intersection(query, reference, delta):
    d = np.sqrt(((query[:, None, :] - reference[None, :, :]) ** 2).sum(-1))
    return query[(d <= delta).any(axis=1)]


def test_criterion_01_threshold_intersection_matches_brute_force():
    rng = np.random.default_rng(1)
    pairs = []
    for _ in range(100):
        n, m = rng.integers(1, 501, size=2)
        ref = rng.uniform(-0.1, 0.1, size=(m, 3))
        # half the queries sit near reference points so both outcomes occur
        near = ref[rng.integers(m, size=n // 2)] + rng.normal(scale=0.004, size=(n // 2, 3))
        query = np.vstack([near, rng.uniform(-0.1, 0.1, size=(n - n // 2, 3))])
        pairs.append((query, ref, float(rng.uniform(0.001, 0.01))))
    t0 = time.perf_counter()
    got = [threshold_intersection(q, r, d) for q, r, d in pairs]
    elapsed = time.perf_counter() - t0
    equal = all(np.array_equal(g, brute_intersection(q, r, d)) for g, (q, r, d) in zip(got, pairs))
    hits = sum(len(g) for g in got)
    ok = verdict(1, equal and elapsed < 10.0,
                 f"100 pairs identical to brute force: {equal}, {hits} matched points, {elapsed:.3f} s")
    assert ok


def test_criterion_02_gain_identities():
    rng = np.random.default_rng(2)
    delta = 0.003
    cap = rng.uniform(-0.1, 0.1, size=(300, 3))
    first = ground_truth_ig(np.zeros((0, 3)), cap, delta)
    redundant = ground_truth_ig(cap, cap + rng.uniform(-delta / 2, delta / 2, size=cap.shape) / np.sqrt(3), delta)
    consistent = 0
    acc = np.zeros((0, 3))
    for _ in range(1000):
        k = int(rng.integers(1, 80))
        # mix fresh points with near copies of accumulated ones
        fresh = rng.uniform(-0.1, 0.1, size=(k, 3))
        if len(acc):
            pick = acc[rng.integers(len(acc), size=int(rng.integers(0, 40)))]
            fresh = np.vstack([fresh, pick + rng.normal(scale=delta / 2, size=pick.shape)])
        gain, merged = observe(acc, fresh, delta)
        grown = len(merged) - len(acc)
        same = np.array_equal(merged, merge_accumulated(acc, fresh, delta))
        consistent += int(same and grown == round(gain * len(fresh)) and abs(gain * len(fresh) - grown) < 1e-9)
        acc = merged if len(merged) < 4000 else np.zeros((0, 3))
    ok = verdict(2, first == 1.0 and redundant == 0.0 and consistent == 1000,
                 f"first {first}, redundant {redundant}, |dPa| = gain*|Pc| on {consistent}/1000 steps")
    assert ok


def test_criterion_03_gradient_check():
    worst = 0.0
    for trial in range(20):
        rng = np.random.default_rng(trial)
        p = toy_params(trial, mlp1=(16,) * (1 + trial % 2))
        clouds, states = toy_batch(trial, P=16, M=5)
        y = rng.random((2, 5))
        mask = (rng.random((2, 5)) < 0.5).astype(float)
        mask[:, 0] = 1.0
        pred, cache = forward(p, clouds, states, return_cache=True)
        _, d = batch_loss(pred, y, mask)
        grads = backward(p, cache, d)
        num = numeric_gradient(p, clouds, states, y, mask)
        for name in p.weights:
            scale = max(np.linalg.norm(num[name]), np.linalg.norm(grads[name]), 1e-8)
            worst = max(worst, np.linalg.norm(grads[name] - num[name]) / scale)
    ok = verdict(3, worst < 1e-4, f"max relative error {worst:.2e} over 20 configs")
    assert ok


def test_criterion_04_permutation_invariance():
    rng = np.random.default_rng(4)
    p = init_params(seed=4, dtype=np.float64)
    M = p.arch["n_views"]
    clouds = rng.uniform(-1.0, 1.0, size=(1, 512, 3))
    states = (rng.random((1, M)) < 0.3).astype(np.float64)
    base = forward(p, clouds, states)
    worst = max(float(np.abs(forward(p, clouds[:, rng.permutation(512)], states) - base).max()) for _ in range(50))
    ok = verdict(4, worst < 1e-6, f"max output change {worst:.2e} over 50 permutations (float64)")
    assert ok


def marching_counts(grid, view, intr, substeps=1000):
    """Per-ray unknown and traversed counts by stepping resolution/substeps along each ray."""
    ts = np.arange(0.0, intr.max_range, grid.resolution / substeps)
    dims = np.array(grid.dims)
    dirs = ray_directions(view, intr)
    unknown = np.zeros(len(dirs), dtype=np.int64)
    traversed = np.zeros(len(dirs), dtype=np.int64)
    for r, d in enumerate(dirs):
        v = np.floor((np.asarray(view.position) + ts[:, None] * d - grid.origin) / grid.resolution).astype(int)
        inside = np.all((v >= 0) & (v < dims), axis=1)
        if not inside.any():
            continue
        first = int(np.argmax(inside))
        rest = inside[first:]
        v = v[first:first + (len(rest) if rest.all() else int(np.argmin(rest)))]
        keep = np.r_[True, np.any(v[1:] != v[:-1], axis=1)]
        for cell in map(tuple, v[keep]):
            traversed[r] += 1
            if not grid.observed[cell]:
                unknown[r] += 1
            elif grid.logodds[cell] > grid.occupied_threshold:
                break
    return unknown, traversed


def test_criterion_05_raycast_matches_marching_oracle():
    rng = np.random.default_rng(5)
    intr = CameraIntrinsics(width=12, height=9, max_range=1.5)
    worst = 0
    gains_ok = True
    for _ in range(20):
        g = OccupancyGrid((-0.5, -0.5, -0.5), 0.1, (10, 10, 10))
        g.observed = rng.random(g.dims) < rng.uniform(0.2, 0.9)
        g.logodds = np.where(rng.random(g.dims) < rng.uniform(0.0, 0.15), 1.0, -1.0) * g.observed
        # cameras off voxel boundaries, inside or outside the grid
        pos = rng.uniform(-0.8, 0.8, size=3) + 0.0137
        view = Viewpoint(tuple(pos), tuple(rng.uniform(-0.2, 0.2, size=3)))
        ou, ot = marching_counts(g, view, intr)
        ku, kt = g.ray_counts(view, intr)
        worst = max(worst, int(np.abs(ku - ou).max()), int(np.abs(kt - ot).max()))
        expected = ou.sum() / ot.sum() if ot.sum() else 0.0
        gains_ok &= abs(raycast_ig(g, view, intr) - expected) <= intr.width * intr.height / max(ot.sum(), 1)
    ok = verdict(5, worst <= 1 and gains_ok, f"max per-ray count difference {worst} voxel on 20 grids")
    assert ok


def test_criterion_06_replay_and_exploration():
    evictions = True
    for capacity, extra in [(1, 5), (7, 3), (1000, 1), (1000, 2500)]:
        buf = ReplayBuffer(capacity)
        for i in range(capacity + extra):
            buf.push(i)
        evictions &= buf.samples() == list(range(extra, capacity + extra))
    sched = ExplorationSchedule()
    t = np.arange(1, 10_001)
    formula = np.maximum(sched.eps_min, sched.rho ** (t - 1.0) * sched.eps_ini)
    eps_err = float(np.abs(np.array([epsilon(int(i), sched) for i in t]) - formula).max())
    rng = np.random.default_rng(6)
    N = 100_000
    state = initial_state(33)
    state[:5] = 1.0
    pred = rng.random(33)
    worst_sigma = 0.0
    for eps in (0.05, 0.3, 0.5, 0.9):
        explore = sum(select_next_view(pred, state, eps, rng, return_branch=True)[1] == "explore" for _ in range(N))
        worst_sigma = max(worst_sigma, abs(explore / N - eps) / np.sqrt(eps * (1 - eps) / N))
    ok = verdict(6, evictions and eps_err <= 1e-12 and worst_sigma <= 3.0,
                 f"eviction exact: {evictions}, max eps error {eps_err:.1e}, "
                 f"branch frequency within {worst_sigma:.2f} sigma")
    assert ok


def _views_to(run_dir, tau, n):
    out = {}
    for r in sorted(records.read_csv(run_dir / "cycles.csv"), key=lambda r: (int(r["fold"]), int(r["cycle"]))):
        v = r[records.tau_field(tau)]
        out.setdefault(r["planner"], []).append(None if v == "" else int(v))
    return {k: censored_views(v, n) for k, v in out.items()}


@pytest.mark.slow
def test_criterion_07_planner_ordering(experiment):
    cfg, out = experiment
    run = out / "experiment"
    timing = json.loads((run / "timing.json").read_text())
    v = _views_to(run, 0.8, cfg.evaluation.n)
    rnd = v["random"]
    parts, ok = [], not timing["errors"]
    for name in ("ssl", "voxel"):
        p = significance_test(v[name], rnd)
        ok &= bool(v[name].mean() < rnd.mean() and p < 0.05)
        parts.append(f"{name} {v[name].mean():.2f} (p={p:.2g})")
    hours = timing["total_seconds"] / 3600
    within_budget = hours < 2.0
    parts.append(f"random {rnd.mean():.2f}, predefined {v['predefined'].mean():.2f}, runtime {hours:.2f} h")
    verdict(7, ok and within_budget, "views to R>=0.8: " + ", ".join(parts))
    assert ok, parts
    assert within_budget, f"experiment took {hours:.2f} h"


@pytest.mark.slow
def test_criterion_08_learned_gain_speedup(experiment):
    cfg, out = experiment
    final = max((out / "checkpoints").glob("A*.ckpt"))
    lab = Lab(cfg)
    est = lab.predictor_from_params(IGPredictor.load(final).params_)
    b = bench_ig_speed(lab, est)
    ok = verdict(8, b["speedup_exclusive"] >= 20.0,
                 f"speedup {b['speedup_exclusive']:.1f}x (learned {b['learned_exclusive'] * 1e3:.1f} ms, "
                 f"voxel {b['voxel_exclusive'] * 1e3:.0f} ms, {b['resolution']} m, {b['rays']} rays, "
                 f"median of {b['repetitions']}; with input building {b['speedup_inclusive']:.1f}x)")
    assert ok


@pytest.mark.slow
def test_criterion_09_annotation_efficiency(experiment):
    cfg, out = experiment
    rows = records.read_csv(out / "annotation_curve.csv")
    for r in rows:
        r["ratio"] = float(r["ratio"])
        r["indistinguishable"] = r["indistinguishable"] == "1"
    cross = crossing_ratio(rows)
    # per-sample cost: one label per online motion, one per candidate per dense sample
    lab = Lab(cfg)
    env = lab.env(0, ScenePose())
    ledger = AnnotationLedger(lab.n_views)
    collect_strong_sample(env, np.zeros((0, 3)), initial_state(lab.n_views), ledger, cfg.training.n_points, 0)
    learner = SSLLearner(lab.new_predictor(0), batch_size=cfg.training.batch_size, random_state=0)
    learner.iterate(ReconstructionCycle(env, track_ratio=False))
    weak = TargetVector.single(lab.n_views, 0, 0.5).n_labels
    costs = (learner.ledger.ssl_count, ledger.offline_count, weak)
    log_rows = [r for r in records.read_csv(out / "experiment" / "training_log.csv") if r["fold"] == "0"]
    online_exact = [int(r["A_ssl"]) for r in log_rows] == list(range(1, len(log_rows) + 1))
    ref = json.loads((out / "reference.json").read_text())
    offline_exact = int(rows[0]["A_off"]) == 33 * ref["offline_samples"]
    first, last = rows[0], rows[-1]
    untrained = "below" if float(first["mean_R"]) < float(first["reference_mean_R"]) else "above"
    ok = verdict(9, cross is not None and cross < 1.0 and costs == (1, 33, 1) and online_exact and offline_exact,
                 f"crossing ratio {cross}, A_off {first['A_off']}, per-sample cost weak {costs[0]} vs dense "
                 f"{costs[1]}; untrained R {untrained} reference (p={float(first['p_value']):.2g}), "
                 f"final R {float(last['mean_R']):.3f} vs untrained {float(first['mean_R']):.3f}")
    assert costs == (1, 33, 1) and online_exact and offline_exact
    assert ok, f"no checkpoint indistinguishable below ratio 1: {[(r['ratio'], r['p_value']) for r in rows]}"


@pytest.mark.slow
def test_criterion_10_monotone_and_no_revisits(experiment):
    _, out = experiment
    monotone, fresh = check_cycles(records.read_csv(out / "experiment" / "metrics.csv"))
    n_cycles = len(records.read_csv(out / "experiment" / "cycles.csv"))
    ok = verdict(10, monotone and fresh, f"R non-decreasing: {monotone}, no revisits: {fresh} ({n_cycles} cycles)")
    assert ok


def test_criterion_11_eval_is_byte_reproducible(tmp_path):
    cfg = {"plants": {"count": 4}, "folds": 2,
           "training": {"T": 30, "n": 5, "batch_size": 4, "n_points": 64, "checkpoint_every": 10,
                        "point_widths": [8, 16], "attention_dim": 8, "mlp1_widths": [32], "head_widths": [16]},
           "evaluation": {"cycles": 3, "n": 6, "planners": ["random", "predefined", "voxel", "ssl"]},
           "voxel": {"resolution": 0.02}}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))

    def cli(*args):
        subprocess.run([sys.executable, "-m", "nbvlab", *args, "--config", str(path)], check=True,
                       capture_output=True, text=True)

    cli("train", "--out", str(tmp_path / "a"))
    ckpt = str(tmp_path / "a" / "checkpoints")
    cli("eval", "--out", str(tmp_path / "a"), "--checkpoints", ckpt)
    cli("eval", "--out", str(tmp_path / "b"), "--checkpoints", ckpt)
    first = (tmp_path / "a" / "metrics.csv").read_bytes()
    second = (tmp_path / "b" / "metrics.csv").read_bytes()
    ok = verdict(11, first == second and len(first) > 0,
                 f"two eval runs, metrics.csv {len(first)} bytes, identical: {first == second}")
    assert ok
