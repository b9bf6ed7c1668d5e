"""Plants, folds, online training, paired evaluation and derived measurements.

Every random draw comes from a stream keyed by ``(seed, purpose, ...)`` so
that any fold, cycle or planner can be rerun on its own and still see the
same numbers.
"""

import logging
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.model_selection import KFold
from threadpoolctl import threadpool_limits

from ..igmetric import views_to_threshold
from ..learner import (
    AnnotationLedger, LearnedPlanner, PredefinedPlanner, RandomPlanner, ReconstructionCycle, SceneEnv,
    SSLLearner, VoxelPlanner, collect_strong_dataset, encode_cloud, run_cycle, train_strong,
)
from ..network import IGPredictor
from ..scene import ScenePose, generate_plant, place_plant, sample_pose
from ..voxelnbv import OccupancyGrid, raycast_ig
from . import records
from .stats import censored_views, mean_ci, significance_test

log = logging.getLogger(__name__)

PLANTS, INIT, TRAIN, EVAL, PLANNER, STRONG, BENCH = range(7)
ALPHA = 0.05


def stream(cfg, *keys):
    return np.random.default_rng([cfg.seed, *keys])


def planner_key(name):
    return zlib.crc32(name.encode())


def make_plants(cfg):
    """``cfg.plants.count`` procedural plants with parameters drawn from the configured ranges."""
    p = cfg.plants
    rng = stream(cfg, PLANTS)
    plants = []
    for _ in range(p.count):
        params = {
            "n_leaves": int(rng.integers(p.n_leaves[0], p.n_leaves[1] + 1)),
            "height": float(rng.uniform(*p.height)),
            "leaf_size": float(rng.uniform(*p.leaf_size)),
        }
        plants.append(generate_plant(int(rng.integers(2**31 - 1)), params))
    return plants


def kfold_split(n_items, n_folds, seed):
    """Shuffled K-fold partition of ``range(n_items)`` as ``(train, test)`` index arrays."""
    kf = KFold(n_splits=n_folds, shuffle=True, random_state=seed)
    return [(tr, te) for tr, te in kf.split(np.arange(n_items))]


@dataclass(frozen=True)
class CycleSpec:
    """One evaluation cycle, replayed identically for every planner."""

    cycle: int
    plant: int
    pose: ScenePose
    first_view: int


@dataclass
class EvalResult:
    fold: int
    planner: str
    spec: CycleSpec
    record: object


class Lab:
    """Config plus the objects derived from it: rig, cameras, plants and folds."""

    def __init__(self, cfg):
        self.cfg = cfg.validate()
        self.rig = cfg.rig.build()
        self.intrinsics = cfg.sensor.camera.build()
        self.plants = make_plants(cfg)
        self.folds = kfold_split(len(self.plants), cfg.folds, cfg.seed)

    @property
    def n_views(self):
        return len(self.rig)

    def env(self, plant, pose):
        scene = place_plant(self.plants[plant], pose, self.cfg.plants.ground_plane)
        return SceneEnv(scene, self.rig, self.intrinsics, self.cfg.sensor.resolution, self.cfg.delta)

    def sample_pose(self, rng):
        p = self.cfg.plants
        return sample_pose(rng, p.offset_range, p.offset_step, p.angle_step)

    def env_factory(self, plant_ids):
        """``make_env(k, rng)``: a random plant from ``plant_ids`` in a random pose."""
        plant_ids = np.asarray(plant_ids)

        def make_env(k, rng):
            plant = int(plant_ids[rng.integers(len(plant_ids))])
            return self.env(plant, self.sample_pose(rng))

        return make_env

    def eval_specs(self, fold, n_cycles=None):
        test_ids = self.folds[fold][1]
        rng = stream(self.cfg, EVAL, fold)
        out = []
        for c in range(self.cfg.evaluation.cycles if n_cycles is None else n_cycles):
            plant = int(test_ids[c % len(test_ids)])
            pose = self.sample_pose(rng)
            out.append(CycleSpec(c, plant, pose, int(rng.integers(self.n_views))))
        return out

    def new_predictor(self, fold, purpose=INIT):
        t = self.cfg.training
        seed = int(stream(self.cfg, purpose, fold).integers(2**31 - 1))
        return IGPredictor(n_views=self.n_views, n_points=t.n_points, **t.arch, learning_rate=t.learning_rate,
                           batch_size=t.batch_size, dtype=t.dtype, random_state=seed).initialize()

    def predictor_from_params(self, params):
        t = self.cfg.training
        arch = {k: params.arch[k] for k in t.arch}
        est = IGPredictor(n_views=self.n_views, n_points=t.n_points, **arch, learning_rate=t.learning_rate,
                          batch_size=t.batch_size, dtype=np.dtype(params.dtype).name)
        est.params_ = params
        est.loss_curve_ = []
        est.n_iter_ = params.step
        return est


# training ------------------------------------------------------------------

@dataclass
class TrainedFold:
    learner: SSLLearner
    checkpoints: dict = field(default_factory=dict)
    seconds: float = 0.0


def train_fold(lab, fold, keep_checkpoints=False, checkpoint_dir=None, progress=None):
    """Online self-supervised training on the fold's training plants.

    With ``keep_checkpoints`` a weight snapshot is kept every
    ``checkpoint_every`` labels (and at zero labels), keyed by label count.
    ``checkpoint_dir`` also writes them, plus the final model, to disk.
    """
    cfg = lab.cfg
    t = cfg.training
    learner = SSLLearner(
        lab.new_predictor(fold), t.schedule, t.capacity, t.batch_size, t.steps_per_iteration,
        t.mask_visited, random_state=[cfg.seed, TRAIN, fold],
    )
    out = TrainedFold(learner)
    ckpt_dir = None if checkpoint_dir is None else Path(checkpoint_dir)
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    def snapshot(lrn):
        a = lrn.ledger.ssl_count
        if a % t.checkpoint_every or a in out.checkpoints:
            return
        if keep_checkpoints:
            out.checkpoints[a] = lrn.predictor.params_.copy()
        else:
            out.checkpoints[a] = None
        if ckpt_dir is not None:
            lrn.predictor.save(ckpt_dir / f"A{a:06d}.ckpt")

    def callback(lrn):
        snapshot(lrn)
        if progress is not None and lrn.t % 100 == 0:
            progress(f"fold {fold}: iteration {lrn.t}/{t.T}, A_ssl {lrn.ledger.ssl_count}")

    snapshot(learner)
    t0 = time.perf_counter()
    learner.train(lab.env_factory(lab.folds[fold][0]), t.T, t.n, callback)
    out.seconds = time.perf_counter() - t0
    if ckpt_dir is not None:
        learner.predictor.save(ckpt_dir / "final.ckpt")
    if not keep_checkpoints:
        out.checkpoints = {}
    return out


def train_reference(lab, fold):
    """Densely supervised reference predictor and the labels it consumed."""
    cfg = lab.cfg
    s = cfg.strong
    rng = stream(cfg, STRONG, fold)
    ledger = AnnotationLedger(lab.n_views)
    samples = collect_strong_dataset(lab.env_factory(lab.folds[fold][0]), s.samples, s.n, rng, ledger,
                                     cfg.training.n_points)
    predictor = lab.new_predictor(fold, STRONG)
    train_strong(predictor, samples, s.steps, cfg.training.batch_size, rng)
    return predictor, ledger


# evaluation ----------------------------------------------------------------

def build_planner(lab, name, predictors=None):
    cfg = lab.cfg
    if name == "random":
        return RandomPlanner()
    if name == "predefined":
        return PredefinedPlanner()
    if name == "voxel":
        v = cfg.voxel
        return VoxelPlanner(v.resolution, v.pad, v.camera.build(), v.carve_misses, v.score, v.dilation)
    if name in ("ssl", "strong"):
        if not predictors or name not in predictors:
            raise ValueError(f"planner {name!r} needs a trained predictor")
        return LearnedPlanner(predictors[name])
    raise ValueError(f"unknown planner {name!r}")


def evaluate(lab, fold, specs, planners, n=None):
    """Run every planner on every spec; cycles sharing a spec share the scene and first view."""
    n = lab.cfg.evaluation.n if n is None else n
    out = []
    for spec in specs:
        env = lab.env(spec.plant, spec.pose)
        for name, planner in planners.items():
            rng = stream(lab.cfg, PLANNER, fold, spec.cycle, planner_key(name))
            rec = run_cycle(planner, env, n, rng, first_view=spec.first_view)
            out.append(EvalResult(fold, name, spec, rec))
    return out


@dataclass
class ExperimentResult:
    config: object
    results: list = field(default_factory=list)
    training_log: list = field(default_factory=list)
    train_seconds: dict = field(default_factory=dict)
    eval_seconds: dict = field(default_factory=dict)
    checkpoints: dict = field(default_factory=dict)
    references: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)


def run_experiment(cfg, folds=None, keep_checkpoints_fold=None, progress=None):
    """Train and evaluate every fold. A failing fold is recorded and skipped."""
    lab = Lab(cfg)
    names = cfg.evaluation.planners
    res = ExperimentResult(cfg)
    for fold in range(cfg.folds) if folds is None else folds:
        try:
            predictors = {}
            if "ssl" in names or keep_checkpoints_fold == fold:
                tf = train_fold(lab, fold, keep_checkpoints=keep_checkpoints_fold == fold, progress=progress)
                predictors["ssl"] = tf.learner.predictor
                res.training_log.extend({"fold": fold, **e} for e in tf.learner.log)
                res.train_seconds[fold] = tf.seconds
                if tf.checkpoints:
                    res.checkpoints[fold] = tf.checkpoints
            if "strong" in names:
                predictors["strong"], ledger = train_reference(lab, fold)
                res.references[fold] = (predictors["strong"], ledger)
            planners = {name: build_planner(lab, name, predictors) for name in names}
            t0 = time.perf_counter()
            res.results.extend(evaluate(lab, fold, lab.eval_specs(fold), planners))
            res.eval_seconds[fold] = time.perf_counter() - t0
            if progress is not None:
                progress(f"fold {fold}: evaluated {len(names)} planners")
        except Exception as exc:  # keep the remaining folds running
            log.exception("fold %d failed", fold)
            res.errors.append({"fold": fold, "error": repr(exc)})
    return res


def write_outputs(res, out_dir):
    """metrics.csv, cycles.csv, timings.csv, training_log.csv and manifest.json."""
    out = Path(out_dir)
    cfg = res.config
    taus = cfg.evaluation.taus
    records.write_csv(out / "metrics.csv", records.METRIC_FIELDS,
                      (row for r in res.results for row in records.metric_rows(r)))
    records.write_csv(out / "cycles.csv", records.cycle_fields(taus),
                      (records.cycle_row(r, taus, views_to_threshold) for r in res.results))
    records.write_csv(out / "timings.csv", records.TIMING_FIELDS,
                      (row for r in res.results for row in records.timing_rows(r)))
    if res.training_log:
        records.write_csv(out / "training_log.csv", records.TRAINING_FIELDS, res.training_log)
    records.write_manifest(out / "manifest.json", {
        "config": cfg.to_dict(), "digest": cfg.digest(), "errors": res.errors,
        "train_seconds": {str(k): v for k, v in res.train_seconds.items()},
        "eval_seconds": {str(k): v for k, v in res.eval_seconds.items()},
    })
    return out


# summaries -----------------------------------------------------------------

def views_to_tau(results, tau, n):
    """Censored views-to-``tau`` per planner, in cycle order."""
    out = {}
    for r in sorted(results, key=lambda r: (r.fold, r.spec.cycle)):
        out.setdefault(r.planner, []).append(views_to_threshold(r.record.ratios, tau))
    return {k: censored_views(v, n) for k, v in out.items()}


def summarize(results, taus, n, reference="random"):
    """Per planner and threshold: mean views with CI and the p-value against ``reference``."""
    rows = []
    for tau in taus:
        v = views_to_tau(results, tau, n)
        for name, x in v.items():
            m, lo, hi = mean_ci(x)
            p = significance_test(x, v[reference]) if reference in v and name != reference else float("nan")
            rows.append({"planner": name, "tau": tau, "mean": m, "ci_low": lo, "ci_high": hi,
                         "n_cycles": len(x), "p_vs_" + reference: p})
    return rows


def beats(results, planner, reference, tau, n, alpha=ALPHA):
    """``(better, p)``: fewer mean views than ``reference`` with Welch p below ``alpha``."""
    v = views_to_tau(results, tau, n)
    p = significance_test(v[planner], v[reference])
    return bool(v[planner].mean() < v[reference].mean() and p < alpha), p


# learned versus ray-cast gain -----------------------------------------------

def _median_seconds(fn, reps):
    fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def bench_ig_speed(lab, predictor, repetitions=None, plant=0):
    """Median wall time to score every candidate: one network pass versus
    one ray cast per candidate on a voxel grid, single-threaded.

    ``exclusive`` times only the scoring; ``inclusive`` adds building the
    network input from the cloud and building the grid from the captures.
    """
    cfg = lab.cfg
    b = cfg.bench
    reps = b.repetitions if repetitions is None else repetitions
    rng = stream(cfg, BENCH)
    env = lab.env(plant, ScenePose())
    cycle = ReconstructionCycle(env, track_ratio=False)
    for v in rng.choice(lab.n_views, size=b.warm_views, replace=False):
        cycle.visit(int(v))
    intr = cfg.voxel.camera.build()

    def build_grid():
        grid = OccupancyGrid.around_rig(lab.rig, b.resolution, cfg.voxel.pad)
        for v in cycle.record.views:
            grid.integrate(env.capture(v), lab.rig[v].position)
        return grid

    grid = build_grid()
    x = encode_cloud(cycle.accumulated, lab.rig, predictor.n_points, rng)
    state = cycle.state

    def learned():
        predictor.predict_one(x, state)

    def learned_full():
        predictor.predict_one(encode_cloud(cycle.accumulated, lab.rig, predictor.n_points, rng), state)

    def voxel():
        for i in range(lab.n_views):
            raycast_ig(grid, lab.rig[i], intr)

    def voxel_full():
        g = build_grid()
        for i in range(lab.n_views):
            raycast_ig(g, lab.rig[i], intr)

    with threadpool_limits(limits=1):
        t = {
            "learned_exclusive": _median_seconds(learned, reps),
            "voxel_exclusive": _median_seconds(voxel, reps),
            "learned_inclusive": _median_seconds(learned_full, reps),
            "voxel_inclusive": _median_seconds(voxel_full, reps),
        }
    t.update(
        speedup_exclusive=t["voxel_exclusive"] / t["learned_exclusive"],
        speedup_inclusive=t["voxel_inclusive"] / t["learned_inclusive"],
        n_views=lab.n_views, resolution=b.resolution, rays=intr.width * intr.height,
        dtype=np.dtype(predictor.params_.dtype).name, repetitions=reps,
    )
    return t


# annotation efficiency -----------------------------------------------------

def annotation_efficiency_curve(lab, checkpoints, reference, ledger, fold=0, specs=None, alpha=ALPHA):
    """Final-view coverage of SSL checkpoints against the dense reference.

    ``checkpoints`` maps label counts to weights. Each row carries the
    annotation ratio (online labels over the reference's offline labels)
    and the Welch p-value of the checkpoint's final coverage against the
    reference's; ``indistinguishable`` means ``p > alpha``.
    """
    specs = lab.eval_specs(fold) if specs is None else specs
    planners = {"reference": LearnedPlanner(reference)}
    for a in sorted(checkpoints):
        planners[f"A{a}"] = LearnedPlanner(lab.predictor_from_params(checkpoints[a]))
    # one pass over the specs so every planner reuses each scene's captures
    finals = {}
    for r in evaluate(lab, fold, specs, planners):
        finals.setdefault(r.planner, []).append(r.record.ratios[-1])
    ref = np.array(finals["reference"])
    rows = []
    for a in sorted(checkpoints):
        r = np.array(finals[f"A{a}"])
        p = significance_test(r, ref)
        rows.append({"fold": fold, "A_ssl": a, "A_off": ledger.offline_count, "ratio": a / ledger.offline_count,
                     "mean_R": float(r.mean()), "reference_mean_R": float(ref.mean()), "p_value": p,
                     "indistinguishable": bool(p > alpha)})
    return rows


def crossing_ratio(rows):
    """Smallest annotation ratio whose checkpoint is indistinguishable from the reference."""
    hits = [r["ratio"] for r in rows if r["indistinguishable"]]
    return min(hits) if hits else None

