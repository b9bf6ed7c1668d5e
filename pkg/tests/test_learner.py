import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from scipy import stats

from nbvlab.igmetric import TargetVector, merge_accumulated
from nbvlab.learner import (
    AnnotationLedger, ExplorationSchedule, LearnedPlanner, PredefinedPlanner, RandomPlanner, ReconstructionCycle,
    ReplayBuffer, SceneEnv, SSLLearner, TrainingSample, VoxelPlanner, collect_strong_dataset,
    collect_strong_sample, encode_cloud, epsilon, run_cycle, select_next_view, ssl_iteration, stack_samples,
    train_strong,
)
from nbvlab.network import IGPredictor
from nbvlab.scene import ScenePose, generate_plant, place_plant
from nbvlab.sensor import CameraIntrinsics
from nbvlab.views import initial_state, mark_visited, s1_rig, zigzag_subset


class PatchEnv:
    """Synthetic scene: view ``i`` sees a fixed patch plus a shared core.

    Captures overlap through the core so gains fall as views accumulate,
    and ``empty`` or ``broken`` views return nothing or raise.
    """

    def __init__(self, seed=0, empty=(), broken=()):
        self.rig = s1_rig()
        self.delta = 0.003
        self.intrinsics = CameraIntrinsics()
        rng = np.random.default_rng(seed)
        core = rng.uniform(-0.05, 0.05, size=(40, 3)) + [0.0, 0.0, 0.3]
        self._captures = {}
        for i, v in enumerate(self.rig.views):
            d = np.asarray(v.position) - [0.0, 0.0, 0.3]
            patch = 0.2 * d / np.linalg.norm(d) + [0.0, 0.0, 0.3] + rng.uniform(-0.02, 0.02, size=(30, 3))
            self._captures[i] = np.vstack([core, patch])
        self.empty = set(empty)
        self.broken = set(broken)
        self.ground_truth = np.vstack([core] + [c[40:] for c in self._captures.values()])

    @property
    def n_views(self):
        return len(self.rig)

    def capture(self, i):
        if i in self.broken:
            raise RuntimeError("sensor failure")
        if i in self.empty:
            return np.zeros((0, 3))
        return self._captures[i]


def tiny_predictor(seed=0):
    return IGPredictor(n_views=33, n_points=32, point_widths=(8, 12), attention_dim=4, mlp1_widths=(16,),
                       head_widths=(12,), learning_rate=1e-3, batch_size=4, random_state=seed)


# ---- exploration ------------------------------------------------------------

def test_epsilon_examples():
    s = ExplorationSchedule(1.0, 0.2, 0.95)
    assert epsilon(1, s) == 1.0
    assert epsilon(2, s) == pytest.approx(0.95)
    assert epsilon(10_000, s) == 0.2
    assert epsilon(5, s) == pytest.approx(0.95**4)
    with pytest.raises(ValueError):
        epsilon(0, s)
    with pytest.raises(ValueError):
        epsilon(1.5, s)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.01, 1), st.integers(1, 500))
def test_epsilon_monotone_and_bounded(a, b, rho, t):
    lo, hi = sorted((a, b))
    s = ExplorationSchedule(hi, lo, rho)
    e1, e2 = epsilon(t, s), epsilon(t + 1, s)
    assert lo <= e2 <= e1 <= hi


def test_schedule_validation():
    with pytest.raises(ValueError):
        ExplorationSchedule(0.5, 0.6, 0.9)
    with pytest.raises(ValueError):
        ExplorationSchedule(1.0, 0.2, 0.0)


def test_select_exploits_with_zero_eps():
    rng = np.random.default_rng(0)
    assert select_next_view([0.1, 0.9, 0.3], initial_state(3), 0.0, rng) == 1
    assert select_next_view([0.9, 0.9, 0.1], initial_state(3), 0.0, rng) == 0
    assert select_next_view([0.1, 0.9, 0.3], mark_visited(initial_state(3), 1), 0.0, rng) == 2


def test_select_explores_uniformly_over_unvisited():
    rng = np.random.default_rng(1)
    state = initial_state(8)
    state = mark_visited(mark_visited(state, 2), 5)
    draws = np.array([select_next_view(np.zeros(8), state, 1.0, rng) for _ in range(10_000)])
    assert not np.isin(draws, [2, 5]).any()
    counts = np.bincount(draws, minlength=8)[[0, 1, 3, 4, 6, 7]]
    expected, sigma = 10_000 / 6, np.sqrt(10_000 * (1 / 6) * (5 / 6))
    assert np.all(np.abs(counts - expected) < 3 * sigma)
    assert stats.chisquare(counts).pvalue > 1e-3


def test_select_without_masking_may_revisit():
    rng = np.random.default_rng(0)
    state = mark_visited(initial_state(3), 1)
    assert select_next_view([0.1, 0.9, 0.3], state, 0.0, rng, mask_visited=False) == 1


def test_select_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        select_next_view([0.1, 0.2], np.ones(2, np.uint8), 0.0, rng)
    with pytest.raises(ValueError):
        select_next_view([0.1, 0.2, 0.3], initial_state(2), 0.0, rng)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=20), st.integers(0, 2**31))
def test_exploitation_invariant_to_increasing_transforms(pred, seed):
    pred = np.array(pred)
    state = initial_state(len(pred))
    state[seed % len(pred)] = 1
    moved = np.exp(pred) * 3 + 1
    # rounding may merge nearly equal inputs; only strictly increasing images count
    assume(len(np.unique(moved)) == len(np.unique(pred)))
    a = select_next_view(pred, state, 0.0, np.random.default_rng(seed))
    b = select_next_view(moved, state, 0.0, np.random.default_rng(seed))
    assert a == b


def test_branch_reporting():
    rng = np.random.default_rng(0)
    assert select_next_view([0.1, 0.9], initial_state(2), 0.0, rng, return_branch=True) == (1, "exploit")
    assert select_next_view([0.1, 0.9], initial_state(2), 1.0, rng, return_branch=True)[1] == "explore"


# ---- replay and ledger ------------------------------------------------------

@given(st.integers(1, 30), st.integers(0, 60))
def test_replay_keeps_the_newest_samples(capacity, extra):
    buf = ReplayBuffer(capacity)
    for i in range(capacity + extra):
        buf.push(i)
    assert len(buf) == capacity
    assert buf.samples() == list(range(extra, capacity + extra))


def test_replay_partial_fill_and_sampling():
    buf = ReplayBuffer(5)
    with pytest.raises(ValueError):
        buf.sample(2, np.random.default_rng(0))
    for i in range(3):
        buf.push(i)
    assert buf.samples() == [0, 1, 2]
    drawn = buf.sample(1000, np.random.default_rng(0))
    assert set(drawn) == {0, 1, 2}
    with pytest.raises(ValueError):
        ReplayBuffer(0)


def test_ledger_arithmetic():
    led = AnnotationLedger(33)
    assert led.ratio() == float("inf")
    led.offline_samples = 300
    led.ssl_count = 990
    assert led.offline_count == 9900
    assert led.ratio() == pytest.approx(0.1)


# ---- online learner -----------------------------------------------------------

def test_first_iteration_stores_full_gain_and_empty_input():
    learner = SSLLearner(tiny_predictor(), batch_size=4, random_state=0)
    cycle = ReconstructionCycle(PatchEnv(), track_ratio=False)
    entry = ssl_iteration(learner, cycle)
    (sample,) = learner.buffer.samples()
    assert sample.target.values[entry["chosen_view"]] == 1.0
    assert sample.target.mask.sum() == 1 and sample.target.mask[entry["chosen_view"]] == 1
    assert not sample.state.any() and not sample.cloud.any()
    assert entry["t"] == 1 and entry["eps"] == 1.0 and entry["A_ssl"] == 1


def test_stored_sample_holds_the_pre_capture_input():
    env = PatchEnv()
    learner = SSLLearner(tiny_predictor(), batch_size=100, random_state=3)
    cycle = ReconstructionCycle(env, track_ratio=False)
    ssl_iteration(learner, cycle)
    before_cloud, before_state = cycle.accumulated.copy(), cycle.state.copy()
    entry = ssl_iteration(learner, cycle)
    sample = learner.buffer.samples()[-1]
    assert np.array_equal(sample.state, before_state)
    assert not sample.state[entry["chosen_view"]]
    # every stored point comes from the cloud before the new capture
    back = sample.cloud * env.rig.radius + np.asarray(env.rig.center)
    d = np.min(np.linalg.norm(back[:, None] - before_cloud[None], axis=2), axis=1)
    assert d.max() < 1e-9
    assert len(cycle.accumulated) > len(before_cloud)


def test_no_gradient_step_below_batch_size():
    learner = SSLLearner(tiny_predictor(), batch_size=4, random_state=0)
    cycle = ReconstructionCycle(PatchEnv(), track_ratio=False)
    for k in range(3):
        entry = ssl_iteration(learner, cycle)
        assert np.isnan(entry["loss"])
    assert learner.predictor.n_iter_ == 0
    entry = ssl_iteration(learner, cycle)
    assert np.isfinite(entry["loss"]) and learner.predictor.n_iter_ == 1


def test_ledger_counts_one_label_per_motion():
    learner = SSLLearner(tiny_predictor(), batch_size=4, random_state=0)
    learner.train(lambda k, rng: PatchEnv(k), T=25, n=10)
    assert learner.t == 25 and learner.ledger.ssl_count == 25 and len(learner.log) == 25
    assert [e["A_ssl"] for e in learner.log] == list(range(1, 26))
    assert len(learner.buffer) == 25


def test_steps_per_iteration():
    learner = SSLLearner(tiny_predictor(), batch_size=2, steps_per_iteration=3, random_state=0)
    cycle = ReconstructionCycle(PatchEnv(), track_ratio=False)
    for _ in range(3):
        ssl_iteration(learner, cycle)
    assert learner.predictor.n_iter_ == 6


def test_failed_capture_aborts_without_side_effects():
    env = PatchEnv(broken=range(33))
    learner = SSLLearner(tiny_predictor(), batch_size=4, random_state=0)
    cycle = ReconstructionCycle(env, track_ratio=False)
    with pytest.raises(RuntimeError):
        ssl_iteration(learner, cycle)
    assert len(learner.buffer) == 0 and learner.ledger.ssl_count == 0 and learner.t == 0
    assert not cycle.state.any()


def test_empty_capture_is_visited_without_label():
    env = PatchEnv(empty=range(33))
    learner = SSLLearner(tiny_predictor(), batch_size=4, random_state=0)
    cycle = ReconstructionCycle(env, track_ratio=False)
    entry = ssl_iteration(learner, cycle)
    assert cycle.state[entry["chosen_view"]] and cycle.record.anomalies == 1
    assert np.isnan(entry["gain"]) and learner.t == 1
    assert learner.ledger.ssl_count == 0 and len(learner.buffer) == 0


def test_training_respects_masking_and_cycle_length():
    learner = SSLLearner(tiny_predictor(), batch_size=4, random_state=1)
    learner.train(lambda k, rng: PatchEnv(k), T=23, n=10)
    views = [e["chosen_view"] for e in learner.log]
    for start in (0, 10, 20):
        chunk = views[start:start + 10]
        assert len(set(chunk)) == len(chunk)


def test_training_callback_and_determinism():
    calls = []
    a = SSLLearner(tiny_predictor(), batch_size=4, random_state=7)
    a.train(lambda k, rng: PatchEnv(k), T=12, n=5, callback=lambda l: calls.append(l.t))
    b = SSLLearner(tiny_predictor(), batch_size=4, random_state=7)
    b.train(lambda k, rng: PatchEnv(k), T=12, n=5)
    assert calls == list(range(1, 13))
    assert [e["chosen_view"] for e in a.log] == [e["chosen_view"] for e in b.log]
    for k, w in a.predictor.params_.weights.items():
        assert np.array_equal(w, b.predictor.params_.weights[k])


def test_stack_samples_shapes():
    s = TrainingSample(np.zeros((32, 3)), initial_state(33), TargetVector.single(33, 4, 0.5))
    X, y, mask = stack_samples([s, s])
    assert X.shape == (2, 32 * 3 + 33) and y.shape == (2, 33) and mask.sum() == 2


def test_encode_cloud():
    rig = s1_rig()
    assert not encode_cloud(np.zeros((0, 3)), rig, 16, np.random.default_rng(0)).any()
    out = encode_cloud(np.array([[0.6, 0.0, 0.0]]), rig, 4, np.random.default_rng(0))
    np.testing.assert_allclose(out, [[1.0, 0.0, 0.0]] * 4)


# ---- cycles and planners ------------------------------------------------------

def test_random_planner_visits_every_view_once():
    env = PatchEnv()
    rec = run_cycle(RandomPlanner(), env, 33, np.random.default_rng(0))
    assert sorted(rec.views) == list(range(33))
    assert len(rec.ratios) == 33 and rec.ratios[-1] == pytest.approx(1.0)
    assert all(b >= a for a, b in zip(rec.ratios, rec.ratios[1:]))


def test_predefined_planner_stays_on_zigzag():
    env = PatchEnv()
    zz = set(zigzag_subset(env.rig))
    rec = run_cycle(PredefinedPlanner(), env, 11, np.random.default_rng(0), first_view=17)
    assert set(rec.views) == zz
    assert rec.views[0] == zigzag_subset(env.rig)[17 // 3]
    other = run_cycle(PredefinedPlanner(), env, 11, np.random.default_rng(1), first_view=17)
    assert other.views != rec.views


def test_run_cycle_is_deterministic():
    a = run_cycle(RandomPlanner(), PatchEnv(), 10, np.random.default_rng(5))
    b = run_cycle(RandomPlanner(), PatchEnv(), 10, np.random.default_rng(5))
    assert a.views == b.views and a.ratios == b.ratios and a.gains == b.gains


def test_run_cycle_rejects_too_many_views():
    with pytest.raises(ValueError):
        run_cycle(RandomPlanner(), PatchEnv(), 34, np.random.default_rng(0))


def test_learned_planner_is_greedy():
    est = tiny_predictor().initialize()
    env = PatchEnv()
    rec = run_cycle(LearnedPlanner(est), env, 5, np.random.default_rng(0), first_view=3)
    assert rec.views[0] == 3 and len(set(rec.views)) == 5


@pytest.fixture(scope="module")
def plant_env():
    scene = place_plant(generate_plant(2), ScenePose(0.02, -0.02, 40.0))
    return SceneEnv(scene, s1_rig(), CameraIntrinsics(width=48, height=36))


def test_voxel_planner_records_grid_stats(plant_env):
    for score in ("ratio", "surface"):
        planner = VoxelPlanner(0.03, intrinsics=CameraIntrinsics(width=16, height=12), score=score)
        rec = run_cycle(planner, plant_env, 4, np.random.default_rng(0), first_view=0)
        assert len(set(rec.views)) == 4 and len(rec.grid_stats) == 4
        unknown = [s["unknown"] for s in rec.grid_stats]
        assert all(b <= a for a, b in zip(unknown, unknown[1:]))


# ---- strong supervision ---------------------------------------------------------

def test_strong_sample_on_empty_cloud_is_all_ones():
    env = PatchEnv()
    led = AnnotationLedger(33)
    s = collect_strong_sample(env, np.zeros((0, 3)), initial_state(33), led, n_points=16)
    assert np.all(s.target.values == 1.0) and np.all(s.target.mask == 1.0)
    assert led.offline_count == 33


def test_strong_sample_on_full_model_is_all_zeros():
    env = PatchEnv()
    full = np.zeros((0, 3))
    for i in range(33):
        full = merge_accumulated(full, env.capture(i))
    s = collect_strong_sample(env, full, np.ones(33), n_points=16)
    assert np.all(s.target.values == 0.0)


def test_strong_sample_discarded_on_empty_capture():
    led = AnnotationLedger(33)
    assert collect_strong_sample(PatchEnv(empty=[5]), np.zeros((0, 3)), initial_state(33), led) is None
    assert led.offline_samples == 0


def test_strong_dataset_and_training():
    led = AnnotationLedger(33)
    rng = np.random.default_rng(0)
    samples = collect_strong_dataset(lambda k, r: PatchEnv(k), 7, 3, rng, led, n_points=32)
    assert len(samples) == 7 and led.offline_count == 7 * 33
    # one sample per visited prefix: states grow 0, 1, 2 visited, then a new cycle
    assert [int(s.state.sum()) for s in samples] == [0, 1, 2, 0, 1, 2, 0]
    est = train_strong(tiny_predictor(), samples, 5, batch_size=4, rng=0)
    assert est.n_iter_ == 5
