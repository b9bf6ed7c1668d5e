"""Online self-supervised view planning and the baseline planners.

The online loop predicts a gain for every candidate, picks a view
epsilon-greedily, captures it, labels that one view with its measured gain
and replays stored samples to train the predictor. Baselines share the
same reconstruction-cycle bookkeeping so planners can be compared on
identical scenes.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_int
from .igmetric import EmptyCaptureError, TargetVector, observe, reconstruction_ratio
from .network import pack_inputs, resize_cloud
from .scene import sample_ground_truth
from .pointcloud import voxel_downsample
from .sensor import CameraIntrinsics, MeshRaycaster, depth_to_points, ray_directions, render_depth
from .views import initial_state, mark_visited, unvisited, zigzag_subset
from .voxelnbv import OccupancyGrid, best_view_voxel

log = logging.getLogger(__name__)


# exploration ---------------------------------------------------------------

@dataclass(frozen=True)
class ExplorationSchedule:
    eps_ini: float = 1.0
    eps_min: float = 0.2
    rho: float = 0.95

    def __post_init__(self):
        if not 0.0 <= self.eps_min <= self.eps_ini <= 1.0:
            raise ValueError("need 0 <= eps_min <= eps_ini <= 1")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError("rho must lie in (0, 1]")


def epsilon(t, sched=ExplorationSchedule()):
    """Exploration rate at global iteration ``t`` (1-based)."""
    if int(t) != t or t < 1:
        raise ValueError(f"iteration must be an integer >= 1, got {t}")
    return max(sched.eps_min, sched.rho ** (int(t) - 1) * sched.eps_ini)


def select_next_view(pred, state, eps, rng, mask_visited=True, return_branch=False):
    """Epsilon-greedy choice among candidate views.

    Draws ``x ~ U(0, 1)``. When ``eps < x`` the highest predicted gain wins
    (lowest index on ties), otherwise a candidate is drawn uniformly. With
    ``mask_visited`` both branches only consider unvisited views.
    """
    pred = np.asarray(pred, dtype=np.float64)
    state = np.asarray(state)
    if pred.shape != state.shape:
        raise ValueError("pred and state must have the same length")
    allowed = unvisited(state) if mask_visited else np.arange(len(state))
    if len(allowed) == 0:
        raise ValueError("every candidate view has been visited")
    exploit = eps < rng.random()
    if exploit:
        choice = int(allowed[np.argmax(pred[allowed])])
    else:
        choice = int(allowed[rng.integers(len(allowed))])
    return (choice, "exploit" if exploit else "explore") if return_branch else choice


# replay and bookkeeping ----------------------------------------------------

@dataclass(frozen=True)
class TrainingSample:
    """Network input before a capture, paired with the label it earned."""

    cloud: np.ndarray
    state: np.ndarray
    target: TargetVector


class ReplayBuffer:
    """Fixed-capacity circular store; the newest sample evicts the oldest."""

    def __init__(self, capacity=1000):
        self.capacity = check_int(capacity, "capacity", minimum=1)
        self._items = []
        self._cursor = 0

    def __len__(self):
        return len(self._items)

    def push(self, sample):
        if len(self._items) < self.capacity:
            self._items.append(sample)
        else:
            self._items[self._cursor] = sample
        self._cursor = (self._cursor + 1) % self.capacity

    def samples(self):
        """Stored samples, oldest first."""
        if len(self._items) < self.capacity:
            return list(self._items)
        return self._items[self._cursor:] + self._items[:self._cursor]

    def sample(self, n, rng):
        """``n`` samples drawn uniformly with replacement."""
        if not self._items:
            raise ValueError("cannot sample from an empty buffer")
        return [self._items[i] for i in rng.integers(len(self._items), size=n)]


def stack_samples(samples):
    """``(X, y, mask)`` arrays for :class:`~nbvlab.network.IGPredictor`."""
    X = pack_inputs(np.stack([s.cloud for s in samples]), np.stack([s.state for s in samples]))
    y = np.stack([s.target.values for s in samples])
    mask = np.stack([s.target.mask for s in samples])
    return X, y, mask


@dataclass
class AnnotationLedger:
    """Counts ground-truth gain labels consumed by each training regime."""

    n_views: int
    ssl_count: int = 0
    offline_samples: int = 0

    @property
    def offline_count(self):
        return self.offline_samples * self.n_views

    def ratio(self):
        """Online labels as a fraction of offline labels."""
        return self.ssl_count / self.offline_count if self.offline_count else float("inf")


# scenes and cycles ---------------------------------------------------------

class SceneEnv:
    """A placed scene seen through a candidate rig.

    Captures are deterministic, so they are cached per view index; the
    ground-truth cloud is sampled lazily since online training never
    needs it.
    """

    def __init__(self, scene, rig, intrinsics=None, resolution=0.003, delta=0.003, gt_seed=0):
        self.scene = scene
        self.rig = rig
        self.intrinsics = intrinsics or CameraIntrinsics()
        self.resolution = resolution
        self.delta = delta
        self.gt_seed = gt_seed
        self._raycaster = None
        self._depth = {}
        self._captures = {}
        self._ground_truth = None

    @property
    def n_views(self):
        return len(self.rig)

    def depth(self, i):
        """Per-ray range image of view ``i`` (``inf`` for no return)."""
        if i not in self._depth:
            if self._raycaster is None:
                self._raycaster = MeshRaycaster.from_scene(self.scene)
            self._depth[i] = render_depth(self.scene, self.rig[i], self.intrinsics, self._raycaster)
        return self._depth[i]

    def capture(self, i):
        if i not in self._captures:
            points = depth_to_points(self.depth(i), self.rig[i], self.intrinsics)
            self._captures[i] = voxel_downsample(points, self.resolution)
        return self._captures[i]

    def miss_directions(self, i):
        """Directions of the rays of view ``i`` that returned nothing."""
        return ray_directions(self.rig[i], self.intrinsics)[~np.isfinite(self.depth(i))]

    @property
    def ground_truth(self):
        if self._ground_truth is None:
            self._ground_truth = sample_ground_truth(self.scene, self.resolution, seed=self.gt_seed)
        return self._ground_truth


@dataclass
class CycleRecord:
    views: list = field(default_factory=list)
    gains: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    plan_times: list = field(default_factory=list)
    grid_stats: list = field(default_factory=list)
    anomalies: int = 0


class ReconstructionCycle:
    """Accumulated cloud, visited state and per-view record of one cycle."""

    def __init__(self, env, track_ratio=True):
        self.env = env
        self.accumulated = np.zeros((0, 3))
        self.state = initial_state(env.n_views)
        self.record = CycleRecord()
        self.track_ratio = track_ratio

    @property
    def n_visited(self):
        return int(self.state.sum())

    def visit(self, i):
        """Capture view ``i``, merge it and return its gain (None if empty)."""
        captured = self.env.capture(i)
        try:
            gain, merged = observe(self.accumulated, captured, self.env.delta)
        except EmptyCaptureError:
            log.warning("empty capture from view %d; no label recorded", i)
            gain, merged = None, self.accumulated
            self.record.anomalies += 1
        self.accumulated = merged
        self.state = mark_visited(self.state, i)
        self.record.views.append(int(i))
        self.record.gains.append(float("nan") if gain is None else gain)
        if self.track_ratio:
            self.record.ratios.append(reconstruction_ratio(self.env.ground_truth, self.accumulated, self.env.delta))
        return gain


def encode_cloud(accumulated, rig, n_points, rng):
    """Fixed-size network input; an empty cloud becomes all zeros."""
    if len(accumulated) == 0:
        return np.zeros((n_points, 3))
    return resize_cloud(accumulated, n_points, rng, center=rig.center, scale=rig.radius)


# planners ------------------------------------------------------------------

class Planner(BaseEstimator):
    """Chooses the next view of a cycle. ``reset`` runs once per cycle."""

    def reset(self, cycle, rng):
        return self

    def first_view(self, proposed, cycle, rng):
        return proposed

    def select(self, cycle, rng):
        raise NotImplementedError

    def observe(self, cycle, view_index):
        pass


class RandomPlanner(Planner):
    def select(self, cycle, rng):
        free = unvisited(cycle.state)
        return int(free[rng.integers(len(free))])


class PredefinedPlanner(Planner):
    """Walks the zigzag subset of an 11 x 3 rig in random order.

    The shared first view is moved to the zigzag view at the same angle.
    """

    def reset(self, cycle, rng):
        self.order_ = [int(i) for i in rng.permutation(zigzag_subset(cycle.env.rig))]
        return self

    def first_view(self, proposed, cycle, rng):
        rig = cycle.env.rig
        zz = zigzag_subset(rig)
        return zz[proposed // rig.n_heights]

    def select(self, cycle, rng):
        for i in self.order_:
            if not cycle.state[i]:
                return i
        raise ValueError("zigzag subset exhausted")


class VoxelPlanner(Planner):
    """Occupancy-grid ray casting over the unvisited views.

    ``score="ratio"`` picks the view that sees the largest share of unknown
    voxels; ``score="surface"`` the one whose rays cross the most unknown
    voxels within ``dilation`` voxels of the occupied surface.

    Each capture carves free space to its points and, when ``carve_misses``
    is set, along the rays that returned nothing within sensor range.
    """

    def __init__(self, resolution=0.003, pad=0.1, intrinsics=None, carve_misses=True, score="ratio", dilation=1):
        self.resolution = resolution
        self.pad = pad
        self.intrinsics = intrinsics
        self.carve_misses = carve_misses
        self.score = score
        self.dilation = dilation

    def reset(self, cycle, rng):
        self.grid_ = OccupancyGrid.around_rig(cycle.env.rig, self.resolution, self.pad)
        return self

    def observe(self, cycle, view_index):
        view = cycle.env.rig[view_index]
        misses = cycle.env.miss_directions(view_index) if self.carve_misses else None
        self.grid_.integrate(cycle.env.capture(view_index), view.position, misses, cycle.env.intrinsics.max_range)
        cycle.record.grid_stats.append(self.grid_.stats())

    def select(self, cycle, rng):
        return best_view_voxel(self.grid_, cycle.env.rig, cycle.state, self.intrinsics or CameraIntrinsics(),
                               self.score, self.dilation)


class LearnedPlanner(Planner):
    """Greedy on a trained gain predictor (exploration off by default)."""

    def __init__(self, predictor=None, eps=0.0, mask_visited=True):
        self.predictor = predictor
        self.eps = eps
        self.mask_visited = mask_visited

    def select(self, cycle, rng):
        est = self.predictor
        x = encode_cloud(cycle.accumulated, cycle.env.rig, est.n_points, rng)
        pred = est.predict_one(x, cycle.state)
        return select_next_view(pred, cycle.state, self.eps, rng, self.mask_visited)


def run_cycle(planner, env, n, rng, first_view=None):
    """One reconstruction cycle of ``n`` views; returns its :class:`CycleRecord`.

    ``first_view`` (drawn uniformly when None) is shared across planners
    so comparisons stay paired.
    """
    n = check_int(n, "n", minimum=1)
    if n > env.n_views:
        raise ValueError(f"n = {n} exceeds the {env.n_views} candidate views")
    if first_view is None:
        first_view = int(rng.integers(env.n_views))
    cycle = ReconstructionCycle(env)
    planner.reset(cycle, rng)
    for k in range(n):
        t0 = time.perf_counter()
        i = planner.first_view(first_view, cycle, rng) if k == 0 else planner.select(cycle, rng)
        cycle.record.plan_times.append(time.perf_counter() - t0)
        if cycle.state[i]:
            raise RuntimeError(f"planner revisited view {i}")
        cycle.visit(i)
        planner.observe(cycle, i)
    return cycle.record


# online self-supervised learner --------------------------------------------

class SSLLearner:
    """Online trainer for an :class:`~nbvlab.network.IGPredictor`.

    One call to :meth:`iterate` is one robot motion: predict, choose a view,
    capture it, label it, store the pre-capture input with that label, merge
    and take a replay step once the buffer holds a full batch.
    """

    def __init__(self, predictor, schedule=ExplorationSchedule(), capacity=1000, batch_size=32,
                 steps_per_iteration=1, mask_visited=True, random_state=0):
        self.predictor = predictor
        self.schedule = schedule
        self.buffer = ReplayBuffer(capacity)
        self.batch_size = check_int(batch_size, "batch_size", minimum=1)
        self.steps_per_iteration = check_int(steps_per_iteration, "steps_per_iteration", minimum=1)
        self.mask_visited = mask_visited
        self.rng = np.random.default_rng(random_state)
        self.t = 0
        self.ledger = AnnotationLedger(predictor.n_views)
        self.log = []
        if not hasattr(predictor, "params_"):
            predictor.initialize()

    def iterate(self, cycle):
        rig = cycle.env.rig
        M = cycle.env.n_views
        if cycle.n_visited >= M:
            raise ValueError("cycle already visited every view")
        t = self.t + 1
        x = encode_cloud(cycle.accumulated, rig, self.predictor.n_points, self.rng)
        state = cycle.state.copy()
        pred = self.predictor.predict_one(x, state)
        eps = epsilon(t, self.schedule)
        if cycle.n_visited == 0:
            v = int(self.rng.integers(M))
        else:
            v = select_next_view(pred, state, eps, self.rng, self.mask_visited)
        gain = cycle.visit(v)
        if gain is not None:
            self.buffer.push(TrainingSample(x, state, TargetVector.single(M, v, gain)))
            self.ledger.ssl_count += 1
        loss = float("nan")
        if len(self.buffer) >= self.batch_size:
            for _ in range(self.steps_per_iteration):
                self.predictor.partial_fit(*stack_samples(self.buffer.sample(self.batch_size, self.rng)))
                loss = self.predictor.loss_curve_[-1]
        self.t = t
        entry = {
            "t": t, "eps": eps, "chosen_view": v, "gain": float("nan") if gain is None else gain,
            "loss": loss, "buffer_size": len(self.buffer), "A_ssl": self.ledger.ssl_count,
        }
        self.log.append(entry)
        return entry

    def run_cycle(self, env, n):
        cycle = ReconstructionCycle(env, track_ratio=False)
        for _ in range(min(n, env.n_views)):
            self.iterate(cycle)
        return cycle

    def train(self, make_env, T, n, callback=None):
        """Run cycles of ``n`` views until ``T`` iterations have been taken.

        ``make_env(k, rng)`` builds the scene for cycle ``k``; ``callback``
        is called with the learner after every iteration.
        """
        k = 0
        while self.t < T:
            env = make_env(k, self.rng)
            cycle = ReconstructionCycle(env, track_ratio=False)
            for _ in range(min(n, env.n_views, T - self.t)):
                self.iterate(cycle)
                if callback is not None:
                    callback(self)
            k += 1
        return self


def ssl_iteration(learner, cycle):
    """Functional alias for :meth:`SSLLearner.iterate`."""
    return learner.iterate(cycle)


# strong supervision --------------------------------------------------------

def collect_strong_sample(env, accumulated, state, ledger=None, n_points=512, rng=None):
    """Dense sample: the gain of every candidate against one accumulated cloud.

    Returns None, without charging the ledger, if any capture is empty.
    """
    rng = np.random.default_rng(rng)
    gains = np.empty(env.n_views)
    for i in range(env.n_views):
        captured = env.capture(i)
        try:
            gains[i], _ = observe(accumulated, captured, env.delta)
        except EmptyCaptureError:
            return None
    if ledger is not None:
        ledger.offline_samples += 1
    x = encode_cloud(accumulated, env.rig, n_points, rng)
    return TrainingSample(x, np.asarray(state, dtype=np.uint8).copy(), TargetVector.dense(gains))


def collect_strong_dataset(make_env, F, n, rng, ledger=None, n_points=512):
    """``F`` dense samples from random-view cycles (one per visited prefix)."""
    samples = []
    k = 0
    while len(samples) < F:
        env = make_env(k, rng)
        cycle = ReconstructionCycle(env, track_ratio=False)
        for _ in range(min(n, env.n_views)):
            s = collect_strong_sample(env, cycle.accumulated, cycle.state, ledger, n_points, rng)
            if s is not None:
                samples.append(s)
                if len(samples) == F:
                    break
            free = unvisited(cycle.state)
            cycle.visit(int(free[rng.integers(len(free))]))
        k += 1
    return samples


def train_strong(predictor, samples, n_steps, batch_size=32, rng=None):
    """Offline minibatch training on dense samples."""
    rng = np.random.default_rng(rng)
    if not hasattr(predictor, "params_"):
        predictor.initialize()
    for _ in range(n_steps):
        idx = rng.integers(len(samples), size=batch_size)
        predictor.partial_fit(*stack_samples([samples[i] for i in idx]))
    return predictor
