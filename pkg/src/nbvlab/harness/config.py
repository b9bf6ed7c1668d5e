"""Experiment configuration: nested dataclasses loaded from one JSON file.

Every section has complete defaults, so ``{}`` is a valid config. Unknown
keys are rejected so typos fail before any work starts.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..learner import ExplorationSchedule
from ..sensor import CameraIntrinsics
from ..views import sample_cylinder

KNOWN_PLANNERS = ("random", "predefined", "voxel", "ssl", "strong")


@dataclass(frozen=True)
class PlantConfig:
    """Procedural plant set: ``count`` plants with parameters drawn from ranges."""

    count: int = 6
    n_leaves: tuple = (6, 10)
    height: tuple = (0.45, 0.55)
    leaf_size: tuple = (0.12, 0.18)
    offset_range: float = 0.1
    offset_step: float = 0.02
    angle_step: float = 20.0
    ground_plane: bool = False

    def validate(self):
        if self.count < 2:
            raise ValueError("plants.count must be at least 2")
        for name in ("n_leaves", "height", "leaf_size"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"plants.{name} must be a range 0 < lo <= hi")
        if self.n_leaves[0] < 1:
            raise ValueError("plants.n_leaves must start at 1 or more")
        if self.offset_range < 0 or self.offset_step <= 0 or self.angle_step <= 0:
            raise ValueError("pose lattice needs offset_range >= 0 and positive steps")


@dataclass(frozen=True)
class RigConfig:
    radius: float = 0.6
    heights: tuple = (0.04, 0.25, 0.46)
    n_angles: int = 11
    span: float = 360.0
    center: tuple = (0.0, 0.0, 0.0)

    def build(self):
        return sample_cylinder(self.radius, self.heights, self.n_angles, self.span, self.center)

    def validate(self):
        self.build()


@dataclass(frozen=True)
class CameraConfig:
    h_fov: float = 60.0
    v_fov: float = 45.0
    width: int = 64
    height: int = 48
    min_range: float = 0.1
    max_range: float = 1.5

    def build(self):
        return CameraIntrinsics(**dataclasses.asdict(self))

    def validate(self):
        self.build()


@dataclass(frozen=True)
class SensorConfig:
    """Capture camera and the voxel size applied to every capture."""

    camera: CameraConfig = CameraConfig(width=160, height=120)
    resolution: float = 0.003

    def validate(self):
        self.camera.validate()
        if self.resolution <= 0:
            raise ValueError("sensor.resolution must be positive")


@dataclass(frozen=True)
class TrainingConfig:
    T: int = 2000
    n: int = 10
    batch_size: int = 32
    capacity: int = 1000
    eps_ini: float = 1.0
    eps_min: float = 0.2
    rho: float = 0.95
    learning_rate: float = 1e-4
    steps_per_iteration: int = 1
    mask_visited: bool = True
    dtype: str = "float32"
    n_points: int = 512
    checkpoint_every: int = 250
    point_widths: tuple = (64, 128, 264)
    attention_dim: int = 64
    mlp1_widths: tuple = (1024, 1024)
    head_widths: tuple = (1024, 512, 256)

    @property
    def arch(self):
        return {"point_widths": self.point_widths, "attention_dim": self.attention_dim,
                "mlp1_widths": self.mlp1_widths, "head_widths": self.head_widths}

    @property
    def schedule(self):
        return ExplorationSchedule(self.eps_ini, self.eps_min, self.rho)

    def validate(self):
        self.schedule
        for name in ("T", "n", "batch_size", "capacity", "steps_per_iteration", "n_points", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"training.{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("training.learning_rate must be positive")
        if min(self.point_widths + self.mlp1_widths + (self.attention_dim,)) < 1 or min(self.head_widths, default=1) < 1:
            raise ValueError("training layer widths must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("training.dtype must be float32 or float64")


@dataclass(frozen=True)
class VoxelConfig:
    resolution: float = 0.01
    pad: float = 0.1
    carve_misses: bool = True
    score: str = "surface"
    dilation: int = 1
    camera: CameraConfig = CameraConfig()

    def validate(self):
        if self.resolution <= 0 or self.pad < 0:
            raise ValueError("voxel.resolution must be positive and voxel.pad non-negative")
        if self.score not in ("ratio", "surface") or self.dilation < 0:
            raise ValueError("voxel.score must be 'ratio' or 'surface' with dilation >= 0")
        self.camera.validate()


@dataclass(frozen=True)
class EvaluationConfig:
    cycles: int = 50
    n: int = 10
    planners: tuple = ("random", "predefined", "voxel", "ssl")
    taus: tuple = (0.8, 0.9)

    def validate(self):
        if self.cycles < 1 or self.n < 1:
            raise ValueError("evaluation.cycles and evaluation.n must be >= 1")
        unknown = set(self.planners) - set(KNOWN_PLANNERS)
        if unknown:
            raise ValueError(f"unknown planners {sorted(unknown)}; choose from {KNOWN_PLANNERS}")
        if not self.taus or not all(0 < t <= 1 for t in self.taus):
            raise ValueError("evaluation.taus must be values in (0, 1]")


@dataclass(frozen=True)
class StrongConfig:
    """Dense-label reference: ``samples`` states each labelled for every view."""

    samples: int = 300
    steps: int = 1000
    n: int = 10

    def validate(self):
        if self.samples < 1 or self.steps < 1 or self.n < 1:
            raise ValueError("strong.samples, strong.steps and strong.n must be >= 1")


@dataclass(frozen=True)
class BenchConfig:
    resolution: float = 0.003
    repetitions: int = 20
    warm_views: int = 3

    def validate(self):
        if self.resolution <= 0 or self.repetitions < 1 or self.warm_views < 0:
            raise ValueError("bench needs positive resolution and repetitions")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    folds: int = 3
    delta: float = 0.003
    plants: PlantConfig = PlantConfig()
    rig: RigConfig = RigConfig()
    sensor: SensorConfig = SensorConfig()
    training: TrainingConfig = TrainingConfig()
    voxel: VoxelConfig = VoxelConfig()
    evaluation: EvaluationConfig = EvaluationConfig()
    strong: StrongConfig = StrongConfig()
    bench: BenchConfig = BenchConfig()
    output_dir: str = "runs/default"

    def validate(self):
        if self.folds < 2:
            raise ValueError("folds must be at least 2")
        if self.plants.count < self.folds:
            raise ValueError("need at least as many plants as folds")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if hasattr(value, "validate"):
                value.validate()
        M = self.rig.n_angles * len(self.rig.heights)
        if self.training.n > M or self.evaluation.n > M or self.strong.n > M:
            raise ValueError(f"views per cycle cannot exceed the {M} candidates")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    def digest(self):
        """Stable hash of the full configuration."""
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes):
        """Copy with top-level fields or ``section__field`` entries changed."""
        top, nested = {}, {}
        for key, value in changes.items():
            if "__" in key:
                section, name = key.split("__", 1)
                nested.setdefault(section, {})[name] = value
            else:
                top[key] = value
        for section, values in nested.items():
            top[section] = dataclasses.replace(top.get(section, getattr(self, section)), **values)
        return dataclasses.replace(self, **top).validate()


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ValueError(f"{path or 'config'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ValueError(f"unknown keys in {path or 'config'}: {sorted(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), value, f"{path}.{name}" if path else name)
        elif isinstance(current, tuple):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data):
    return _build(ExperimentConfig, data, "").validate()


def load_config(path):
    return config_from_dict(json.loads(Path(path).read_text()))


def save_config(config, path):
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
