"""Parameter container and initialisation for the IG prediction network."""

from dataclasses import dataclass, field

import numpy as np

DEFAULT_ARCH = {
    "n_views": 33,
    "point_widths": (64, 128, 264),
    "attention_dim": 64,
    "mlp1_widths": (1024, 1024),
    "head_widths": (1024, 512, 256),
}


def normalize_arch(arch=None, **overrides):
    a = dict(DEFAULT_ARCH)
    a.update(arch or {})
    a.update(overrides)
    for key in ("point_widths", "mlp1_widths", "head_widths"):
        a[key] = tuple(int(w) for w in a[key])
    a["n_views"] = int(a["n_views"])
    a["attention_dim"] = int(a["attention_dim"])
    return a


def feature_width(arch):
    """Width of the per-point fused features: local + global + view state."""
    return 2 * arch["point_widths"][-1] + arch["n_views"]


def parameter_shapes(arch):
    shapes = {}
    prev = 3
    for i, w in enumerate(arch["point_widths"]):
        shapes[f"point{i}.W"] = (prev, w)
        shapes[f"point{i}.b"] = (w,)
        prev = w
    d, da = feature_width(arch), arch["attention_dim"]
    shapes["attn.Wq"] = (d, da)
    shapes["attn.Wk"] = (d, da)
    shapes["attn.Wv"] = (d, da)
    shapes["attn.Wo"] = (da, d)
    shapes["attn.gamma"] = (1,)
    prev = d
    for i, w in enumerate(arch["mlp1_widths"]):
        shapes[f"mlp1.{i}.W"] = (prev, w)
        shapes[f"mlp1.{i}.b"] = (w,)
        prev = w
    for i, w in enumerate(arch["head_widths"] + (arch["n_views"],)):
        shapes[f"head{i}.W"] = (prev, w)
        shapes[f"head{i}.b"] = (w,)
        prev = w
    return shapes


@dataclass
class IGNetworkParams:
    """Learnable tensors plus Adam moments and step counter."""

    arch: dict
    weights: dict
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        for name, w in self.weights.items():
            self.m.setdefault(name, np.zeros_like(w))
            self.v.setdefault(name, np.zeros_like(w))

    @property
    def names(self):
        return list(self.weights)

    @property
    def dtype(self):
        return next(iter(self.weights.values())).dtype

    @property
    def n_views(self):
        return self.arch["n_views"]

    def copy(self):
        dup = {k: {n: a.copy() for n, a in d.items()} for k, d in (("w", self.weights), ("m", self.m), ("v", self.v))}
        return IGNetworkParams(dict(self.arch), dup["w"], dup["m"], dup["v"], self.step)

    def astype(self, dtype):
        conv = {k: {n: a.astype(dtype) for n, a in d.items()} for k, d in (("w", self.weights), ("m", self.m), ("v", self.v))}
        return IGNetworkParams(dict(self.arch), conv["w"], conv["m"], conv["v"], self.step)


def init_params(arch=None, seed=None, dtype=np.float64):
    """He-normal weights for ReLU layers, zero biases, attention gate at 0."""
    arch = normalize_arch(arch)
    rng = np.random.default_rng(seed)
    n_head = len(arch["head_widths"])
    weights = {}
    for name, shape in parameter_shapes(arch).items():
        if name == "attn.gamma" or name.endswith(".b"):
            weights[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = shape[0]
        relu_fed = not (name.startswith("attn.") or name == f"head{n_head}.W")
        std = np.sqrt((2.0 if relu_fed else 1.0) / fan_in)
        weights[name] = rng.normal(0.0, std, shape).astype(dtype)
    return IGNetworkParams(arch, weights)
