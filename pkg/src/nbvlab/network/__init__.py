from .checkpoint import load_checkpoint, save_checkpoint
from .estimator import IGPredictor, pack_inputs, unpack_inputs
from .model import backward, forward, resize_cloud, self_attention
from .params import IGNetworkParams, init_params, normalize_arch, parameter_shapes
from .training import Adam, batch_loss, loss_strong, loss_weak, optimizer_step

__all__ = [
    "Adam",
    "IGNetworkParams",
    "IGPredictor",
    "backward",
    "batch_loss",
    "forward",
    "init_params",
    "load_checkpoint",
    "loss_strong",
    "loss_weak",
    "normalize_arch",
    "optimizer_step",
    "pack_inputs",
    "parameter_shapes",
    "resize_cloud",
    "save_checkpoint",
    "self_attention",
    "unpack_inputs",
]
