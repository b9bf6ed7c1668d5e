"""Regression losses on predicted gains and the Adam update."""

import numpy as np


def loss_strong(pred, target):
    """Sum of squared errors over all views."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.sum((target - pred) ** 2))


def loss_weak(pred, target):
    """Squared error on the labelled views only.

    ``target`` is a :class:`~nbvlab.igmetric.TargetVector` or any object
    with ``values`` and ``mask`` arrays.
    """
    pred = np.asarray(pred, dtype=np.float64)
    values = np.asarray(target.values, dtype=np.float64)
    mask = np.asarray(target.mask, dtype=np.float64)
    if pred.shape != values.shape or mask.shape != values.shape:
        raise ValueError("pred, values and mask must share one shape")
    if not mask.any():
        raise ValueError("target mask selects no view")
    return float(np.sum(mask * (values - pred) ** 2))


def batch_loss(pred, values, mask=None):
    """Masked squared error, summed over views and averaged over the batch.

    Returns the loss and its gradient with respect to ``pred``.
    """
    pred = np.atleast_2d(pred)
    values = np.atleast_2d(np.asarray(values, dtype=pred.dtype))
    mask = np.ones_like(values) if mask is None else np.atleast_2d(np.asarray(mask, dtype=pred.dtype))
    diff = mask * (pred - values)
    B = pred.shape[0]
    return float(np.sum(diff * (pred - values)) / B), 2.0 * diff / B


class Adam:
    """Adam hyper-parameters; moments live on :class:`IGNetworkParams`."""

    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self, params, grads):
        """Update ``params`` in place and advance its step counter."""
        params.step += 1
        t = params.step
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for name, g in grads.items():
            m = params.m[name]
            v = params.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params.weights[name] -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(m.dtype)
        return params


def optimizer_step(params, grads, lr=1e-4):
    return Adam(lr).step(params, grads)
