"""Forward and reverse passes of the IG prediction network.

Pipeline per sample (P points, M views)::

    points (P, 3) -> shared point MLP -> F0 (P, C)
    G0 = max over points of F0
    F1 = [F0 | tile(G0) | tile(state)]             (P, 2C + M)
    F2 = F1 + gamma * softmax(Q K^T / sqrt(d)) V Wo
    shared MLP1 on F2, max over points -> G1
    head MLP on G1 -> predicted gain per view      (M,)

All functions work on a leading batch axis.
"""

import numpy as np
from scipy import sparse

from .._kernels import argmax_axis1, softmax_rows_backward


def relu(x):
    return np.maximum(x, 0)


def softmax(scores, axis=-1):
    shifted = scores - scores.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _check_inputs(params, clouds, states):
    clouds = np.asarray(clouds, dtype=params.dtype)
    states = np.asarray(states, dtype=params.dtype)
    if clouds.ndim == 2:
        clouds = clouds[None]
    if states.ndim == 1:
        states = states[None]
    if clouds.ndim != 3 or clouds.shape[2] != 3:
        raise ValueError(f"clouds must have shape (B, P, 3), got {clouds.shape}")
    if states.shape != (clouds.shape[0], params.n_views):
        raise ValueError(f"states must have shape ({clouds.shape[0]}, {params.n_views}), got {states.shape}")
    return clouds, states


def self_attention(F1, W, cache=None):
    """Gated residual self-attention over the point axis.

    ``W`` maps ``attn.Wq/Wk/Wv/Wo/gamma`` to arrays. Returns ``F2`` and,
    if ``cache`` is a dict, stores the intermediates needed for backprop.
    """
    Q = F1 @ W["attn.Wq"]
    K = F1 @ W["attn.Wk"]
    V = F1 @ W["attn.Wv"]
    scale = 1.0 / float(np.sqrt(Q.shape[-1]))
    A = softmax(np.matmul(Q, np.swapaxes(K, -1, -2)) * scale)
    O = np.matmul(A, V)
    Y = O @ W["attn.Wo"]
    F2 = F1 + W["attn.gamma"][0] * Y
    if cache is not None:
        cache.update(Q=Q, K=K, V=V, A=A, O=O, Y=Y, scale=scale)
    return F2


def _split_rows(Wm, C0):
    """Row blocks of a weight acting on F1 = [local | global | state]."""
    return Wm[:C0], Wm[C0:2 * C0], Wm[2 * C0:]


def forward(params, clouds, states, return_cache=False):
    """Predicted gains of shape (B, M) for a batch of clouds and view states.

    F1 and F2 are never materialised: every product with F1 is split into
    the per-point block and a per-sample broadcast block, and the first
    MLP1 layer absorbs the attention output projection. This is the same
    function as ``mlp(self_attention(F1))`` with fewer flops.
    """
    clouds, states = _check_inputs(params, clouds, states)
    W = params.weights
    arch = params.arch
    B, P, _ = clouds.shape

    h = clouds.reshape(B * P, 3)
    point_in, point_z = [], []
    for i in range(len(arch["point_widths"])):
        point_in.append(h)
        z = h @ W[f"point{i}.W"] + W[f"point{i}.b"]
        point_z.append(z)
        h = relu(z)
    C0 = h.shape[1]
    F0 = h.reshape(B, P, C0)
    arg0 = argmax_axis1(F0)
    G0 = np.take_along_axis(F0, arg0[:, None, :], axis=1)[:, 0, :]

    # attention on the split input
    Wqkv = np.concatenate([W["attn.Wq"], W["attn.Wk"], W["attn.Wv"]], axis=1)
    qa, qb, qc = _split_rows(Wqkv, C0)
    QKV = F0 @ qa
    QKV += (G0 @ qb + states @ qc)[:, None, :]
    da = W["attn.Wq"].shape[1]
    Q, K, V = QKV[..., :da], QKV[..., da:2 * da], QKV[..., 2 * da:]
    scale = 1.0 / float(np.sqrt(da))
    A = softmax(np.matmul(Q, np.swapaxes(K, -1, -2)) * scale)
    O = np.matmul(A, V)
    gamma = W["attn.gamma"][0]

    # first MLP1 layer on F2 = F1 + gamma * O Wo
    W0 = W["mlp1.0.W"]
    wa, wb, wc = _split_rows(W0, C0)
    WoW0 = W["attn.Wo"] @ W0
    U = O @ WoW0
    z = F0 @ wa
    z += (G0 @ wb + states @ wc + W["mlp1.0.b"])[:, None, :]
    z += gamma * U
    z = z.reshape(B * P, -1)
    mlp_in, mlp_z = [None], [z]
    h = relu(z)
    for i in range(1, len(arch["mlp1_widths"])):
        mlp_in.append(h)
        z = h @ W[f"mlp1.{i}.W"]
        z += W[f"mlp1.{i}.b"]
        mlp_z.append(z)
        h = relu(z)
    # max over points of relu(z) equals relu of the max of z
    C1 = z.shape[1]
    Z = z.reshape(B, P, C1)
    arg1 = argmax_axis1(Z)
    g = relu(np.take_along_axis(Z, arg1[:, None, :], axis=1)[:, 0, :])

    head_in, head_z = [], []
    n_head = len(arch["head_widths"]) + 1
    for i in range(n_head):
        head_in.append(g)
        z = g @ W[f"head{i}.W"] + W[f"head{i}.b"]
        head_z.append(z)
        g = relu(z) if i < n_head - 1 else z
    if not return_cache:
        return g
    cache = dict(
        B=B, P=P, states=states, point_in=point_in, point_z=point_z, F0=F0, G0=G0, arg0=arg0,
        Q=Q, K=K, V=V, A=A, O=O, U=U, WoW0=WoW0, Wqkv=Wqkv, scale=scale,
        mlp_in=mlp_in, mlp_z=mlp_z, arg1=arg1, head_in=head_in, head_z=head_z,
    )
    return g, cache


def backward(params, cache, d_pred):
    """Gradients of a scalar loss w.r.t. every parameter, given dLoss/dPred."""
    W = params.weights
    arch = params.arch
    B, P = cache["B"], cache["P"]
    grads = {}

    g = np.asarray(d_pred, dtype=params.dtype).reshape(B, -1)
    n_head = len(arch["head_widths"]) + 1
    for i in reversed(range(n_head)):
        if i < n_head - 1:
            g = g * (cache["head_z"][i] > 0)
        grads[f"head{i}.W"] = cache["head_in"][i].T @ g
        grads[f"head{i}.b"] = g.sum(axis=0)
        g = g @ W[f"head{i}.W"].T

    # max-pool: only the argmax row of each channel receives gradient
    n_mlp = len(arch["mlp1_widths"])
    last = n_mlp - 1
    z_last = cache["mlp_z"][last]
    C1 = z_last.shape[1]
    rows = (np.arange(B)[:, None] * P + cache["arg1"]).ravel()
    cols = np.tile(np.arange(C1), B)
    dz = g.ravel() * (z_last[rows, cols] > 0)
    D = sparse.csr_matrix((dz, (rows, cols)), shape=(B * P, C1))
    if last > 0:
        grads[f"mlp1.{last}.W"] = np.asarray(D.T @ cache["mlp_in"][last]).T
        grads[f"mlp1.{last}.b"] = np.asarray(D.sum(axis=0)).ravel().astype(params.dtype)
        dh = np.asarray(D @ W[f"mlp1.{last}.W"].T)
        for i in reversed(range(1, last)):
            dz_i = dh * (cache["mlp_z"][i] > 0)
            grads[f"mlp1.{i}.W"] = cache["mlp_in"][i].T @ dz_i
            grads[f"mlp1.{i}.b"] = dz_i.sum(axis=0)
            dh = dz_i @ W[f"mlp1.{i}.W"].T
        dZ0 = dh * (cache["mlp_z"][0] > 0)
    else:
        dZ0 = D.toarray()
    _first_layer_backward(W, cache, dZ0, grads)
    return grads


def _first_layer_backward(W, cache, dZ0, grads):
    B, P = cache["B"], cache["P"]
    F0, G0, S, O, A = cache["F0"], cache["G0"], cache["states"], cache["O"], cache["A"]
    C0 = F0.shape[2]
    C1 = dZ0.shape[1]
    W0 = W["mlp1.0.W"]
    wa, wb, _ = _split_rows(W0, C0)
    gamma = W["attn.gamma"][0]
    dZf = dZ0
    dZ = dZ0.reshape(B, P, C1)
    cz = dZ.sum(axis=1)
    F0f = F0.reshape(B * P, C0)
    Of = O.reshape(B * P, -1)

    OtdZ = Of.T @ dZf
    grads["mlp1.0.W"] = np.concatenate([F0f.T @ dZf, G0.T @ cz, S.T @ cz]) + gamma * (W["attn.Wo"].T @ OtdZ)
    grads["mlp1.0.b"] = cz.sum(axis=0)
    grads["attn.gamma"] = np.array([np.vdot(dZ0.ravel(), cache["U"].ravel())], dtype=dZ0.dtype)
    grads["attn.Wo"] = gamma * (OtdZ @ W0.T)

    # attention internals
    dO = gamma * (dZ @ cache["WoW0"].T)
    Q, K, V = cache["Q"], cache["K"], cache["V"]
    dA = np.matmul(dO, np.swapaxes(V, -1, -2))
    dV = np.matmul(np.swapaxes(A, -1, -2), dO)
    dS = softmax_rows_backward(A, dA, cache["scale"])
    dQ = np.matmul(dS, K)
    dK = np.matmul(np.swapaxes(dS, -1, -2), Q)
    dQKV = np.concatenate([dQ, dK, dV], axis=2)
    cq = dQKV.sum(axis=1)
    gq = np.concatenate([F0f.T @ dQKV.reshape(B * P, -1), G0.T @ cq, S.T @ cq])
    da = Q.shape[2]
    grads["attn.Wq"], grads["attn.Wk"], grads["attn.Wv"] = gq[:, :da], gq[:, da:2 * da], gq[:, 2 * da:]

    qa, qb, _ = _split_rows(cache["Wqkv"], C0)
    dF0 = dZ @ wa.T
    dF0 += dQKV @ qa.T
    dG0 = cz @ wb.T + cq @ qb.T
    b_idx = np.repeat(np.arange(B), C0)
    c_idx = np.tile(np.arange(C0), B)
    dF0[b_idx, cache["arg0"].ravel(), c_idx] += dG0.ravel()

    g = dF0.reshape(B * P, C0)
    for i in reversed(range(len(cache["point_in"]))):
        g = g * (cache["point_z"][i] > 0)
        grads[f"point{i}.W"] = cache["point_in"][i].T @ g
        grads[f"point{i}.b"] = g.sum(axis=0)
        if i:
            g = g @ W[f"point{i}.W"].T


def resize_cloud(cloud, n=512, rng=None, center=(0.0, 0.0, 0.0), scale=1.0):
    """Fixed-size network input: sample ``n`` points, centre and scale them.

    Larger clouds are subsampled without replacement. Smaller ones keep
    every point and are padded by resampling with replacement.
    """
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.ndim != 2 or cloud.shape[1] != 3 or len(cloud) == 0:
        raise ValueError("resize_cloud needs a non-empty (k, 3) cloud")
    rng = np.random.default_rng(rng)
    k = len(cloud)
    if k >= n:
        idx = rng.choice(k, size=n, replace=False)
    else:
        idx = np.concatenate([rng.permutation(k), rng.integers(0, k, size=n - k)])
    return (cloud[idx] - np.asarray(center, dtype=np.float64)) / scale
