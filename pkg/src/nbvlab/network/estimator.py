"""scikit-learn style regressor wrapping the IG prediction network."""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils import check_array, check_random_state
from sklearn.utils.validation import check_is_fitted

from .checkpoint import load_checkpoint, save_checkpoint
from .model import forward, backward
from .params import init_params, normalize_arch
from .training import Adam, batch_loss


def pack_inputs(clouds, states):
    """Flatten ``(n, P, 3)`` clouds and ``(n, M)`` states into one 2-D array."""
    clouds = np.asarray(clouds, dtype=np.float64)
    states = np.asarray(states, dtype=np.float64)
    if clouds.ndim == 2:
        clouds, states = clouds[None], states[None]
    return np.hstack([clouds.reshape(len(clouds), -1), states])


def unpack_inputs(X, n_points, n_views):
    X = np.asarray(X)
    return X[:, : 3 * n_points].reshape(len(X), n_points, 3), X[:, 3 * n_points:]


class IGPredictor(RegressorMixin, BaseEstimator):
    """Predicts the information gain of every candidate view.

    Each row of ``X`` is a flattened, normalised ``n_points x 3`` cloud
    followed by the ``n_views`` visited flags (see :func:`pack_inputs`).
    ``y`` holds per-view gains; ``label_mask`` marks which entries are real
    labels (all of them when omitted).

    ``partial_fit`` takes exactly one Adam step on the batch it is given,
    which is how the online learner drives it. ``fit`` trains from scratch
    with ``max_iter`` minibatch steps drawn with replacement.
    """

    def __init__(
        self,
        n_views=33,
        n_points=512,
        point_widths=(64, 128, 264),
        attention_dim=64,
        mlp1_widths=(1024, 1024),
        head_widths=(1024, 512, 256),
        learning_rate=1e-4,
        batch_size=32,
        max_iter=200,
        dtype="float64",
        random_state=None,
    ):
        self.n_views = n_views
        self.n_points = n_points
        self.point_widths = point_widths
        self.attention_dim = attention_dim
        self.mlp1_widths = mlp1_widths
        self.head_widths = head_widths
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_iter = max_iter
        self.dtype = dtype
        self.random_state = random_state

    @property
    def arch(self):
        return normalize_arch(
            n_views=self.n_views,
            point_widths=self.point_widths,
            attention_dim=self.attention_dim,
            mlp1_widths=self.mlp1_widths,
            head_widths=self.head_widths,
        )

    def _validate(self, X, y=None, label_mask=None):
        X = check_array(X, dtype=np.float64)
        width = 3 * self.n_points + self.n_views
        if X.shape[1] != width:
            raise ValueError(f"X must have {width} columns, got {X.shape[1]}")
        if y is None:
            return X
        y = check_array(y, dtype=np.float64, ensure_2d=False).reshape(len(X), -1)
        if y.shape[1] != self.n_views:
            raise ValueError(f"y must have {self.n_views} columns, got {y.shape[1]}")
        if label_mask is None:
            label_mask = np.ones_like(y)
        label_mask = np.asarray(label_mask, dtype=np.float64).reshape(y.shape)
        return X, y, label_mask

    def _init(self, seed=None):
        rs = check_random_state(self.random_state if seed is None else seed)
        self.params_ = init_params(self.arch, seed=rs.randint(2**31 - 1), dtype=np.dtype(self.dtype))
        self.loss_curve_ = []
        self.n_iter_ = 0

    def _step(self, X, y, mask):
        clouds, states = unpack_inputs(X, self.n_points, self.n_views)
        pred, cache = forward(self.params_, clouds, states, return_cache=True)
        loss, d_pred = batch_loss(pred, y, mask)
        Adam(self.learning_rate).step(self.params_, backward(self.params_, cache, d_pred))
        self.loss_curve_.append(loss)
        self.n_iter_ += 1
        return loss

    def fit(self, X, y, label_mask=None):
        X, y, mask = self._validate(X, y, label_mask)
        self._init()
        rng = check_random_state(self.random_state)
        for _ in range(self.max_iter):
            idx = rng.randint(0, len(X), size=self.batch_size)
            self._step(X[idx], y[idx], mask[idx])
        return self

    def partial_fit(self, X, y, label_mask=None):
        X, y, mask = self._validate(X, y, label_mask)
        if not hasattr(self, "params_"):
            self._init()
        self._step(X, y, mask)
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = self._validate(X)
        return forward(self.params_, *unpack_inputs(X, self.n_points, self.n_views)).astype(np.float64)

    def predict_one(self, cloud, state):
        """Gains for a single ``(P, 3)`` cloud and ``(M,)`` state."""
        check_is_fitted(self, "params_")
        return forward(self.params_, np.asarray(cloud)[None], np.asarray(state)[None])[0].astype(np.float64)

    def initialize(self):
        """Draw fresh weights without training (an untrained checkpoint)."""
        self._init()
        return self

    def save(self, path):
        check_is_fitted(self, "params_")
        save_checkpoint(path, self.params_, {**self.get_params(), "n_iter": self.n_iter_})

    @classmethod
    def load(cls, path):
        params, hyper = load_checkpoint(path)
        n_iter = hyper.pop("n_iter", 0)
        for key in ("point_widths", "mlp1_widths", "head_widths"):
            if key in hyper:
                hyper[key] = tuple(hyper[key])
        est = cls(**hyper)
        est.params_ = params
        est.loss_curve_ = []
        est.n_iter_ = n_iter
        return est
