"""Fully-connected ReLU reward network without biases.

``h(x) = W_L relu(W_{L-1} relu(... relu(W_1 x)))``.  Parameters are kept as a
tuple of weight matrices and flatten, layer by layer in row-major order, into
the ``p``-vector ``theta``.  The gradient ``g(x; theta)`` of the scalar output
with respect to ``theta`` serves as the feature map of the confidence sets.

A depth-1 "network" (a single ``1 x d`` matrix, no ReLU) is the linear model
``h(x) = x . theta`` used by the linear baselines; it goes through exactly the
same loss and trainer code.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_labels, as_matrix, as_pairs, as_vector, check_choice, check_positive
from .environment import BinaryObservation, PreferenceObservation, log_sigmoid, sigmoid
from .exceptions import ConfigurationError, InputError, TrainingDivergedError

REGULARIZER_MODES = ("practical", "theoretical")
LOSS_KINDS = ("dueling", "binary")


@dataclass(frozen=True)
class NetworkShape:
    depth: int
    width: int
    input_dim: int

    def __post_init__(self):
        check_positive(self.input_dim, "input_dim", integer=True)
        check_positive(self.width, "width", integer=True)
        check_positive(self.depth, "depth", integer=True)
        if self.depth >= 2 and self.width % 2:
            raise ConfigurationError(f"width must be even, got {self.width}")

    @classmethod
    def linear(cls, input_dim):
        """The depth-degenerate shape whose forward pass is ``x . theta``."""
        return cls(depth=1, width=1, input_dim=input_dim)

    @property
    def is_linear(self):
        return self.depth == 1

    @property
    def layer_shapes(self):
        if self.depth == 1:
            return [(1, self.input_dim)]
        m = self.width
        return [(m, self.input_dim)] + [(m, m)] * (self.depth - 2) + [(1, m)]

    @property
    def n_params(self):
        # d*m + (L-2)*m^2 + m for L >= 2
        return sum(r * c for r, c in self.layer_shapes)


@dataclass(frozen=True)
class NetworkParams:
    shape: NetworkShape
    weights: tuple = field(repr=False)

    def __post_init__(self):
        weights = tuple(np.asarray(w, dtype=np.float64) for w in self.weights)
        expected = self.shape.layer_shapes
        if [w.shape for w in weights] != [tuple(s) for s in expected]:
            raise InputError(
                f"weight shapes {[w.shape for w in weights]} do not match {expected}"
            )
        object.__setattr__(self, "weights", weights)

    @property
    def n_params(self):
        return self.shape.n_params

    def flatten(self):
        return np.concatenate([w.ravel() for w in self.weights])

    @classmethod
    def unflatten(cls, shape, theta):
        theta = as_vector(theta, "theta", shape.n_params)
        weights, start = [], 0
        for r, c in shape.layer_shapes:
            weights.append(theta[start:start + r * c].reshape(r, c).copy())
            start += r * c
        return cls(shape, tuple(weights))


def zeros_like(params):
    return NetworkParams(params.shape, tuple(np.zeros_like(w) for w in params.weights))


def init_symmetric(rng, shape):
    """Initial parameters ``theta_0`` whose output vanishes on duplicated inputs.

    Hidden layers are ``[[A, 0], [0, A]]`` with ``A`` entries drawn from
    ``N(0, 4/m)`` and the output layer is ``[w, -w]`` with ``w ~ N(0, 2/m)``.
    When the input dimension is odd the first layer cannot be split in two
    blocks; it is then the row-stack ``[[A], [A]]``, which makes the output
    vanish on every input.  The linear shape starts at zero.
    """
    if shape.is_linear:
        return NetworkParams(shape, (np.zeros((1, shape.input_dim)),))
    m = shape.width
    if m % 2:
        raise ConfigurationError(f"symmetric initialisation needs an even width, got {m}")
    half = m // 2
    d = shape.input_dim
    std_hidden = np.sqrt(4.0 / m)
    if d % 2 == 0:
        A = rng.normal(0.0, std_hidden, size=(half, d // 2))
        W1 = np.zeros((m, d))
        W1[:half, : d // 2] = A
        W1[half:, d // 2:] = A
    else:
        A = rng.normal(0.0, std_hidden, size=(half, d))
        W1 = np.vstack([A, A])
    weights = [W1]
    for _ in range(shape.depth - 2):
        A = rng.normal(0.0, std_hidden, size=(half, half))
        W = np.zeros((m, m))
        W[:half, :half] = A
        W[half:, half:] = A
        weights.append(W)
    w = rng.normal(0.0, np.sqrt(2.0 / m), size=half)
    weights.append(np.concatenate([w, -w])[None, :])
    return NetworkParams(shape, tuple(weights))


def _forward_cache(params, X):
    """Return the layer inputs ``a_0 .. a_{L-1}`` and the output ``h``."""
    acts = [X]
    a = X
    for W in params.weights[:-1]:
        a = np.maximum(a @ W.T, 0.0)
        acts.append(a)
    return acts, (a @ params.weights[-1].T)[:, 0]


def _backward(params, acts, coef):
    """Gradient of ``sum_i coef_i h(x_i)`` with respect to every weight matrix."""
    grads = [None] * len(params.weights)
    delta = coef[:, None]
    for l in range(len(params.weights) - 1, -1, -1):
        grads[l] = delta.T @ acts[l]
        if l:
            # relu'(0) = 0: a zero activation blocks the gradient
            delta = (delta @ params.weights[l]) * (acts[l] > 0.0)
    return grads


def forward_batch(params, X):
    X = as_matrix(X, "X", params.shape.input_dim)
    return _forward_cache(params, X)[1]


def forward(params, x):
    """Network output ``h(x; theta)`` for one input vector."""
    x = as_vector(x, "x", params.shape.input_dim)
    return float(_forward_cache(params, x[None, :])[1][0])


def param_gradients(params, X):
    """Per-input gradients ``g(x_i; theta)`` stacked into an ``(N, p)`` matrix."""
    X = as_matrix(X, "X", params.shape.input_dim)
    acts, _ = _forward_cache(params, X)
    n = X.shape[0]
    blocks = [None] * len(params.weights)
    delta = np.ones((n, 1))
    for l in range(len(params.weights) - 1, -1, -1):
        blocks[l] = (delta[:, :, None] * acts[l][:, None, :]).reshape(n, -1)
        if l:
            delta = (delta @ params.weights[l]) * (acts[l] > 0.0)
    return np.concatenate(blocks, axis=1)


def param_gradient(params, x):
    """Gradient ``g(x; theta)`` of the output with respect to all parameters."""
    x = as_vector(x, "x", params.shape.input_dim)
    return param_gradients(params, x[None, :])[0]


@dataclass(frozen=True)
class TrainingConfig:
    """Gradient-descent settings for the reward network.

    ``practical`` regularisation is ``lambda ||theta||^2`` on top of the plain
    summed log-loss; ``theoretical`` is ``(lambda/2) ||theta - theta_0||^2`` with
    the log-loss divided by the width ``m``.
    """

    lambda_: float = 1.0
    learning_rate: float = 1e-3
    grad_steps: int = 50
    regularizer_mode: str = "practical"
    loss_kind: str = "dueling"
    tol: float = 0.0

    def __post_init__(self):
        check_positive(self.lambda_, "lambda_")
        check_positive(self.learning_rate, "learning_rate")
        check_positive(self.grad_steps, "grad_steps", integer=True, allow_zero=True)
        check_positive(self.tol, "tol", allow_zero=True)
        check_choice(self.regularizer_mode, "regularizer_mode", REGULARIZER_MODES)
        check_choice(self.loss_kind, "loss_kind", LOSS_KINDS)


def preference_arrays(data, d=None):
    """Convert observations (or an ``(X, y)`` pair) into ``(X (n,2,d), y (n,))``."""
    if isinstance(data, tuple):
        X, y = data
        if d and np.size(X) == 0:
            return np.zeros((0, 2, d)), np.zeros(0)
        X = as_pairs(X, n_features=d)
        return X, as_labels(y, X.shape[0])
    data = list(data)
    if not data:
        return np.zeros((0, 2, d or 0)), np.zeros(0)
    if not all(isinstance(o, PreferenceObservation) for o in data):
        raise InputError("dueling data must be PreferenceObservation records")
    X = np.stack([np.stack([o.x1, o.x2]) for o in data])
    return as_pairs(X, n_features=d), as_labels([o.y for o in data], len(data))


def binary_arrays(data, d=None):
    if isinstance(data, tuple):
        X, y = data
        if d and np.size(X) == 0:
            return np.zeros((0, d)), np.zeros(0)
        X = as_matrix(X, n_features=d)
        return X, as_labels(y, X.shape[0])
    data = list(data)
    if not data:
        return np.zeros((0, d or 0)), np.zeros(0)
    if not all(isinstance(o, BinaryObservation) for o in data):
        raise InputError("binary data must be BinaryObservation records")
    X = as_matrix(np.stack([o.x for o in data]), n_features=d)
    return X, as_labels([o.y for o in data], len(data))


def _objective(params, theta0, X, y, cfg, with_grad=True):
    """Loss value and (optionally) its gradient as a tuple of weight arrays.

    ``X`` is ``(n, 2, d)`` for the dueling loss and ``(n, d)`` for the binary one.
    """
    shape = params.shape
    n = y.shape[0]
    data_scale = 1.0 / shape.width if cfg.regularizer_mode == "theoretical" else 1.0
    if n:
        flat_X = X.reshape(-1, shape.input_dim)
        acts, h = _forward_cache(params, flat_X)
        if cfg.loss_kind == "dueling":
            z = h[0::2] - h[1::2]
        else:
            z = h
        signed = np.where(y == 1.0, z, -z)
        data_loss = -np.sum(log_sigmoid(signed))
    else:
        data_loss = 0.0

    if cfg.regularizer_mode == "theoretical":
        diffs = [w - w0 for w, w0 in zip(params.weights, theta0.weights)]
        reg = 0.5 * cfg.lambda_ * sum(np.sum(r * r) for r in diffs)
        reg_grads = [cfg.lambda_ * r for r in diffs]
    else:
        reg = cfg.lambda_ * sum(np.sum(w * w) for w in params.weights)
        reg_grads = [2.0 * cfg.lambda_ * w for w in params.weights]
    loss = data_scale * data_loss + reg
    if not with_grad:
        return loss, None

    if n:
        # d/dz of -log mu(+-z) is mu(z) - y
        resid = data_scale * (sigmoid(z) - y)
        if cfg.loss_kind == "dueling":
            coef = np.empty(2 * n)
            coef[0::2] = resid
            coef[1::2] = -resid
        else:
            coef = resid
        data_grads = _backward(params, acts, coef)
        grads = tuple(g + r for g, r in zip(data_grads, reg_grads))
    else:
        grads = tuple(reg_grads)
    return loss, grads


def dueling_loss(params, theta0, data, cfg):
    """Regularised negative log-likelihood of preference data under the BTL link."""
    X, y = preference_arrays(data, params.shape.input_dim)
    cfg = _with_kind(cfg, "dueling")
    return float(_objective(params, theta0, X, y, cfg, with_grad=False)[0])


def binary_loss(params, theta0, data, cfg):
    """Regularised binary cross-entropy of single-arm feedback."""
    X, y = binary_arrays(data, params.shape.input_dim)
    cfg = _with_kind(cfg, "binary")
    return float(_objective(params, theta0, X, y, cfg, with_grad=False)[0])


def _with_kind(cfg, kind):
    if cfg.loss_kind == kind:
        return cfg
    return TrainingConfig(cfg.lambda_, cfg.learning_rate, cfg.grad_steps, cfg.regularizer_mode, kind, cfg.tol)


@dataclass(frozen=True)
class TrainResult:
    params: NetworkParams
    loss: float
    grad_norm: float
    n_steps: int


def train(theta_start, theta0, data, cfg, rng=None):
    """Full-batch gradient descent on the configured loss.

    Runs ``cfg.grad_steps`` steps from ``theta_start`` (stopping early once the
    gradient norm falls below ``cfg.tol``) and returns the final parameters with
    the loss and gradient norm evaluated there.  ``rng`` is accepted for
    interface symmetry; full-batch descent consumes no randomness.
    """
    d = theta_start.shape.input_dim
    if cfg.loss_kind == "dueling":
        X, y = preference_arrays(data, d)
    else:
        X, y = binary_arrays(data, d)
    weights = [w.copy() for w in theta_start.weights]
    params = NetworkParams(theta_start.shape, tuple(weights))
    loss, grads = _objective(params, theta0, X, y, cfg)
    step = 0
    while True:
        if not np.isfinite(loss):
            raise TrainingDivergedError(step, loss)
        with np.errstate(over="ignore", invalid="ignore"):
            grad_norm = float(np.sqrt(sum(np.sum(g * g) for g in grads)))
        if not np.isfinite(grad_norm):
            raise TrainingDivergedError(step, loss)
        if step >= cfg.grad_steps or grad_norm < cfg.tol:
            break
        for w, g in zip(weights, grads):
            w -= cfg.learning_rate * g
        step += 1
        loss, grads = _objective(params, theta0, X, y, cfg)
    return TrainResult(params, float(loss), grad_norm, step)


_MAGIC = b"NDBNET1\x00"


def save_params(params, path):
    """Write ``params`` as: 8-byte magic, int64 depth/width/input_dim, float64 weights.

    All numbers are little-endian; weights follow layer order, row-major.
    """
    s = params.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<3q", s.depth, s.width, s.input_dim))
        fh.write(params.flatten().astype("<f8").tobytes())


def load_params(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _MAGIC:
        raise InputError(f"{path}: not a network checkpoint")
    depth, width, input_dim = struct.unpack("<3q", blob[8:32])
    shape = NetworkShape(depth, width, input_dim)
    theta = np.frombuffer(blob[32:], dtype="<f8")
    if theta.shape[0] != shape.n_params:
        raise InputError(f"{path}: expected {shape.n_params} weights, found {theta.shape[0]}")
    return NetworkParams.unflatten(shape, theta.astype(np.float64))
