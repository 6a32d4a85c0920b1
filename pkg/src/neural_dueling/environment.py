"""Synthetic preference environments.

Context-arm features, latent reward functions, the BTL link function and the
stochastic preference / binary feedback samplers.  Every function here is
pure given an explicit :class:`numpy.random.Generator`.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ._validation import as_matrix, as_vector, check_choice, check_finite_scalar, check_positive
from .exceptions import ConfigurationError, InputError

# exponent arguments beyond this magnitude only affect outputs below 1e-200
_EXP_CLAMP = 500.0

CONTEXT_MODES = ("raw", "theory")
REWARD_KINDS = ("square", "cosine", "cosine-outer", "linear")


def _frozen(arr):
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def sigmoid(z):
    """Vectorised logistic function with the exponent clamped to +-500."""
    return expit(np.clip(z, -_EXP_CLAMP, _EXP_CLAMP))


def sigmoid_derivative(z):
    s = sigmoid(z)
    return s * (1.0 - s)


def log_sigmoid(z):
    """``log(sigmoid(z))`` without cancellation, i.e. ``-log1p(exp(-z))``."""
    return -np.logaddexp(0.0, -np.asarray(z, dtype=np.float64))


@dataclass(frozen=True)
class LinkFunction:
    """Sigmoid link ``mu`` with its Lipschitz constant and curvature floor.

    ``kappa_mu`` is configuration, not something measured from data.  The
    default of 1.0 matches the practical experiment setup; use
    :meth:`for_reward_bound` to obtain the theory-mode value.
    """

    kind: str = "sigmoid"
    lipschitz: float = 0.25
    kappa_mu: float = 1.0

    def __post_init__(self):
        check_choice(self.kind, "kind", ("sigmoid",))
        check_positive(self.lipschitz, "lipschitz")
        check_positive(self.kappa_mu, "kappa_mu")

    @classmethod
    def for_reward_bound(cls, f_max):
        """Theory-mode link with ``kappa_mu = mu'(2 * f_max)``."""
        check_positive(f_max, "f_max")
        return cls(kappa_mu=float(sigmoid_derivative(2.0 * f_max)))

    def value(self, z):
        return sigmoid(z)

    def derivative(self, z):
        return sigmoid_derivative(z)


def link_value(mu, z):
    """Evaluate ``mu(z) = 1 / (1 + exp(-z))`` for a finite scalar ``z``."""
    return float(mu.value(check_finite_scalar(z)))


def link_derivative(mu, z):
    """Evaluate ``mu'(z) = mu(z) (1 - mu(z))`` for a finite scalar ``z``."""
    return float(mu.derivative(check_finite_scalar(z)))


@dataclass(frozen=True)
class SyntheticReward:
    """Latent reward ``f`` built from a hidden direction ``theta_star``.

    ``square``: ``scale * (x . theta)^2``; ``cosine``: ``cos(scale * x . theta)``;
    ``cosine-outer``: ``scale * cos(x . theta)``; ``linear``: ``scale * x . theta``.
    The linear kind is only used as a sanity ground truth for linear baselines.
    """

    kind: str
    scale: float
    theta_star: np.ndarray = field(repr=False)

    def __post_init__(self):
        check_choice(self.kind, "kind", REWARD_KINDS)
        check_positive(self.scale, "scale")
        object.__setattr__(self, "theta_star", _frozen(as_vector(self.theta_star, "theta_star")))

    @property
    def d(self):
        return self.theta_star.shape[0]

    @classmethod
    def sample(cls, kind, scale, d, rng):
        """Draw ``theta_star`` uniformly from ``(-1, 1)^d``."""
        check_positive(d, "d", integer=True)
        return cls(kind, scale, rng.uniform(-1.0, 1.0, size=d))

    def __call__(self, X):
        """Evaluate ``f`` on a single vector or on the rows of a matrix."""
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.d:
            raise InputError(f"input has dimension {X.shape[-1]}, reward expects {self.d}")
        z = X @ self.theta_star
        if self.kind == "square":
            return self.scale * z * z
        if self.kind == "cosine":
            return np.cos(self.scale * z)
        if self.kind == "cosine-outer":
            return self.scale * np.cos(z)
        return self.scale * z


def eval_reward(f, x):
    """Reward of a single context-arm vector."""
    return float(f(as_vector(x, "x", f.d)))


@dataclass(frozen=True)
class RoundContexts:
    """The ``K x d`` matrix of context-arm features offered in round ``t``."""

    round: int
    features: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "features", _frozen(as_matrix(self.features, "features", min_samples=1)))

    @property
    def K(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]


def duplicate_normalize(X):
    """Map rows ``x`` to ``(x, x) / (sqrt(2) ||x||)``: unit norm, duplicated halves."""
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise InputError("cannot normalise a zero feature vector")
    half = X / (np.sqrt(2.0) * norms)
    return np.concatenate([half, half], axis=1)


def make_round_contexts(rng, K, d, mode="raw", t=1):
    """Generate the arms of one round.

    Raw entries are i.i.d. uniform on ``(-1, 1)``.  In ``theory`` mode each raw
    row is mapped through :func:`duplicate_normalize`, giving ``2 d`` columns.
    """
    if not isinstance(K, (int, np.integer)) or K < 2:
        raise ConfigurationError(f"K must be an integer >= 2, got {K!r}")
    if not isinstance(d, (int, np.integer)) or d < 1:
        raise ConfigurationError(f"d must be an integer >= 1, got {d!r}")
    check_choice(mode, "mode", CONTEXT_MODES)
    X = rng.uniform(-1.0, 1.0, size=(K, d))
    if mode == "theory":
        X = duplicate_normalize(X)
    return RoundContexts(t, X)


@dataclass(frozen=True)
class PreferenceObservation:
    """One duel outcome; ``y == 1`` means ``x1`` was preferred over ``x2``."""

    x1: np.ndarray
    x2: np.ndarray
    y: int
    round: int = 0


@dataclass(frozen=True)
class BinaryObservation:
    x: np.ndarray
    y: int
    round: int = 0


def preference_probability(f, mu, x1, x2):
    """``P(x1 preferred over x2) = mu(f(x1) - f(x2))`` (vectorised over rows)."""
    return mu.value(f(x1) - f(x2))


def sample_preference(f, mu, x1, x2, rng, t=0):
    x1 = as_vector(x1, "x1", f.d)
    x2 = as_vector(x2, "x2", f.d)
    p = float(preference_probability(f, mu, x1, x2))
    return PreferenceObservation(x1, x2, int(rng.random() < p), t)


def sample_binary(f, mu, x, rng, t=0):
    x = as_vector(x, "x", f.d)
    p = float(mu.value(f(x)))
    return BinaryObservation(x, int(rng.random() < p), t)


def best_arm(f, contexts):
    """Index and value of the best arm; ties go to the lowest index."""
    X = contexts.features if isinstance(contexts, RoundContexts) else as_matrix(contexts, min_samples=1)
    rewards = f(X)
    i = int(np.argmax(rewards))
    return i, float(rewards[i])
