"""Arm-selection rules for dueling and binary-feedback bandits.

All selectors are pure functions of the current reward estimates ``h``, the
per-arm gradient features ``G`` (one row per arm) and the precision state.
Ties in every arg-max resolve to the lowest arm index.
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_matrix, as_vector
from .exceptions import ConfigurationError, InputError
from .uncertainty import sigma_pairs, sigma_singles, theoretical_nu


class PolicyKind(enum.Enum):
    NDB_UCB = "ndb-ucb"
    NDB_TS = "ndb-ts"
    NCBF_UCB = "ncbf-ucb"
    NCBF_TS = "ncbf-ts"
    LINDB_UCB = "lindb-ucb"
    LINDB_TS = "lindb-ts"
    LINCBF_UCB = "lincbf-ucb"
    LINCBF_TS = "lincbf-ts"
    RANDOM = "random"
    RANDOM_BINARY = "random-binary"

    @classmethod
    def parse(cls, token):
        if isinstance(token, cls):
            return token
        try:
            return cls(str(token).strip().lower())
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ConfigurationError(f"unknown policy {token!r}; choose from {valid}") from None

    @property
    def is_duel(self):
        return self in (self.NDB_UCB, self.NDB_TS, self.LINDB_UCB, self.LINDB_TS, self.RANDOM)

    @property
    def is_linear(self):
        return self.value.startswith("lin")

    @property
    def is_random(self):
        return self in (self.RANDOM, self.RANDOM_BINARY)

    @property
    def strategy(self):
        if self.is_random:
            return "random"
        return self.value.rsplit("-", 1)[1]


@dataclass(frozen=True)
class DuelChoice:
    """The two arms of a duel plus per-arm diagnostics.

    ``sigma[i]`` is the width of the pair ``(i, first)`` and ``sampled`` holds
    the Thompson draws (``None`` for UCB).
    """

    first: int
    second: int
    h: np.ndarray = field(default=None, repr=False)
    sigma: np.ndarray = field(default=None, repr=False)
    sampled: np.ndarray = field(default=None, repr=False)


def _resolve_nu(cfg, nu):
    return theoretical_nu(cfg) if nu is None else float(nu)


def _check_inputs(h_values, state, g_features, min_arms):
    h = as_vector(h_values, "h_values")
    if h.shape[0] < min_arms:
        raise InputError(f"need at least {min_arms} arms, got {h.shape[0]}")
    G = as_matrix(g_features, "g_features", state.p)
    if G.shape[0] != h.shape[0]:
        raise InputError(f"{G.shape[0]} feature rows for {h.shape[0]} arms")
    return h, G


def _duel_widths(h_values, state, g_features, cfg):
    h, G = _check_inputs(h_values, state, g_features, 2)
    first = int(np.argmax(h))
    sigma = sigma_pairs(state, G, G[first], cfg.lambda_, cfg.kappa_mu)
    return h, first, sigma


def select_duel_ucb(h_values, state, g_features, cfg, nu=None):
    """Greedy first arm, optimistic second arm ``argmax h + nu * sigma(x, first)``."""
    h, first, sigma = _duel_widths(h_values, state, g_features, cfg)
    nu = _resolve_nu(cfg, nu)
    second = int(np.argmax(h + nu * sigma))
    return DuelChoice(first, second, h, sigma)


def select_duel_ts(h_values, state, g_features, cfg, rng, nu=None):
    """Greedy first arm; second arm maximises ``r ~ N(h - h[first], nu^2 sigma^2)``."""
    h, first, sigma = _duel_widths(h_values, state, g_features, cfg)
    nu = _resolve_nu(cfg, nu)
    r = rng.normal(h - h[first], nu * sigma)
    return DuelChoice(first, int(np.argmax(r)), h, sigma, r)


def select_arm_ucb(h_values, state, g_features, cfg, nu=None):
    h, G = _check_inputs(h_values, state, g_features, 1)
    sigma = sigma_singles(state, G, cfg.lambda_, cfg.kappa_mu)
    return int(np.argmax(h + _resolve_nu(cfg, nu) * sigma))


def select_arm_ts(h_values, state, g_features, cfg, rng, nu=None):
    h, G = _check_inputs(h_values, state, g_features, 1)
    sigma = sigma_singles(state, G, cfg.lambda_, cfg.kappa_mu)
    return int(np.argmax(rng.normal(h, _resolve_nu(cfg, nu) * sigma)))


def linear_scores(theta_hat, contexts):
    """Linear reward estimates ``x_i . theta_hat``."""
    X = getattr(contexts, "features", contexts)
    theta_hat = as_vector(theta_hat, "theta_hat")
    X = as_matrix(X, "contexts", theta_hat.shape[0])
    return X @ theta_hat


def select_random(K, rng, duel=True):
    """Uniform control: two distinct arms for a duel, one arm otherwise."""
    if duel:
        if K < 2:
            raise ConfigurationError(f"a duel needs K >= 2, got {K}")
        first, second = rng.choice(K, size=2, replace=False)
        return DuelChoice(int(first), int(second))
    if K < 1:
        raise ConfigurationError(f"need K >= 1, got {K}")
    return int(rng.integers(K))
