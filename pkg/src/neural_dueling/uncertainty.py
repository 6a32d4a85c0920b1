"""Confidence-set machinery: the precision matrix, uncertainty widths, nu.

The precision matrix is ``V = ridge * I + sum_s u_s u_s^T`` with
``ridge = lambda / kappa_mu`` and ``u_s`` the (scaled) gradient feature of
observation ``s``: a duel difference ``g(x_1) - g(x_2)`` or a single-arm
gradient.  Two interchangeable representations are provided:

* :class:`PrecisionState` keeps ``V`` and ``V^{-1}`` as dense ``p x p``
  matrices and applies Sherman-Morrison rank-1 updates.
* :class:`GramPrecision` works in the ``n``-dimensional dual space,
  ``u^T V^{-1} u = (u^T u - ||L^{-1} Phi u||^2) / ridge`` where ``L`` is the
  Cholesky factor of ``ridge * I + Phi Phi^T``.  It is much cheaper whenever
  fewer than ``p`` observations have been collected, which is the normal
  regime for a network with a few thousand parameters.

Both expose ``update``, ``quad_form``, ``log_det_ratio`` and ``rebuild``.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ._validation import as_matrix, as_vector, check_choice, check_positive
from .exceptions import ConfigurationError, InputError, NumericalDegeneracyError, NumericalError

# quadratic forms in [-NEG_TOL, 0) are rounding noise and clamp to zero
NEG_TOL = 1e-12
INVERSE_TOL = 1e-6
# dense representation is used up to this many parameters
DENSE_MAX_PARAMS = 512


def _ridge(lambda_, kappa_mu):
    check_positive(lambda_, "lambda")
    check_positive(kappa_mu, "kappa_mu")
    return lambda_ / kappa_mu


def _clamp_quad(q):
    if np.any(q < -NEG_TOL):
        raise NumericalDegeneracyError(f"negative quadratic form {q.min():.3e}")
    return np.maximum(q, 0.0)


class PrecisionState:
    """Dense ``V`` and its maintained inverse.

    Updates mutate the state in place (it has exactly one owner, the run
    loop); use :meth:`copy` to keep a snapshot.
    """

    def __init__(self, p, ridge, feature_scale=1.0, check_every=50):
        check_positive(p, "p", integer=True)
        check_positive(ridge, "ridge")
        self.p = int(p)
        self.ridge = float(ridge)
        self.feature_scale = float(feature_scale)
        self.check_every = check_every
        self.V = np.eye(self.p) * self.ridge
        self.V_inv = np.eye(self.p) / self.ridge
        self.count = 0
        self.log_det_gain = 0.0
        self._features = []

    @property
    def features(self):
        return np.array(self._features).reshape(-1, self.p)

    def copy(self):
        new = PrecisionState.__new__(PrecisionState)
        new.__dict__.update(self.__dict__)
        new.V = self.V.copy()
        new.V_inv = self.V_inv.copy()
        new._features = list(self._features)
        return new

    def quad_form(self, U):
        """``u^T V^{-1} u`` for every row ``u`` of ``U``."""
        U = np.atleast_2d(U)
        q = np.einsum("ij,jk,ik->i", U, self.V_inv, U)
        return _clamp_quad(q)

    def update(self, u):
        u = as_vector(u, "u", self.p)
        Vu = self.V_inv @ u
        denom = 1.0 + u @ Vu
        self.log_det_gain += float(np.log(denom))
        self.V += np.outer(u, u)
        self.V_inv -= np.outer(Vu, Vu) / denom
        self.count += 1
        self._features.append(u.copy())
        if self.check_every and self.count % self.check_every == 0:
            if self.inverse_error() >= INVERSE_TOL:
                self.rebuild()
        return self

    def inverse_error(self):
        return float(np.max(np.abs(self.V @ self.V_inv - np.eye(self.p))))

    def rebuild(self, features=None):
        """Reassemble ``V`` from stored (or given) features and invert densely."""
        if features is not None:
            self._features = [as_vector(u, "u", self.p).copy() for u in features]
        Phi = self.features
        self.V = self.ridge * np.eye(self.p) + Phi.T @ Phi
        try:
            self.V_inv = linalg.inv(self.V, check_finite=True)
        except (linalg.LinAlgError, ValueError) as exc:
            raise NumericalError(f"precision matrix inversion failed: {exc}") from exc
        if not np.all(np.isfinite(self.V_inv)):
            raise NumericalError("precision matrix inverse is not finite")
        self.count = Phi.shape[0]
        self.log_det_gain = self.log_det_ratio()
        return self

    def log_det_ratio(self):
        """``log det(V / ridge)``."""
        sign, logdet = np.linalg.slogdet(self.V)
        if sign <= 0:
            raise NumericalError("precision matrix is not positive definite")
        return float(logdet - self.p * np.log(self.ridge))


class GramPrecision:
    """Dual (kernel-space) representation of the same precision matrix."""

    def __init__(self, p, ridge, feature_scale=1.0, capacity=64):
        check_positive(p, "p", integer=True)
        check_positive(ridge, "ridge")
        self.p = int(p)
        self.ridge = float(ridge)
        self.feature_scale = float(feature_scale)
        self.count = 0
        self.log_det_gain = 0.0
        self._Phi = np.zeros((capacity, self.p))
        self._L = np.zeros((capacity, capacity))
        self._last_query = (-1, None, None)

    @property
    def features(self):
        return self._Phi[: self.count]

    def copy(self):
        new = GramPrecision.__new__(GramPrecision)
        new.__dict__.update(self.__dict__)
        new._Phi = self._Phi.copy()
        new._L = self._L.copy()
        return new

    def _grow(self, needed):
        cap = self._Phi.shape[0]
        if needed <= cap:
            return
        new_cap = max(needed, 2 * cap)
        Phi = np.zeros((new_cap, self.p))
        Phi[:cap] = self._Phi
        L = np.zeros((new_cap, new_cap))
        L[:cap, :cap] = self._L
        self._Phi, self._L = Phi, L

    def quad_form(self, U):
        U = np.atleast_2d(np.asarray(U, dtype=np.float64))
        q = np.einsum("ij,ij->i", U, U)
        n = self.count
        W = None
        if n:
            B = self._Phi[:n] @ U.T
            W = linalg.solve_triangular(self._L[:n, :n], B, lower=True, check_finite=False)
            q = q - np.einsum("ij,ij->j", W, W)
        # an update with +-(one of these rows) can reuse its column of W
        self._last_query = (n, U, W)
        return _clamp_quad(q / self.ridge)

    def _cached_solve(self, u):
        n, U, W = self._last_query
        if n != self.count or W is None:
            return None
        for sign in (1.0, -1.0):
            hits = np.flatnonzero(np.all(U == sign * u, axis=1))
            if hits.size:
                return sign * W[:, hits[0]]
        return None

    def update(self, u):
        u = as_vector(u, "u", self.p)
        n = self.count
        self._grow(n + 1)
        l = self._cached_solve(u) if n else np.zeros(0)
        if l is None:
            k = self._Phi[:n] @ u
            l = linalg.solve_triangular(self._L[:n, :n], k, lower=True, check_finite=False)
        pivot = self.ridge + u @ u - l @ l
        if not pivot > 0.0:
            raise NumericalDegeneracyError(f"non-positive Cholesky pivot {pivot:.3e}")
        # 1 + u^T V^{-1} u equals pivot / ridge
        self.log_det_gain += float(np.log(pivot / self.ridge))
        self._Phi[n] = u
        self._L[n, :n] = l
        self._L[n, n] = np.sqrt(pivot)
        self.count = n + 1
        return self

    def rebuild(self, features=None):
        self._last_query = (-1, None, None)
        if features is not None:
            Phi = as_matrix(features, "features", self.p) if len(features) else np.zeros((0, self.p))
            self.count = 0
            self._grow(Phi.shape[0])
            self._Phi[: Phi.shape[0]] = Phi
            self.count = Phi.shape[0]
        n = self.count
        if n:
            Phi = self._Phi[:n]
            G = Phi @ Phi.T
            G[np.diag_indices(n)] += self.ridge
            try:
                self._L[:n, :n] = linalg.cholesky(G, lower=True, check_finite=True)
            except (linalg.LinAlgError, ValueError) as exc:
                raise NumericalError(f"Gram matrix factorisation failed: {exc}") from exc
        self.log_det_gain = self.log_det_ratio()
        return self

    def log_det_ratio(self):
        n = self.count
        if not n:
            return 0.0
        diag = np.diag(self._L[:n, :n])
        return float(2.0 * np.sum(np.log(diag)) - n * np.log(self.ridge))

    def to_dense(self):
        """Materialise ``V`` and ``V^{-1}`` (for verification only)."""
        Phi = self.features
        V = self.ridge * np.eye(self.p) + Phi.T @ Phi
        return V, np.linalg.inv(V)


def precision_init(p, lambda_, kappa_mu, feature_scale=1.0, dense=None, capacity=64):
    """Fresh state ``V = (lambda / kappa_mu) I``.

    ``dense=None`` picks the dense representation for small ``p`` only.
    """
    ridge = _ridge(lambda_, kappa_mu)
    check_positive(p, "p", integer=True)
    if dense is None:
        dense = p <= DENSE_MAX_PARAMS
    if dense:
        return PrecisionState(p, ridge, feature_scale)
    return GramPrecision(p, ridge, feature_scale, capacity=capacity)


def precision_update(state, u):
    """Add the outer product of the already-scaled feature ``u``."""
    return state.update(u)


def precision_rebuild(features, lambda_, kappa_mu, feature_scale=1.0, dense=None, p=None):
    """Assemble a state from scratch out of a list of scaled features."""
    features = list(features)
    if p is None:
        if not features:
            raise InputError("p must be given when rebuilding from no features")
        p = len(features[0])
    state = precision_init(p, lambda_, kappa_mu, feature_scale, dense=dense, capacity=max(len(features), 1))
    return state.rebuild(np.array(features).reshape(-1, p))


def _sigma_from_quad(q, lambda_, kappa_mu):
    return np.sqrt(_ridge(lambda_, kappa_mu) * q)


def sigma_pairs(state, G, g_ref, lambda_, kappa_mu):
    """Widths ``sigma(x_i, x_ref)`` for every row ``g_i`` of ``G`` at once."""
    G = np.atleast_2d(G)
    U = (G - np.asarray(g_ref)[None, :]) * state.feature_scale
    return _sigma_from_quad(state.quad_form(U), lambda_, kappa_mu)


def sigma_pair(state, g1, g2, lambda_, kappa_mu):
    """Pairwise width ``sqrt((lambda/kappa) ||(g1 - g2) s||^2_{V^{-1}})``."""
    g1 = as_vector(g1, "g1", state.p)
    g2 = as_vector(g2, "g2", state.p)
    return float(sigma_pairs(state, g1[None, :], g2, lambda_, kappa_mu)[0])


def sigma_singles(state, G, lambda_, kappa_mu):
    G = np.atleast_2d(G)
    return _sigma_from_quad(state.quad_form(G * state.feature_scale), lambda_, kappa_mu)


def sigma_single(state, g, lambda_, kappa_mu):
    g = as_vector(g, "g", state.p)
    return float(sigma_singles(state, g[None, :], lambda_, kappa_mu)[0])


def pairwise_differences(G):
    """All ``g_i - g_j`` for ``i < j`` over the rows of ``G``."""
    i, j = np.triu_indices(G.shape[0], k=1)
    return G[i] - G[j]


def effective_dimension(feature_groups, lambda_, kappa_mu, mode="duel", feature_scale=1.0):
    """``log det(I + (kappa/lambda) sum_u u u^T)`` over all rounds' features.

    In ``duel`` mode every round contributes all pairwise differences of its
    arm features; in ``binary`` mode the arm features themselves.
    """
    check_choice(mode, "mode", ("duel", "binary"))
    ridge = _ridge(lambda_, kappa_mu)
    blocks = []
    for group in feature_groups:
        G = np.atleast_2d(np.asarray(group, dtype=np.float64))
        if G.size == 0:
            continue
        blocks.append(pairwise_differences(G) if mode == "duel" else G)
    if not blocks:
        return 0.0
    U = np.concatenate(blocks) * feature_scale
    if not np.all(np.isfinite(U)):
        raise InputError("features contain non-finite values")
    n, p = U.shape
    M = U @ U.T if n <= p else U.T @ U
    M /= ridge
    M[np.diag_indices(M.shape[0])] += 1.0
    sign, logdet = np.linalg.slogdet(M)
    if sign <= 0 or not np.isfinite(logdet):
        raise NumericalError("effective dimension log-determinant is not finite")
    return float(logdet)


@dataclass(frozen=True)
class ConfidenceConfig:
    """Exploration scale settings.

    ``fixed`` mode uses ``nu`` directly; ``theoretical`` mode derives it from
    the effective dimension, the norm bound ``B`` and the confidence ``delta``.
    """

    nu_mode: str = "fixed"
    nu: float = 1.0
    B: float = 1.0
    delta: float = 0.05
    lambda_: float = 1.0
    kappa_mu: float = 1.0

    def __post_init__(self):
        check_choice(self.nu_mode, "nu_mode", ("fixed", "theoretical"))
        check_positive(self.nu, "nu", allow_zero=True)
        check_positive(self.B, "B", allow_zero=True)
        check_positive(self.lambda_, "lambda_")
        check_positive(self.kappa_mu, "kappa_mu")
        if not 0.0 < self.delta < 1.0:
            raise ConfigurationError(f"delta must lie in (0, 1), got {self.delta}")


def theoretical_nu(cfg, d_tilde=0.0):
    """Exploration scale; in fixed mode ``d_tilde`` is ignored.

    ``beta = sqrt(d_tilde + 2 log(1/delta)) / kappa`` and
    ``nu = (beta + B sqrt(lambda/kappa) + 1) sqrt(kappa/lambda)``.
    """
    if cfg.nu_mode == "fixed":
        return cfg.nu
    if not 0.0 < cfg.delta < 1.0:
        raise ConfigurationError(f"delta must lie in (0, 1), got {cfg.delta}")
    if d_tilde < 0:
        raise InputError(f"effective dimension must be non-negative, got {d_tilde}")
    k, lam = cfg.kappa_mu, cfg.lambda_
    beta = np.sqrt(d_tilde + 2.0 * np.log(1.0 / cfg.delta)) / k
    return float((beta + cfg.B * np.sqrt(lam / k) + 1.0) * np.sqrt(k / lam))
