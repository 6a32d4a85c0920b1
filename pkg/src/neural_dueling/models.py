"""Scikit-learn style reward estimators trained from preference or binary feedback.

``fit(X, y)`` takes arm pairs ``X`` of shape ``(n, 2, d)`` with
``y[i] = 1`` when ``X[i, 0]`` beat ``X[i, 1]`` (``loss="dueling"``), or single
arms of shape ``(n, d)`` with 0/1 outcomes (``loss="binary"``).  ``predict``
returns the latent reward estimate and ``transform`` maps arms to their
gradient features, the embedding used by the confidence sets.

Examples
--------
>>> import numpy as np
>>> rng = np.random.default_rng(0)
>>> X = rng.uniform(-1, 1, size=(40, 2, 4))
>>> y = (X[:, 0, 0] > X[:, 1, 0]).astype(int)
>>> model = NeuralRewardModel(width=8, grad_steps=5, random_state=0).fit(X, y)
>>> model.transform(X[:3, 0]).shape
(3, 104)
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import as_matrix, check_choice
from .environment import log_sigmoid
from .exceptions import ConfigurationError
from .network import (
    NetworkShape,
    TrainingConfig,
    binary_arrays,
    forward_batch,
    init_symmetric,
    param_gradients,
    preference_arrays,
    train,
)


class NeuralRewardModel(BaseEstimator):
    """ReLU network reward estimate fitted by full-batch gradient descent.

    Parameters
    ----------
    width : int, default=50
        Hidden-layer width ``m`` (even).
    depth : int, default=3
        Number of weight matrices ``L``; 3 means two hidden layers.
    reg_lambda : float, default=1.0
        Regularisation strength ``lambda``.
    learning_rate : float, default=1e-3
    grad_steps : int, default=50
        Gradient steps per call to :meth:`fit`.
    regularizer : {"practical", "theoretical"}, default="practical"
        ``lambda ||theta||^2`` or ``(lambda/2) ||theta - theta_0||^2`` with the
        log-loss scaled by ``1/m``.
    loss : {"dueling", "binary"}, default="dueling"
    tol : float, default=0.0
        Stop early once the gradient norm drops below ``tol``.
    warm_start : bool, default=True
        Continue from the current parameters instead of ``theta_0``.
    random_state : int, Generator or None
        Seeds the symmetric initialisation.

    Attributes
    ----------
    theta0_ : NetworkParams
    params_ : NetworkParams
    loss_, grad_norm_ : float
        Loss and gradient norm at the returned parameters.
    n_iter_ : int
    """

    def __init__(
        self,
        width=50,
        depth=3,
        reg_lambda=1.0,
        learning_rate=1e-3,
        grad_steps=50,
        regularizer="practical",
        loss="dueling",
        tol=0.0,
        warm_start=True,
        random_state=None,
    ):
        self.width = width
        self.depth = depth
        self.reg_lambda = reg_lambda
        self.learning_rate = learning_rate
        self.grad_steps = grad_steps
        self.regularizer = regularizer
        self.loss = loss
        self.tol = tol
        self.warm_start = warm_start
        self.random_state = random_state

    def _make_shape(self, n_features):
        if self.depth < 2:
            raise ConfigurationError(f"network depth must be at least 2, got {self.depth}")
        return NetworkShape(self.depth, self.width, n_features)

    def _training_config(self):
        return TrainingConfig(
            lambda_=self.reg_lambda,
            learning_rate=self.learning_rate,
            grad_steps=self.grad_steps,
            regularizer_mode=self.regularizer,
            loss_kind=self.loss,
            tol=self.tol,
        )

    def initialize(self, n_features):
        """Draw ``theta_0`` for ``n_features`` inputs without training."""
        check_choice(self.loss, "loss", ("dueling", "binary"))
        rng = self.random_state
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.theta0_ = init_symmetric(rng, self._make_shape(n_features))
        self.params_ = self.theta0_
        self.n_features_in_ = n_features
        self.loss_ = np.nan
        self.grad_norm_ = np.nan
        self.n_iter_ = 0
        return self

    def _arrays(self, X, y):
        d = getattr(self, "n_features_in_", np.shape(X)[-1])
        if self.loss == "dueling":
            return preference_arrays((X, y), d)
        return binary_arrays((X, y), d)

    def _train(self, X, y):
        X, y = self._arrays(X, y)
        result = train(self.params_, self.theta0_, (X, y), self._training_config())
        self.params_ = result.params
        self.loss_ = result.loss
        self.grad_norm_ = result.grad_norm
        self.n_iter_ = result.n_steps
        return self

    def fit(self, X, y):
        if not self.warm_start or not hasattr(self, "params_"):
            self.initialize(np.shape(X)[-1])
        return self._train(X, y)

    def partial_fit(self, X, y):
        """Continue training from the current parameters."""
        if not hasattr(self, "params_"):
            self.initialize(np.shape(X)[-1])
        return self._train(X, y)

    def predict(self, X):
        """Estimated latent reward ``h(x)`` of each row of ``X``."""
        check_is_fitted(self, "params_")
        return forward_batch(self.params_, as_matrix(X, n_features=self.n_features_in_))

    def transform(self, X, anchor="current"):
        """Gradient features ``g(x; theta)`` at the current or initial parameters."""
        check_is_fitted(self, "params_")
        check_choice(anchor, "anchor", ("current", "initial"))
        params = self.params_ if anchor == "current" else self.theta0_
        return param_gradients(params, as_matrix(X, n_features=self.n_features_in_))

    def predict_proba(self, X):
        """Probability that the first arm of each pair (or the single arm) wins."""
        check_is_fitted(self, "params_")
        if self.loss == "dueling":
            X, _ = preference_arrays((X, np.zeros(len(X))), self.n_features_in_)
            h = self.predict(X.reshape(-1, self.n_features_in_))
            z = h[0::2] - h[1::2]
        else:
            z = self.predict(X)
        return np.exp(log_sigmoid(z))

    def score(self, X, y):
        """Mean log-likelihood of the observed outcomes (higher is better)."""
        check_is_fitted(self, "params_")
        X, y = self._arrays(X, y)
        if self.loss == "dueling":
            h = self.predict(X.reshape(-1, self.n_features_in_))
            z = h[0::2] - h[1::2]
        else:
            z = self.predict(X)
        return float(np.mean(log_sigmoid(np.where(y == 1.0, z, -z))))

    @property
    def n_params_(self):
        check_is_fitted(self, "params_")
        return self.params_.n_params


class LinearRewardModel(NeuralRewardModel):
    """Linear reward ``x . theta`` trained with the same loss and optimiser.

    Its gradient features are the raw arm features, so ``transform`` returns
    ``X`` unchanged.
    """

    def __init__(
        self,
        reg_lambda=1.0,
        learning_rate=1e-3,
        grad_steps=50,
        regularizer="practical",
        loss="dueling",
        tol=0.0,
        warm_start=True,
        random_state=None,
    ):
        super().__init__(
            width=1,
            depth=1,
            reg_lambda=reg_lambda,
            learning_rate=learning_rate,
            grad_steps=grad_steps,
            regularizer=regularizer,
            loss=loss,
            tol=tol,
            warm_start=warm_start,
            random_state=random_state,
        )

    def _make_shape(self, n_features):
        return NetworkShape.linear(n_features)

    @property
    def coef_(self):
        check_is_fitted(self, "params_")
        return self.params_.weights[0][0]
