"""Self-checks run by ``neural-dueling check``.

Each check returns a :class:`CheckResult` with the measured value and the
threshold it is compared against.
"""

from dataclasses import dataclass

import numpy as np

from .environment import duplicate_normalize
from .network import NetworkParams, NetworkShape, forward, init_symmetric, param_gradient
from .uncertainty import PrecisionState


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool
    note: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        text = f"{status}  {self.name}: {self.value:.3e} (threshold {self.threshold:g})"
        return f"{text}  [{self.note}]" if self.note else text


def central_difference(params, x, step=1e-5):
    """Central finite-difference gradient of ``h(x)`` over the flat parameters."""
    theta = params.flatten()
    out = np.empty_like(theta)
    for k in range(theta.size):
        orig = theta[k]
        theta[k] = orig + step
        up = forward(NetworkParams.unflatten(params.shape, theta), x)
        theta[k] = orig - step
        down = forward(NetworkParams.unflatten(params.shape, theta), x)
        theta[k] = orig
        out[k] = (up - down) / (2.0 * step)
    return out


def relative_error(a, b, floor=1e-8):
    """Entrywise ``|a - b| / max(|a|, |b|, floor)``."""
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gradient_check(rng, d=5, width=50, depths=(2, 3), n_pairs=20, step=1e-5, tol=1e-4):
    """Largest relative error of the analytic gradient against finite differences.

    Weights are drawn i.i.d. Gaussian (not the symmetric initialisation) so
    that the output and its gradient are generic.
    """
    worst = 0.0
    for k in range(n_pairs):
        shape = NetworkShape(depths[k % len(depths)], width, d)
        weights = tuple(rng.normal(0.0, np.sqrt(2.0 / shp[1]), size=shp) for shp in shape.layer_shapes)
        params = NetworkParams(shape, weights)
        x = rng.uniform(-1.0, 1.0, size=d)
        g = param_gradient(params, x)
        fd = central_difference(params, x, step)
        err = np.max(relative_error(g, fd))
        worst = max(worst, float(err))
    return CheckResult("gradient vs finite differences", worst, tol, worst < tol)


def sherman_morrison_check(rng, p=300, n_updates=100, tol=1e-8):
    """Incremental inverse against dense inversion and against a rebuild."""
    state = PrecisionState(p, 1.0, check_every=0)
    for _ in range(n_updates):
        state.update(rng.normal(size=p) / np.sqrt(p))
    direct = np.linalg.inv(state.V)
    rebuilt = state.copy().rebuild()
    err = max(
        float(np.max(np.abs(state.V_inv - direct))),
        float(np.max(np.abs(state.V_inv - rebuilt.V_inv))),
    )
    return CheckResult("Sherman-Morrison inverse", err, tol, err < tol)


def init_null_check(rng, d=5, width=50, depth=3, n_inputs=100, tol=1e-10):
    """Largest ``|h(x; theta_0)|`` over duplicated unit-norm inputs."""
    shape = NetworkShape(depth, width, 2 * d)
    params = init_symmetric(rng, shape)
    X = duplicate_normalize(rng.normal(size=(n_inputs, d)))
    worst = max(abs(forward(params, x)) for x in X)
    return CheckResult("symmetric init output", worst, tol, worst < tol)
