"""Input validation helpers built on top of :mod:`sklearn.utils`."""

import numbers

import numpy as np
from sklearn.utils import check_array

from .exceptions import ConfigurationError, InputError


def as_vector(x, name="x", dim=None):
    """Return ``x`` as a finite 1-d float64 array, optionally of length ``dim``."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise InputError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise InputError(f"{name} has dimension {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    return arr


def as_matrix(X, name="X", n_features=None, min_samples=0):
    """Return ``X`` as a finite 2-d float64 array with ``n_features`` columns."""
    try:
        arr = check_array(
            X,
            dtype=np.float64,
            ensure_2d=True,
            ensure_min_samples=min_samples,
            input_name=name,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    if n_features is not None and arr.shape[1] != n_features:
        raise InputError(
            f"{name} has {arr.shape[1]} features, expected {n_features}"
        )
    return arr


def as_pairs(X, name="X", n_features=None):
    """Validate a stack of arm pairs of shape ``(n, 2, d)``."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[1] != 2:
        raise InputError(f"{name} must have shape (n, 2, d), got {arr.shape}")
    if n_features is not None and arr.shape[2] != n_features:
        raise InputError(f"{name} has {arr.shape[2]} features, expected {n_features}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    return arr


def as_labels(y, n, name="y"):
    arr = np.asarray(y)
    if arr.shape != (n,):
        raise InputError(f"{name} must have shape ({n},), got {arr.shape}")
    if not np.all((arr == 0) | (arr == 1)):
        raise InputError(f"{name} must contain only 0/1 labels")
    return arr.astype(np.float64)


def check_finite_scalar(z, name="z"):
    if not isinstance(z, (numbers.Real, np.floating, np.integer)):
        raise InputError(f"{name} must be a real scalar, got {type(z).__name__}")
    z = float(z)
    if not np.isfinite(z):
        raise InputError(f"{name} must be finite, got {z}")
    return z


def check_positive(value, name, integer=False, allow_zero=False):
    if integer:
        if not isinstance(value, (numbers.Integral, np.integer)) or isinstance(value, bool):
            raise ConfigurationError(f"{name} must be an integer, got {value!r}")
    elif not isinstance(value, (numbers.Real, np.floating)):
        raise ConfigurationError(f"{name} must be a real number, got {value!r}")
    ok = value >= 0 if allow_zero else value > 0
    if not ok or not np.isfinite(value):
        bound = "non-negative" if allow_zero else "positive"
        raise ConfigurationError(f"{name} must be {bound}, got {value!r}")
    return value


def check_choice(value, name, choices):
    if value not in choices:
        raise ConfigurationError(
            f"{name} must be one of {sorted(choices)}, got {value!r}"
        )
    return value
