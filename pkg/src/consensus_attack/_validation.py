"""Input validation helpers, in the spirit of ``sklearn.utils.validation``."""

from __future__ import annotations

import numbers

import numpy as np

from .exceptions import InvalidConfigError, InvalidInputError, ShapeError


def check_finite_array(a, name="array", ndim=None, dtype=np.float64):
    """Convert ``a`` to a float ndarray and reject NaN/Inf entries.

    Parameters
    ----------
    a : array_like
    name : str
        Used in error messages.
    ndim : int, optional
        Required number of dimensions.
    """
    arr = np.asarray(a, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def check_matrix(a, name="matrix"):
    arr = check_finite_array(a, name)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    return arr


def check_image(x, name="image"):
    """Validate a C x H x W tensor with entries in [0, 1]."""
    arr = check_finite_array(x, name, ndim=3)
    if min(arr.shape) < 1:
        raise ShapeError(f"{name} has an empty axis: {arr.shape}")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise InvalidInputError(f"{name} entries must lie in [0, 1]")
    return arr


def check_positive(value, name, allow_zero=False):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise InvalidConfigError(f"{name} must be a finite real, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise InvalidConfigError(f"{name} must be {bound}, got {value!r}")
    return float(value)


def check_int(value, name, minimum=None, maximum=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise InvalidConfigError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise InvalidConfigError(f"{name} must be >= {minimum}, got {value}")
    if maximum is not None and value > maximum:
        raise InvalidConfigError(f"{name} must be <= {maximum}, got {value}")
    return value


def check_random_state(seed):
    """Return a ``numpy.random.Generator`` for ``seed``.

    Accepts None, an int, a ``SeedSequence`` or an existing Generator (returned
    unchanged, so callers can thread one stream through several helpers).
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise InvalidConfigError(f"cannot build a random generator from {seed!r}")
