"""Small input-validation helpers shared across modules."""

import numpy as np

from .exceptions import DimensionMismatch, NonFinite


def as_vector(y, dim=None, name="y"):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise DimensionMismatch(f"{name} must be 1-D, got shape {y.shape}")
    if dim is not None and y.shape[0] != dim:
        raise DimensionMismatch(f"{name} has length {y.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(y)):
        raise NonFinite(f"{name} contains NaN or Inf")
    return y


def as_matrix(X, dim=None, name="X"):
    """Return ``X`` as a finite float64 array of shape (m, dim)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {X.shape}")
    if dim is not None and X.shape[1] != dim:
        raise DimensionMismatch(f"{name} has {X.shape[1]} columns, expected {dim}")
    if not np.all(np.isfinite(X)):
        raise NonFinite(f"{name} contains NaN or Inf")
    return X


def check_finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFinite(f"non-finite values in {name}")
