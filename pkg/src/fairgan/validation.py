"""Array validation for the estimator-facing API."""

from __future__ import annotations

import numpy as np

from .datasets import AttributedDataset
from .errors import DataError


def check_images(X, name: str = "X") -> np.ndarray:
    """Coerce to float32 (N, C, H, W); accepts (N, H, W) as single-channel."""
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[:, None, :, :]
    if X.ndim != 4:
        raise DataError(f"{name} must be (N, C, H, W) or (N, H, W), got shape {X.shape}")
    X = X.astype(np.float32, copy=False)
    if not np.all(np.isfinite(X)):
        raise DataError(f"{name} contains non-finite values")
    if X.size and (X.min() < -1.0 or X.max() > 1.0):
        raise DataError(f"{name} values must lie in [-1, 1]")
    return X


def check_binary_vector(v, n: int, name: str) -> np.ndarray:
    v = np.asarray(v)
    if v.shape != (n,):
        raise DataError(f"{name} must have shape ({n},), got {v.shape}")
    v = v.astype(np.int64)
    if v.size and not np.isin(v, (0, 1)).all():
        raise DataError(f"{name} must be binary (0/1)")
    return v


def as_dataset(X, c, y=None) -> AttributedDataset:
    X = check_images(X)
    n = X.shape[0]
    c = check_binary_vector(c, n, "c")
    if y is not None:
        y = check_binary_vector(y, n, "y")
    return AttributedDataset.from_arrays(X, c, y)
