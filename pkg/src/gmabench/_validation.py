"""Input validation helpers shared by the estimator surfaces."""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch


def check_feature_tensor(X, frames: int | None = None, channels: int | None = None) -> np.ndarray:
    """Validate an (n_samples, frames, channels) float tensor."""
    X = np.asarray(X)
    if X.ndim != 3:
        raise ShapeMismatch(f"expected a 3-d feature tensor, got shape {X.shape}")
    if frames is not None and X.shape[1] != frames:
        raise ShapeMismatch(f"expected {frames} frames, got {X.shape[1]}")
    if channels is not None and X.shape[2] != channels:
        raise ShapeMismatch(f"expected {channels} channels, got {X.shape[2]}")
    X = X.astype(np.float32, copy=False)
    if not np.all(np.isfinite(X)):
        raise ValueError("feature tensor contains non-finite values")
    return X


def check_binary_labels(y, n: int | None = None) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ShapeMismatch(f"labels must be 1-d, got shape {y.shape}")
    if n is not None and y.shape[0] != n:
        raise ShapeMismatch(f"expected {n} labels, got {y.shape[0]}")
    values = set(np.unique(y).tolist())
    if not values <= {0, 1}:
        raise ValueError(f"labels must be 0/1, got {sorted(values)}")
    return y.astype(np.int64)
