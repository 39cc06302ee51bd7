"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

FEATURE_BOUND_TOL = 1e-12


def check_features(x) -> np.ndarray:
    """Coerce features to a finite float (n, d) array inside [0, 1]^d.

    d = 0 is allowed (season-length-only problems).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.ndim != 2:
        raise ValueError(f"features must be a 2-d array, got shape {x.shape}")
    if x.shape[1] > 0:
        x = check_array(x, dtype=float, ensure_all_finite=True, ensure_2d=True)
        if x.min(initial=0.0) < -FEATURE_BOUND_TOL or x.max(initial=0.0) > 1.0 + FEATURE_BOUND_TOL:
            raise ValueError("features must lie in the unit hypercube [0, 1]^d")
    return x


def check_seasons(y) -> np.ndarray:
    """Coerce season lengths to a finite nonnegative float (n,) array."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if not np.all(np.isfinite(y)):
        raise ValueError("season lengths must be finite")
    if np.any(y < 0.0):
        raise ValueError("season lengths must be nonnegative")
    return y


def check_labels(labels) -> np.ndarray:
    """Coerce labels to an (n,) int array with values in {0, 1}."""
    labels = np.asarray(labels).reshape(-1)
    as_int = labels.astype(int)
    if not np.array_equal(as_int, labels) or not np.all((as_int == 0) | (as_int == 1)):
        raise ValueError("labels must be 0 or 1")
    return as_int
