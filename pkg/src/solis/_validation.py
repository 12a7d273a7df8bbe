"""Input checks shared by the estimators."""

import numpy as np

from .datasets import Dataset
from .exceptions import UsageError


def check_dataset(dataset):
    if not isinstance(dataset, Dataset):
        raise UsageError(f"expected a Dataset, got {type(dataset).__name__}")
    if len(dataset) == 0:
        raise UsageError("dataset has no trajectories")
    return dataset


def check_states(y, v, u):
    """Broadcast ``y``, ``v``, ``u`` to a common 1-d float shape and reject non-finite values."""
    y, v, u = (np.asarray(a, dtype=float) for a in (y, v, u))
    try:
        y, v, u = np.broadcast_arrays(np.atleast_1d(y), np.atleast_1d(v), np.atleast_1d(u))
    except ValueError as exc:
        raise UsageError(f"states and inputs do not broadcast: {exc}") from None
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(v)) and np.all(np.isfinite(u))):
        raise UsageError("states and inputs must be finite")
    return y.ravel().copy(), v.ravel().copy(), u.ravel().copy()
