"""Local physics hints from sliding-window ridge regression.

Within a window of reconstructed states the surrogate is treated as linear in
its coefficients, ``dv/dt ~ [-y, -v, u] . (k, d, g)``, and solved in closed
form. Each collocation point receives the estimate of the window centred on
it (shifted inward near the ends) and a reliability weight equal to the
inverse condition number of the window's Gram matrix.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import RankDeficiencyError, UsageError

MIN_WINDOW = 5
DEFAULT_CAP = 129


@dataclass
class RegressionWindow:
    center: float
    length: int
    phi: np.ndarray     # (w, 3): columns -y, -v, u
    target: np.ndarray  # (w,): dv/dt


@dataclass
class RidgeHint:
    theta: np.ndarray
    weight: float
    lam: float
    window: int


@dataclass
class RidgeHints:
    """Hints for a whole batch, stored as arrays."""

    theta: np.ndarray    # (N, 3)
    weights: np.ndarray  # (N,)
    lam: np.ndarray      # (N,)
    window: int

    def __len__(self):
        return self.weights.size

    def __iter__(self):
        for i in range(len(self)):
            yield RidgeHint(self.theta[i], float(self.weights[i]), float(self.lam[i]), self.window)


def sample_window_length(rng, n_colloc, cap=DEFAULT_CAP):
    """Uniform draw over odd window lengths in ``[5, min(n_colloc, cap)]``; ``cap=None`` is uncapped."""
    if n_colloc < MIN_WINDOW:
        raise UsageError(f"need at least {MIN_WINDOW} collocation points, got {n_colloc}")
    top = n_colloc if cap is None else min(n_colloc, cap)
    top -= (top + 1) % 2  # largest odd value <= top
    if top < MIN_WINDOW:
        return MIN_WINDOW
    n_choices = (top - MIN_WINDOW) // 2 + 1
    return MIN_WINDOW + 2 * int(rng.integers(n_choices))


def window_starts(n_points, w):
    """Start index of the length-``w`` window for every point (centred, clamped inward)."""
    if n_points < w:
        raise UsageError(f"trajectory has {n_points} points, fewer than the window length {w}")
    half = (w - 1) // 2
    return np.clip(np.arange(n_points) - half, 0, n_points - w)


def design(y, v, u):
    return np.column_stack([-np.asarray(y, float), -np.asarray(v, float), np.asarray(u, float)])


def build_windows(t, y, v, u, dv_dt, w):
    """One regression window per collocation point of a single trajectory."""
    phi = design(y, v, u)
    target = np.asarray(dv_dt, dtype=float)
    starts = window_starts(len(target), w)
    return [RegressionWindow(float(t[i]), w, phi[s:s + w], target[s:s + w])
            for i, s in enumerate(starts)]


def ridge_solve(phi, target, lam):
    """``(Phi^T Phi + lam I)^{-1} Phi^T Y`` by a direct 3x3 solve."""
    phi = np.asarray(phi, dtype=float)
    gram = phi.T @ phi
    rhs = phi.T @ np.asarray(target, dtype=float)
    if lam < 0:
        raise UsageError("ridge parameter must be non-negative")
    a = gram + lam * np.eye(gram.shape[0])
    if lam == 0 and np.linalg.matrix_rank(a) < a.shape[0]:
        raise RankDeficiencyError("normal equations are singular and no ridge term was given")
    return np.linalg.solve(a, rhs)


def reliability_weight(gram):
    """Inverse condition number of a PSD Gram matrix (batched over leading axes)."""
    eig = np.linalg.eigvalsh(np.asarray(gram, dtype=float))
    top = eig[..., -1]
    low = np.clip(eig[..., 0], 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(top > 0, low / np.where(top > 0, top, 1.0), 0.0)
    return np.clip(w, 0.0, 1.0) if np.ndim(w) else float(np.clip(w, 0.0, 1.0))


def adaptive_ridge(phi, lam0):
    """``lam0 * trace(Phi^T Phi) / (3 w)``: the ridge scaled by mean feature energy."""
    phi = np.asarray(phi, dtype=float)
    return lam0 * float(np.sum(phi * phi)) / (phi.shape[1] * phi.shape[0])


def _trajectory_hints(y, v, u, dv_dt, w, lam0, adaptive):
    phi = design(y, v, u)
    target = np.asarray(dv_dt, dtype=float)
    n = target.size
    starts = window_starts(n, w)
    # per-window Gram matrices and right-hand sides over all distinct windows
    pw = sliding_window_view(phi, w, axis=0)          # (n-w+1, 3, w)
    tw = sliding_window_view(target, w)               # (n-w+1, w)
    gram = np.einsum("nai,nbi->nab", pw, pw)
    rhs = np.einsum("nai,ni->na", pw, tw)
    if adaptive:
        lam = lam0 * np.trace(gram, axis1=1, axis2=2) / (3.0 * w)
    else:
        lam = np.full(gram.shape[0], float(lam0))
    a = gram + lam[:, None, None] * np.eye(3)
    weight = reliability_weight(gram)
    theta = np.zeros((gram.shape[0], 3))
    ok = np.linalg.cond(a) < 1e14
    if ok.any():
        theta[ok] = np.linalg.solve(a[ok], rhs[ok][..., None])[..., 0]
    weight = np.where(ok, weight, 0.0)
    return theta[starts], weight[starts], lam[starts]


def compute_hints(y, v, u, dv_dt, rng, lam0=1e-3, segments=None, cap=DEFAULT_CAP,
                  adaptive=True, window=None):
    """Ridge hints for every point of a batch of time-ordered trajectories.

    ``segments`` lists ``(start, stop)`` index ranges, one per trajectory. A
    single window length is drawn from ``rng`` for the whole call unless
    ``window`` is given. The inputs are treated as constants.
    """
    y, v, u, dv_dt = (np.asarray(a, dtype=float).ravel() for a in (y, v, u, dv_dt))
    n = y.size
    if segments is None:
        segments = [(0, n)]
    shortest = min(b - a for a, b in segments)
    w = window if window is not None else sample_window_length(rng, shortest, cap)
    theta = np.zeros((n, 3))
    weights = np.zeros(n)
    lam = np.zeros(n)
    for a, b in segments:
        sl = slice(a, b)
        theta[sl], weights[sl], lam[sl] = _trajectory_hints(y[sl], v[sl], u[sl], dv_dt[sl], w,
                                                            lam0, adaptive)
    return RidgeHints(theta, weights, lam, w)
