"""Loss terms and the two phase composites.

Every function accepts plain arrays or graph nodes. Per-channel ``scale``
arguments divide residuals before squaring so that channels with very
different magnitudes contribute comparably; they default to 1.
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .exceptions import ConfigurationError, UsageError
from .surrogate import rk4_step, surrogate_field

TERMS = ("data", "ic", "phys", "hint", "tv", "roll")


@dataclass
class CollocationBatch:
    """Solution-network outputs and coefficients at a set of collocation points."""

    y: object
    v: object
    dy_dt: object
    dv_dt: object
    u: object
    k: object
    d: object
    g: object

    def __post_init__(self):
        sizes = {np.size(ad.value_of(getattr(self, f))) for f in
                 ("y", "v", "dy_dt", "dv_dt", "k", "d", "g")}
        if len(sizes) != 1:
            raise UsageError(f"collocation batch fields have mismatched lengths {sizes}")


@dataclass
class LossReport:
    phase: int = 1
    data: float = 0.0
    ic: float = 0.0
    phys: float = 0.0
    hint: float = 0.0
    tv: float = 0.0
    roll: float = 0.0
    total: float = 0.0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def mean(cls, reports):
        out = cls(phase=reports[0].phase)
        for name in TERMS + ("total",):
            setattr(out, name, float(np.mean([getattr(r, name) for r in reports])))
        return out


def dynamic_residual(batch):
    return batch.dv_dt + batch.k * batch.y + batch.d * batch.v - batch.g * batch.u


def physics_loss(batch, kinematic=True, scale=1.0):
    """Mean squared surrogate residual over the collocation points.

    With ``kinematic=True`` the mean squared mismatch ``dy/dt - v`` is added,
    which the two-output solution network does not satisfy by construction.
    """
    r = dynamic_residual(batch) * (1.0 / scale)
    loss = ad.mean(r * r)
    if kinematic:
        q = (batch.dy_dt - batch.v) * (1.0 / scale)
        loss = loss + ad.mean(q * q)
    return loss


def data_loss(pred, meas, mask=None, scales=(1.0, 1.0)):
    """Mean squared error over the measured entries.

    ``pred`` and ``meas`` are sequences of channels (``(y, v)``), each of shape
    ``(N,)``. ``mask`` is a boolean ``(N, n_channels)`` array; NaN measurements
    are masked out automatically.
    """
    meas = [np.asarray(m, dtype=float) for m in meas]
    n = meas[0].size
    if n == 0:
        raise UsageError("data loss needs at least one measurement")
    if mask is None:
        mask = np.ones((n, len(meas)), dtype=bool)
    mask = np.asarray(mask, dtype=bool) & ~np.isnan(np.column_stack(meas))
    count = int(mask.sum())
    if count == 0:
        raise UsageError("every measured entry is masked")
    total = 0.0
    for c, (p, m) in enumerate(zip(pred, meas)):
        if not mask[:, c].any():
            continue
        diff = (p - np.where(mask[:, c], m, 0.0)) * (mask[:, c] / scales[c])
        total = total + ad.sum_(diff * diff)
    return total * (1.0 / count)


def ic_loss(x0_hat, x0, scales=(1.0, 1.0)):
    """Squared Euclidean distance between predicted and known initial states.

    Accepts single states or stacks ``(J, 2)`` (mean over trajectories).
    NaN target components (latent velocity) are ignored.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    J = x0.shape[0]
    total = 0.0
    for c in range(x0.shape[1]):
        ok = ~np.isnan(x0[:, c])
        if not ok.any():
            continue
        pred = x0_hat[c]
        if np.ndim(ad.value_of(pred)) == 0:
            pred = ad.reshape(pred, (1,)) if isinstance(pred, (ad.Node, ad.Dual)) else np.atleast_1d(pred)
        diff = (pred - np.where(ok, x0[:, c], 0.0)) * (ok / scales[c])
        total = total + ad.sum_(diff * diff)
    return total * (1.0 / J)


def hint_loss(theta_hat, theta_star, weights):
    """``(1/N) sum_t w_t ||theta_hat(t) - theta*(t)||^2`` with ``theta`` of shape ``(N, 3)``."""
    theta_star = np.asarray(theta_star, dtype=float)
    w = np.asarray(weights, dtype=float).reshape(-1, 1)
    n = theta_star.shape[0]
    diff = theta_hat - theta_star
    return ad.sum_(w * diff * diff) * (1.0 / n)


def tv_loss(theta_hat, segments=None):
    """Total variation of the coefficient sequence along time.

    ``segments`` lists ``(start, stop)`` ranges of time-ordered points (one per
    trajectory); differences never cross segment boundaries. The l1 norm of
    consecutive differences is summed and divided by the number of points.
    """
    n = np.shape(ad.value_of(theta_hat))[0]
    if segments is None:
        segments = [(0, n)]
    lo = np.concatenate([np.arange(a, b - 1) for a, b in segments])
    if lo.size == 0:
        return 0.0 * ad.sum_(theta_hat)
    hi = lo + 1
    diff = ad.getitem(theta_hat, hi) - ad.getitem(theta_hat, lo)
    return ad.sum_(ad.absolute(diff)) * (1.0 / n)


def rollout_loss(y, v, u, t, coeff_fn, horizon, anchors, scales=(1.0, 1.0)):
    """Short-horizon RK4 rollout mismatch against reconstructed states.

    ``y``, ``v``, ``u``, ``t`` are ``(J, N)`` arrays on uniform per-trajectory
    grids; ``anchors`` are ``(j, i)`` index pairs. From each anchor the
    surrogate with coefficients ``coeff_fn(y, v, u)`` is advanced ``horizon``
    grid steps and compared to the reconstruction at every step. Anchors
    whose window runs past the end of the trajectory are skipped.
    """
    if horizon < 1:
        raise UsageError("rollout horizon must be >= 1")
    y, v, u, t = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (y, v, u, t))
    anchors = np.asarray(anchors, dtype=int).reshape(-1, 2)
    keep = anchors[:, 1] + horizon < y.shape[1]
    anchors = anchors[keep]
    if anchors.size == 0:
        raise UsageError("every rollout anchor runs past the end of its trajectory")
    js, i0 = anchors[:, 0], anchors[:, 1]
    dt = t[js, 1] - t[js, 0]
    if np.any(np.abs(np.diff(t, axis=1) - dt.mean()) > 1e-9 * max(1.0, float(np.max(np.abs(t))))):
        raise UsageError("rollout loss needs uniform collocation grids")
    h = float(dt[0])

    def u_of_t(s):
        pos = i0 + s / h
        lo = np.clip(np.floor(pos + 1e-9).astype(int), 0, u.shape[1] - 2)
        frac = pos - lo
        return (1 - frac) * u[js, lo] + frac * u[js, lo + 1]

    rhs = surrogate_field(coeff_fn)
    x = (y[js, i0], v[js, i0])
    total = 0.0
    for step in range(1, horizon + 1):
        x = rk4_step(rhs, x, u_of_t, (step - 1) * h, h, step=step)
        ey = (x[0] - y[js, i0 + step]) * (1.0 / scales[0])
        ev = (x[1] - v[js, i0 + step]) * (1.0 / scales[1])
        total = total + ad.mean(ey * ey + ev * ev)
    return total * (1.0 / horizon)


def _check_weights(**weights):
    for name, w in weights.items():
        if w < 0:
            raise ConfigurationError(f"loss weight {name} must be non-negative, got {w}")


def phase1_total(parts, lambda_d, lambda_ic, lambda_p):
    """``lambda_d * data + lambda_ic * ic + lambda_p * phys``."""
    _check_weights(lambda_d=lambda_d, lambda_ic=lambda_ic, lambda_p=lambda_p)
    return lambda_d * parts["data"] + lambda_ic * parts["ic"] + lambda_p * parts["phys"]


def phase2_total(parts, lambda_p, lambda_h, lambda_reg, lambda_roll=0.0):
    """``lambda_p * phys + lambda_h * hint + lambda_reg * (roll + tv)`` (+ optional separate rollout weight)."""
    _check_weights(lambda_p=lambda_p, lambda_h=lambda_h, lambda_reg=lambda_reg,
                   lambda_roll=lambda_roll)
    total = (lambda_p * parts["phys"] + lambda_h * parts["hint"]
             + lambda_reg * (parts["roll"] + parts["tv"]))
    if lambda_roll:
        total = total + lambda_roll * parts["roll"]
    return total
