"""Quasi-LPV second-order surrogate: vector field, canonical form, RK4, rollout."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .exceptions import DomainError, IntegrationError, UsageError

DEFAULT_BLOWUP = 1e6


@dataclass(frozen=True)
class SurrogateCoefficients:
    k: float
    d: float
    g: float

    def as_tuple(self):
        return (self.k, self.d, self.g)


@dataclass(frozen=True)
class CanonicalParams:
    omega_n: float
    zeta: float
    gain: float


def surrogate_rhs(y, v, u, k, d, g):
    """``(dy/dt, dv/dt) = (v, -k y - d v + g u)``; works on arrays, nodes and duals."""
    return v, -k * y - d * v + g * u


def canonical_params(k, d, g, state=None):
    """Natural frequency, damping ratio and DC gain for scalar coefficients."""
    if not k > 0:
        raise DomainError(f"canonical form undefined for k={k} <= 0", state=state)
    wn = float(np.sqrt(k))
    return CanonicalParams(wn, d / (2.0 * wn), g / k)


def canonical_fields(k, d, g):
    """Vectorised canonical map; returns ``(omega_n, zeta, gain, valid)`` with NaN where k <= 0."""
    k, d, g = (np.asarray(a, dtype=float) for a in (k, d, g))
    valid = k > 0
    safe = np.where(valid, k, 1.0)
    wn = np.sqrt(safe)
    nan = np.full(k.shape, np.nan)
    return (np.where(valid, wn, nan), np.where(valid, d / (2 * wn), nan),
            np.where(valid, g / safe, nan), valid)


def coefficients_from_canonical(omega_n, zeta, gain):
    k = omega_n ** 2
    return k, 2.0 * zeta * omega_n, gain * k


def linear_input(t_samples, u_samples):
    """Piecewise-linear input signal through stored samples, held constant outside."""
    ts = np.asarray(t_samples, dtype=float)
    us = np.asarray(u_samples, dtype=float)

    def u_of_t(t):
        return np.interp(t, ts, us)

    return u_of_t


def _finite(x):
    return all(np.all(np.isfinite(ad.value_of(c))) for c in x)


def rk4_step(rhs, x, u_of_t, t, h, step=None):
    """One classical Runge-Kutta step.

    ``x`` is a tuple of state components and ``rhs(x, u)`` returns a tuple of
    the same length. The input is sampled at ``t``, ``t + h/2`` and ``t + h``.
    """
    if not h > 0:
        raise UsageError(f"step size must be positive, got {h}")
    u0, um, u1 = u_of_t(t), u_of_t(t + 0.5 * h), u_of_t(t + h)
    k1 = rhs(x, u0)
    k2 = rhs(tuple(a + 0.5 * h * b for a, b in zip(x, k1)), um)
    k3 = rhs(tuple(a + 0.5 * h * b for a, b in zip(x, k2)), um)
    k4 = rhs(tuple(a + h * b for a, b in zip(x, k3)), u1)
    for stage in (k1, k2, k3, k4):
        if not _finite(stage):
            raise IntegrationError(f"non-finite RK4 stage at step {step} (t={t})", step=step, time=t)
    return tuple(a + (h / 6.0) * (b1 + 2 * b2 + 2 * b3 + b4)
                 for a, b1, b2, b3, b4 in zip(x, k1, k2, k3, k4))


def surrogate_field(coeff_fn):
    """Vector field of the surrogate with coefficients ``coeff_fn(y, v, u)``.

    Coefficients are re-evaluated at whatever state the integrator asks for,
    so inside RK4 each stage sees its own coefficients.
    """

    def rhs(x, u):
        y, v = x
        k, d, g = coeff_fn(y, v, u)
        return surrogate_rhs(y, v, u, k, d, g)

    return rhs


def integrate(rhs, x0, u_of_t, time_grid, bound=DEFAULT_BLOWUP):
    """Integrate ``rhs`` over ``time_grid`` with one RK4 step per interval.

    Returns an array ``(len(time_grid), n_state, ...)`` including ``x0``.
    Raises :class:`IntegrationError` if any state magnitude exceeds ``bound``.
    """
    grid = np.asarray(time_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise UsageError("time grid must be a non-empty 1-d array")
    if np.any(np.diff(grid) <= 0):
        raise UsageError("time grid must be strictly increasing")
    x = tuple(np.asarray(c, dtype=float) for c in x0)
    out = [np.stack(x)]
    for i in range(grid.size - 1):
        x = rk4_step(rhs, x, u_of_t, grid[i], grid[i + 1] - grid[i], step=i)
        state = np.stack(x)
        if np.max(np.abs(state)) > bound:
            raise IntegrationError(f"rollout diverged at t={grid[i + 1]:.6g}", step=i, time=grid[i + 1])
        out.append(state)
    return np.array(out)


def rollout(coeff_fn, x0, u_of_t, time_grid, bound=DEFAULT_BLOWUP):
    """Open-loop simulation of the surrogate from ``x0 = (y0, v0)``.

    Returns an array of shape ``(len(time_grid), 2)``.
    """
    return integrate(surrogate_field(coeff_fn), x0, u_of_t, time_grid, bound=bound)
