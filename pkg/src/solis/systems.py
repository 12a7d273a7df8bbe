"""Ground-truth benchmark systems: forced Duffing, Van der Pol, gravity-drained two-tank.

The two-tank model stands in for the laboratory rig; it is the textbook
cascade of two tanks with square-root outflow:

    dh1/dt = (k_p u - c1 sqrt(h1)) / A1
    dh2/dt = (c1 sqrt(h1) - c2 sqrt(h2)) / A2

Its observed output is ``y = h2`` and ``v = dh2/dt``.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import ConfigurationError
from .surrogate import DEFAULT_BLOWUP, integrate

SYSTEMS = ("duffing", "vanderpol", "twotank", "lti")

DEFAULT_PARAMS = {
    "duffing": {"alpha": 1.0, "beta": 1.0, "delta": 0.3, "g_u": 1.0},
    "vanderpol": {"mu": 1.0, "g_u": 1.0},
    "twotank": {"A1": 1.0, "A2": 1.0, "c1": 0.5, "c2": 0.5, "k_p": 1.0},
    "lti": {"k": 2.0, "d": 1.0, "g": 3.0},
}

DEFAULT_X0_BOX = {
    "duffing": ((-1.5, 1.5), (-1.0, 1.0)),
    "vanderpol": ((-2.5, 2.5), (-2.0, 2.0)),
    "twotank": ((0.3, 1.5), (0.3, 1.5)),
    "lti": ((-1.0, 1.0), (-1.0, 1.0)),
}


def duffing_rhs(x, u, params):
    y, v = x
    p = params
    return v, -(p["alpha"] + p["beta"] * y * y) * y - p["delta"] * v + p["g_u"] * u


def vdp_rhs(x, u, params):
    y, v = x
    return v, -y - params["mu"] * (y * y - 1.0) * v + params["g_u"] * u


def twotank_rhs(x, u, params):
    """Level derivatives; levels below zero are treated as empty and the pump cannot reverse."""
    h1, h2 = (np.maximum(np.asarray(h, dtype=float), 0.0) for h in x)
    p = params
    q_in = p["k_p"] * np.maximum(u, 0.0)
    q12 = p["c1"] * np.sqrt(h1)
    q2 = p["c2"] * np.sqrt(h2)
    return (q_in - q12) / p["A1"], (q12 - q2) / p["A2"]


def lti_rhs(x, u, params):
    y, v = x
    return v, -params["k"] * y - params["d"] * v + params["g"] * u


_RHS = {"duffing": duffing_rhs, "vanderpol": vdp_rhs, "twotank": twotank_rhs, "lti": lti_rhs}


@dataclass(frozen=True)
class InputSignal:
    """Excitation family. Realisations draw frequencies, phases and levels from an RNG."""

    kind: str = "multisine"
    n_components: int = 5
    f_min: float = 0.1
    f_max: float = 2.0
    amplitude: float = 1.0
    offset: float = 0.0
    step_period: float = 2.0

    def __post_init__(self):
        if self.kind not in ("multisine", "step", "chirp", "zero"):
            raise ConfigurationError(f"unknown input kind {self.kind!r}")
        if not 0 < self.f_min <= self.f_max:
            raise ConfigurationError("need 0 < f_min <= f_max")

    def realize(self, rng, horizon):
        """Return a callable ``u(t)`` for one trajectory."""
        a, off = self.amplitude, self.offset
        if self.kind == "zero":
            return lambda t: np.zeros_like(np.asarray(t, dtype=float)) + off
        if self.kind == "multisine":
            freqs = rng.uniform(self.f_min, self.f_max, self.n_components)
            phases = rng.uniform(0.0, 2 * np.pi, self.n_components)
            amps = np.full(self.n_components, a / self.n_components)

            def u(t):
                t = np.asarray(t, dtype=float)
                return off + np.sum(amps * np.sin(2 * np.pi * np.multiply.outer(t, freqs) + phases), axis=-1)

            return u
        if self.kind == "chirp":
            phase0 = rng.uniform(0.0, 2 * np.pi)
            rate = (self.f_max - self.f_min) / horizon

            def u(t):
                t = np.asarray(t, dtype=float)
                return off + a * np.sin(2 * np.pi * (self.f_min * t + 0.5 * rate * t * t) + phase0)

            return u
        n_steps = int(np.ceil(horizon / self.step_period)) + 1
        levels = rng.uniform(-a, a, n_steps)

        def u(t):
            idx = np.clip((np.asarray(t, dtype=float) // self.step_period).astype(int), 0, n_steps - 1)
            return off + levels[idx]

        return u

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class SystemSpec:
    system: str
    params: dict = field(default_factory=dict)
    input: InputSignal = field(default_factory=InputSignal)
    horizon: float = 15.0
    dt_truth: float = 0.005
    x0_box: tuple = None

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ConfigurationError(f"unknown system {self.system!r}; expected one of {SYSTEMS}")
        merged = dict(DEFAULT_PARAMS[self.system])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ConfigurationError(f"unknown parameters for {self.system}: {sorted(unknown)}")
        merged.update(self.params)
        object.__setattr__(self, "params", merged)
        if isinstance(self.input, dict):
            object.__setattr__(self, "input", InputSignal(**self.input))
        box = self.x0_box or DEFAULT_X0_BOX[self.system]
        object.__setattr__(self, "x0_box", tuple(tuple(float(b) for b in r) for r in box))
        if not (self.horizon > 0 and self.dt_truth > 0):
            raise ConfigurationError("horizon and truth step must be positive")
        p = merged
        if self.system == "duffing" and not p["alpha"] > 0:
            raise ConfigurationError("Duffing alpha must be positive")
        if self.system == "vanderpol" and not p["mu"] > 0:
            raise ConfigurationError("Van der Pol mu must be positive")
        if self.system == "twotank" and min(p.values()) <= 0:
            raise ConfigurationError("two-tank parameters must be positive")

    def to_dict(self):
        return {"system": self.system, "params": dict(self.params), "input": self.input.to_dict(),
                "horizon": self.horizon, "dt_truth": self.dt_truth,
                "x0_box": [list(r) for r in self.x0_box]}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["input"] = InputSignal(**d.get("input", {}))
        if d.get("x0_box") is not None:
            d["x0_box"] = tuple(tuple(r) for r in d["x0_box"])
        return cls(**d)

    def rhs(self, x, u):
        return _RHS[self.system](x, u, self.params)

    def sample_x0(self, rng):
        """Internal initial state (levels for the two-tank)."""
        return np.array([rng.uniform(*r) for r in self.x0_box])


def to_output(spec, states, u):
    """Map internal states ``(..., 2)`` to the observed ``(y, v)`` channels."""
    states = np.asarray(states, dtype=float)
    if spec.system != "twotank":
        return states
    h1, h2 = states[..., 0], states[..., 1]
    return np.stack([h2, spec.rhs((h1, h2), u)[1]], axis=-1)


@dataclass
class DenseTrajectory:
    t: np.ndarray
    states: np.ndarray      # internal state, (n, 2)
    outputs: np.ndarray     # observed (y, v), (n, 2)
    u: np.ndarray
    u_fn: object = None


def simulate_truth(spec, x0, seed=0, dt=None, n_steps=None, u_fn=None, bound=DEFAULT_BLOWUP):
    """Dense RK4 simulation of the true system over ``[0, horizon]``.

    ``x0`` is the internal initial state. The input is realised from
    ``spec.input`` with ``seed`` unless ``u_fn`` is given.
    """
    if u_fn is None:
        u_fn = spec.input.realize(np.random.default_rng(seed), spec.horizon)
    if n_steps is None:
        dt = dt or spec.dt_truth
        n_steps = int(np.ceil(spec.horizon / dt))
    grid = np.linspace(0.0, spec.horizon, n_steps + 1)
    states = integrate(spec.rhs, tuple(np.asarray(x0, dtype=float)), u_fn, grid, bound=bound)
    u = u_fn(grid)
    return DenseTrajectory(grid, states, to_output(spec, states, u), u, u_fn)


def true_coefficients(spec, y, v, u=0.0):
    """Known coefficient fields ``(k, d, g)`` for the analytic benchmarks, else None."""
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    p = spec.params
    ones = np.ones(np.broadcast(y, v).shape)
    if spec.system == "duffing":
        return (p["alpha"] + p["beta"] * y * y) * ones, p["delta"] * ones, p["g_u"] * ones
    if spec.system == "vanderpol":
        return ones, p["mu"] * (y * y - 1.0) * ones, p["g_u"] * ones
    if spec.system == "lti":
        return p["k"] * ones, p["d"] * ones, p["g"] * ones
    return None


def output_field(spec, y, v, u=0.0):
    """True vector field ``(dy/dt, dv/dt)`` expressed in the observed coordinates.

    For the two-tank the upper level is recovered from ``(h2, dh2/dt)``;
    points with no physical preimage return NaN.
    """
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    if spec.system != "twotank":
        return _RHS[spec.system]((y, v), u, spec.params)
    p = spec.params
    h2 = y
    q12 = p["A2"] * v + p["c2"] * np.sqrt(np.maximum(h2, 0.0))
    ok = (h2 > 0) & (q12 > 0)
    h1 = np.where(ok, (q12 / p["c1"]) ** 2, np.nan)
    dh1 = (p["k_p"] * np.maximum(u, 0.0) - q12) / p["A1"]
    with np.errstate(divide="ignore", invalid="ignore"):
        acc = (p["c1"] * dh1 / (2 * np.sqrt(h1)) - p["c2"] * v / (2 * np.sqrt(h2))) / p["A2"]
    return v, np.where(ok, acc, np.nan)
