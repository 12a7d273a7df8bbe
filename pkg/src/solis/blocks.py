"""Network building blocks: MLP, GRU context encoder, FiLM, Fourier time features, MoE.

All forward functions are written against :mod:`solis.autodiff`, so they
accept numpy arrays, graph nodes or duals interchangeably. Parameters live in
plain ``dict[str, ndarray]`` stores keyed by dotted names.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .exceptions import ConfigurationError, UsageError

ACTIVATIONS = {
    "tanh": ad.tanh,
    "softplus": ad.softplus,
}


@dataclass(frozen=True)
class MlpSpec:
    n_in: int
    hidden: tuple = (64, 64)
    n_out: int = 1
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if min((self.n_in, self.n_out) + self.hidden) < 1:
            raise ConfigurationError(f"all MLP widths must be >= 1, got {self}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def widths(self):
        return (self.n_in,) + self.hidden + (self.n_out,)

    @property
    def n_params(self):
        w = self.widths
        return sum((a + 1) * b for a, b in zip(w[:-1], w[1:]))

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class GruSpec:
    n_in: int = 1
    hidden: int = 16

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class RffSpec:
    n_freq: int = 16
    sigma: float = 1.0

    @property
    def n_out(self):
        return 2 * self.n_freq

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class MoeSpec:
    n_experts: int = 4
    expert: MlpSpec = field(default_factory=lambda: MlpSpec(9, (32, 32), 3))
    gate: MlpSpec = field(default_factory=lambda: MlpSpec(9, (16,), 4))

    def __post_init__(self):
        if self.n_experts < 1:
            raise ConfigurationError("mixture of experts needs at least one expert")
        if self.gate.n_out != self.n_experts:
            raise ConfigurationError("gate output width must equal the expert count")

    def to_dict(self):
        return {"n_experts": self.n_experts, "expert": self.expert.to_dict(),
                "gate": self.gate.to_dict()}


def xavier_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


# --- MLP ------------------------------------------------------------------

def init_mlp(spec, rng, prefix=""):
    params = {}
    w = spec.widths
    for i, (a, b) in enumerate(zip(w[:-1], w[1:])):
        params[f"{prefix}W{i}"] = xavier_uniform(rng, a, b)
        params[f"{prefix}b{i}"] = np.zeros(b)
    return params


def mlp_forward(params, x, spec, prefix="", film=None):
    """Affine + activation stack with a linear last layer.

    ``film`` optionally maps hidden-layer index to ``(gamma, beta)``; the
    modulation is applied to that layer's pre-activation.
    """
    width = ad.value_of(x).shape[-1]
    if width != spec.n_in:
        raise UsageError(f"input width {width} does not match MLP input width {spec.n_in}")
    act = ACTIVATIONS[spec.activation]
    n_layers = len(spec.hidden) + 1
    h = x
    for i in range(n_layers):
        z = h @ params[f"{prefix}W{i}"] + params[f"{prefix}b{i}"]
        if i == n_layers - 1:
            return z
        if film is not None and i in film:
            z = film_modulate(z, *film[i])
        h = act(z)
    return h


# --- GRU ------------------------------------------------------------------

def init_gru(spec, rng, prefix="gru."):
    h = spec.hidden
    return {
        f"{prefix}Wx": xavier_uniform(rng, spec.n_in, 3 * h),
        f"{prefix}Uzr": xavier_uniform(rng, h, 2 * h),
        f"{prefix}Un": xavier_uniform(rng, h, h),
        f"{prefix}b": np.zeros(3 * h),
    }


def gru_encode(params, sequence, spec, prefix="gru."):
    """Run a GRU over ``sequence`` and return the final hidden state.

    ``sequence`` has shape ``(L,)`` or ``(batch, L)`` for scalar inputs, or
    ``(batch, L, n_in)``. The recurrence starts from a zero state:

        z = sigmoid(x Wx_z + h Uz + b_z)
        r = sigmoid(x Wx_r + h Ur + b_r)
        n = tanh(x Wx_n + (r * h) Un + b_n)
        h = (1 - z) * n + z * h
    """
    seq = np.asarray(sequence, dtype=float)
    single = seq.ndim == 1
    if single:
        seq = seq[None, :]
    if seq.ndim == 2:
        seq = seq[:, :, None]
    if seq.shape[1] == 0:
        raise UsageError("GRU input sequence is empty")
    batch, length, n_in = seq.shape
    H = spec.hidden
    b = params[f"{prefix}b"]
    # input projections for every step at once; slices below are cheap
    xw = ad.reshape(ad.matmul(seq.reshape(batch * length, n_in), params[f"{prefix}Wx"]) + b,
                    (batch, length, 3 * H))
    xw_zr = xw[:, :, : 2 * H]
    xw_n = xw[:, :, 2 * H:]
    h = np.zeros((batch, H))
    for step in range(length):
        zr = ad.sigmoid(xw_zr[:, step, :] + h @ params[f"{prefix}Uzr"])
        z = zr[:, :H]
        r = zr[:, H:]
        n = ad.tanh(xw_n[:, step, :] + (r * h) @ params[f"{prefix}Un"])
        h = (1.0 - z) * n + z * h
    return h[0] if single else h


# --- FiLM -----------------------------------------------------------------

def init_film(context_dim, widths, prefix="film."):
    """Zero-initialised generators, so gamma == 1 and beta == 0 for any context."""
    params = {}
    for layer, w in widths.items():
        params[f"{prefix}{layer}.Wg"] = np.zeros((context_dim, w))
        params[f"{prefix}{layer}.bg"] = np.zeros(w)
        params[f"{prefix}{layer}.Wb"] = np.zeros((context_dim, w))
        params[f"{prefix}{layer}.bb"] = np.zeros(w)
    return params


def film_generate(params, context, layer, prefix="film."):
    gamma = 1.0 + (context @ params[f"{prefix}{layer}.Wg"] + params[f"{prefix}{layer}.bg"])
    beta = context @ params[f"{prefix}{layer}.Wb"] + params[f"{prefix}{layer}.bb"]
    return gamma, beta


def film_modulate(z, gamma, beta):
    """Feature-wise affine modulation ``gamma * z + beta``."""
    wz = ad.value_of(z).shape[-1]
    if ad.value_of(gamma).shape[-1] != wz or ad.value_of(beta).shape[-1] != wz:
        raise UsageError("FiLM scale/shift width does not match the modulated layer")
    return gamma * z + beta


# --- Random Fourier time features ------------------------------------------

def init_rff(spec, rng):
    return rng.normal(0.0, spec.sigma, size=spec.n_freq)


def rff_encode(t, frequencies):
    """``[cos(2 pi B t), sin(2 pi B t)]`` for scalar or column-vector ``t``.

    Accepts a :class:`~solis.autodiff.Dual` time input; frequencies are fixed,
    so the features and their time derivatives are plain arrays.
    """
    B = np.asarray(frequencies, dtype=float)
    if isinstance(t, ad.Dual):
        tv = np.asarray(ad.value_of(t.primal), dtype=float)
        dt = np.zeros_like(tv) if t.tangent is None else np.asarray(ad.value_of(t.tangent))
    else:
        tv = np.asarray(t, dtype=float)
        dt = None
    phase = 2.0 * np.pi * np.multiply.outer(tv, B)
    if tv.ndim == 2:  # column input (N, 1)
        phase = phase[:, 0, :]
    cos, sin = np.cos(phase), np.sin(phase)
    feats = np.concatenate([cos, sin], axis=-1)
    if dt is None:
        return feats
    dt = dt.reshape(tv.shape)
    if tv.ndim == 2:
        dt = dt[:, :1]
    elif tv.ndim == 1:
        dt = dt[:, None]
    w = 2.0 * np.pi * B
    tangent = np.concatenate([-w * sin, w * cos], axis=-1) * dt
    return ad.Dual(feats, tangent)


# --- Mixture of experts ---------------------------------------------------

def softmax(logits):
    shift = np.max(ad.value_of(logits), axis=-1, keepdims=True)
    e = ad.exp(logits - shift)
    return e / ad.sum_(e, axis=-1, keepdims=True)


def moe_combine(gate_logits, expert_outputs):
    """Softmax-weighted combination of expert outputs.

    ``gate_logits`` has shape ``(..., M)`` and ``expert_outputs`` shape
    ``(..., M, 3)``.
    """
    m = ad.value_of(gate_logits).shape[-1]
    if m == 0:
        raise ConfigurationError("mixture of experts needs at least one expert")
    if ad.value_of(expert_outputs).shape[-2] != m:
        raise UsageError("gate width does not match the number of experts")
    alpha = softmax(gate_logits)
    a_shape = ad.value_of(alpha).shape
    alpha = ad.reshape(alpha, a_shape + (1,))
    return ad.sum_(alpha * expert_outputs, axis=-2)


def init_moe(spec, rng, prefix="moe."):
    params = init_mlp(spec.gate, rng, prefix=f"{prefix}gate.")
    for j in range(spec.n_experts):
        params.update(init_mlp(spec.expert, rng, prefix=f"{prefix}e{j}."))
    return params


def moe_forward(params, x, spec, prefix="moe."):
    logits = mlp_forward(params, x, spec.gate, prefix=f"{prefix}gate.")
    experts = [mlp_forward(params, x, spec.expert, prefix=f"{prefix}e{j}.")
               for j in range(spec.n_experts)]
    shape = ad.value_of(experts[0]).shape
    stacked = ad.concat([ad.reshape(e, shape[:-1] + (1, shape[-1])) for e in experts], axis=-2)
    return moe_combine(logits, stacked)


# --- State features -------------------------------------------------------

AUGMENTED_FEATURES = ("y", "v", "u", "y^2", "y^3", "v^2", "|y|", "|v|", "y*v")


def augment_state(y, v, u):
    """Fixed feature expansion ``[y, v, u, y^2, y^3, v^2, |y|, |v|, y*v]``.

    Scalars give a 9-vector; arrays of shape ``(N,)`` give ``(N, 9)``.
    """
    scalar = np.ndim(ad.value_of(y)) == 0
    cols = [y, v, u, y * y, y * y * y, v * v, ad.absolute(y), ad.absolute(v), y * v]
    if scalar:
        return ad.concat([ad.reshape(c, (1,)) for c in cols], axis=0)
    n = ad.value_of(y).shape[0]
    cols = [c if np.shape(ad.value_of(c)) == (n,) else ad.broadcast_to(c, (n,)) for c in cols]
    return ad.concat([ad.reshape(c, (n, 1)) for c in cols], axis=1)


def n_params(params):
    return int(sum(np.size(v) for v in params.values()))
