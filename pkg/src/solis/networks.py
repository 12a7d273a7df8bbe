"""Solution and parameter networks.

Both classes are stateless with respect to weights: parameters are passed in
as ``dict[str, array | Node]`` so the same forward code serves inference,
training (leaves are graph nodes) and frozen use (leaves are plain arrays).
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .blocks import (GruSpec, MlpSpec, MoeSpec, RffSpec, augment_state, film_generate,
                     gru_encode, init_film, init_gru, init_mlp, init_moe, init_rff,
                     mlp_forward, moe_forward, rff_encode)
from .datasets import Normalization


def as_leaves(params):
    return {k: ad.variable(v, name=k) for k, v in params.items()}


def leaf_values(leaves):
    return {k: np.array(n.value) for k, n in leaves.items()}


def flatten(params):
    return np.concatenate([np.ravel(params[k]) for k in sorted(params)]) if params else np.zeros(0)


def unflatten(vector, template):
    out, i = {}, 0
    for k in sorted(template):
        n = np.size(template[k])
        out[k] = np.asarray(vector[i:i + n], dtype=float).reshape(np.shape(template[k]))
        i += n
    return out


def copy_params(params):
    return {k: np.array(v, dtype=float, copy=True) for k, v in params.items()}


@dataclass
class SolutionNetwork:
    """``(t, trajectory context) -> (y, v)`` with GRU input context and FiLM conditioning.

    The context of trajectory ``j`` is the GRU encoding of its normalised
    input profile, concatenated with its normalised measured initial state.
    Time is normalised before entering the MLP (optionally through random
    Fourier features) and the two outputs are de-normalised, so derivatives
    in physical time come out of the chain rule.
    """

    hidden: tuple = (64, 64)
    gru_hidden: int = 16
    context_points: int = 32
    use_x0: bool = True
    rff: RffSpec = None
    normalization: Normalization = field(default_factory=Normalization)

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if isinstance(self.rff, dict):
            self.rff = RffSpec(**self.rff)
        if isinstance(self.normalization, dict):
            self.normalization = Normalization.from_dict(self.normalization)

    @property
    def context_dim(self):
        return self.gru_hidden + (2 if self.use_x0 else 0)

    @property
    def mlp_spec(self):
        n_in = self.rff.n_out if self.rff is not None else 1
        return MlpSpec(n_in, self.hidden, 2)

    @property
    def gru_spec(self):
        return GruSpec(1, self.gru_hidden)

    def to_dict(self):
        return {"hidden": list(self.hidden), "gru_hidden": self.gru_hidden,
                "context_points": self.context_points, "use_x0": self.use_x0,
                "rff": self.rff.to_dict() if self.rff else None,
                "normalization": self.normalization.to_dict()}

    def init(self, seed):
        rng = np.random.default_rng([seed, 0])
        params = init_mlp(self.mlp_spec, rng, prefix="mlp.")
        params.update(init_gru(self.gru_spec, rng))
        params.update(init_film(self.context_dim, dict(enumerate(self.hidden))))
        buffers = {}
        if self.rff is not None:
            buffers["rff.B"] = init_rff(self.rff, rng)
        return params, buffers

    # -- inputs ----------------------------------------------------------

    def context_inputs(self, trajectories):
        """Per-trajectory normalised input sequences ``(J, L)`` and initial states ``(J, 2)``."""
        nz = self.normalization
        seqs, x0s = [], []
        for tr in trajectories:
            idx = np.unique(np.linspace(0, tr.n_coll - 1, self.context_points).round().astype(int))
            seqs.append((tr.u_coll[idx] - nz.u_offset) / nz.u_scale)
            x0 = tr.measured_x0
            x0s.append([(x0[0] - nz.y_offset) / nz.y_scale,
                        0.0 if np.isnan(x0[1]) else (x0[1] - nz.v_offset) / nz.v_scale])
        lengths = {len(s) for s in seqs}
        if len(lengths) != 1:
            raise ValueError("all trajectories need the same number of collocation points")
        return np.array(seqs), np.array(x0s)

    def context(self, params, u_seqs, x0n):
        h = gru_encode(params, u_seqs, self.gru_spec)
        if not self.use_x0:
            return h
        return ad.concat([h, np.asarray(x0n, dtype=float)], axis=1)

    # -- forward ---------------------------------------------------------

    def forward(self, params, t, traj_idx, context, buffers=None):
        """States at times ``t`` (shape ``(N,)``) of trajectories ``traj_idx``."""
        nz = self.normalization
        n = np.shape(ad.value_of(t))[0]
        tn = ad.reshape((t - nz.t_offset) * (1.0 / nz.t_scale), (n, 1))
        x = rff_encode(tn, buffers["rff.B"]) if self.rff is not None else tn
        film = {}
        for layer in range(len(self.hidden)):
            gamma, beta = film_generate(params, context, layer)
            film[layer] = (ad.getitem(gamma, traj_idx), ad.getitem(beta, traj_idx))
        out = mlp_forward(params, x, self.mlp_spec, prefix="mlp.", film=film)
        y = nz.y_offset + nz.y_scale * out[:, 0]
        v = nz.v_offset + nz.v_scale * out[:, 1]
        return y, v

    def states_and_rates(self, params, t, traj_idx, context, buffers=None):
        """``((y, dy/dt), (v, dv/dt))`` with exact time derivatives."""
        return ad.time_derivative(
            lambda tt: self.forward(params, tt, traj_idx, context, buffers), t)


@dataclass
class ParameterNetwork:
    """``(y, v, u) -> (k, d, g)`` on normalised (optionally augmented) features."""

    hidden: tuple = (32, 32)
    augment: bool = False
    moe: MoeSpec = None
    theta_scale: tuple = (1.0, 1.0, 1.0)
    normalization: Normalization = field(default_factory=Normalization)

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        self.theta_scale = tuple(float(s) for s in self.theta_scale)
        if isinstance(self.normalization, dict):
            self.normalization = Normalization.from_dict(self.normalization)
        if isinstance(self.moe, dict):
            d = dict(self.moe)
            self.moe = MoeSpec(d["n_experts"], MlpSpec(**d["expert"]), MlpSpec(**d["gate"]))

    @property
    def n_features(self):
        return 9 if self.augment else 3

    @property
    def mlp_spec(self):
        return MlpSpec(self.n_features, self.hidden, 3)

    def to_dict(self):
        return {"hidden": list(self.hidden), "augment": self.augment,
                "moe": self.moe.to_dict() if self.moe else None,
                "theta_scale": list(self.theta_scale),
                "normalization": self.normalization.to_dict()}

    @classmethod
    def with_moe(cls, n_experts=4, width=32, **kwargs):
        nf = 9 if kwargs.get("augment", False) else 3
        moe = MoeSpec(n_experts, MlpSpec(nf, (width, width), 3), MlpSpec(nf, (16,), n_experts))
        return cls(moe=moe, **kwargs)

    def init(self, seed):
        rng = np.random.default_rng([seed, 1])
        if self.moe is not None:
            return init_moe(self.moe, rng), {}
        return init_mlp(self.mlp_spec, rng, prefix="mlp."), {}

    def features(self, y, v, u):
        nz = self.normalization
        yn = (y - nz.y_offset) * (1.0 / nz.y_scale)
        vn = (v - nz.v_offset) * (1.0 / nz.v_scale)
        un = (u - nz.u_offset) * (1.0 / nz.u_scale)
        n = np.shape(ad.value_of(y))[0]
        if not isinstance(un, (ad.Node, ad.Dual)) and np.shape(un) != (n,):
            un = np.broadcast_to(un, (n,))
        if self.augment:
            return augment_state(yn, vn, un)
        return ad.concat([ad.reshape(c, (n, 1)) for c in (yn, vn, un)], axis=1)

    def forward(self, params, y, v, u):
        """Coefficients ``(k, d, g)``, each of shape ``(N,)``."""
        x = self.features(y, v, u)
        if self.moe is not None:
            out = moe_forward(params, x, self.moe)
        else:
            out = mlp_forward(params, x, self.mlp_spec, prefix="mlp.")
        s = self.theta_scale
        return out[:, 0] * s[0], out[:, 1] * s[1], out[:, 2] * s[2]

    def coefficient_fn(self, params):
        """Numpy callable ``(y, v, u) -> (k, d, g)`` accepting scalars or arrays."""

        def fn(y, v, u):
            y = np.asarray(y, dtype=float)
            shape = y.shape
            yy = np.atleast_1d(y).ravel()
            vv = np.broadcast_to(np.asarray(v, dtype=float), shape).ravel()
            uu = np.broadcast_to(np.asarray(u, dtype=float), shape).ravel()
            k, d, g = self.forward(params, yy, vv, np.atleast_1d(uu))
            return tuple(np.asarray(c).reshape(shape) for c in (k, d, g))

        return fn
