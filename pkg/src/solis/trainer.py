"""Cyclic two-phase curriculum training.

Epochs alternate between ``k1`` epochs of trajectory reconstruction (only the
solution network moves) and ``k2`` epochs of coefficient identification (only
the parameter network moves, anchored by decaying ridge hints).
"""

import logging
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .exceptions import ConfigurationError, NumericalError, TrainingAborted
from .hints import compute_hints
from .losses import (CollocationBatch, LossReport, data_loss, ic_loss, hint_loss,
                     phase1_total, phase2_total, physics_loss, rollout_loss, tv_loss)
from .networks import as_leaves, copy_params

logger = logging.getLogger(__name__)

PHASE1, PHASE2 = 1, 2


@dataclass
class TrainConfig:
    epochs: int = 4000
    k1: int = 200
    k2: int = 200
    hint_decay: float = 0.995
    lambda_h0: float = 1.0
    lambda_d: float = 1.0
    lambda_ic: float = 1.0
    lambda_p1: float = 0.1
    lambda_p2: float = 1.0
    lambda_reg: float = 0.01
    lambda_roll: float = 0.0
    ridge_lambda0: float = 1e-3
    ridge_adaptive: bool = True
    window_cap: int = 129
    rollout_horizon: int = 5
    rollout_anchors: int = 32
    batch_coll: int = 256
    batch_meas: int = 0
    lr_sol: float = 1e-3
    lr_param: float = 1e-3
    kinematic: bool = True
    warm_start: bool = True
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.k1 < 1 or self.k2 < 1:
            raise ConfigurationError("phase lengths k1 and k2 must be >= 1")
        if not 0 < self.hint_decay <= 1:
            raise ConfigurationError("hint decay must lie in (0, 1]")
        for f in fields(self):
            if f.name.startswith("lambda") and getattr(self, f.name) < 0:
                raise ConfigurationError(f"{f.name} must be non-negative")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.rollout_horizon < 1:
            raise ConfigurationError("rollout horizon must be >= 1")
        if self.lr_sol <= 0 or self.lr_param <= 0:
            raise ConfigurationError("learning rates must be positive")

    # sklearn-style nested parameter access
    def get_params(self, deep=True):
        return asdict(self)

    def set_params(self, **params):
        for k, v in params.items():
            if not hasattr(self, k):
                raise ConfigurationError(f"unknown training option {k!r}")
            setattr(self, k, v)
        self.validate()
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown training option(s) {sorted(unknown)}")
        return cls(**d)


def phase_of(epoch, k1, k2):
    """Phase 1 iff ``epoch mod (k1 + k2) < k1`` (epochs are 0-indexed)."""
    return PHASE1 if epoch % (k1 + k2) < k1 else PHASE2


# --- optimisation ---------------------------------------------------------

def optimizer_step(params, grads, moments, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update. ``moments`` holds ``m``, ``v`` dicts and the step count ``t``.

    Returns the updated parameter dict; ``moments`` is updated in place.
    """
    moments["t"] = moments.get("t", 0) + 1
    t = moments["t"]
    m, v = moments.setdefault("m", {}), moments.setdefault("v", {})
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m[name] = beta1 * m.get(name, np.zeros_like(p)) + (1 - beta1) * g
        v[name] = beta2 * v.get(name, np.zeros_like(p)) + (1 - beta2) * g * g
        mhat = m[name] / (1 - beta1 ** t)
        vhat = v[name] / (1 - beta2 ** t)
        out[name] = p - lr * mhat / (np.sqrt(vhat) + eps)
    return out


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.moments = {"t": 0, "m": {}, "v": {}}

    def step(self, params, grads):
        return optimizer_step(params, grads, self.moments, self.lr, self.beta1, self.beta2,
                              self.eps)

    def state_dict(self):
        return {"lr": self.lr, "t": self.moments["t"],
                "m": copy_params(self.moments["m"]), "v": copy_params(self.moments["v"])}

    def load_state_dict(self, state):
        self.lr = state["lr"]
        self.moments = {"t": int(state["t"]), "m": copy_params(state["m"]),
                        "v": copy_params(state["v"])}


def _grads_by_name(leaves, gmap):
    return {name: gmap[leaf] for name, leaf in leaves.items()}


# --- training data --------------------------------------------------------

class TrainingData:
    """Flat arrays derived from a :class:`~solis.datasets.Dataset` for fast batching."""

    def __init__(self, dataset, sol_net):
        trs = list(dataset)
        self.n_traj = len(trs)
        nz = dataset.normalization
        self.scales = (nz.y_scale, nz.v_scale)
        self.t_m = np.concatenate([tr.t_meas for tr in trs])
        self.idx_m = np.concatenate([np.full(tr.n_meas, j) for j, tr in enumerate(trs)])
        self.y_m = np.concatenate([tr.y_meas for tr in trs])
        self.v_m = np.concatenate([tr.v_meas if tr.v_meas is not None
                                   else np.full(tr.n_meas, np.nan) for tr in trs])
        n_c = {tr.n_coll for tr in trs}
        if len(n_c) != 1:
            raise ConfigurationError("all trajectories need the same number of collocation points")
        self.n_coll = n_c.pop()
        self.t_c = np.array([tr.t_coll for tr in trs])
        self.u_c = np.array([tr.u_coll for tr in trs])
        self.t_c_flat = self.t_c.ravel()
        self.u_c_flat = self.u_c.ravel()
        self.idx_c_flat = np.repeat(np.arange(self.n_traj), self.n_coll)
        self.segments = [(j * self.n_coll, (j + 1) * self.n_coll) for j in range(self.n_traj)]
        self.x0 = np.array([tr.measured_x0 for tr in trs])
        self.u_seqs, self.x0n = sol_net.context_inputs(trs)

    @property
    def n_coll_total(self):
        return self.t_c_flat.size


def solution_pass(sol_net, params, buffers, data, t, idx):
    """Context + forward with time derivatives at arbitrary ``(t, trajectory)`` pairs."""
    ctx = sol_net.context(params, data.u_seqs, data.x0n)
    (y, dy), (v, dv) = sol_net.states_and_rates(params, t, idx, ctx, buffers)
    return y, v, dy, dv


def phase1_losses(sol_net, sol_params, buffers, data, coeff, coll_idx, cfg, meas_idx=None,
                  kinematic=True):
    """Data, initial-condition and physics terms over one minibatch.

    ``coeff(y, v, u)`` supplies the surrogate coefficients (a frozen parameter
    network, or global scalars for the inverse-PINN baselines).
    """
    meas_idx = np.arange(data.t_m.size) if meas_idx is None else meas_idx
    nm, nc, J = meas_idx.size, coll_idx.size, data.n_traj
    times = np.concatenate([data.t_m[meas_idx], data.t_c_flat[coll_idx], np.zeros(J)])
    idx = np.concatenate([data.idx_m[meas_idx], data.idx_c_flat[coll_idx], np.arange(J)])
    y, v, dy, dv = solution_pass(sol_net, sol_params, buffers, data, times, idx)
    sl_m, sl_c, sl_0 = slice(0, nm), slice(nm, nm + nc), slice(nm + nc, nm + nc + J)
    parts = {}
    parts["data"] = data_loss((y[sl_m], v[sl_m]), (data.y_m[meas_idx], data.v_m[meas_idx]),
                              scales=data.scales)
    parts["ic"] = ic_loss((y[sl_0], v[sl_0]), data.x0, scales=data.scales)
    u = data.u_c_flat[coll_idx]
    yc, vc = y[sl_c], v[sl_c]
    k, d, g = coeff(yc, vc, u)
    batch = CollocationBatch(yc, vc, dy[sl_c], dv[sl_c], u, k, d, g)
    parts["phys"] = physics_loss(batch, kinematic=kinematic, scale=data.scales[1])
    return parts


def _value(x):
    return float(ad.value_of(x)) if not isinstance(x, float) else x


class CurriculumTrainer:
    """Holds networks, weights, optimiser state and the epoch counter."""

    def __init__(self, sol_net, param_net, config, data, sol_params=None, sol_buffers=None,
                 param_params=None):
        self.sol_net = sol_net
        self.param_net = param_net
        self.config = config
        self.data = data
        if sol_params is None:
            sol_params, sol_buffers = sol_net.init(config.seed)
        if param_params is None:
            param_params, _ = param_net.init(config.seed)
        self.sol_params = copy_params(sol_params)
        self.sol_buffers = copy_params(sol_buffers or {})
        self.param_params = copy_params(param_params)
        self.opt_sol = Adam(config.lr_sol)
        self.opt_param = Adam(config.lr_param)
        self.rng = np.random.default_rng([config.seed, 7])
        self.epoch = 0
        self.lambda_h = config.lambda_h0
        self.phase2_epochs = 0
        self.log = []
        self.best = None
        self._cache = None

    # -- state -----------------------------------------------------------

    def state_dict(self):
        return {
            "epoch": self.epoch,
            "lambda_h": self.lambda_h,
            "phase2_epochs": self.phase2_epochs,
            "sol_params": copy_params(self.sol_params),
            "sol_buffers": copy_params(self.sol_buffers),
            "param_params": copy_params(self.param_params),
            "opt_sol": self.opt_sol.state_dict(),
            "opt_param": self.opt_param.state_dict(),
            "rng": self.rng.bit_generator.state,
            "best": None if self.best is None else {
                "epoch": self.best["epoch"], "data": self.best["data"],
                "sol_params": copy_params(self.best["sol_params"]),
                "param_params": copy_params(self.best["param_params"])},
            "log": [r.to_dict() for r in self.log],
        }

    def load_state_dict(self, state):
        self.epoch = int(state["epoch"])
        self.lambda_h = float(state["lambda_h"])
        self.phase2_epochs = int(state["phase2_epochs"])
        self.sol_params = copy_params(state["sol_params"])
        self.sol_buffers = copy_params(state["sol_buffers"])
        self.param_params = copy_params(state["param_params"])
        self.opt_sol.load_state_dict(state["opt_sol"])
        self.opt_param.load_state_dict(state["opt_param"])
        self.rng = np.random.default_rng()
        self.rng.bit_generator.state = state["rng"]
        best = state.get("best")
        self.best = None if best is None else {
            "epoch": best["epoch"], "data": best["data"],
            "sol_params": copy_params(best["sol_params"]),
            "param_params": copy_params(best["param_params"])}
        self.log = [LossReport(**r) for r in state.get("log", [])]
        self._cache = None

    # -- phase 1 ---------------------------------------------------------

    def lambda_p1(self):
        cfg = self.config
        if cfg.warm_start and self.epoch < cfg.k1 // 2:
            return 0.0
        return cfg.lambda_p1

    def phase1_step(self, coll_idx, meas_idx=None):
        cfg = self.config
        leaves = as_leaves(self.sol_params)
        # parameter network frozen: plain-array weights keep it off the tape
        coeff = (lambda y, v, u: self.param_net.forward(self.param_params, y, v, u))
        parts = phase1_losses(self.sol_net, leaves, self.sol_buffers, self.data, coeff,
                              coll_idx, cfg, meas_idx, kinematic=cfg.kinematic)
        total = phase1_total(parts, cfg.lambda_d, cfg.lambda_ic, self.lambda_p1())
        grads = ad.backward(total, wrt=leaves.values())
        self.sol_params = self.opt_sol.step(self.sol_params, _grads_by_name(leaves, grads))
        self._cache = None
        return LossReport(PHASE1, data=_value(parts["data"]), ic=_value(parts["ic"]),
                          phys=_value(parts["phys"]), total=_value(total))

    def phase1_epoch(self):
        cfg, data = self.config, self.data
        n = data.n_coll_total
        perm = self.rng.permutation(n)
        bs = n if cfg.batch_coll <= 0 else min(cfg.batch_coll, n)
        reports = []
        for start in range(0, n, bs):
            meas_idx = None
            if cfg.batch_meas > 0:
                meas_idx = np.sort(self.rng.choice(data.t_m.size, min(cfg.batch_meas, data.t_m.size),
                                                   replace=False))
            reports.append(self.phase1_step(np.sort(perm[start:start + bs]), meas_idx))
        return LossReport.mean(reports)

    # -- phase 2 ---------------------------------------------------------

    def solution_cache(self):
        """Frozen solution-network outputs on every collocation point, shape ``(J, N)``."""
        if self._cache is None:
            d = self.data
            y, v, dy, dv = solution_pass(self.sol_net, self.sol_params, self.sol_buffers, d,
                                         d.t_c_flat, d.idx_c_flat)
            shape = d.t_c.shape
            self._cache = tuple(np.asarray(ad.value_of(a)).reshape(shape) for a in (y, v, dy, dv))
        return self._cache

    def phase2_step(self):
        cfg, d = self.config, self.data
        y, v, dy, dv = self.solution_cache()
        yf, vf, dyf, dvf = (a.ravel() for a in (y, v, dy, dv))
        u = d.u_c_flat
        leaves = as_leaves(self.param_params)
        k, dd, g = self.param_net.forward(leaves, yf, vf, u)
        batch = CollocationBatch(yf, vf, dyf, dvf, u, k, dd, g)
        parts = {"phys": physics_loss(batch, kinematic=cfg.kinematic, scale=d.scales[1])}
        hints = compute_hints(yf, vf, u, dvf, self.rng, cfg.ridge_lambda0, d.segments,
                              cap=cfg.window_cap, adaptive=cfg.ridge_adaptive)
        n = yf.size
        theta = ad.concat([ad.reshape(c, (n, 1)) for c in (k, dd, g)], axis=1)
        parts["hint"] = hint_loss(theta, hints.theta, hints.weights)
        parts["tv"] = tv_loss(theta, d.segments)
        H = cfg.rollout_horizon
        if cfg.lambda_reg > 0 or cfg.lambda_roll > 0:
            anchors = np.column_stack([self.rng.integers(0, d.n_traj, cfg.rollout_anchors),
                                       self.rng.integers(0, d.n_coll - H, cfg.rollout_anchors)])
            parts["roll"] = rollout_loss(
                y, v, d.u_c, d.t_c, lambda yy, vv, uu: self.param_net.forward(leaves, yy, vv, uu),
                H, anchors, scales=d.scales)
        else:
            parts["roll"] = 0.0
        total = phase2_total(parts, cfg.lambda_p2, self.lambda_h, cfg.lambda_reg, cfg.lambda_roll)
        grads = ad.backward(total, wrt=leaves.values())
        self.param_params = self.opt_param.step(self.param_params, _grads_by_name(leaves, grads))
        return LossReport(PHASE2, phys=_value(parts["phys"]), hint=_value(parts["hint"]),
                          tv=_value(parts["tv"]), roll=_value(parts["roll"]),
                          total=_value(total))

    def phase2_epoch(self):
        self.lambda_h *= self.config.hint_decay
        self.phase2_epochs += 1
        return self.phase2_step()

    # -- loop ------------------------------------------------------------

    def run_epoch(self):
        phase = phase_of(self.epoch, self.config.k1, self.config.k2)
        report = self.phase1_epoch() if phase == PHASE1 else self.phase2_epoch()
        if not np.isfinite(report.total):
            raise NumericalError(f"non-finite loss at epoch {self.epoch}")
        if phase == PHASE1 and (self.best is None or report.data < self.best["data"]):
            self.best = {"epoch": self.epoch, "data": report.data,
                         "sol_params": copy_params(self.sol_params),
                         "param_params": copy_params(self.param_params)}
        self.log.append(report)
        self.epoch += 1
        return report

    def fit(self, epochs=None, callback=None):
        """Train until ``epochs`` (default ``config.epochs``) epochs have run in total."""
        end = self.config.epochs if epochs is None else epochs
        every = self.config.checkpoint_every
        while self.epoch < end:
            last_good = self.state_dict()
            try:
                report = self.run_epoch()
            except NumericalError as exc:
                raise TrainingAborted(f"training aborted at epoch {self.epoch}: {exc}",
                                      checkpoint=last_good, epoch=self.epoch) from exc
            if self.epoch % 100 == 0:
                logger.info("epoch %d phase %d total %.4g", self.epoch - 1, report.phase, report.total)
            if callback is not None and every and self.epoch % every == 0:
                callback(self, "periodic")
        return self


def fit(dataset, config, sol_net=None, param_net=None, callback=None):
    """Build networks for ``dataset`` and run the curriculum; returns the trainer."""
    from .networks import ParameterNetwork, SolutionNetwork

    sol_net = sol_net or SolutionNetwork(normalization=dataset.normalization)
    param_net = param_net or ParameterNetwork(normalization=dataset.normalization)
    data = TrainingData(dataset, sol_net)
    trainer = CurriculumTrainer(sol_net, param_net, config, data)
    return trainer.fit(callback=callback)
