"""Scoring: accuracy, phase-portrait similarity, rollout, and inverse-PINN baselines."""

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .exceptions import IntegrationError, UsageError
from .losses import LossReport, phase1_total
from .networks import SolutionNetwork, as_leaves, copy_params
from .surrogate import canonical_fields, linear_input, rollout
from .systems import output_field
from .trainer import Adam, PHASE1, TrainingData, phase1_losses

DEGENERATE_NORM = 1e-9


# --- accuracy -------------------------------------------------------------

@dataclass
class AccuracyScore:
    nrmse: float
    accuracy: float
    channel: str = "y"
    traj_id: int = None

    def to_dict(self):
        return asdict(self)


def accuracy(pred, true, channel="y", traj_id=None):
    """``(1 - RMSE / peak-to-peak(true)) * 100``; negative values are reported as-is."""
    pred = np.asarray(pred, dtype=float).ravel()
    true = np.asarray(true, dtype=float).ravel()
    if pred.shape != true.shape:
        raise UsageError(f"prediction and truth have different lengths {pred.size} != {true.size}")
    if true.size < 2:
        raise UsageError("accuracy needs at least two samples")
    span = float(np.max(true) - np.min(true))
    if not span > 0:
        raise UsageError("true signal is flat; peak-to-peak normalisation is undefined")
    rmse = float(np.sqrt(np.mean((pred - true) ** 2)))
    nrmse = rmse / span
    return AccuracyScore(nrmse, (1.0 - nrmse) * 100.0, channel, traj_id)


def failed_score(channel, traj_id=None):
    """Score assigned to a diverged rollout."""
    return AccuracyScore(float("inf"), 0.0, channel, traj_id)


def mean_accuracy(scores):
    return float(np.mean([s.accuracy for s in scores]))


def _channels(tr):
    out = [("y", tr.y_meas)]
    if tr.v_meas is not None:
        out.append(("v", tr.v_meas))
    return out


# --- phase portraits ------------------------------------------------------

@dataclass
class PortraitGrid:
    y_range: tuple
    v_range: tuple
    resolution: int = 41

    def __post_init__(self):
        if self.resolution < 2:
            raise UsageError("portrait grid needs at least 2x2 cells")

    @classmethod
    def around(cls, states, inflate=0.2, resolution=41):
        """Bounding box of ``states`` (``(N, 2)``) widened by ``inflate`` of its size."""
        states = np.asarray(states, dtype=float)
        states = states[np.all(np.isfinite(states), axis=1)]
        lo, hi = states.min(axis=0), states.max(axis=0)
        pad = inflate * (hi - lo)
        return cls((float(lo[0] - pad[0]), float(hi[0] + pad[0])),
                   (float(lo[1] - pad[1]), float(hi[1] + pad[1])), resolution)

    def mesh(self):
        ys = np.linspace(*self.y_range, self.resolution)
        vs = np.linspace(*self.v_range, self.resolution)
        return np.meshgrid(ys, vs, indexing="ij")

    def to_dict(self):
        return {"y_range": list(self.y_range), "v_range": list(self.v_range),
                "resolution": self.resolution}


@dataclass
class PhasePortrait:
    grid: PortraitGrid
    y: np.ndarray
    v: np.ndarray
    fy: np.ndarray
    fv: np.ndarray


def phase_portrait(field_fn, grid):
    """Sample ``field_fn(y, v) -> (dy/dt, dv/dt)`` at every grid node."""
    Y, V = grid.mesh()
    fy, fv = field_fn(Y.ravel(), V.ravel())
    shape = Y.shape
    return PhasePortrait(grid, Y, V, np.broadcast_to(fy, Y.size).reshape(shape).astype(float),
                         np.asarray(fv, dtype=float).reshape(shape))


def surrogate_portrait_fn(coeff_fn):
    """Unforced surrogate field ``(v, -k y - d v)`` with coefficients from ``coeff_fn``."""

    def fn(y, v):
        k, d, _ = coeff_fn(y, v, np.zeros_like(y))
        return np.asarray(v, dtype=float), -k * y - d * v

    return fn


def truth_portrait_fn(spec):
    return lambda y, v: output_field(spec, y, v, 0.0)


@dataclass
class SimilarityMap:
    grid: PortraitGrid
    cosine: np.ndarray            # NaN on degenerate cells
    average: float
    mask: np.ndarray = None
    masked_average: float = None

    def to_dict(self):
        return {"grid": self.grid.to_dict(), "average": self.average,
                "masked_average": self.masked_average,
                "n_valid": int(np.isfinite(self.cosine).sum()),
                "n_masked": None if self.mask is None else int(self.mask.sum())}


def cosine_similarity_map(surrogate, truth, mask=None):
    """Per-cell cosine between two sampled fields, averaged over non-degenerate cells."""
    if surrogate.fy.shape != truth.fy.shape:
        raise UsageError("portraits are sampled on different grids")
    dot = surrogate.fy * truth.fy + surrogate.fv * truth.fv
    n1 = np.hypot(surrogate.fy, surrogate.fv)
    n2 = np.hypot(truth.fy, truth.fv)
    ok = (n1 >= DEGENERATE_NORM) & (n2 >= DEGENERATE_NORM) & np.isfinite(dot)
    if not ok.any():
        raise UsageError("every grid cell is degenerate")
    cos = np.full(dot.shape, np.nan)
    cos[ok] = np.clip(dot[ok] / (n1[ok] * n2[ok]), -1.0, 1.0)
    average = float(np.mean(cos[ok]))
    masked = None
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        sel = ok & mask
        masked = float(np.mean(cos[sel])) if sel.any() else float("nan")
    return SimilarityMap(truth.grid, cos, average, mask, masked)


def near_data_mask(grid, states, radius=0.1):
    """Grid nodes within ``radius`` (in box-normalised units) of any state in ``states``."""
    Y, V = grid.mesh()
    states = np.asarray(states, dtype=float)
    states = states[np.all(np.isfinite(states), axis=1)]
    sy = grid.y_range[1] - grid.y_range[0]
    sv = grid.v_range[1] - grid.v_range[0]
    nodes = np.column_stack([Y.ravel() / sy, V.ravel() / sv])
    pts = np.column_stack([states[:, 0] / sy, states[:, 1] / sv])
    best = np.full(nodes.shape[0], np.inf)
    for chunk in np.array_split(pts, max(1, pts.shape[0] // 512)):
        d2 = ((nodes[:, None, :] - chunk[None, :, :]) ** 2).sum(-1)
        best = np.minimum(best, d2.min(axis=1))
    return (np.sqrt(best) <= radius).reshape(Y.shape)


def portrait_similarity(coeff_fn, spec, train_states, resolution=41, inflate=0.2, radius=0.1):
    """Surrogate vs ground-truth unforced field on the training-state box."""
    grid = PortraitGrid.around(train_states, inflate, resolution)
    sur = phase_portrait(surrogate_portrait_fn(coeff_fn), grid)
    tru = phase_portrait(truth_portrait_fn(spec), grid)
    sim = cosine_similarity_map(sur, tru, near_data_mask(grid, train_states, radius))
    return sim, sur, tru


# --- rollout and reconstruction -------------------------------------------

@dataclass
class RolloutResult:
    scores: list
    predictions: list = field(default_factory=list)   # per trajectory: (t, y_hat, v_hat) or None
    diverged: list = field(default_factory=list)

    @property
    def mean(self):
        return mean_accuracy(self.scores)

    def per_trajectory(self):
        ids = sorted({s.traj_id for s in self.scores})
        return {j: mean_accuracy([s for s in self.scores if s.traj_id == j]) for j in ids}


def evaluate_rollout(coeff_fn, dataset):
    """Open-loop rollout of the surrogate from each trajectory's true initial state.

    Integration runs on the union of the collocation and measurement times
    with linearly interpolated input; accuracy is scored per measured channel
    at the measurement times. A diverged rollout scores 0 on every channel.
    """
    scores, preds, diverged = [], [], []
    for tr in dataset:
        grid = np.union1d(tr.t_coll, tr.t_meas)
        u_fn = linear_input(tr.t_coll, tr.u_coll)
        try:
            states = rollout(coeff_fn, tr.x0, u_fn, grid)
        except IntegrationError:
            diverged.append(tr.traj_id)
            preds.append(None)
            scores.extend(failed_score(c, tr.traj_id) for c, _ in _channels(tr))
            continue
        pos = np.searchsorted(grid, tr.t_meas)
        y_hat, v_hat = states[pos, 0], states[pos, 1]
        preds.append((tr.t_meas, y_hat, v_hat))
        for c, meas in _channels(tr):
            scores.append(accuracy(y_hat if c == "y" else v_hat, meas, c, tr.traj_id))
    return RolloutResult(scores, preds, diverged)


def reconstruction_accuracy(reconstruct, dataset):
    """Solution-network fit at the measurement times of each trajectory.

    ``reconstruct(j, t)`` returns ``(y, v)`` for trajectory ``j`` of ``dataset``.
    """
    scores = []
    for j, tr in enumerate(dataset):
        y, v = reconstruct(j, tr.t_meas)
        for c, meas in _channels(tr):
            scores.append(accuracy(y if c == "y" else v, meas, c, tr.traj_id))
    return scores


def canonical_table(coeff_fn, t, y, v, u):
    """Rows ``(t, y, v, k, d, g, omega_n, zeta, gain, valid)`` along a trajectory."""
    k, d, g = coeff_fn(np.asarray(y), np.asarray(v), np.asarray(u))
    wn, zeta, gain, valid = canonical_fields(k, d, g)
    return {"t": np.asarray(t), "y": np.asarray(y), "v": np.asarray(v), "k": k, "d": d, "g": g,
            "omega_n": wn, "zeta": zeta, "gain": gain, "valid": valid}


# --- inverse-PINN baselines -----------------------------------------------

@dataclass
class BaselineSpec:
    kind: str = "ipinn_m"
    trajectory: int = 0

    def __post_init__(self):
        self.kind = self.kind.replace("-", "_")
        if self.kind not in ("ipinn", "ipinn_m"):
            raise UsageError(f"unknown baseline {self.kind!r}")

    def select(self, dataset):
        if self.kind == "ipinn":
            if not 0 <= self.trajectory < len(dataset):
                raise UsageError(f"trajectory {self.trajectory} out of range")
            return dataset.subset([self.trajectory])
        return dataset


@dataclass
class BaselineResult:
    spec: BaselineSpec
    sol_net: SolutionNetwork
    sol_params: dict
    sol_buffers: dict
    theta: np.ndarray
    log: list

    def coefficient_fn(self):
        k, d, g = (float(c) for c in self.theta)

        def fn(y, v, u):
            shape = np.shape(y)
            return np.full(shape, k), np.full(shape, d), np.full(shape, g)

        return fn


class BaselineTrainer:
    """Joint training of a solution network and three global coefficients."""

    def __init__(self, spec, dataset, config, sol_net=None, theta0=(1.0, 1.0, 1.0)):
        self.spec = spec
        self.config = config
        self.dataset = spec.select(dataset)
        self.sol_net = sol_net or SolutionNetwork(normalization=dataset.normalization)
        self.data = TrainingData(self.dataset, self.sol_net)
        self.sol_params, self.sol_buffers = self.sol_net.init(config.seed)
        self.sol_params["theta"] = np.asarray(theta0, dtype=float)
        self.opt_sol = Adam(config.lr_sol)
        self.opt_theta = Adam(config.lr_param)
        self.rng = np.random.default_rng([config.seed, 7])
        self.epoch = 0
        self.log = []

    def step(self, coll_idx):
        cfg = self.config
        leaves = as_leaves(self.sol_params)
        theta = leaves["theta"]

        def coeff(y, v, u):
            ones = np.ones(np.shape(ad.value_of(y)))
            return theta[0] * ones, theta[1] * ones, theta[2] * ones

        parts = phase1_losses(self.sol_net, leaves, self.sol_buffers, self.data, coeff, coll_idx,
                              cfg, kinematic=cfg.kinematic)
        total = phase1_total(parts, cfg.lambda_d, cfg.lambda_ic, cfg.lambda_p1)
        grads = ad.backward(total, wrt=leaves.values())
        net = {k: v for k, v in self.sol_params.items() if k != "theta"}
        net = self.opt_sol.step(net, {k: grads[leaves[k]] for k in net})
        net["theta"] = self.opt_theta.step({"theta": self.sol_params["theta"]},
                                           {"theta": grads[theta]})["theta"]
        self.sol_params = net
        return LossReport(PHASE1, data=float(parts["data"].value), ic=float(parts["ic"].value),
                          phys=float(parts["phys"].value), total=float(total.value))

    def run_epoch(self):
        n = self.data.n_coll_total
        bs = n if self.config.batch_coll <= 0 else min(self.config.batch_coll, n)
        perm = self.rng.permutation(n)
        reports = [self.step(np.sort(perm[s:s + bs])) for s in range(0, n, bs)]
        report = LossReport.mean(reports)
        self.log.append(report)
        self.epoch += 1
        return report

    def fit(self, epochs=None):
        end = self.config.epochs if epochs is None else epochs
        while self.epoch < end:
            self.run_epoch()
        return self

    def state_dict(self):
        return {"epoch": self.epoch, "sol_params": copy_params(self.sol_params),
                "sol_buffers": copy_params(self.sol_buffers),
                "opt_sol": self.opt_sol.state_dict(), "opt_theta": self.opt_theta.state_dict(),
                "rng": self.rng.bit_generator.state, "log": [r.to_dict() for r in self.log]}

    def load_state_dict(self, state):
        self.epoch = int(state["epoch"])
        self.sol_params = copy_params(state["sol_params"])
        self.sol_buffers = copy_params(state["sol_buffers"])
        self.opt_sol.load_state_dict(state["opt_sol"])
        self.opt_theta.load_state_dict(state["opt_theta"])
        self.rng = np.random.default_rng()
        self.rng.bit_generator.state = state["rng"]
        self.log = [LossReport(**r) for r in state["log"]]

    def result(self):
        params = copy_params(self.sol_params)
        theta = params.pop("theta")
        return BaselineResult(self.spec, self.sol_net, params, copy_params(self.sol_buffers),
                              theta, list(self.log))


def train_ipinn_baseline(dataset, spec, config, sol_net=None):
    """Fit an inverse PINN with constant ``(k, d, g)`` (no curriculum, no hints)."""
    return BaselineTrainer(spec, dataset, config, sol_net).fit().result()


# --- output files ---------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_metrics_json(path, payload):
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_portrait_csv(path, surrogate, truth, similarity):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "v", "fy_hat", "fv_hat", "fy_true", "fv_true", "cos"])
        for row in zip(surrogate.y.ravel(), surrogate.v.ravel(), surrogate.fy.ravel(),
                       surrogate.fv.ravel(), truth.fy.ravel(), truth.fv.ravel(),
                       similarity.cosine.ravel()):
            w.writerow(["" if not np.isfinite(x) else repr(float(x)) for x in row])


def write_rollout_csv(path, t, y_hat, v_hat, y_true, v_true=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "y_hat", "v_hat", "y_true", "v_true"])
        vt = v_true if v_true is not None else [None] * len(t)
        for row in zip(t, y_hat, v_hat, y_true, vt):
            w.writerow(["" if x is None else repr(float(x)) for x in row])


def write_table_csv(path, table):
    cols = list(table)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        valid = np.asarray(table.get("valid", np.ones(len(table[cols[0]]), bool)))
        for i in range(len(table[cols[0]])):
            row = []
            for c in cols:
                x = table[c][i]
                if c == "valid":
                    row.append("true" if x else "false")
                elif c in ("omega_n", "zeta", "gain") and not valid[i]:
                    row.append("")
                else:
                    row.append(repr(float(x)))
            w.writerow(row)
