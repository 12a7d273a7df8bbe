"""Trajectory datasets: generation from benchmark systems, normalisation, CSV persistence.

On disk a dataset is a CSV with columns ``traj_id,kind,t,y,v,u`` (``kind`` is
``m`` for measurements, ``c`` for collocation samples) plus a JSON sidecar with
the system spec, seed, noise level, split, normalisation and initial states.
"""

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, ParseError, UsageError
from .systems import SystemSpec, simulate_truth

COLUMNS = ("traj_id", "kind", "t", "y", "v", "u")
SPLIT_CODES = {"train": 0, "test": 1}


@dataclass(frozen=True)
class Normalization:
    """Affine maps ``x_n = (x - offset) / scale`` for time and each channel."""

    t_offset: float = 0.0
    t_scale: float = 1.0
    y_offset: float = 0.0
    y_scale: float = 1.0
    v_offset: float = 0.0
    v_scale: float = 1.0
    u_offset: float = 0.0
    u_scale: float = 1.0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: float(v) for k, v in d.items()})


def _mid_half(a):
    lo, hi = float(np.min(a)), float(np.max(a))
    half = 0.5 * (hi - lo)
    return 0.5 * (hi + lo), (half if half > 1e-12 else 1.0)


@dataclass
class Trajectory:
    traj_id: int
    x0: np.ndarray              # true initial (y, v)
    t_meas: np.ndarray
    y_meas: np.ndarray
    v_meas: np.ndarray          # None when velocity is latent
    u_meas: np.ndarray
    t_coll: np.ndarray
    u_coll: np.ndarray
    normalization: Normalization = None
    truth: object = field(default=None, repr=False, compare=False)

    @property
    def n_meas(self):
        return self.t_meas.size

    @property
    def n_coll(self):
        return self.t_coll.size

    @property
    def horizon(self):
        return float(self.t_coll[-1])

    @property
    def measured_x0(self):
        """State at the first measurement (used as the initial-condition target)."""
        v0 = np.nan if self.v_meas is None else self.v_meas[0]
        return np.array([self.y_meas[0], v0])


@dataclass
class Dataset:
    trajectories: list
    normalization: Normalization
    split: str = "train"
    spec: SystemSpec = None
    sigma: float = 0.0
    seed: int = 0
    dataset_hash: str = ""

    def __post_init__(self):
        if self.split not in SPLIT_CODES:
            raise ConfigurationError(f"split must be 'train' or 'test', got {self.split!r}")
        for tr in self.trajectories:
            if tr.normalization is None:
                tr.normalization = self.normalization
            elif tr.normalization != self.normalization:
                raise ConfigurationError(
                    f"trajectory {tr.traj_id} carries a different normalisation than the dataset")

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __getitem__(self, i):
        return self.trajectories[i]

    @property
    def velocity_measured(self):
        return all(tr.v_meas is not None for tr in self.trajectories)

    def measurement_states(self):
        """All measured ``(y, v)`` pairs stacked, shape ``(N, 2)`` (v may be NaN)."""
        rows = []
        for tr in self.trajectories:
            v = tr.v_meas if tr.v_meas is not None else np.full(tr.n_meas, np.nan)
            rows.append(np.column_stack([tr.y_meas, v]))
        return np.vstack(rows)

    def subset(self, indices):
        return replace(self, trajectories=[self.trajectories[i] for i in indices])


def compute_normalization(trajectories):
    t_end = max(tr.horizon for tr in trajectories)
    y = np.concatenate([tr.y_meas for tr in trajectories])
    y_mid, y_half = _mid_half(y)
    if all(tr.v_meas is not None for tr in trajectories):
        v = np.concatenate([tr.v_meas for tr in trajectories])
    else:
        v = np.concatenate([np.gradient(tr.y_meas, tr.t_meas) for tr in trajectories])
    v_mid, v_half = _mid_half(v)
    u_mid, u_half = _mid_half(np.concatenate([tr.u_coll for tr in trajectories]))
    return Normalization(0.5 * t_end, 0.5 * t_end, y_mid, y_half, v_mid, v_half, u_mid, u_half)


def _measurement_indices(rng, n_fine, n_meas):
    """Jittered-uniform fine-grid indices; the first is always 0 so x0 is observed."""
    if n_meas < 2:
        raise ConfigurationError("need at least two measurements per trajectory")
    spacing = (n_fine - 1) / (n_meas - 1)
    base = np.arange(n_meas) * spacing
    jitter = rng.uniform(-0.5, 0.5, n_meas) * spacing
    jitter[0] = 0.0
    idx = np.clip(np.round(base + jitter), 0, n_fine - 1).astype(int)
    idx[0] = 0
    idx = np.unique(idx)
    # collisions are rare; fill back to the requested count deterministically
    if idx.size < n_meas:
        free = np.setdiff1d(np.arange(n_fine), idx)
        idx = np.sort(np.concatenate([idx, rng.choice(free, n_meas - idx.size, replace=False)]))
    return idx


def dataset_hash(spec, n_traj, n_meas, n_coll, sigma, seed, latent_velocity=False, n_test=None):
    payload = {"spec": spec.to_dict() if spec is not None else None, "n_traj": n_traj,
               "n_meas": n_meas, "n_coll": n_coll, "sigma": sigma, "seed": seed,
               "latent_velocity": latent_velocity, "n_test": n_test}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def generate_dataset(spec, n_traj, n_meas, n_coll, sigma, seed, split="train",
                     normalization=None, latent_velocity=False, hash_=None):
    """Simulate ``n_traj`` trajectories and sample sparse noisy measurements.

    Collocation points form a uniform grid of ``n_coll`` samples over the
    horizon; measurements are ``n_meas`` jittered-uniform samples of the same
    dense truth, so with ``sigma=0`` they lie exactly on it. Test splits must
    be given the training normalisation.
    """
    if n_coll < 4 * n_meas:
        raise ConfigurationError(f"need n_coll >= 4 * n_meas, got {n_coll} < {4 * n_meas}")
    if split not in SPLIT_CODES:
        raise ConfigurationError(f"split must be 'train' or 'test', got {split!r}")
    dc = spec.horizon / (n_coll - 1)
    sub = int(np.ceil(dc / spec.dt_truth - 1e-9))
    n_fine = (n_coll - 1) * sub + 1
    trajectories = []
    for j in range(n_traj):
        rng = np.random.default_rng([seed, SPLIT_CODES[split], j])
        x0_internal = spec.sample_x0(rng)
        truth = simulate_truth(spec, x0_internal, n_steps=n_fine - 1,
                               u_fn=spec.input.realize(rng, spec.horizon))
        idx = _measurement_indices(rng, n_fine, n_meas)
        clean = truth.outputs[idx]
        noisy = clean + sigma * rng.standard_normal(clean.shape)
        t_coll = truth.t[::sub]
        trajectories.append(Trajectory(
            traj_id=j,
            x0=truth.outputs[0].copy(),
            t_meas=truth.t[idx],
            y_meas=noisy[:, 0],
            v_meas=None if latent_velocity else noisy[:, 1],
            u_meas=truth.u[idx],
            t_coll=t_coll,
            u_coll=truth.u[::sub],
            truth=truth,
        ))
    if normalization is None:
        if split == "test":
            raise ConfigurationError("test splits reuse the training normalisation; pass it explicitly")
        normalization = compute_normalization(trajectories)
    for tr in trajectories:
        tr.normalization = normalization
    if hash_ is None:
        hash_ = dataset_hash(spec, n_traj, n_meas, n_coll, sigma, seed, latent_velocity)
    return Dataset(trajectories, normalization, split, spec, sigma, seed, hash_)


def generate_splits(spec, n_train, n_test, n_meas, n_coll, sigma, seed, latent_velocity=False):
    """Train and test datasets with disjoint initial states and input realisations."""
    h = dataset_hash(spec, n_train, n_meas, n_coll, sigma, seed, latent_velocity, n_test)
    train = generate_dataset(spec, n_train, n_meas, n_coll, sigma, seed, "train",
                             latent_velocity=latent_velocity, hash_=h)
    test = generate_dataset(spec, n_test, n_meas, n_coll, sigma, seed, "test",
                            normalization=train.normalization, latent_velocity=latent_velocity,
                            hash_=h)
    return train, test


# --- persistence ----------------------------------------------------------

def sidecar_path(path):
    return Path(path).with_suffix(".json")


def _fmt(x):
    return repr(float(x))


def save_dataset(dataset, path, extra=None):
    """Write ``path`` (CSV) and its JSON sidecar; floats are written round-trip exact.

    ``extra`` is an optional JSON-serialisable dict stored verbatim in the sidecar.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for tr in dataset:
            for i in range(tr.n_meas):
                v = "" if tr.v_meas is None else _fmt(tr.v_meas[i])
                w.writerow([tr.traj_id, "m", _fmt(tr.t_meas[i]), _fmt(tr.y_meas[i]), v,
                            _fmt(tr.u_meas[i])])
            for i in range(tr.n_coll):
                w.writerow([tr.traj_id, "c", _fmt(tr.t_coll[i]), "", "", _fmt(tr.u_coll[i])])
    meta = {
        "split": dataset.split,
        "seed": dataset.seed,
        "sigma": dataset.sigma,
        "dataset_hash": dataset.dataset_hash,
        "spec": dataset.spec.to_dict() if dataset.spec is not None else None,
        "normalization": dataset.normalization.to_dict(),
        "trajectories": [{"id": tr.traj_id, "x0": [float(a) for a in tr.x0],
                          "normalization": tr.normalization.to_dict()} for tr in dataset],
    }
    if extra:
        meta["extra"] = extra
    with open(sidecar_path(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _parse_float(text, line, column, allow_empty=False):
    if text == "":
        if allow_empty:
            return None
        raise ParseError(f"empty value in column {column!r}", line=line)
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"cannot parse {text!r} in column {column!r}", line=line) from None


def load_dataset(path):
    """Read a dataset written by :func:`save_dataset` (or hand-made in the same layout)."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"dataset file {path} does not exist")
    side = sidecar_path(path)
    meta = json.loads(side.read_text()) if side.exists() else {}
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file", line=1)
        missing = [c for c in COLUMNS if c not in header]
        if missing:
            raise ParseError(f"missing column(s) {missing}", line=1)
        col = {c: header.index(c) for c in COLUMNS}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            try:
                tid = int(row[col["traj_id"]])
            except ValueError:
                raise ParseError(f"bad traj_id {row[col['traj_id']]!r}", line=lineno) from None
            kind = row[col["kind"]]
            if kind not in ("m", "c"):
                raise ParseError(f"kind must be 'm' or 'c', got {kind!r}", line=lineno)
            t = _parse_float(row[col["t"]], lineno, "t")
            u = _parse_float(row[col["u"]], lineno, "u")
            entry = rows.setdefault(tid, {"m": [], "c": []})
            if kind == "m":
                y = _parse_float(row[col["y"]], lineno, "y")
                v = _parse_float(row[col["v"]], lineno, "v", allow_empty=True)
                entry["m"].append((t, y, v, u))
            else:
                entry["c"].append((t, u))
    x0s = {d["id"]: np.array(d["x0"], dtype=float) for d in meta.get("trajectories", [])}
    norms = {d["id"]: Normalization.from_dict(d["normalization"])
             for d in meta.get("trajectories", []) if "normalization" in d}
    trajectories = []
    for tid in sorted(rows):
        m, c = rows[tid]["m"], rows[tid]["c"]
        if not m or not c:
            raise ParseError(f"trajectory {tid} needs both measurement and collocation rows")
        m_arr = np.array([(r[0], r[1], np.nan if r[2] is None else r[2], r[3]) for r in m])
        c_arr = np.array(c)
        latent = any(r[2] is None for r in m)
        tr = Trajectory(tid, x0s.get(tid), m_arr[:, 0], m_arr[:, 1],
                        None if latent else m_arr[:, 2], m_arr[:, 3], c_arr[:, 0], c_arr[:, 1],
                        normalization=norms.get(tid))
        if tr.x0 is None:
            tr.x0 = tr.measured_x0
        trajectories.append(tr)
    if "normalization" in meta:
        normalization = Normalization.from_dict(meta["normalization"])
    else:
        normalization = compute_normalization(trajectories)
    spec = SystemSpec.from_dict(meta["spec"]) if meta.get("spec") else None
    return Dataset(trajectories, normalization, meta.get("split", "train"), spec,
                   meta.get("sigma", 0.0), meta.get("seed", 0), meta.get("dataset_hash", ""))


__all__ = ["Normalization", "Trajectory", "Dataset", "generate_dataset", "generate_splits",
           "save_dataset", "load_dataset", "compute_normalization"]
