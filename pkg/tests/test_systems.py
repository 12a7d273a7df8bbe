import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from solis.datasets import (Dataset, Normalization, generate_dataset, generate_splits, load_dataset,
                            save_dataset)
from solis.exceptions import ConfigurationError, ParseError
from solis.systems import (DEFAULT_PARAMS, InputSignal, SystemSpec, duffing_rhs, output_field,
                           simulate_truth, true_coefficients, twotank_rhs, vdp_rhs)

from oracles import fine_rk4, lti_exact

ZERO = InputSignal(kind="zero")
PUMP = InputSignal(offset=1.0, amplitude=0.8)  # strictly positive pump command


def spec_for(system, **kw):
    return SystemSpec(system, input=PUMP, **kw) if system == "twotank" else SystemSpec(system, **kw)


# --- right-hand sides -----------------------------------------------------

def test_duffing_examples():
    p = dict(alpha=1.0, beta=1.0, delta=0.0, g_u=1.0)
    assert duffing_rhs((1.0, 0.0), 0.0, p) == (0.0, -2.0)
    p = dict(alpha=3.0, beta=0.0, delta=0.4, g_u=2.0)
    assert duffing_rhs((0.5, -1.0), 0.7, p) == pytest.approx((-1.0, -1.5 + 0.4 + 1.4))
    assert duffing_rhs((0.0, 2.0), 1.0, dict(alpha=5.0, beta=9.0, delta=0.3, g_u=1.0))[1] == pytest.approx(0.4)


def test_vdp_examples():
    p = dict(mu=1.0, g_u=1.0)
    assert vdp_rhs((0.0, 0.0), 0.0, p) == (0.0, 0.0)
    assert vdp_rhs((2.0, 1.0), 0.0, p) == (1.0, -5.0)
    assert vdp_rhs((-1.0, 3.0), 0.5, p)[1] == pytest.approx(1.5)


def test_twotank_examples():
    p = dict(A1=1.0, A2=1.0, c1=0.5, c2=0.5, k_p=1.0)
    assert twotank_rhs((0.0, 0.0), 0.0, p) == (0.0, 0.0)
    h = 0.64  # k_p u = c sqrt(h) = 0.4
    assert np.allclose(twotank_rhs((h, h), 0.4, p), (0.0, 0.0), atol=1e-15)
    unit = dict(A1=1.0, A2=1.0, c1=1.0, c2=1.0, k_p=1.0)
    assert np.allclose(twotank_rhs((1.0, 1.0), 0.0, unit), (-1.0, 0.0))
    assert twotank_rhs((0.0, 0.0), -3.0, p) == (0.0, 0.0)  # pump cannot reverse


@pytest.mark.parametrize("bad", [dict(system="duffing", params={"alpha": 0.0}),
                                 dict(system="vanderpol", params={"mu": -1.0}),
                                 dict(system="twotank", params={"c1": 0.0}),
                                 dict(system="duffing", horizon=0.0),
                                 dict(system="pendulum"),
                                 dict(system="duffing", params={"gamma": 1.0})])
def test_spec_validation(bad):
    with pytest.raises(ConfigurationError):
        SystemSpec(**bad)


def test_spec_round_trip():
    spec = SystemSpec("duffing", params={"beta": 2.0}, input=InputSignal(kind="chirp"))
    assert SystemSpec.from_dict(spec.to_dict()) == spec
    assert spec.params["alpha"] == DEFAULT_PARAMS["duffing"]["alpha"]


@pytest.mark.parametrize("kind", ["multisine", "step", "chirp", "zero"])
def test_input_signals_bounded_and_reproducible(kind):
    sig = InputSignal(kind=kind, amplitude=1.0)
    t = np.linspace(0, 15, 301)
    a = sig.realize(np.random.default_rng(0), 15.0)(t)
    b = sig.realize(np.random.default_rng(0), 15.0)(t)
    assert np.array_equal(a, b) and np.max(np.abs(a)) <= 1.0 + 1e-12


# --- ground truth ---------------------------------------------------------

def test_vdp_limit_cycle_amplitude():
    spec = SystemSpec("vanderpol", input=ZERO, horizon=20.0, dt_truth=0.002)
    tr = simulate_truth(spec, (2.0, 0.0))
    assert abs(np.max(np.abs(tr.states[tr.t > 10, 0])) - 2.0) < 0.05


def test_vdp_limit_cycle_invariance():
    spec = SystemSpec("vanderpol", input=ZERO, horizon=40.0, dt_truth=0.005)
    peaks = [np.max(np.abs(simulate_truth(spec, (a, 0.0)).states[-2000:, 0])) for a in (0.5, 2.0, 3.0)]
    assert np.ptp(peaks) / np.mean(peaks) < 0.02


def test_linear_duffing_matches_matrix_exponential():
    spec = SystemSpec("duffing", params={"beta": 0.0, "alpha": 2.0, "delta": 0.5, "g_u": 1.5},
                      input=InputSignal(kind="zero", offset=0.7), horizon=5.0)
    tr = simulate_truth(spec, (0.3, -0.1))
    ref = lti_exact(2.0, 0.5, 1.5, (0.3, -0.1), 0.7, tr.t[::100])
    assert np.max(np.abs(tr.states[::100] - ref)) < 1e-6


@pytest.mark.parametrize("system", ["duffing", "vanderpol", "lti"])
def test_zero_state_stays_zero(system):
    spec = SystemSpec(system, input=ZERO, horizon=5.0)
    assert np.all(simulate_truth(spec, (0.0, 0.0)).states == 0.0)


@pytest.mark.parametrize("system", ["duffing", "vanderpol", "twotank"])
def test_truth_step_convergence(system):
    spec = spec_for(system, horizon=10.0)
    x0 = spec.sample_x0(np.random.default_rng(1))
    coarse = simulate_truth(spec, x0, seed=3)
    fine = simulate_truth(spec, x0, seed=3, dt=spec.dt_truth / 2)
    assert np.max(np.abs(fine.states[::2] - coarse.states)) < 1e-7


def test_truth_matches_fine_reference():
    spec = SystemSpec("duffing", horizon=5.0)
    tr = simulate_truth(spec, (1.0, 0.0), seed=0)
    ref = fine_rk4(lambda t, x: np.array(spec.rhs(x, tr.u_fn(t))), (1.0, 0.0), 0.0, 5.0, 20000)
    assert np.allclose(tr.states[-1], ref, atol=1e-9)


def test_twotank_outputs_are_lower_level_and_rate():
    spec = SystemSpec("twotank", horizon=5.0)
    tr = simulate_truth(spec, (1.0, 0.5), seed=0)
    assert np.array_equal(tr.outputs[:, 0], tr.states[:, 1])
    rate = np.gradient(tr.states[:, 1], tr.t)
    assert np.max(np.abs(rate[5:-5] - tr.outputs[5:-5, 1])) < 1e-4


def test_output_field_matches_simulated_acceleration():
    spec = spec_for("twotank", horizon=5.0)
    tr = simulate_truth(spec, (1.0, 0.5), seed=0)
    dv, acc = output_field(spec, tr.outputs[:, 0], tr.outputs[:, 1], tr.u)
    fd = np.gradient(tr.outputs[:, 1], tr.t)
    assert np.max(np.abs(acc[5:-5] - fd[5:-5])) < 1e-3


def test_true_coefficients_consistent_with_rhs():
    for system in ("duffing", "vanderpol", "lti"):
        spec = SystemSpec(system)
        y, v, u = np.array([0.3, -1.2]), np.array([0.5, 0.1]), np.array([0.2, -0.4])
        k, d, g = true_coefficients(spec, y, v, u)
        assert np.allclose(-k * y - d * v + g * u, spec.rhs((y, v), u)[1])
    assert true_coefficients(SystemSpec("twotank"), 1.0, 0.0) is None


# --- datasets -------------------------------------------------------------

def spec_small(system="duffing"):
    return SystemSpec(system, horizon=5.0)


def test_noise_free_measurements_on_truth():
    ds = generate_dataset(spec_small(), 2, 10, 40, 0.0, 0)
    for tr in ds:
        idx = np.searchsorted(tr.truth.t, tr.t_meas)
        assert np.array_equal(tr.truth.outputs[idx, 0], tr.y_meas)
        assert np.array_equal(tr.truth.outputs[idx, 1], tr.v_meas)


def test_counts_and_grids():
    ds = generate_dataset(spec_small(), 5, 40, 512, 0.01, 0)
    assert sum(tr.n_meas for tr in ds) == 200 and sum(tr.n_coll for tr in ds) == 5 * 512
    for tr in ds:
        assert np.all(np.diff(tr.t_meas) > 0)
        assert np.allclose(np.diff(tr.t_coll), tr.t_coll[1] - tr.t_coll[0])
    assert len({tuple(tr.x0) for tr in ds}) == 5


def test_collocation_density_enforced():
    with pytest.raises(ConfigurationError):
        generate_dataset(spec_small(), 1, 10, 39, 0.0, 0)


def test_same_seed_same_bytes(tmp_path):
    a, _ = generate_splits(spec_small(), 2, 1, 10, 40, 0.05, 3)
    b, _ = generate_splits(spec_small(), 2, 1, 10, 40, 0.05, 3)
    save_dataset(a, tmp_path / "a.csv")
    save_dataset(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_noise_statistics():
    sigma = 0.05
    ds = generate_dataset(spec_small(), 10, 120, 480, sigma, 0)
    resid = np.concatenate([tr.y_meas - tr.truth.outputs[np.searchsorted(tr.truth.t, tr.t_meas), 0]
                            for tr in ds])
    assert resid.size >= 1000 and abs(resid.std() / sigma - 1) < 0.05


def test_splits_share_normalisation_and_differ():
    train, test = generate_splits(spec_small(), 3, 2, 10, 40, 0.0, 0)
    assert train.normalization == test.normalization
    assert test.split == "test" and train.dataset_hash == test.dataset_hash
    assert not {tuple(tr.x0) for tr in train} & {tuple(tr.x0) for tr in test}


@pytest.mark.parametrize("system", ["duffing", "vanderpol", "twotank"])
def test_normalised_range(system):
    train, _ = generate_splits(SystemSpec(system, horizon=8.0), 4, 0, 30, 120, 0.01, 0)
    nz = train.normalization
    for tr in train:
        for vals, off, sc in ((tr.y_meas, nz.y_offset, nz.y_scale), (tr.v_meas, nz.v_offset, nz.v_scale),
                              (tr.u_coll, nz.u_offset, nz.u_scale), (tr.t_coll, nz.t_offset, nz.t_scale)):
            assert np.all(np.abs((vals - off) / sc) <= 1.5)


def test_latent_velocity():
    ds = generate_dataset(spec_small(), 2, 10, 40, 0.0, 0, latent_velocity=True)
    assert not ds.velocity_measured
    assert np.isnan(ds[0].measured_x0[1])
    assert np.all(np.isnan(ds.measurement_states()[:, 1]))


def test_mixed_normalisation_rejected():
    ds = generate_dataset(spec_small(), 2, 10, 40, 0.0, 0)
    ds[1].normalization = Normalization(y_scale=7.0)
    with pytest.raises(ConfigurationError):
        Dataset(ds.trajectories, ds.normalization)


# --- persistence ----------------------------------------------------------

@pytest.mark.parametrize("latent", [False, True])
def test_round_trip_bit_exact(tmp_path, latent):
    train, test = generate_splits(spec_small(), 2, 1, 10, 40, 0.02, 0, latent_velocity=latent)
    for ds in (train, test):
        path = save_dataset(ds, tmp_path / f"{ds.split}.csv", extra={"k": 1})
        back = load_dataset(path)
        assert back.split == ds.split and back.normalization == ds.normalization
        assert back.dataset_hash == ds.dataset_hash and back.spec == ds.spec
        for a, b in zip(ds, back):
            for f in ("x0", "t_meas", "y_meas", "u_meas", "t_coll", "u_coll"):
                assert np.array_equal(getattr(a, f), getattr(b, f))
            assert (a.v_meas is None and b.v_meas is None) or np.array_equal(a.v_meas, b.v_meas)
    assert json.loads((tmp_path / "train.json").read_text())["extra"] == {"k": 1}


def _write(tmp_path, text):
    p = tmp_path / "d.csv"
    p.write_text(text)
    return p


def test_missing_kind_column(tmp_path):
    with pytest.raises(ParseError) as exc:
        load_dataset(_write(tmp_path, "traj_id,t,y,v,u\n0,0.0,1,1,0\n"))
    assert exc.value.line == 1


def test_parse_errors_carry_line(tmp_path):
    text = "traj_id,kind,t,y,v,u\n0,m,0.0,1,1,0\n0,c,0.0,,,zz\n"
    with pytest.raises(ParseError) as exc:
        load_dataset(_write(tmp_path, text))
    assert exc.value.line == 3
    with pytest.raises(ParseError) as exc:
        load_dataset(_write(tmp_path, "traj_id,kind,t,y,v,u\n0,x,0.0,1,1,0\n"))
    assert exc.value.line == 2


def test_hand_made_csv_without_sidecar(tmp_path):
    rows = ["traj_id,kind,t,y,v,u"]
    rows += [f"0,m,{t},{np.sin(t)},,0.0" for t in np.linspace(0, 1, 5)]
    rows += [f"0,c,{t},,,0.0" for t in np.linspace(0, 1, 20)]
    ds = load_dataset(_write(tmp_path, "\n".join(rows) + "\n"))
    assert ds.split == "train" and ds[0].v_meas is None and ds.spec is None
    assert ds[0].n_meas == 5 and ds[0].n_coll == 20


@given(st.integers(0, 2**31 - 1))
def test_measurement_times_inside_horizon(seed):
    ds = generate_dataset(SystemSpec("lti", horizon=2.0, dt_truth=0.01), 1, 5, 20, 0.0, seed)
    tr = ds[0]
    assert tr.t_meas[0] >= 0 and tr.t_meas[-1] <= 2.0 and np.all(np.diff(tr.t_meas) > 0)
