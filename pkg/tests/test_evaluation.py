import csv
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from solis import IPINN
from solis.evaluation import (BaselineSpec, BaselineTrainer, PhasePortrait, PortraitGrid, accuracy,
                              canonical_table, cosine_similarity_map, evaluate_rollout,
                              mean_accuracy, near_data_mask, phase_portrait, portrait_similarity,
                              reconstruction_accuracy, surrogate_portrait_fn, train_ipinn_baseline,
                              truth_portrait_fn, write_metrics_json, write_portrait_csv,
                              write_table_csv)
from solis.exceptions import UsageError
from solis.networks import flatten
from solis.systems import SystemSpec, true_coefficients
from solis.trainer import TrainConfig

from conftest import make_tiny, tiny_nets


# --- accuracy -------------------------------------------------------------

def test_accuracy_examples():
    t = np.sin(np.linspace(0, 3, 20))
    assert accuracy(t, t).accuracy == 100.0
    s = accuracy([0.0, 0.0], [0.0, 1.0])
    assert s.nrmse == pytest.approx(1 / np.sqrt(2)) and s.accuracy == pytest.approx(29.289, abs=1e-3)


def test_accuracy_errors_and_negative():
    with pytest.raises(UsageError):
        accuracy([1.0, 2.0], [3.0, 3.0])
    with pytest.raises(UsageError):
        accuracy([1.0], [1.0])
    assert accuracy([10.0, -10.0], [0.0, 1.0]).accuracy < 0


@given(arrays(float, 10, elements=st.floats(-10, 10)), arrays(float, 10, elements=st.floats(-10, 10)),
       st.floats(-100, 100))
def test_accuracy_shift_invariant(pred, true, c):
    if np.ptp(true) < 1e-3:
        return
    a = accuracy(pred, true).accuracy
    b = accuracy(pred + c, true + c).accuracy
    assert a == pytest.approx(b, rel=1e-9, abs=1e-9)
    assert a <= 100.0


# --- portraits ------------------------------------------------------------

def grid():
    return PortraitGrid((-2.0, 2.0), (-2.0, 2.0), 5)


def test_truth_portrait_examples():
    vdp = truth_portrait_fn(SystemSpec("vanderpol"))
    assert vdp(np.array([0.0]), np.array([0.0])) == (0.0, 0.0)
    duf = truth_portrait_fn(SystemSpec("duffing"))
    fy, fv = duf(np.array([1.0]), np.array([0.0]))
    assert fy[0] == 0.0 and fv[0] == -2.0


def test_constant_surrogate_is_linear():
    fn = surrogate_portrait_fn(lambda y, v, u: (2.0 + 0 * y, 0.5 + 0 * y, 1.0 + 0 * y))
    a, b = np.array([0.3, -1.0]), np.array([1.1, 0.4])
    f = lambda x: np.array(fn(x[:1], x[1:]))
    x1, x2 = np.array([0.3, 1.1]), np.array([-1.0, 0.4])
    assert np.allclose(f(x1 + 2 * x2), f(x1) + 2 * f(x2))


def test_grid_validation_and_box():
    with pytest.raises(UsageError):
        PortraitGrid((-1.0, 1.0), (-1.0, 1.0), 1)
    g = PortraitGrid.around(np.array([[0.0, -1.0], [1.0, 1.0]]), inflate=0.2, resolution=41)
    assert g.y_range == pytest.approx((-0.2, 1.2)) and g.v_range == pytest.approx((-1.4, 1.4))
    Y, V = g.mesh()
    assert Y.shape == (41, 41) and Y[0, 0] == pytest.approx(-0.2) and V[0, -1] == pytest.approx(1.4)


def _field(fn):
    return phase_portrait(fn, grid())


def test_cosine_examples():
    f = _field(lambda y, v: (v, -y - 0.3 * v))
    neg = _field(lambda y, v: (-v, y + 0.3 * v))
    dbl = _field(lambda y, v: (2 * v, -2 * y - 0.6 * v))
    assert cosine_similarity_map(f, f).average == pytest.approx(1.0)
    assert cosine_similarity_map(neg, f).average == pytest.approx(-1.0)
    assert cosine_similarity_map(dbl, f).average == pytest.approx(1.0)


def test_cosine_excludes_equilibrium_and_all_degenerate():
    f = _field(lambda y, v: (v, -y))
    sim = cosine_similarity_map(f, f)
    assert np.isnan(sim.cosine[2, 2]) and np.isfinite(sim.cosine).sum() == 24
    zero = _field(lambda y, v: (0 * y, 0 * y))
    with pytest.raises(UsageError):
        cosine_similarity_map(zero, f)


@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(-3, 3))
def test_cosine_scale_invariant(a, b, damp):
    f = _field(lambda y, v: (v, -y - damp * v))
    g = _field(lambda y, v: (v + 0.2 * y, -2 * y * y * y - v))
    base = cosine_similarity_map(f, g)
    fa = PhasePortrait(f.grid, f.y, f.v, a * f.fy, a * f.fv)
    gb = PhasePortrait(g.grid, g.y, g.v, b * g.fy, b * g.fv)
    scaled = cosine_similarity_map(fa, gb)
    assert -1 <= base.average <= 1
    assert scaled.average == pytest.approx(base.average, abs=1e-9)


def test_near_data_mask():
    g = PortraitGrid((0.0, 1.0), (0.0, 1.0), 11)
    mask = near_data_mask(g, np.array([[0.5, 0.5], [np.nan, 0.0]]), radius=0.105)
    assert mask.sum() == 5 and mask[5, 5]


def test_oracle_portrait_similarity():
    spec = SystemSpec("duffing")
    states = np.random.default_rng(0).uniform(-1, 1, size=(200, 2))
    sim, sur, tru = portrait_similarity(lambda y, v, u: true_coefficients(spec, y, v, u), spec, states)
    assert sim.average == pytest.approx(1.0) and sim.masked_average == pytest.approx(1.0)
    assert sur.fy.shape == (41, 41)


# --- rollout --------------------------------------------------------------

@pytest.fixture(scope="module")
def duffing_test():
    _, test = make_tiny("duffing", n_train=1, n_test=2, n_meas=40, n_coll=400, horizon=10.0)
    return test


@pytest.fixture(scope="module")
def vdp_test():
    _, test = make_tiny("vanderpol", n_train=1, n_test=2, n_meas=40, n_coll=400, horizon=10.0)
    return test


def test_oracle_rollout(duffing_test):
    spec = duffing_test.spec
    res = evaluate_rollout(lambda y, v, u: true_coefficients(spec, y, v, u), duffing_test)
    assert res.mean > 99.0 and res.diverged == []
    assert len(res.scores) == 4 and set(res.per_trajectory()) == {0, 1}


def test_zero_dynamics_floor(vdp_test):
    zero = lambda y, v, u: (0 * y, 0 * y, 0 * y)
    assert evaluate_rollout(zero, vdp_test).mean < 70.0


def test_channel_average_is_table_row(duffing_test):
    spec = duffing_test.spec
    res = evaluate_rollout(lambda y, v, u: true_coefficients(spec, y, v, u), duffing_test)
    assert res.mean == pytest.approx(np.mean([s.accuracy for s in res.scores]))
    assert res.per_trajectory()[0] == pytest.approx(mean_accuracy(res.scores[:2]))


def test_diverged_rollout_scores_zero(duffing_test):
    unstable = lambda y, v, u: (-50.0 + 0 * y, 0 * y, 0 * y)
    res = evaluate_rollout(unstable, duffing_test)
    assert res.diverged == [0, 1] and res.mean == 0.0 and res.predictions == [None, None]


def test_reconstruction_accuracy_with_truth(duffing_test):
    def recon(j, t):
        tr = duffing_test[j]
        return tr.y_meas, tr.v_meas
    scores = reconstruction_accuracy(recon, duffing_test)
    assert all(s.accuracy == 100.0 for s in scores) and len(scores) == 4


def test_canonical_table_and_csv(tmp_path):
    coeff = lambda y, v, u: (np.array([4.0, -1.0]), np.array([4.0, 1.0]), np.array([8.0, 1.0]))
    table = canonical_table(coeff, [0.0, 0.1], [1.0, 2.0], [0.0, 0.0], [0.0, 0.0])
    write_table_csv(tmp_path / "c.csv", table)
    rows = list(csv.DictReader(open(tmp_path / "c.csv")))
    assert rows[0]["valid"] == "true" and float(rows[0]["omega_n"]) == 2.0
    assert rows[1]["valid"] == "false" and rows[1]["omega_n"] == rows[1]["zeta"] == rows[1]["gain"] == ""


def test_writers(tmp_path):
    write_metrics_json(tmp_path / "m.json", {"b": np.float64(np.inf), "a": np.arange(2)})
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc == {"a": [0, 1], "b": None}
    f = _field(lambda y, v: (v, -y))
    write_portrait_csv(tmp_path / "p.csv", f, f, cosine_similarity_map(f, f))
    rows = list(csv.reader(open(tmp_path / "p.csv")))
    assert rows[0] == ["y", "v", "fy_hat", "fv_hat", "fy_true", "fv_true", "cos"] and len(rows) == 26


# --- baselines ------------------------------------------------------------

def test_baseline_spec():
    train, _ = make_tiny(n_train=3)
    assert len(BaselineSpec("ipinn", 1).select(train)) == 1
    assert BaselineSpec("ipinn-m").kind == "ipinn_m" and len(BaselineSpec().select(train)) == 3
    with pytest.raises(UsageError):
        BaselineSpec("pinn")
    with pytest.raises(UsageError):
        BaselineSpec("ipinn", 5).select(train)


def _baseline(train, kind, seed=0, epochs=6):
    sol, _ = tiny_nets(train)
    cfg = TrainConfig(epochs=epochs, batch_coll=16, lr_sol=1e-2, lr_param=1e-2, seed=seed)
    return train_ipinn_baseline(train, BaselineSpec(kind), cfg, sol)


def test_baseline_reproducible_and_global(tiny_lti):
    train, _ = tiny_lti
    a, b = _baseline(train, "ipinn_m"), _baseline(train, "ipinn_m")
    assert np.array_equal(a.theta, b.theta) and np.array_equal(flatten(a.sol_params), flatten(b.sol_params))
    k, d, g = a.coefficient_fn()(np.array([0.0, 2.0]), np.array([1.0, -1.0]), 0.0)
    assert np.all(k == k[0]) and np.all(d == d[0]) and a.theta.shape == (3,)
    one = _baseline(train, "ipinn")
    assert one.spec.kind == "ipinn" and not np.array_equal(one.theta, a.theta)


def test_baseline_resume(tiny_lti):
    train, _ = tiny_lti
    sol, _ = tiny_nets(train)
    cfg = TrainConfig(epochs=6, batch_coll=16, lr_sol=1e-2, lr_param=1e-2)
    full = BaselineTrainer(BaselineSpec(), train, cfg, sol).fit()
    half = BaselineTrainer(BaselineSpec(), train, cfg, sol).fit(epochs=3)
    rest = BaselineTrainer(BaselineSpec(), train, cfg, sol)
    rest.load_state_dict(half.state_dict())
    rest.fit()
    assert np.array_equal(full.result().theta, rest.result().theta)


@pytest.mark.slow
def test_ipinn_m_recovers_lti_coefficients():
    train, _ = make_tiny("lti", n_train=3, n_test=1, n_meas=60, n_coll=240, horizon=15.0)
    cfg = TrainConfig(epochs=600, lr_sol=5e-3, lr_param=5e-3, batch_coll=480)
    est = IPINN(train_config=cfg, rff_features=16, rff_sigma=2.0).fit(train)
    assert np.all(np.abs(est.theta_ - [2.0, 1.0, 3.0]) < 0.05 * np.array([2.0, 1.0, 3.0]))


def test_constant_damping_cannot_match_vanderpol():
    train, _ = make_tiny("vanderpol", n_train=2)
    res = _baseline(train, "ipinn_m", epochs=4)
    k, d, g = res.coefficient_fn()(np.array([0.0, 2.0]), np.zeros(2), 0.0)
    true_d = true_coefficients(train.spec, np.array([0.0, 2.0]), np.zeros(2))[1]
    assert d[0] == d[1] and true_d[0] < 0 < true_d[1]
    assert np.sign(d[0]) != np.sign(true_d[0]) or np.sign(d[1]) != np.sign(true_d[1])
