import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from solis import autodiff as ad
from solis.blocks import (GruSpec, MlpSpec, MoeSpec, RffSpec, augment_state, film_generate,
                          film_modulate, gru_encode, init_film, init_gru, init_mlp, init_moe,
                          init_rff, mlp_forward, moe_combine, moe_forward, n_params, rff_encode)
from solis.exceptions import ConfigurationError, UsageError

from oracles import central_difference, gru_scalar_loop, mlp_scalar_loop, rel_error


# --- MLP ------------------------------------------------------------------

def test_zero_mlp_gives_zero():
    spec = MlpSpec(3, (5,), 2)
    params = {k: np.zeros_like(v) for k, v in init_mlp(spec, np.random.default_rng(0)).items()}
    assert np.array_equal(mlp_forward(params, np.ones((4, 3)), spec), np.zeros((4, 2)))


def test_single_linear_layer_identity():
    spec = MlpSpec(3, (), 3)
    params = {"W0": np.eye(3), "b0": np.zeros(3)}
    x = np.array([[1.0, -2.0, 0.5]])
    assert np.array_equal(mlp_forward(params, x, spec), x)


def test_mlp_matches_loop_oracle():
    spec = MlpSpec(2, (8,), 1)
    params = init_mlp(spec, np.random.default_rng(42))
    params["b0"] = np.random.default_rng(1).normal(size=8)  # non-trivial biases
    out = mlp_forward(params, np.array([[1.0, 1.0]]), spec)[0]
    ref = mlp_scalar_loop([params["W0"], params["W1"]], [params["b0"], params["b1"]], [1.0, 1.0])
    assert np.allclose(out, ref, rtol=1e-13, atol=1e-14)


def test_mlp_width_mismatch():
    spec = MlpSpec(2, (4,), 1)
    with pytest.raises(UsageError):
        mlp_forward(init_mlp(spec, np.random.default_rng(0)), np.ones((1, 3)), spec)


def test_parameter_count_formula():
    spec = MlpSpec(2, (64, 64), 3)
    assert spec.n_params == 4547
    assert n_params(init_mlp(spec, np.random.default_rng(0))) == 4547


def test_init_is_deterministic():
    spec = MlpSpec(2, (16,), 3)
    a = init_mlp(spec, np.random.default_rng(7))
    b = init_mlp(spec, np.random.default_rng(7))
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert all(np.all(a[k] == 0) for k in a if "b" in k)


# --- GRU ------------------------------------------------------------------

def test_zero_gru_stays_zero():
    spec = GruSpec(1, 4)
    params = {k: np.zeros_like(v) for k, v in init_gru(spec, np.random.default_rng(0)).items()}
    assert np.array_equal(gru_encode(params, [0.3, -1.0, 2.0], spec), np.zeros(4))


def test_gru_length_one_is_one_step():
    spec = GruSpec(1, 3)
    params = init_gru(spec, np.random.default_rng(2))
    p = {k.split(".")[1]: v for k, v in params.items()}
    ref = gru_scalar_loop(p["Wx"], p["Uzr"], p["Un"], p["b"], [0.7])
    assert np.allclose(gru_encode(params, [0.7], spec), ref, atol=1e-14)


def test_gru_matches_scalar_oracle():
    spec = GruSpec(1, 5)
    rng = np.random.default_rng(11)
    params = init_gru(spec, rng)
    params["gru.b"] = rng.normal(size=15)
    p = {k.split(".")[1]: v for k, v in params.items()}
    ref = gru_scalar_loop(p["Wx"], p["Uzr"], p["Un"], p["b"], [0.5, -0.5])
    assert np.allclose(gru_encode(params, [0.5, -0.5], spec), ref, atol=1e-14)


def test_gru_empty_sequence():
    spec = GruSpec(1, 3)
    with pytest.raises(UsageError):
        gru_encode(init_gru(spec, np.random.default_rng(0)), [], spec)


@given(arrays(float, st.integers(1, 12), elements=st.floats(-50, 50)))
def test_gru_hidden_bounded(seq):
    spec = GruSpec(1, 4)
    h = gru_encode(init_gru(spec, np.random.default_rng(0)), seq, spec)
    assert np.all(np.abs(h) <= 1.0)


# --- FiLM -----------------------------------------------------------------

def test_film_examples():
    z = np.array([1.0, 2.0])
    assert np.array_equal(film_modulate(z, np.ones(2), np.zeros(2)), z)
    assert np.array_equal(film_modulate(z, np.zeros(2), np.array([3.0, 4.0])), [3.0, 4.0])
    assert np.array_equal(film_modulate(z, np.array([2.0, 3.0]), np.array([-1.0, 1.0])), [1.0, 7.0])


def test_film_width_mismatch():
    with pytest.raises(UsageError):
        film_modulate(np.ones(3), np.ones(2), np.zeros(2))


def test_film_init_is_identity():
    params = init_film(6, {0: 8, 1: 8})
    ctx = np.random.default_rng(0).normal(size=(5, 6)) * 10
    for layer in (0, 1):
        g, b = film_generate(params, ctx, layer)
        assert np.max(np.abs(g - 1.0)) < 1e-6 and np.all(b == 0)


def test_identity_film_is_bit_identical():
    spec = MlpSpec(3, (8, 8), 2)
    params = init_mlp(spec, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(4, 3))
    film = {0: (np.ones(8), np.zeros(8)), 1: (np.ones(8), np.zeros(8))}
    assert np.array_equal(mlp_forward(params, x, spec), mlp_forward(params, x, spec, film=film))


# --- RFF ------------------------------------------------------------------

def test_rff_at_zero():
    B = init_rff(RffSpec(4, 1.0), np.random.default_rng(0))
    assert np.array_equal(rff_encode(0.0, B), np.r_[np.ones(4), np.zeros(4)])


@given(st.floats(-100, 100), st.floats(0.1, 5))
def test_rff_unit_pairs_and_periodicity(t, b):
    f = rff_encode(t, np.array([b]))
    assert np.hypot(f[0], f[1]) == pytest.approx(1.0, abs=1e-12)
    g = rff_encode(t + 1.0 / b, np.array([b]))
    assert np.allclose(f, g, atol=1e-9 * max(1.0, abs(t) * b))
    assert np.all(np.abs(f) <= 1.0)


def test_rff_time_derivative():
    B = np.array([0.3, 1.7])
    ts = np.linspace(0, 2, 5)
    _, d = ad.time_derivative(lambda t: rff_encode(t, B), ts)
    h = 1e-6
    fd = (rff_encode(ts + h, B) - rff_encode(ts - h, B)) / (2 * h)
    assert rel_error(d, fd) < 1e-6


# --- MoE ------------------------------------------------------------------

def test_moe_examples():
    out = moe_combine(np.array([3.7]), np.array([[1.0, 2.0, 3.0]]))
    assert np.allclose(out, [1, 2, 3])
    same = np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])
    assert np.allclose(moe_combine(np.array([5.0, -2.0]), same), [1, 2, 3])
    out = moe_combine(np.zeros(2), np.array([[1.0, 1, 1], [3.0, 3, 3]]))
    assert np.allclose(out, [2, 2, 2])


def test_moe_needs_experts():
    with pytest.raises(ConfigurationError):
        moe_combine(np.zeros(0), np.zeros((0, 3)))


@given(arrays(float, 4, elements=st.floats(-30, 30)), arrays(float, (4, 3), elements=st.floats(-10, 10)))
def test_moe_convex_hull(logits, experts):
    out = moe_combine(logits, experts)
    assert np.all(out >= experts.min(axis=0) - 1e-9) and np.all(out <= experts.max(axis=0) + 1e-9)


def test_moe_forward_gradient():
    spec = MoeSpec(3, MlpSpec(3, (4,), 3), MlpSpec(3, (4,), 3))
    params = init_moe(spec, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(5, 3))
    key = "moe.gate.W0"
    loss = lambda w: ad.sum_(ad.square(moe_forward({**params, key: w}, x, spec)))
    leaf = ad.variable(params[key])
    g = ad.backward(loss(leaf))[leaf]
    assert rel_error(g, central_difference(lambda w: float(loss(w)), params[key])) < 1e-4


# --- augmentation ---------------------------------------------------------

def test_augment_examples():
    assert np.array_equal(augment_state(0.0, 0.0, 0.0), np.zeros(9))
    assert np.array_equal(augment_state(1.0, 1.0, 1.0), np.ones(9))
    assert np.array_equal(augment_state(-2.0, 3.0, 0.0), [-2, 3, 0, 4, -8, 9, 2, 3, -6])


def test_augment_vectorised_with_scalar_input():
    out = augment_state(np.array([1.0, -2.0]), np.array([0.5, 3.0]), 0.0)
    assert out.shape == (2, 9)
    assert np.array_equal(out[1], [-2, 3, 0, 4, -8, 9, 2, 3, -6])


def test_gru_gradient_matches_fd():
    spec = GruSpec(1, 3)
    params = init_gru(spec, np.random.default_rng(4))
    seq = np.array([[0.2, -0.4, 0.9], [1.0, 0.0, -1.0]])
    loss = lambda w: ad.sum_(ad.square(gru_encode({**params, "gru.Uzr": w}, seq, spec)))
    leaf = ad.variable(params["gru.Uzr"])
    g = ad.backward(loss(leaf))[leaf]
    assert rel_error(g, central_difference(lambda w: float(loss(w)), params["gru.Uzr"])) < 1e-4
