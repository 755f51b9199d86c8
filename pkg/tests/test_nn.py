import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_difference, grad_rel_error
from dexlab.errors import ConfigurationError, NumericError, UsageError
from dexlab.nn import (
    AdamState,
    MlpSpec,
    adam_step,
    init_params,
    load_checkpoint,
    mlp_backward,
    mlp_forward,
    polyak_update,
    save_checkpoint,
)


def random_instance(rng, max_width=8):
    n_layers = rng.integers(2, 5)
    sizes = tuple(int(s) for s in rng.integers(1, max_width + 1, size=n_layers))
    spec = MlpSpec(sizes, "relu", rng.choice(["identity", "tanh"]))
    params = rng.normal(0, 0.7, spec.n_params)
    x = rng.normal(0, 1, sizes[0])
    u = rng.normal(0, 1, sizes[-1])
    return spec, params, x, u


def test_param_count_layout():
    spec = MlpSpec((3, 4, 2))
    assert spec.n_params == 3 * 4 + 4 + 4 * 2 + 2
    default = MlpSpec.actor(7, 3)
    assert default.layer_sizes == (7, 256, 256, 256, 3)
    assert default.output_activation == "tanh"
    assert MlpSpec.critic(10).output_activation == "identity"


@pytest.mark.parametrize("sizes", [(1,), (), (3, 0, 1)])
def test_invalid_spec(sizes):
    with pytest.raises(ConfigurationError):
        MlpSpec(sizes)


def test_zero_params_tanh_gives_zero():
    spec = MlpSpec((4, 5, 3), output_activation="tanh")
    out, _ = mlp_forward(spec, np.zeros(spec.n_params), np.array([0.3, -2.0, 5.0, 1.0]))
    assert np.array_equal(out, np.zeros(3))


def test_symmetric_linear():
    spec = MlpSpec((2, 1))
    out, _ = mlp_forward(spec, np.array([1.0, 1.0, 0.0]), np.array([0.3, -0.3]))
    assert out[0] == 0.0


def test_two_layer_hand_evaluation():
    spec = MlpSpec((2, 2, 1))
    W1 = np.array([[1.0, -2.0], [0.5, 0.25]])
    b1 = np.array([0.1, -0.3])
    W2 = np.array([[2.0, -1.5]])
    b2 = np.array([0.7])
    params = np.concatenate([W1.ravel(), b1, W2.ravel(), b2])
    x = np.array([0.4, 0.9])
    # hidden pre-activations: 0.4 - 1.8 + 0.1 = -1.3 -> 0 ; 0.2 + 0.225 - 0.3 = 0.125
    expected = 2.0 * 0.0 - 1.5 * 0.125 + 0.7
    out, _ = mlp_forward(spec, params, x)
    assert abs(out[0] - expected) < 1e-12


def test_dimension_and_numeric_errors():
    spec = MlpSpec((2, 3, 1))
    p = np.zeros(spec.n_params)
    with pytest.raises(ConfigurationError):
        mlp_forward(spec, p, np.zeros(3))
    with pytest.raises(ConfigurationError):
        mlp_forward(spec, np.zeros(5), np.zeros(2))
    with pytest.raises(NumericError):
        mlp_forward(spec, p, np.array([np.nan, 0.0]))


def test_backward_zero_upstream(rng):
    spec, params, x, _ = random_instance(rng)
    _, cache = mlp_forward(spec, params, x)
    pg, ig = mlp_backward(spec, cache, np.zeros(spec.out_dim))
    assert not pg.any() and not ig.any()


def test_backward_linear_outer_product():
    spec = MlpSpec((3, 2))
    params = np.arange(spec.n_params, dtype=float) * 0.1
    x = np.array([1.0, -2.0, 0.5])
    u = np.array([0.3, -0.7])
    _, cache = mlp_forward(spec, params, x)
    pg, ig = mlp_backward(spec, cache, u)
    assert np.allclose(pg[:6].reshape(2, 3), np.outer(u, x), rtol=0, atol=1e-15)
    assert np.allclose(pg[6:], u, rtol=0, atol=1e-15)
    W = params[:6].reshape(2, 3)
    assert np.allclose(ig, W.T @ u, rtol=0, atol=1e-15)


def test_backward_rejects_mismatched_cache(rng):
    spec, params, x, u = random_instance(rng)
    _, cache = mlp_forward(spec, params, x)
    other = MlpSpec(spec.layer_sizes + (2,))
    with pytest.raises(UsageError):
        mlp_backward(other, cache, np.zeros(2))
    with pytest.raises(UsageError):
        mlp_backward(spec, cache, np.zeros(spec.out_dim + 1))


def test_gradients_match_finite_differences(rng):
    worst = 0.0
    for _ in range(100):
        spec, params, x, u = random_instance(rng)
        _, cache = mlp_forward(spec, params, x)
        pg, ig = mlp_backward(spec, cache, u)
        f_p = lambda p: float(u @ mlp_forward(spec, p, x)[0])
        f_x = lambda z: float(u @ mlp_forward(spec, params, z)[0])
        worst = max(worst, grad_rel_error(pg, central_difference(f_p, params)))
        worst = max(worst, grad_rel_error(ig, central_difference(f_x, x)))
    assert worst < 1e-4


def test_batched_gradient_is_sum_of_rows(rng):
    spec = MlpSpec((3, 5, 2), output_activation="tanh")
    params = init_params(spec, rng)
    X = rng.normal(size=(4, 3))
    U = rng.normal(size=(4, 2))
    _, cache = mlp_forward(spec, params, X)
    pg, ig = mlp_backward(spec, cache, U)
    total = np.zeros_like(pg)
    for i in range(4):
        _, c = mlp_forward(spec, params, X[i])
        g, gi = mlp_backward(spec, c, U[i])
        total += g
        assert np.allclose(gi, ig[i], atol=1e-14)
    assert np.allclose(total, pg, atol=1e-13)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3),
    st.integers(0, 2**31 - 1),
)
def test_tanh_output_bounded(x, seed):
    spec = MlpSpec((3, 4, 2), output_activation="tanh")
    params = np.random.default_rng(seed).normal(0, 10, spec.n_params)
    out, _ = mlp_forward(spec, params, np.array(x))
    assert np.all(np.abs(out) <= 1.0)


def test_init_fan_in_bounds(rng):
    spec = MlpSpec((9, 16, 4))
    p = init_params(spec, rng)
    assert np.all(np.abs(p[: 9 * 16 + 16]) <= 1 / 3)
    assert np.all(np.abs(p[9 * 16 + 16 :]) <= 1 / 4)
    assert np.array_equal(p, init_params(spec, np.random.default_rng(12345)))


# Adam ------------------------------------------------------------------------


def test_adam_zero_gradient_leaves_params():
    p = np.array([0.5, -1.0])
    st0 = AdamState(np.array([0.2, -0.1]), np.array([0.01, 0.02]), 3)
    p1, st1 = adam_step(p, np.zeros(2), st0)
    # with zero gradient the bias-corrected step is not zero when moments are non-zero;
    # from a fresh state it is exactly zero
    fresh_p, fresh = adam_step(p, np.zeros(2), AdamState.zeros(2))
    assert np.array_equal(fresh_p, p)
    assert np.all(np.abs(st1.first_moment) < np.abs(st0.first_moment))
    assert np.all(st1.second_moment < st0.second_moment)
    assert st1.step_count == 4


def test_adam_first_step_hand_computed():
    p, st_ = adam_step(np.array([0.0]), np.array([1.0]), AdamState.zeros(1, 0.001))
    # m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
    assert abs(p[0] - (-0.001 / (1 + 1e-8))) < 1e-18
    assert st_.step_count == 1


def test_adam_two_identical_steps_hand_recursion():
    lr, b1, b2, eps, g = 0.001, 0.9, 0.999, 1e-8, 0.37
    m = v = 0.0
    x = 1.5
    for t in (1, 2):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1**t)) / ((v / (1 - b2**t)) ** 0.5 + eps)
    p = np.array([1.5])
    s = AdamState.zeros(1, lr)
    for _ in range(2):
        p, s = adam_step(p, np.array([g]), s)
    assert abs(p[0] - x) < 1e-12


def test_adam_deterministic_and_nonfinite(rng):
    p = rng.normal(size=20)
    g = rng.normal(size=20)
    a, _ = adam_step(p, g, AdamState.zeros(20))
    b, _ = adam_step(p, g, AdamState.zeros(20))
    assert a.tobytes() == b.tobytes()
    g[7] = np.inf
    with pytest.raises(NumericError, match="index 7"):
        adam_step(p, g, AdamState.zeros(20))


# Polyak ----------------------------------------------------------------------


def test_polyak_examples(rng):
    online = rng.normal(size=5)
    target = rng.normal(size=5)
    assert np.array_equal(polyak_update(target, online, 0.0), online)
    assert np.array_equal(polyak_update(target, online, 1.0), target)
    assert np.array_equal(polyak_update(online, online, 0.3), online)
    assert polyak_update(np.array([1.0]), np.array([0.0]), 0.95)[0] == 0.95
    with pytest.raises(ConfigurationError):
        polyak_update(np.zeros(2), np.zeros(3), 0.5)


@given(st.floats(0, 1), st.integers(0, 1000))
def test_polyak_fixed_point(rate, seed):
    x = np.random.default_rng(seed).normal(size=4)
    assert np.allclose(polyak_update(x, x, rate), x, rtol=0, atol=1e-15)


def test_polyak_convergence_within_300(rng):
    online = rng.normal(size=50)
    target = rng.normal(size=50)
    for _ in range(300):
        target = polyak_update(target, online, 0.95)
    assert np.max(np.abs(target - online)) < 1e-6


# checkpoints -----------------------------------------------------------------


def test_checkpoint_roundtrip_bit_exact(tmp_path, rng):
    spec = MlpSpec((5, 7, 3), output_activation="tanh")
    params = rng.normal(size=spec.n_params)
    params[0] = -0.0
    path = tmp_path / "net.dexckpt"
    save_checkpoint(path, spec, params)
    raw = path.read_bytes()
    assert raw.startswith(b"DEXCKPT")
    spec2, params2 = load_checkpoint(path)
    assert spec2 == spec
    assert params2.tobytes() == params.tobytes()
    # parameters are the trailing little-endian float64 block
    assert raw[-8 * spec.n_params :] == params.astype("<f8").tobytes()


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "x"
    p.write_bytes(b"nonsense")
    with pytest.raises(ConfigurationError):
        load_checkpoint(p)
