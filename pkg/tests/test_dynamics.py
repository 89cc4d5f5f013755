import numpy as np
import pytest

from sdpi import dynamics as dyn
from sdpi.envs import Transition, make_duffing, make_lqr
from sdpi.errors import DataError, FitFailureError
from sdpi.rng import substream


def _linear_dataset(env, n, rng, dt=0.01):
    ds = dyn.DynamicsDataset(d=env.d, m=env.m)
    xs = rng.standard_normal((n, env.d))
    us = rng.uniform(env.U.lo, env.U.hi, size=(n, env.m))
    for x, u in zip(xs, us):
        # exact exponential-integrator step would be cleanest; a small RK4
        # step keeps the difference-quotient bias at O(dt)
        k1 = env.f(x[None], u[None])[0]
        k2 = env.f((x + dt / 2 * k1)[None], u[None])[0]
        k3 = env.f((x + dt / 2 * k2)[None], u[None])[0]
        k4 = env.f((x + dt * k3)[None], u[None])[0]
        xp = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        ds.append(Transition(x=x, u=u, x_plus=xp, dt=dt))
    return ds


def test_build_targets_rejects_empty():
    with pytest.raises(DataError):
        dyn.build_targets(dyn.DynamicsDataset(d=2, m=1))


def test_fit_requires_minimum_data():
    ds = dyn.DynamicsDataset(d=4, m=4)
    rng = np.random.default_rng(0)
    for _ in range(10):
        ds.append(Transition(rng.standard_normal(4), rng.standard_normal(4),
                             rng.standard_normal(4), dt=0.01))
    with pytest.raises(FitFailureError):
        dyn.fit(ds)


def test_linear_fit_recovers_lqr_matrices():
    env = make_lqr(4)
    rng = substream(0, "test-linfit")
    ds = _linear_dataset(env, 400, rng, dt=0.01)
    model = dyn.fit(ds, representation="linear")
    # W = [A | B | bias]; the difference quotient has O(dt) bias
    A_hat = model.W[:, :4]
    B_hat = model.W[:, 4:8]
    probe_x = np.zeros((1, 4))
    A_true = env.fx(probe_x, np.zeros((1, 4)))[0]
    assert np.max(np.abs(A_hat - A_true)) < 0.05
    assert np.max(np.abs(B_hat - np.eye(4))) < 0.05
    assert np.max(np.abs(model.W[:, -1])) < 0.05


def test_linear_fit_relative_error_small():
    env = make_lqr(4)
    rng = substream(1, "test-linfit")
    ds = _linear_dataset(env, 600, rng, dt=0.01)
    model = dyn.fit(ds, representation="linear")
    zero = lambda tau, x: np.zeros((np.atleast_2d(x).shape[0], env.m))
    err = dyn.relative_l2_error(model, env, zero, 512, substream(2, "eval"))
    assert err < 0.02


def test_true_dynamics_zero_error():
    env = make_duffing()
    model = dyn.TrueDynamics(env)
    zero = lambda tau, x: np.zeros((np.atleast_2d(x).shape[0], 1))
    err = dyn.relative_l2_error(model, env, zero, 512, substream(0, "eval"))
    assert err == pytest.approx(0.0, abs=1e-14)
    eta = dyn.eta_infinity(model, env, zero, 4096, substream(0, "eta"))
    assert eta == pytest.approx(0.0, abs=1e-14)


def test_relative_error_sample_size_contract():
    env = make_duffing()
    model = dyn.TrueDynamics(env)
    zero = lambda tau, x: np.zeros((np.atleast_2d(x).shape[0], 1))
    with pytest.raises(ValueError):
        dyn.relative_l2_error(model, env, zero, 100, substream(0, "eval"))
    with pytest.raises(ValueError):
        dyn.eta_infinity(model, env, zero, 100, substream(0, "eta"))


def test_mlp_fit_reduces_loss():
    env = make_duffing()
    rng = substream(3, "test-mlpfit")
    ds = _linear_dataset(env, 300, rng, dt=0.01)
    model = dyn.fit(ds, representation="mlp", steps=400, lr=5e-3, seed=0)
    assert np.isfinite(model.train_loss)
    zero = lambda tau, x: np.zeros((np.atleast_2d(x).shape[0], 1))
    err = dyn.relative_l2_error(model, env, zero, 512, substream(4, "eval"))
    assert err < 0.5


def test_eta_partial_u_zero_for_true_model():
    env = make_duffing()
    model = dyn.TrueDynamics(env)
    zero = lambda tau, x: np.zeros((np.atleast_2d(x).shape[0], 1))
    val = dyn.eta_partial_u(model, env, zero, 256, substream(0, "etau"))
    assert val == pytest.approx(0.0, abs=1e-9)


def test_dataset_csv_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    ds = dyn.DynamicsDataset(d=2, m=1)
    for _ in range(5):
        ds.append(Transition(rng.standard_normal(2), rng.standard_normal(1),
                             rng.standard_normal(2), dt=0.05))
    path = tmp_path / "data.csv"
    ds.save_csv(path)
    back = dyn.DynamicsDataset.load_csv(path, d=2, m=1)
    x0, u0, xp0, dt0 = ds.arrays()
    x1, u1, xp1, dt1 = back.arrays()
    np.testing.assert_array_equal(x0, x1)
    np.testing.assert_array_equal(xp0, xp1)
    np.testing.assert_array_equal(dt0, dt1)


def test_unknown_representation():
    env = make_lqr(2)
    ds = _linear_dataset(env, 100, np.random.default_rng(0))
    with pytest.raises(FitFailureError):
        dyn.fit(ds, representation="gp")
