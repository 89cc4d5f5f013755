import numpy as np
import pytest

from sdpi.network import (
    AdamState,
    Dual,
    MlpCore,
    ValueNetwork,
    adam_step,
    loss_gradient,
)


def test_dual_arithmetic():
    a = Dual(2.0, 1.0)
    b = Dual(3.0, 0.5)
    s = a + b
    assert (s.primal, s.tangent) == (5.0, 1.5)
    p = a * b
    assert p.primal == 6.0
    assert p.tangent == pytest.approx(2.0 * 0.5 + 1.0 * 3.0)
    d = a - 1.0
    assert (d.primal, d.tangent) == (1.0, 1.0)
    t = Dual(0.5, 2.0).tanh()
    assert t.primal == pytest.approx(np.tanh(0.5))
    assert t.tangent == pytest.approx((1 - np.tanh(0.5) ** 2) * 2.0)


def test_mlp_tangent_matches_dual_scalar():
    # one input, tangent 1: dY must equal the dual-number derivative
    core = MlpCore([1, 8, 8, 1], seed=2)
    x = 0.7
    Y, dY, _ = core.forward(np.array([[x]]), dX=np.array([[1.0]]))

    h = [Dual(x, 1.0)]
    for l, (W, b) in enumerate(core.layers[:-1]):
        h = [sum((Dual(W[j, i]) * h[i] for i in range(len(h))), Dual(b[j])).tanh()
             for j in range(W.shape[0])]
    W, b = core.layers[-1]
    out = sum((Dual(W[0, i]) * h[i] for i in range(len(h))), Dual(b[0]))
    assert Y[0, 0] == pytest.approx(out.primal)
    assert dY[0, 0] == pytest.approx(out.tangent)


@pytest.mark.parametrize("kind,encoding,skip", [
    ("mlp", "identity", False),
    ("mlp", "identity", True),
    ("mlp", "angle-sincos", False),
    ("quadratic", "identity", False),
])
def test_time_derivative_matches_fd(kind, encoding, skip):
    net = ValueNetwork(2, (12, 12), kind=kind, encoding=encoding, skip=skip, seed=4)
    rng = np.random.default_rng(0)
    tau = rng.uniform(0.1, 1.0, size=6)
    x = rng.standard_normal((6, 2))
    T = net.time_derivative(tau, x)
    eps = 1e-6
    fd = (net.forward(tau + eps, x) - net.forward(tau - eps, x)) / (2 * eps)
    np.testing.assert_allclose(T, fd, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("seed", range(20))
def test_grad_query_matches_fd(seed):
    rng = np.random.default_rng(seed)
    kind = "quadratic" if seed % 4 == 3 else "mlp"
    skip = seed % 2 == 0 and kind == "mlp"
    net = ValueNetwork(2, (10, 10), kind=kind, skip=skip, seed=seed)
    n = 5
    tau = rng.uniform(0.0, 1.0, size=n)
    x = rng.standard_normal((n, 2))
    gV = rng.standard_normal(n)
    gT = rng.standard_normal(n)
    grad = net.grad_query(tau, x, gV, gT)

    def objective(params):
        net.set_params(params)
        V, T = net.value_and_tau_derivative(tau, x)
        return float(np.dot(gV, V) + np.dot(gT, T))

    p = net.get_params()
    idx = rng.choice(p.size, size=20, replace=False)
    eps = 1e-6
    worst = 0.0
    for j in idx:
        pp = p.copy()
        pp[j] += eps
        fp = objective(pp)
        pp[j] -= 2 * eps
        fm = objective(pp)
        fd = (fp - fm) / (2 * eps)
        worst = max(worst, abs(fd - grad[j]) / max(1e-8, abs(fd), abs(grad[j])))
    net.set_params(p)
    assert worst < 1e-4


def test_quadratic_kind_is_quadratic_in_x():
    net = ValueNetwork(2, (8,), kind="quadratic", seed=1)
    x = np.array([[1.0, 2.0]])
    tau = np.array([0.3])
    v1 = net.forward(tau, x)
    v2 = net.forward(tau, 2 * x)
    assert v2 == pytest.approx(4 * v1)
    assert net.forward(tau, np.zeros((1, 2)))[0] == pytest.approx(0.0)


def test_angle_encoding_periodic():
    net = ValueNetwork(2, (8, 8), encoding="angle-sincos", seed=5)
    x = np.array([[0.4, 1.0]])
    shifted = x + np.array([[2 * np.pi, 0.0]])
    assert net.forward([0.2], x)[0] == pytest.approx(net.forward([0.2], shifted)[0])


def test_lipschitz_bound_holds_empirically():
    net = ValueNetwork(2, (16, 16), seed=7)
    bound = net.lipschitz_bound()
    rng = np.random.default_rng(9)
    x1 = rng.standard_normal((200, 2))
    x2 = x1 + 0.01 * rng.standard_normal((200, 2))
    tau = rng.uniform(0, 1, size=200)
    num = np.abs(net.forward(tau, x1) - net.forward(tau, x2))
    den = np.linalg.norm(x1 - x2, axis=1)
    assert np.max(num / den) <= bound * (1 + 1e-9)


def test_save_load_bit_exact(tmp_path):
    net = ValueNetwork(3, (9, 9), skip=True, seed=12)
    path = tmp_path / "net.txt"
    net.save(path)
    loaded = ValueNetwork.load(path)
    np.testing.assert_array_equal(net.get_params(), loaded.get_params())
    assert loaded.hidden == net.hidden and loaded.kind == net.kind


def test_set_params_shape_check():
    net = ValueNetwork(2, (4,), seed=0)
    with pytest.raises(ValueError):
        net.set_params(np.zeros(net.n_params + 1))


def test_adam_first_step_is_signlike():
    params = np.array([1.0, -1.0])
    grad = np.array([0.3, -0.2])
    state = AdamState(lr=0.1)
    new = adam_step(params, state, grad)
    # with zero moments the first update is lr * g / (|g| + eps)
    np.testing.assert_allclose(new, params - 0.1 * np.sign(grad), atol=1e-6)
    assert state.step == 1


def test_adam_rejects_shape_mismatch():
    state = AdamState(lr=0.1)
    with pytest.raises(ValueError):
        adam_step(np.zeros(3), state, np.zeros(4))


def test_loss_gradient_helper():
    net = ValueNetwork(1, (6,), seed=3)
    tau = np.array([0.1, 0.7])
    x = np.array([[0.2], [-0.3]])
    target = np.array([1.0, -1.0])

    def loss_fn(V, T):
        r = V - target
        return np.mean(r**2), 2 * r / r.size, None

    loss, grad = loss_gradient(net, tau, x, loss_fn)
    assert grad.shape == (net.n_params,)
    assert loss >= 0.0
