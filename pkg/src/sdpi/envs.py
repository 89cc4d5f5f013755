"""Benchmark control problems: dynamics, costs, control sets, domains.

All dynamics/cost callables are vectorized over a leading batch axis.
Each environment stores the Lipschitz-in-control constants and the drift
bound used by the diagnostics, plus an analytic greedy map where the
argmin over the control box is available in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .geometry import Box


@dataclass(frozen=True)
class Transition:
    x: np.ndarray
    u: np.ndarray
    x_plus: np.ndarray
    dt: float

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not (
            np.all(np.isfinite(self.x))
            and np.all(np.isfinite(self.u))
            and np.all(np.isfinite(self.x_plus))
        ):
            raise ValueError("non-finite transition data")


@dataclass(frozen=True)
class Environment:
    name: str
    d: int
    m: int
    T: float
    dt: float
    f: callable                      # (n,d),(n,m) -> (n,d)
    L: callable                      # (n,d),(n,m) -> (n,)
    g: callable                      # (n,d) -> (n,)
    U: Box
    omega: Box
    control_affine: bool
    K_f: float
    K_L: float
    M_a: float
    mu_greedy: float                 # strong convexity of the greedy objective
    analytic_greedy: callable | None = None   # (n,d) states, (n,d) gradients -> (n,m)
    fx: callable | None = None       # (n,d),(n,m) -> (n,d,d)
    fu: callable | None = None       # (n,d),(n,m) -> (n,d,m)
    encoding: str = "identity"
    safety_scale: float = 10.0

    def safety_box(self) -> Box:
        half = self.safety_scale * np.max(np.abs(np.stack([self.omega.lo, self.omega.hi])))
        return Box.cube(half, self.d)


def _quad_cost(Q_diag_scale, R_diag_scale):
    def L(x, u):
        return 0.5 * Q_diag_scale * np.sum(x**2, axis=-1) + 0.5 * R_diag_scale * np.sum(
            u**2, axis=-1
        )

    return L


def _stable_matrix(d: int, seed: int, abscissa: float = -0.5) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1A2B]))
    R = rng.normal(size=(d, d)) * (0.5 / np.sqrt(d))
    alpha = np.max(np.real(np.linalg.eigvals(R)))
    return R - (alpha - abscissa) * np.eye(d)


def make_linear_env(name, A, B, q_f_scale, T, dt, k, omega_half, mu=1.0) -> Environment:
    """Linear dynamics with unit quadratic costs and box controls."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    d, m = B.shape
    U = Box.cube(k, m)
    omega = Box.cube(omega_half, d)

    def f(x, u):
        return x @ A.T + u @ B.T

    def g(x):
        return 0.5 * q_f_scale * np.sum(x**2, axis=-1)

    def greedy(x, p):
        # argmin over the box of p.(Ax + Bu) + |x|^2/2 + |u|^2/2
        return U.clamp(-(p @ B))

    # sup over the state box and control box of max_i |f_i|
    M_a = float(
        np.max(np.sum(np.abs(A), axis=1) * omega_half + np.sum(np.abs(B), axis=1) * k)
    )
    return Environment(
        name=name,
        d=d,
        m=m,
        T=T,
        dt=dt,
        f=f,
        L=_quad_cost(1.0, 1.0),
        g=g,
        U=U,
        omega=omega,
        control_affine=True,
        K_f=float(np.linalg.norm(B, 2)),
        K_L=float(k * np.sqrt(m)),
        M_a=M_a,
        mu_greedy=mu,
        analytic_greedy=greedy,
        fx=lambda x, u: np.broadcast_to(A, (x.shape[0], d, d)),
        fu=lambda x, u: np.broadcast_to(B, (x.shape[0], d, m)),
    )


def make_lqr(d: int, k: float = 1.0, seed: int = 0) -> Environment:
    if d not in (2, 4, 8, 16, 32, 64):
        raise ConfigError(f"unsupported LQR dimension {d}")
    A = _stable_matrix(d, seed)
    B = np.eye(d)
    return make_linear_env(f"lqr{d}", A, B, q_f_scale=10.0, T=10.0, dt=0.05, k=k, omega_half=3.0)


def make_spacecraft(k: float = 2.0) -> Environment:
    w = 0.01
    A = np.array(
        [
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [3 * w**2, 0.0, 0.0, 2 * w],
            [0.0, 0.0, -2 * w, 0.0],
        ]
    )
    B = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    env = make_linear_env("spacecraft", A, B, q_f_scale=10.0, T=10.0, dt=0.01, k=k, omega_half=3.0)
    return env


def make_duffing(alpha: float = 1.0, k: float = 4.0) -> Environment:
    beta = 1.0
    U = Box.cube(k, 1)
    omega = Box.cube(3.0, 2)

    def f(x, u):
        out = np.empty_like(x)
        out[:, 0] = x[:, 1]
        out[:, 1] = -x[:, 0] - alpha * x[:, 0] ** 3 + u[:, 0]
        return out

    def g(x):
        return 0.5 * 5.0 * np.sum(x**2, axis=-1)

    def greedy(x, p):
        return U.clamp(-p[:, 1:2] / beta)

    def fx(x, u):
        J = np.zeros((x.shape[0], 2, 2))
        J[:, 0, 1] = 1.0
        J[:, 1, 0] = -1.0 - 3.0 * alpha * x[:, 0] ** 2
        return J

    def fu(x, u):
        J = np.zeros((x.shape[0], 2, 1))
        J[:, 1, 0] = 1.0
        return J

    M_a = float(max(3.0, 3.0 + alpha * 27.0 + k))
    return Environment(
        name="duffing",
        d=2,
        m=1,
        T=10.0,
        dt=0.05,
        f=f,
        L=_quad_cost(1.0, beta),
        g=g,
        U=U,
        omega=omega,
        control_affine=True,
        K_f=1.0,
        K_L=float(beta * k),
        M_a=M_a,
        mu_greedy=beta,
        analytic_greedy=greedy,
        fx=fx,
        fu=fu,
    )


def angle_normalize(theta):
    return ((theta + np.pi) % (2 * np.pi)) - np.pi


def make_pendulum(k: float = 2.0) -> Environment:
    grav, mass, length = 10.0, 1.0, 1.0
    gain = 3.0 / (mass * length**2)
    swing = 3.0 * grav / (2.0 * length)
    r_u = 0.001
    U = Box.cube(k, 1)
    omega = Box(np.array([-np.pi, -8.0]), np.array([np.pi, 8.0]))

    def f(x, u):
        out = np.empty_like(x)
        out[:, 0] = x[:, 1]
        out[:, 1] = swing * np.sin(x[:, 0]) + gain * u[:, 0]
        return out

    def L(x, u):
        return angle_normalize(x[:, 0]) ** 2 + 0.1 * x[:, 1] ** 2 + r_u * u[:, 0] ** 2

    def g(x):
        return 0.5 * (angle_normalize(x[:, 0]) ** 2 + 0.1 * x[:, 1] ** 2)

    def greedy(x, p):
        return U.clamp(-gain * p[:, 1:2] / (2.0 * r_u))

    def fx(x, u):
        J = np.zeros((x.shape[0], 2, 2))
        J[:, 0, 1] = 1.0
        J[:, 1, 0] = swing * np.cos(x[:, 0])
        return J

    def fu(x, u):
        J = np.zeros((x.shape[0], 2, 1))
        J[:, 1, 0] = gain
        return J

    M_a = float(max(8.0, swing + gain * k))
    return Environment(
        name="pendulum",
        d=2,
        m=1,
        T=5.0,
        dt=0.05,
        f=f,
        L=L,
        g=g,
        U=U,
        omega=omega,
        control_affine=True,
        K_f=gain,
        K_L=float(2.0 * r_u * k),
        M_a=M_a,
        mu_greedy=2.0 * r_u,
        analytic_greedy=greedy,
        fx=fx,
        fu=fu,
        encoding="angle-sincos",
    )


_FACTORIES = {
    "lqr4": lambda: make_lqr(4),
    "lqr8": lambda: make_lqr(8),
    "lqr16": lambda: make_lqr(16),
    "duffing": make_duffing,
    "spacecraft": make_spacecraft,
    "pendulum": make_pendulum,
}


def make_env(name: str) -> Environment:
    try:
        return _FACTORIES[name]()
    except KeyError:
        raise ConfigError(f"unknown environment {name!r}; choose from {sorted(_FACTORIES)}")


@dataclass
class RolloutResult:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    cost: float
    truncated: bool = False


def rollout(env: Environment, policy, x0, dt: float | None = None) -> RolloutResult:
    """RK4 rollout of the closed loop; policy maps (tau, x batch) -> u batch.

    Controls are clamped to the control box at every query.  If the state
    escapes the safety box the rollout is truncated and flagged; the cost
    accumulated so far plus the terminal cost at the exit state is still
    reported.
    """
    dt = env.dt if dt is None else float(dt)
    n_steps = int(round(env.T / dt))
    safety = env.safety_box()

    def control(t, x):
        u = np.asarray(policy(env.T - t, x[None, :]))
        return env.U.clamp(u.reshape(1, env.m))

    x = np.asarray(x0, dtype=float).copy()
    states = [x.copy()]
    controls = []
    times = [0.0]
    cost = 0.0
    truncated = False
    for step in range(n_steps):
        t = step * dt

        def rhs(ti, xi):
            return env.f(xi[None, :], control(ti, xi))[0]

        u0 = control(t, x)
        cost += float(env.L(x[None, :], u0)[0]) * dt
        k1 = rhs(t, x)
        k2 = rhs(t + dt / 2, x + dt / 2 * k1)
        k3 = rhs(t + dt / 2, x + dt / 2 * k2)
        k4 = rhs(t + dt, x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        controls.append(u0[0])
        states.append(x.copy())
        times.append(t + dt)
        if not safety.contains(x) or not np.all(np.isfinite(x)):
            truncated = True
            break
    cost += float(env.g(x[None, :])[0])
    return RolloutResult(
        times=np.array(times),
        states=np.array(states),
        controls=np.array(controls),
        cost=cost,
        truncated=truncated,
    )


def gaussian_starts(env: Environment, n: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    return scale * rng.standard_normal((n, env.d))


def evaluate_policy_cost(env, policy, starts, dt=None):
    """Mean/std rollout cost over a batch of initial states."""
    costs = np.array([rollout(env, policy, x0, dt=dt).cost for x0 in starts])
    return float(costs.mean()), float(costs.std()), costs
