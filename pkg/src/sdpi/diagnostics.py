"""Error-channel measurements, structured reports, and cost oracles.

Everything on both sides of the one-step Y_h error bound is measured:
population and empirical residuals, initial and collar mismatches (L2 and
trace surrogate), dynamics identification error, policy mismatch, and the
G_h viscosity amplification factor.
"""

import csv
import dataclasses
import json
import os
from dataclasses import dataclass, fields

import numpy as np
from scipy import optimize

from .collocation import (
    LossWeights,
    empirical_loss_gradient,
    population_residual_quadrature,
    sample_batch,
)
from .envs import Environment, rollout
from .errors import ConfigError, NumericalFailureError
from .fd import FdConfig, shift_array
from .geometry import Box
from .network import AdamState, ValueNetwork, adam_step
from .oracle import (
    GridProblem,
    SpaceTimeGrid,
    ZeroPolicy,
    auto_dtau,
    evaluate_policy,
    gradient0_l2,
    policy_problem,
    trace_norm_surrogate,
    yh_norm,
    _time_weights,
)
from .rng import substream

SCHEMA_VERSION = 1

_REPORT_FIELDS = [
    "schema_version",
    "iteration",
    "q_quadrature",
    "q_empirical",
    "r_norm",
    "b_l2",
    "b_trace",
    "eta_inf",
    "eta_rel",
    "policy_mismatch_l2",
    "policy_mismatch_sup",
    "yh_error",
    "grad_scale",
    "rollout_cost_mean",
    "rollout_cost_std",
    "g_h",
    "bound_rhs",
]


@dataclass
class ErrorReport:
    iteration: int
    q_quadrature: float | None = None
    q_empirical: float | None = None
    r_norm: float | None = None
    b_l2: float | None = None
    b_trace: float | None = None
    eta_inf: float | None = None
    eta_rel: float | None = None
    policy_mismatch_l2: float | None = None
    policy_mismatch_sup: float | None = None
    yh_error: float | None = None
    grad_scale: float | None = None
    rollout_cost_mean: float | None = None
    rollout_cost_std: float | None = None
    g_h: float | None = None
    bound_rhs: float | None = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name.startswith(("q_", "r_", "b_", "eta", "yh", "grad", "g_h")) and v is not None:
                if v < 0:
                    raise ValueError(f"{f.name} must be nonnegative, got {v}")

    def to_json(self) -> str:
        return json.dumps({k: getattr(self, k) for k in _REPORT_FIELDS}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ErrorReport":
        data = json.loads(text)
        if data.pop("schema_version") != SCHEMA_VERSION:
            raise ValueError("unsupported report schema version")
        return cls(**data)

    def csv_row(self) -> list:
        return [
            "" if getattr(self, k) is None else _fmt(getattr(self, k))
            for k in _REPORT_FIELDS
        ]


def _fmt(v) -> str:
    return f"{v:.17g}" if isinstance(v, float) else str(v)


def emit_report(report: ErrorReport, path: str, ledger_path: str | None = None):
    """Write the JSON report; append a fixed-width row to the run ledger."""
    with open(path, "w") as fh:
        fh.write(report.to_json() + "\n")
    if ledger_path is not None:
        new = not os.path.exists(ledger_path)
        with open(ledger_path, "a", newline="") as fh:
            writer = csv.writer(fh)
            if new:
                writer.writerow(_REPORT_FIELDS)
            writer.writerow(report.csv_row())


# ---------------------------------------------------------------------------
# Sampling the network on the oracle grid
# ---------------------------------------------------------------------------


def net_on_grid(field, reference: SpaceTimeGrid) -> SpaceTimeGrid:
    """Sample a scalar field at the oracle's grid nodes and snapshot times."""
    template = reference.template
    coords = template.node_coords()
    values = np.empty_like(reference.values)
    for k, tau in enumerate(reference.taus):
        values[k] = field(float(tau), coords).reshape(template.shape)
    return SpaceTimeGrid(taus=reference.taus, values=values,
                         template=template, nu_h=reference.nu_h)


def yh_difference(a: SpaceTimeGrid, b: SpaceTimeGrid, fdcfg: FdConfig) -> float:
    a.template.require_same_grid(b.template)
    diff = SpaceTimeGrid(taus=a.taus, values=a.values - b.values,
                         template=a.template, nu_h=a.nu_h)
    return yh_norm(diff, fdcfg)


def c_inv_estimate(stg: SpaceTimeGrid, fdcfg: FdConfig) -> float:
    """Sampled inverse-estimate ratio sup|grad0 e| / ||e||_{Linf L2}."""
    template = stg.template
    interior = template.interior_slices()
    cell = template.cell_volume
    h = fdcfg.h
    sup_grad = 0.0
    sup_l2 = 0.0
    for k in range(stg.taus.size):
        V = stg.values[k]
        sup_l2 = max(sup_l2, float(np.sqrt(np.sum(V[interior] ** 2) * cell)))
        for i in range(template.dim):
            d0 = (shift_array(V, i, 1) - shift_array(V, i, -1))[interior] / (2 * h)
            sup_grad = max(sup_grad, float(np.max(np.abs(d0))))
    if sup_l2 < 1e-14:
        raise NumericalFailureError("degenerate error field in inverse estimate")
    return sup_grad / sup_l2


# ---------------------------------------------------------------------------
# Theorem-channel experiment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Theorem1Result:
    lhs: float
    channels: dict
    channel_sum: float
    ratio: float
    g_h: float
    report: ErrorReport


def _train_pinn(env, omega: Box, fdcfg: FdConfig, drift, running_cost, initial,
                collar_reference, hidden, adam_steps, lr, batch_sizes, seed):
    net = ValueNetwork(env.d, hidden, encoding=env.encoding, seed=seed)
    params = net.get_params()
    state = AdamState(lr=lr)
    weights = LossWeights()
    for step in range(adam_steps):
        batch_seed = int(substream(seed, f"t1-batch/{step}").integers(0, 2**31 - 1))
        batch = sample_batch(omega, env.T, fdcfg.h, batch_sizes, batch_seed)
        _, _, grad = empirical_loss_gradient(
            net, batch, drift, running_cost, initial, collar_reference, weights, fdcfg
        )
        params = adam_step(params, state, grad)
        net.set_params(params)
    return net


def theorem1_experiment(env: Environment, fdcfg: FdConfig, *, policy=None,
                        eta_const: float = 0.0, r_scale: float = 0.0,
                        b_scale: float = 0.0, solver: str = "pinn",
                        omega: Box | None = None, hidden=(64, 64),
                        adam_steps: int = 400, lr: float = 3e-3,
                        batch_sizes=(2048, 256, 256), n_snapshots: int = 41,
                        seed: int = 0) -> Theorem1Result:
    """One evaluation step with controlled channel injections, measured both
    sides of the Y_h error bound.

    The reference is the exact grid evaluation of the policy with true
    dynamics and clean data.  The perturbed evaluation uses drift f + c
    (constant vector of norm eta_const), initial data g + r, collar data
    g + b, solved either by collocation training ("pinn") or by a second
    exact grid solve ("exact", isolating channel response from training
    noise).
    """
    if env.d > 2:
        raise ConfigError("theorem-channel study requires d <= 2")
    if solver not in ("pinn", "exact"):
        raise ConfigError(f"unknown solver {solver!r}")
    omega = env.omega if omega is None else omega
    policy = ZeroPolicy(env.m) if policy is None else policy
    nu = fdcfg.nu_h
    g_h = 1.0 + nu ** (-0.5)

    gp_true = policy_problem(env, policy, fdcfg, omega=omega)

    c_vec = eta_const * np.ones(env.d) / np.sqrt(env.d)

    def bump(x):
        return np.exp(-0.5 * np.sum(np.atleast_2d(x) ** 2, axis=-1))

    def drift_tilde(tau, x):
        return gp_true.drift(tau, x) + c_vec

    def initial_tilde(x):
        return env.g(np.atleast_2d(x)) + r_scale * bump(x)

    def collar_tilde(tau, y):
        return env.g(np.atleast_2d(y)) + b_scale * bump(y)

    gp_tilde = GridProblem(
        omega=omega, T=env.T, fdcfg=fdcfg, drift=drift_tilde, cost=gp_true.cost,
        initial=initial_tilde, collar=collar_tilde,
        drift_sup=gp_true.drift_sup + eta_const,
    )
    # one shared time grid so the two solves subtract node-by-node
    shared_dtau = min(auto_dtau(gp_true), auto_dtau(gp_tilde))
    gp_true = dataclasses.replace(gp_true, dtau=shared_dtau)
    gp_tilde = dataclasses.replace(gp_tilde, dtau=shared_dtau)
    stg_true = evaluate_policy(gp_true, n_snapshots=n_snapshots)

    q_quadrature = q_empirical = 0.0
    if solver == "exact":
        stg_tilde = evaluate_policy(gp_tilde, n_snapshots=n_snapshots)
        v_tilde = stg_tilde.field()
    else:
        net = _train_pinn(env, omega, fdcfg, drift_tilde, gp_true.cost, initial_tilde,
                          collar_tilde, hidden, adam_steps, lr, batch_sizes, seed)
        stg_tilde = net_on_grid(net, stg_true)
        v_tilde = net
        q_quadrature = population_residual_quadrature(
            net, drift_tilde, gp_true.cost, fdcfg, omega, env.T
        )
        eval_rng = substream(seed, "t1-empirical")
        b = sample_batch(omega, env.T, fdcfg.h, (4096, 1, 1),
                         int(eval_rng.integers(0, 2**31 - 1)))
        from .collocation import residual as _residual

        res = _residual(net, drift_tilde, gp_true.cost, fdcfg, b.interior_tau, b.interior_x)
        vol = env.T * omega.volume
        q_empirical = float(np.sqrt(np.mean(res**2) * vol))

    lhs = yh_difference(stg_tilde, stg_true, fdcfg)

    template = stg_true.template
    interior = template.interior_slices()
    cell = template.cell_volume
    coords = template.node_coords()
    interior_mask = template.interior_mask()

    v0 = np.asarray(v_tilde(0.0, coords[interior_mask.ravel()]))
    g0 = env.g(coords[interior_mask.ravel()])
    r_norm = float(np.sqrt(np.sum((v0 - g0) ** 2) * cell))

    # collar mismatch against the clean data, on collar nodes over time
    collar_coords = coords[~interior_mask.ravel()]
    tw = _time_weights(stg_true.taus)
    mism = np.empty_like(stg_true.values)
    b_sq = 0.0
    for k, tau in enumerate(stg_true.taus):
        slab = np.asarray(v_tilde(float(tau), coords)) - env.g(coords)
        mism[k] = slab.reshape(template.shape)
        gap = mism[k][~interior_mask]
        b_sq += tw[k] * float(np.sum(gap**2) * cell)
    b_l2 = float(np.sqrt(b_sq))
    b_trace = trace_norm_surrogate(
        SpaceTimeGrid(stg_true.taus, mism, template, nu), fdcfg
    )

    eta_rng = substream(seed, "t1-eta")
    xs = omega.sample(eta_rng, 4096)
    taus = eta_rng.uniform(0.0, env.T, size=4096)
    gap = drift_tilde(taus, xs) - gp_true.drift(taus, xs)
    eta_inf = float(np.max(np.linalg.norm(np.atleast_2d(gap), axis=-1)))
    denom = float(np.sqrt(np.sum(gp_true.drift(taus, xs) ** 2)))
    eta_rel = float(np.sqrt(np.sum(np.atleast_2d(gap) ** 2)) / max(denom, 1e-14))

    channels = {
        "q": q_quadrature,
        "r": r_norm,
        "b_trace": b_trace,
        "policy_l2": 0.0,
        "policy_sup": 0.0,
        "eta_amplified": g_h * eta_inf,
    }
    channel_sum = (
        channels["q"]
        + channels["r"]
        + channels["b_trace"]
        + env.K_L * channels["policy_l2"]
        + g_h * env.K_f * channels["policy_sup"]
        + channels["eta_amplified"]
    )
    ratio = lhs / channel_sum if channel_sum > 0 else np.nan
    report = ErrorReport(
        iteration=0,
        q_quadrature=q_quadrature,
        q_empirical=q_empirical,
        r_norm=r_norm,
        b_l2=b_l2,
        b_trace=b_trace,
        eta_inf=eta_inf,
        eta_rel=eta_rel,
        policy_mismatch_l2=0.0,
        policy_mismatch_sup=0.0,
        yh_error=lhs,
        grad_scale=gradient0_l2(stg_true, fdcfg),
        g_h=g_h,
        bound_rhs=channel_sum,
    )
    return Theorem1Result(lhs=lhs, channels=channels, channel_sum=channel_sum,
                          ratio=ratio, g_h=g_h, report=report)


# ---------------------------------------------------------------------------
# Optimal-cost oracles
# ---------------------------------------------------------------------------


@dataclass
class OptimalCostOracle:
    method: str
    costs: np.ndarray
    failures: np.ndarray
    upper_bound_only: bool

    @property
    def mean(self) -> float:
        ok = self.costs[~self.failures]
        return float(np.mean(ok))


def riccati_gains(A, B, Qf_scale: float, T: float, n_steps: int = 2000):
    """Finite-horizon Riccati ODE in time-to-go, RK4; returns taus and P(tau)."""
    d = A.shape[0]
    Q = np.eye(d)
    P = Qf_scale * np.eye(d)
    dtau = T / n_steps
    taus = [0.0]
    Ps = [P]

    def rhs(P):
        return A.T @ P + P @ A - P @ B @ B.T @ P + Q

    for k in range(n_steps):
        k1 = rhs(P)
        k2 = rhs(P + dtau / 2 * k1)
        k3 = rhs(P + dtau / 2 * k2)
        k4 = rhs(P + dtau * k3)
        P = P + dtau / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        taus.append((k + 1) * dtau)
        Ps.append(P)
    return np.array(taus), np.array(Ps)


class RiccatiPolicy:
    """u(tau, x) = clamp(-B^T P(tau) x); the clamp makes it feasible, not optimal."""

    def __init__(self, env: Environment, A, B, n_steps: int = 2000):
        self.env = env
        self.B = np.asarray(B, dtype=float)
        self.taus, self.Ps = riccati_gains(np.asarray(A, float), self.B,
                                           self._qf_scale(env), env.T, n_steps)

    @staticmethod
    def _qf_scale(env) -> float:
        probe = np.ones((1, env.d))
        return float(2.0 * env.g(probe)[0] / env.d)

    def P_at(self, tau: float) -> np.ndarray:
        tau = float(np.clip(tau, self.taus[0], self.taus[-1]))
        k = min(int(np.searchsorted(self.taus, tau, side="right")) - 1, self.taus.size - 2)
        w = (tau - self.taus[k]) / (self.taus[k + 1] - self.taus[k])
        return (1 - w) * self.Ps[k] + w * self.Ps[k + 1]

    def __call__(self, tau, x):
        x = np.atleast_2d(x)
        P = self.P_at(float(np.ravel(tau)[0]))
        return self.env.U.clamp(-(x @ P) @ self.B)


def _fd_grad(fn, z, eps=1e-6):
    """Central-difference gradient of a scalar batch function at (n, k) points."""
    z = np.atleast_2d(z)
    out = np.empty_like(z)
    for j in range(z.shape[1]):
        zp = z.copy()
        zm = z.copy()
        zp[:, j] += eps
        zm[:, j] -= eps
        out[:, j] = (fn(zp) - fn(zm)) / (2 * eps)
    return out


def _rk4_step_with_jacobians(env: Environment, x, u, dt):
    """One step of the control-constant RK4 map with exact d(next)/dx, du."""
    d = env.d
    xb = x[None, :]
    ub = u[None, :]

    def f(xx):
        return env.f(xx[None, :], ub)[0]

    k1 = f(x)
    x2 = x + dt / 2 * k1
    k2 = f(x2)
    x3 = x + dt / 2 * k2
    k3 = f(x3)
    x4 = x + dt * k3
    k4 = f(x4)
    x_next = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    I = np.eye(d)
    A1 = env.fx(xb, ub)[0]
    A2 = env.fx(x2[None, :], ub)[0] @ (I + dt / 2 * A1)
    A3 = env.fx(x3[None, :], ub)[0] @ (I + dt / 2 * A2)
    A4 = env.fx(x4[None, :], ub)[0] @ (I + dt * A3)
    Phi_x = I + dt / 6 * (A1 + 2 * A2 + 2 * A3 + A4)

    B1 = env.fu(xb, ub)[0]
    B2 = env.fx(x2[None, :], ub)[0] @ (dt / 2 * B1) + env.fu(x2[None, :], ub)[0]
    B3 = env.fx(x3[None, :], ub)[0] @ (dt / 2 * B2) + env.fu(x3[None, :], ub)[0]
    B4 = env.fx(x4[None, :], ub)[0] @ (dt * B3) + env.fu(x4[None, :], ub)[0]
    Phi_u = dt / 6 * (B1 + 2 * B2 + 2 * B3 + B4)
    return x_next, Phi_x, Phi_u


def _shooting_objective(env: Environment, x0, dt, n_steps):
    """Cost and exact gradient over the flat control sequence (discrete adjoint)."""

    def obj(u_flat):
        u_seq = u_flat.reshape(n_steps, env.m)
        xs = np.empty((n_steps + 1, env.d))
        xs[0] = x0
        Phis_x = np.empty((n_steps, env.d, env.d))
        Phis_u = np.empty((n_steps, env.d, env.m))
        cost = 0.0
        for k in range(n_steps):
            cost += float(env.L(xs[k][None, :], u_seq[k][None, :])[0]) * dt
            xs[k + 1], Phis_x[k], Phis_u[k] = _rk4_step_with_jacobians(
                env, xs[k], u_seq[k], dt
            )
        cost += float(env.g(xs[-1][None, :])[0])

        lam = _fd_grad(lambda z: env.g(z), xs[-1][None, :])[0]
        grad = np.empty((n_steps, env.m))
        for k in range(n_steps - 1, -1, -1):
            Lx = _fd_grad(lambda z: env.L(z, u_seq[k][None, :]), xs[k][None, :])[0]
            Lu = _fd_grad(lambda z: env.L(xs[k][None, :], z), u_seq[k][None, :])[0]
            grad[k] = dt * Lu + Phis_u[k].T @ lam
            lam = dt * Lx + Phis_x[k].T @ lam
        return cost, grad.ravel()

    return obj


def trajectory_opt_cost(env: Environment, x0, dt: float | None = None,
                        u0=None, maxiter: int = 300):
    """Single-shooting open-loop optimum from x0; returns (cost, controls, ok)."""
    if env.fx is None or env.fu is None:
        raise ConfigError("trajectory optimization needs dynamics Jacobians")
    dt = env.dt if dt is None else float(dt)
    n_steps = int(round(env.T / dt))
    obj = _shooting_objective(env, np.asarray(x0, float), dt, n_steps)
    u_init = np.zeros(n_steps * env.m) if u0 is None else np.asarray(u0, float).ravel()
    k = float(np.max(np.abs(np.stack([env.U.lo, env.U.hi]))))
    res = optimize.minimize(
        obj, u_init, jac=True, method="L-BFGS-B",
        bounds=[(-k, k)] * u_init.size,
        options={"maxiter": maxiter, "ftol": 1e-12, "gtol": 1e-10},
    )
    ok = bool(np.isfinite(res.fun))
    return float(res.fun), res.x.reshape(n_steps, env.m), ok


def compute_optimal_cost(env: Environment, starts, method: str,
                         dt: float | None = None) -> OptimalCostOracle:
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    costs = np.empty(starts.shape[0])
    failures = np.zeros(starts.shape[0], dtype=bool)
    if method == "riccati-clamped-MPC":
        probe_x = np.zeros((1, env.d))
        if not env.control_affine or env.fx is None:
            raise ConfigError("riccati oracle requires a control-affine env")
        A = env.fx(probe_x, np.zeros((1, env.m)))[0]
        B = env.fu(probe_x, np.zeros((1, env.m)))[0]
        pol = RiccatiPolicy(env, A, B)
        for i, x0 in enumerate(starts):
            rr = rollout(env, pol, x0, dt=dt)
            costs[i] = rr.cost
            failures[i] = rr.truncated
        return OptimalCostOracle(method, costs, failures, upper_bound_only=True)
    if method == "direct-trajectory-opt":
        for i, x0 in enumerate(starts):
            costs[i], _, ok = trajectory_opt_cost(env, x0, dt=dt)
            failures[i] = not ok
        return OptimalCostOracle(method, costs, failures, upper_bound_only=False)
    raise ConfigError(f"unknown oracle method {method!r}")
