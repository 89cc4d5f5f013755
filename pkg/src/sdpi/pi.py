"""Policy iteration with collocation-trained value networks.

Each outer iteration freezes the current greedy policy, trains a network
on the policy-evaluation residual over fresh random batches, then forms
the next greedy policy from shifted queries of the trained network.
"""

import copy
import os
from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from .collocation import LossWeights, empirical_loss_gradient, sample_batch
from .envs import Environment, Transition, gaussian_starts
from .errors import ConfigError
from .fd import FdConfig
from .network import AdamState, ValueNetwork, adam_step
from .oracle import ZeroPolicy
from .rng import substream


def model_control_jacobian(model, x: np.ndarray, m: int, du: float = 1e-5) -> np.ndarray:
    """d f_hat / d u at u = 0, by central differences (exact for affine models)."""
    x = np.atleast_2d(x)
    n, d = x.shape
    out = np.empty((n, d, m))
    for j in range(m):
        up = np.zeros((n, m))
        um = np.zeros((n, m))
        up[:, j] = du
        um[:, j] = -du
        out[:, :, j] = (model.predict(x, up) - model.predict(x, um)) / (2 * du)
    return out


def projected_greedy(env: Environment, model, x, p, budget: int = 100,
                     lr: float = 0.1, du: float = 1e-5, u0=None) -> np.ndarray:
    """Greedy controls by projected Adam on p . f_hat(x, u) + L(x, u)."""
    x = np.atleast_2d(x)
    n = x.shape[0]
    u = np.zeros((n, env.m)) if u0 is None else np.array(u0, dtype=float)
    state = AdamState(lr=lr)
    flat = u.ravel()
    for _ in range(max(1, budget)):
        u = flat.reshape(n, env.m)
        grad = np.empty_like(u)
        for j in range(env.m):
            up = u.copy()
            um = u.copy()
            up[:, j] += du
            um[:, j] -= du
            qp = np.sum(p * model.predict(x, up), axis=1) + env.L(x, up)
            qm = np.sum(p * model.predict(x, um), axis=1) + env.L(x, um)
            grad[:, j] = (qp - qm) / (2 * du)
        flat = adam_step(flat, state, grad.ravel())
        flat = env.U.clamp(flat.reshape(n, env.m)).ravel()
    return flat.reshape(n, env.m)


def greedy_controls(env: Environment, model, x, p, budget: int = 0,
                    lr: float = 0.1) -> np.ndarray:
    """Pointwise argmin of the greedy objective over the control box.

    Control-affine costs of the form L = l(x) + mu/2 |u|^2 admit the
    closed form clamp(-(p . df/du) / mu); anything else runs the budgeted
    projected first-order solver.
    """
    x = np.atleast_2d(x)
    p = np.atleast_2d(p)
    if env.control_affine and budget == 0:
        B = model_control_jacobian(model, x, env.m)
        return env.U.clamp(-np.einsum("nd,ndm->nm", p, B) / env.mu_greedy)
    return projected_greedy(env, model, x, p, budget=budget, lr=lr)


class GreedyNetPolicy:
    """Feedback u(tau, x) greedy for the network value via shifted queries."""

    def __init__(self, env: Environment, net: ValueNetwork, fdcfg: FdConfig,
                 model, budget: int = 0):
        self.env = env
        self.net = net
        self.fdcfg = fdcfg
        self.model = model
        self.budget = budget

    def gradient0(self, tau, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        tau = np.broadcast_to(np.asarray(tau, dtype=float), (x.shape[0],))
        h = self.fdcfg.h
        n, d = x.shape
        pts = np.empty((2 * d, n, d))
        for i in range(d):
            pts[2 * i] = x
            pts[2 * i][:, i] += h
            pts[2 * i + 1] = x
            pts[2 * i + 1][:, i] -= h
        vals = self.net.forward(np.tile(tau, 2 * d), pts.reshape(-1, d)).reshape(2 * d, n)
        return ((vals[0::2] - vals[1::2]) / (2 * h)).T

    def __call__(self, tau, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        p = self.gradient0(tau, x)
        return greedy_controls(self.env, self.model, x, p, budget=self.budget)


class NoisyPolicy:
    """Wraps a policy with clipped uniform exploration noise (data collection)."""

    def __init__(self, base, env: Environment, rng: np.random.Generator, scale: float = 0.3):
        self.base = base
        self.env = env
        self.rng = rng
        self.scale = scale

    def __call__(self, tau, x):
        u = np.atleast_2d(self.base(tau, x))
        span = self.env.U.widths
        noise = self.scale * span * (self.rng.random(u.shape) - 0.5)
        return self.env.U.clamp(u + noise)


def collect_transitions(env: Environment, policy, n_rollouts: int,
                        rng: np.random.Generator, dt: float | None = None,
                        start_scale: float = 1.0) -> list:
    """Exploration rollouts chopped into one-step transitions.

    The control is sampled once per step and held constant across the RK4
    stages, so the recorded (x, u, x_plus) triple is exactly the transition
    that was applied; re-querying a stochastic policy inside the integrator
    would decorrelate the logged control from the realized step and bias the
    control columns of the least-squares fit toward zero.
    """
    out = []
    starts = gaussian_starts(env, n_rollouts, start_scale, rng)
    step = env.dt if dt is None else dt
    n_steps = int(round(env.T / step))
    safety = env.safety_box()
    for x0 in starts:
        x = env.omega.clamp(x0[None, :])[0]
        for i in range(n_steps):
            tau = env.T - i * step
            u = env.U.clamp(np.atleast_2d(policy(tau, x[None, :])))[0]

            def rhs(xi):
                return env.f(xi[None, :], u[None, :])[0]

            k1 = rhs(x)
            k2 = rhs(x + 0.5 * step * k1)
            k3 = rhs(x + 0.5 * step * k2)
            k4 = rhs(x + step * k3)
            x_plus = x + step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            out.append(Transition(x=x.copy(), u=u.copy(), x_plus=x_plus.copy(), dt=step))
            x = x_plus
            if not safety.contains(x[None, :])[0]:
                break
    return out


@dataclass
class SdpiConfig:
    h: float = 0.05
    nu_h: float = 0.01
    hidden: tuple = (64, 64)
    kind: str = "mlp"
    skip: bool = False
    n_pi: int = 4
    adam_steps: int = 500
    lr: float = 3e-3
    batch_interior: int = 4096
    batch_initial: int = 512
    batch_collar: int = 512
    weights: LossWeights = field(default_factory=LossWeights)
    known_dynamics: bool = False
    representation: str = "linear"
    rollouts_per_iter: int = 20
    data_dt: float | None = None
    greedy_budget: int = 0
    checkpoint_every: int = 50
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        if self.h <= 0 or self.nu_h < 0:
            raise ConfigError("need h > 0 and nu_h >= 0")
        if self.n_pi < 1 or self.adam_steps < 1:
            raise ConfigError("n_pi and adam_steps must be >= 1")


@dataclass
class IterationRecord:
    index: int
    final_loss: float
    loss_parts: tuple
    dynamics_error: float | None
    policy: object
    net: ValueNetwork


@dataclass
class SdpiResult:
    nets: list
    policies: list
    records: list
    model: object

    @property
    def final_policy(self):
        return self.policies[-1]

    @property
    def final_net(self) -> ValueNetwork:
        return self.nets[-1]


def _train_network(net, env, fdcfg, drift, running_cost, collar_reference,
                   cfg: SdpiConfig, iter_index: int):
    params = net.get_params()
    state = AdamState(lr=cfg.lr)
    weights = cfg.weights
    sizes = (cfg.batch_interior, cfg.batch_initial, cfg.batch_collar)
    loss = np.nan
    parts = (np.nan, np.nan, np.nan)
    for step in range(cfg.adam_steps):
        batch_seed = int(
            substream(cfg.seed, f"batch/{iter_index}/{step}").integers(0, 2**31 - 1)
        )
        batch = sample_batch(env.omega, env.T, fdcfg.h, sizes, batch_seed)
        loss, parts, grad = empirical_loss_gradient(
            net, batch, drift, running_cost, env.g, collar_reference, weights, fdcfg
        )
        params = adam_step(params, state, grad)
        net.set_params(params)
    return loss, parts


def run_sdpi(env: Environment, cfg: SdpiConfig) -> SdpiResult:
    """Algorithm loop: fit dynamics (unless known), train value, greedy update."""
    fdcfg = FdConfig(h=cfg.h, nu_h=cfg.nu_h)
    data_rng = substream(cfg.seed, "data")
    dataset = dyn.DynamicsDataset(d=env.d, m=env.m)
    model = dyn.TrueDynamics(env)
    policy = ZeroPolicy(env.m)

    net = ValueNetwork(env.d, cfg.hidden, kind=cfg.kind, skip=cfg.skip,
                       encoding=env.encoding, seed=cfg.seed)
    records, nets, policies = [], [], [policy]

    def collar_reference(tau, y):
        return env.g(np.atleast_2d(y))

    for n in range(cfg.n_pi):
        if not cfg.known_dynamics:
            explorer = NoisyPolicy(policy, env, data_rng)
            dataset.extend(
                collect_transitions(env, explorer, cfg.rollouts_per_iter, data_rng,
                                    dt=cfg.data_dt)
            )
            model = dyn.fit(dataset, representation=cfg.representation, seed=cfg.seed)

        frozen_policy = policy

        def drift(tau, x, _p=frozen_policy, _m=model):
            u = env.U.clamp(np.atleast_2d(_p(tau, x)))
            return _m.predict(x, u)

        def running_cost(tau, x, _p=frozen_policy):
            u = env.U.clamp(np.atleast_2d(_p(tau, x)))
            return env.L(x, u)

        loss, parts = _train_network(net, env, fdcfg, drift, running_cost,
                                     collar_reference, cfg, n)

        frozen_net = copy.deepcopy(net)
        nets.append(frozen_net)
        policy = GreedyNetPolicy(env, frozen_net, fdcfg, model, budget=cfg.greedy_budget)
        policies.append(policy)

        dyn_err = None
        if not cfg.known_dynamics:
            err_rng = substream(cfg.seed, f"dyn-eval/{n}")
            dyn_err = dyn.relative_l2_error(model, env, policy, 512, err_rng)
        records.append(
            IterationRecord(index=n, final_loss=float(loss), loss_parts=parts,
                            dynamics_error=dyn_err, policy=policy, net=frozen_net)
        )
        if cfg.out_dir and (n + 1) % cfg.checkpoint_every == 0:
            os.makedirs(cfg.out_dir, exist_ok=True)
            frozen_net.save(os.path.join(cfg.out_dir, f"value_iter{n + 1:04d}.txt"))
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        nets[-1].save(os.path.join(cfg.out_dir, "value_final.txt"))
    return SdpiResult(nets=nets, policies=policies, records=records, model=model)


# ---------------------------------------------------------------------------
# Diagnostics on the greedy map and the iteration
# ---------------------------------------------------------------------------


def greedy_lipschitz_check(env: Environment, n_pairs: int, rng: np.random.Generator,
                           p_scale: float = 5.0):
    """Empirical Lipschitz ratio of the analytic greedy map in the gradient."""
    if env.analytic_greedy is None:
        raise ConfigError("analytic greedy map required")
    x = env.omega.sample(rng, n_pairs)
    p1 = p_scale * rng.standard_normal((n_pairs, env.d))
    p2 = p_scale * rng.standard_normal((n_pairs, env.d))
    u1 = env.analytic_greedy(x, p1)
    u2 = env.analytic_greedy(x, p2)
    num = np.linalg.norm(u1 - u2, axis=1)
    den = np.linalg.norm(p1 - p2, axis=1)
    keep = den > 1e-12
    return float(np.max(num[keep] / den[keep]))


def rho_greedy_estimate(env: Environment, model, fdcfg: FdConfig, net: ValueNetwork,
                        budget: int, rng: np.random.Generator, n_probes: int = 64) -> float:
    """Suboptimality of the budgeted greedy solver against a 10x-budget run."""
    x = env.omega.sample(rng, n_probes)
    taus = rng.uniform(0.0, env.T, size=n_probes)
    pol = GreedyNetPolicy(env, net, fdcfg, model, budget=budget)
    p = pol.gradient0(taus, x)
    u_budget = projected_greedy(env, model, x, p, budget=max(1, budget))
    u_ref = projected_greedy(env, model, x, p, budget=max(10, 10 * budget))

    def q(u):
        return np.sum(p * model.predict(x, u), axis=1) + env.L(x, u)

    return float(np.max(q(u_budget) - q(u_ref)))


def multi_step_fit(errors, epsilons):
    """Least-squares (C, Lambda) with E_n ~ C eps_n + Lambda E_{n-1}."""
    E = np.asarray(errors, dtype=float)
    eps = np.asarray(epsilons, dtype=float)
    if E.size != eps.size or E.size < 3:
        raise ValueError("need matched sequences of length >= 3")
    A = np.stack([eps[1:], E[:-1]], axis=1)
    coef, *_ = np.linalg.lstsq(A, E[1:], rcond=None)
    return float(coef[0]), float(coef[1])
