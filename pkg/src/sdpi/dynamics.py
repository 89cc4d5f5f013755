"""Dynamics surrogates fitted from transition data, and their error metrics."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .envs import Environment, Transition
from .errors import DataError, FitFailureError, NumericalFailureError
from .network import AdamState, MlpCore, adam_step


@dataclass
class DynamicsDataset:
    d: int
    m: int
    transitions: list = field(default_factory=list)

    def __len__(self):
        return len(self.transitions)

    def append(self, tr: Transition):
        self.transitions.append(tr)

    def extend(self, trs):
        self.transitions.extend(trs)

    def arrays(self):
        x = np.array([t.x for t in self.transitions])
        u = np.array([t.u for t in self.transitions])
        xp = np.array([t.x_plus for t in self.transitions])
        dt = np.array([t.dt for t in self.transitions])
        return x, u, xp, dt

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = (
                [f"x{i}" for i in range(self.d)]
                + [f"u{i}" for i in range(self.m)]
                + [f"x_plus{i}" for i in range(self.d)]
                + ["dt"]
            )
            writer.writerow(header)
            for t in self.transitions:
                row = list(t.x) + list(t.u) + list(t.x_plus) + [t.dt]
                writer.writerow([f"{v:.17g}" for v in row])

    @classmethod
    def load_csv(cls, path, d: int, m: int) -> "DynamicsDataset":
        ds = cls(d=d, m=m)
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                vals = np.array([float(v) for v in row])
                ds.append(
                    Transition(
                        x=vals[:d], u=vals[d : d + m], x_plus=vals[d + m : 2 * d + m], dt=vals[-1]
                    )
                )
        return ds


def build_targets(ds: DynamicsDataset):
    """Difference-quotient targets (x_plus - x) / dt for each transition."""
    if len(ds) == 0:
        raise DataError("empty dataset")
    x, u, xp, dt = ds.arrays()
    bad = np.nonzero(dt <= 0)[0]
    if bad.size:
        raise DataError(f"nonpositive dt at transition index {bad[0]}")
    inputs = np.concatenate([x, u], axis=1)
    targets = (xp - x) / dt[:, None]
    return inputs, targets


class DynamicsModel:
    representation = "abstract"

    def predict(self, x, u) -> np.ndarray:
        raise NotImplementedError


class TrueDynamics(DynamicsModel):
    """Wraps the environment's exact vector field (known-dynamics mode)."""

    representation = "true"

    def __init__(self, env: Environment):
        self.env = env

    def predict(self, x, u):
        return self.env.f(np.atleast_2d(x), np.atleast_2d(u))


class LinearDynamicsModel(DynamicsModel):
    """x_dot ~ W [x; u; 1], solved by ridge-regularized normal equations."""

    representation = "linear"

    def __init__(self, W: np.ndarray, d: int, m: int, train_loss: float = np.nan):
        self.W = np.asarray(W, dtype=float)
        self.d = d
        self.m = m
        self.train_loss = train_loss

    def predict(self, x, u):
        x = np.atleast_2d(x)
        u = np.atleast_2d(u)
        feats = np.concatenate([x, u, np.ones((x.shape[0], 1))], axis=1)
        return feats @ self.W.T


class MlpDynamicsModel(DynamicsModel):
    representation = "mlp"

    def __init__(self, core: MlpCore, d: int, m: int, train_loss: float = np.nan):
        self.core = core
        self.d = d
        self.m = m
        self.train_loss = train_loss

    def predict(self, x, u):
        x = np.atleast_2d(x)
        u = np.atleast_2d(u)
        y, _, _ = self.core.forward(np.concatenate([x, u], axis=1))
        return y


def fit(ds: DynamicsDataset, representation: str = "linear", seed: int = 0,
        hidden=(64, 64), steps: int = 2000, lr: float = 1e-2, batch: int = 256) -> DynamicsModel:
    """Fit a surrogate vector field to difference-quotient targets."""
    needed = max(50, 5 * (ds.d + ds.m))
    if len(ds) < needed:
        raise FitFailureError(f"need at least {needed} transitions, have {len(ds)}")
    inputs, targets = build_targets(ds)
    if representation == "linear":
        feats = np.concatenate([inputs, np.ones((inputs.shape[0], 1))], axis=1)
        gram = feats.T @ feats + 1e-8 * np.eye(feats.shape[1])
        try:
            W = np.linalg.solve(gram, feats.T @ targets).T
        except np.linalg.LinAlgError as exc:
            raise FitFailureError(f"normal equations singular: {exc}")
        loss = float(np.mean(np.sum((feats @ W.T - targets) ** 2, axis=1)))
        return LinearDynamicsModel(W, ds.d, ds.m, train_loss=loss)
    if representation == "mlp":
        core = MlpCore([ds.d + ds.m, *hidden, ds.d], seed=seed)
        params = core.get_params()
        state = AdamState(lr=lr)
        rng = np.random.default_rng(seed)
        n = inputs.shape[0]
        loss = np.inf
        for _ in range(steps):
            idx = rng.integers(0, n, size=min(batch, n))
            xb, yb = inputs[idx], targets[idx]
            pred, _, cache = core.forward(xb, need_cache=True)
            resid = pred - yb
            loss = float(np.mean(np.sum(resid**2, axis=1)))
            grad = core.backward(cache, 2.0 * resid / xb.shape[0])
            if not np.all(np.isfinite(grad)):
                raise NumericalFailureError("non-finite dynamics-fit gradient")
            params = adam_step(params, state, grad)
            core.set_params(params)
        return MlpDynamicsModel(core, ds.d, ds.m, train_loss=loss)
    raise FitFailureError(f"unknown representation {representation!r}")


def _policy_states(env: Environment, policy, n_points: int, rng: np.random.Generator):
    """(tau, x) pairs drawn uniformly from the time-domain cylinder."""
    taus = rng.uniform(0.0, env.T, size=n_points)
    xs = env.omega.sample(rng, n_points)
    return taus, xs


def relative_l2_error(model: DynamicsModel, env: Environment, policy,
                      n_eval: int, rng: np.random.Generator) -> float:
    """Relative L2 gap between the surrogate and the true vector field."""
    if not 512 <= n_eval <= 1024:
        raise ValueError("n_eval must lie in [512, 1024]")
    taus, xs = _policy_states(env, policy, n_eval, rng)
    us = env.U.clamp(np.atleast_2d(policy(taus, xs)))
    true = env.f(xs, us)
    pred = model.predict(xs, us)
    denom = float(np.sum(true**2))
    if denom < 1e-14:
        raise NumericalFailureError("degenerate normalization: true field ~ 0 on sample")
    return float(np.sqrt(np.sum((pred - true) ** 2) / denom))


def eta_infinity(model: DynamicsModel, env: Environment, policy,
                 n_samples: int, rng: np.random.Generator) -> float:
    """Sampled sup of |f_model - f| along the policy (a lower bound on the sup)."""
    if n_samples < 4096:
        raise ValueError("need at least 4096 samples for the sup estimate")
    taus, xs = _policy_states(env, policy, n_samples, rng)
    us = env.U.clamp(np.atleast_2d(policy(taus, xs)))
    gap = model.predict(xs, us) - env.f(xs, us)
    return float(np.max(np.linalg.norm(gap, axis=1)))


def eta_partial_u(model: DynamicsModel, env: Environment, policy,
                  n_samples: int, rng: np.random.Generator, du: float = 1e-4) -> float:
    """Sampled sup of the control-derivative model error (central differences)."""
    taus, xs = _policy_states(env, policy, n_samples, rng)
    us = env.U.clamp(np.atleast_2d(policy(taus, xs)))
    worst = 0.0
    for j in range(env.m):
        up = us.copy()
        um = us.copy()
        up[:, j] += du
        um[:, j] -= du
        d_model = (model.predict(xs, up) - model.predict(xs, um)) / (2 * du)
        d_true = (env.f(xs, up) - env.f(xs, um)) / (2 * du)
        worst = max(worst, float(np.max(np.linalg.norm(d_model - d_true, axis=1))))
    return worst
