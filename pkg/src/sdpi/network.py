"""Feed-forward value functions with exact gradients.

The residual needs two derivative mechanisms and no more: an exact
d/dtau of the network output (single-tangent forward pass) and exact
parameter gradients of losses built from outputs and tau-derivatives
(reverse pass through the doubled primal/tangent computation).  Spatial
derivatives are shift queries and never differentiate the network.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalFailureError
from .fields import ScalarField


@dataclass(frozen=True)
class Dual:
    """Scalar dual number (primal, tangent); the mechanism behind d/dtau."""

    primal: float
    tangent: float = 0.0

    def _coerce(self, other):
        return other if isinstance(other, Dual) else Dual(float(other))

    def __add__(self, other):
        o = self._coerce(other)
        return Dual(self.primal + o.primal, self.tangent + o.tangent)

    __radd__ = __add__

    def __mul__(self, other):
        o = self._coerce(other)
        return Dual(self.primal * o.primal, self.primal * o.tangent + self.tangent * o.primal)

    __rmul__ = __mul__

    def __neg__(self):
        return Dual(-self.primal, -self.tangent)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def tanh(self):
        t = np.tanh(self.primal)
        return Dual(t, (1.0 - t * t) * self.tangent)


def _init_layers(widths, rng):
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = np.zeros(fan_out)
        layers.append((W, b))
    return layers


class MlpCore:
    """Plain tanh MLP with optional residual (skip) hidden connections.

    Parameters live in a flat vector; forward passes optionally carry a
    tangent, and the reverse pass accepts adjoints for both the primal
    output and the tangent output.
    """

    def __init__(self, widths, skip=False, seed=0):
        self.widths = list(int(w) for w in widths)
        if len(self.widths) < 2:
            raise ValueError("need at least input and output widths")
        self.skip = bool(skip)
        self.seed = int(seed)
        self.layers = _init_layers(self.widths, np.random.default_rng(seed))

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in self.layers)

    def get_params(self) -> np.ndarray:
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in self.layers])

    def set_params(self, flat: np.ndarray):
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {flat.size}")
        pos = 0
        new_layers = []
        for W, b in self.layers:
            w = flat[pos : pos + W.size].reshape(W.shape)
            pos += W.size
            bb = flat[pos : pos + b.size].copy()
            pos += b.size
            new_layers.append((w.copy(), bb))
        self.layers = new_layers

    def _skip_at(self, l: int) -> bool:
        # skip applies between hidden layers of equal width
        return self.skip and 1 <= l and self.widths[l] == self.widths[l + 1]

    def forward(self, X, dX=None, need_cache=False):
        """X: (B, n_in). Returns (Y, dY, cache); dY is None without tangent."""
        H = np.asarray(X, dtype=float)
        dH = None if dX is None else np.asarray(dX, dtype=float)
        cache = [] if need_cache else None
        n_hidden = len(self.layers) - 1
        for l in range(n_hidden):
            W, b = self.layers[l]
            A = H @ W.T + b
            Hact = np.tanh(A)
            dA = dHact = None
            if dH is not None:
                dA = dH @ W.T
                dHact = (1.0 - Hact**2) * dA
            if need_cache:
                cache.append((H, dH, Hact, dA))
            if self._skip_at(l):
                H, dH = Hact + H, (None if dH is None else dHact + dH)
            else:
                H, dH = Hact, dHact
        Wout, bout = self.layers[-1]
        Y = H @ Wout.T + bout
        dY = None if dH is None else dH @ Wout.T
        if need_cache:
            cache.append((H, dH))
        return Y, dY, cache

    def backward(self, cache, gY, gdY=None) -> np.ndarray:
        """Flat parameter gradient of sum_j <gY_j, Y_j> + <gdY_j, dY_j>."""
        n_hidden = len(self.layers) - 1
        H_last, dH_last = cache[-1]
        Wout, _ = self.layers[-1]
        gY = np.asarray(gY, dtype=float)
        grads = [None] * len(self.layers)
        gWout = gY.T @ H_last
        gbout = gY.sum(axis=0)
        gH = gY @ Wout
        gdH = None
        if gdY is not None:
            gdY = np.asarray(gdY, dtype=float)
            gWout = gWout + gdY.T @ dH_last
            gdH = gdY @ Wout
        grads[-1] = (gWout, gbout)
        for l in range(n_hidden - 1, -1, -1):
            W, _ = self.layers[l]
            H_prev, dH_prev, Hact, dA = cache[l]
            s = 1.0 - Hact**2
            gHact = gH
            if gdH is not None:
                gHact = gHact + gdH * (-2.0 * Hact * dA)
            gA = gHact * s
            gW = gA.T @ H_prev
            gb = gA.sum(axis=0)
            gdA = None
            if gdH is not None:
                gdA = gdH * s
                gW = gW + gdA.T @ dH_prev
            grads[l] = (gW, gb)
            skip = self._skip_at(l)
            gH_new = gA @ W + (gH if skip else 0.0)
            gdH_new = None
            if gdH is not None:
                gdH_new = gdA @ W + (gdH if skip else 0.0)
            gH, gdH = gH_new, gdH_new
        return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])


def _quad_features(x: np.ndarray):
    """Features q(x) with V = coeffs . q(x); pairs (i, j) with i <= j."""
    x = np.atleast_2d(x)
    d = x.shape[1]
    cols = []
    for i in range(d):
        for j in range(i, d):
            cols.append(0.5 * x[:, i] ** 2 if i == j else x[:, i] * x[:, j])
    return np.stack(cols, axis=1)


class ValueNetwork(ScalarField):
    """Value function V(tau, x) with exact tau-derivative and loss gradients.

    kind "mlp": tanh MLP on the encoded (tau, x) input, optionally with
    skip connections.  kind "quadratic": a tau-MLP producing the entries
    of a symmetric matrix S(tau), with V = x^T S(tau) x / 2.
    """

    def __init__(self, state_dim, hidden, kind="mlp", skip=False,
                 encoding="identity", seed=0):
        if kind not in ("mlp", "quadratic"):
            raise ValueError(f"unknown value-network kind {kind!r}")
        if encoding not in ("identity", "angle-sincos"):
            raise ValueError(f"unknown input encoding {encoding!r}")
        if kind == "quadratic" and encoding != "identity":
            raise ValueError("quadratic head supports identity encoding only")
        self.state_dim = int(state_dim)
        self.hidden = list(int(w) for w in hidden)
        self.kind = kind
        self.encoding = encoding
        self.seed = int(seed)
        if kind == "mlp":
            n_in = 1 + self.state_dim + (1 if encoding == "angle-sincos" else 0)
            widths = [n_in] + self.hidden + [1]
        else:
            n_q = self.state_dim * (self.state_dim + 1) // 2
            widths = [1] + self.hidden + [n_q]
        self.core = MlpCore(widths, skip=skip, seed=seed)

    # -- parameter plumbing --------------------------------------------------

    @property
    def n_params(self) -> int:
        return self.core.n_params

    def get_params(self) -> np.ndarray:
        return self.core.get_params()

    def set_params(self, flat: np.ndarray):
        self.core.set_params(flat)

    # -- evaluation ----------------------------------------------------------

    def _encode(self, tau, x):
        tau = np.asarray(tau, dtype=float).reshape(-1, 1)
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "quadratic":
            return tau, np.ones_like(tau)
        if self.encoding == "angle-sincos":
            feats = [tau, np.sin(x[:, :1]), np.cos(x[:, :1]), x[:, 1:]]
        else:
            feats = [tau, x]
        X = np.concatenate(feats, axis=1)
        dX = np.zeros_like(X)
        dX[:, 0] = 1.0
        return X, dX

    def batch(self, tau, x):
        V, _ = self._eval(tau, x, tangent=False)
        return V

    def _eval(self, tau, x, tangent, need_cache=False):
        X, dX = self._encode(tau, x)
        if not np.all(np.isfinite(X)):
            raise NumericalFailureError("non-finite network input")
        Y, dY, cache = self.core.forward(X, dX if tangent else None, need_cache=need_cache)
        if self.kind == "quadratic":
            q = _quad_features(np.atleast_2d(x))
            V = np.sum(Y * q, axis=1)
            T = None if dY is None else np.sum(dY * q, axis=1)
        else:
            V = Y[:, 0]
            T = None if dY is None else dY[:, 0]
        if need_cache:
            return V, T, cache
        return V, T

    def forward(self, tau, x) -> np.ndarray:
        return self._eval(tau, x, tangent=False)[0]

    def time_derivative(self, tau, x) -> np.ndarray:
        return self._eval(tau, x, tangent=True)[1]

    def value_and_tau_derivative(self, tau, x):
        return self._eval(tau, x, tangent=True)[:2]

    # -- gradients -----------------------------------------------------------

    def grad_query(self, tau, x, gV, gT=None) -> np.ndarray:
        """Flat gradient of sum_j gV_j V_j + gT_j (d/dtau V)_j w.r.t. parameters."""
        tangent = gT is not None
        x = np.atleast_2d(np.asarray(x, dtype=float))
        V, T, cache = self._eval(tau, x, tangent=tangent, need_cache=True)
        gV = np.asarray(gV, dtype=float).reshape(-1, 1)
        if self.kind == "quadratic":
            q = _quad_features(x)
            gY = gV * q
            gdY = None if gT is None else np.asarray(gT, dtype=float).reshape(-1, 1) * q
        else:
            gY = gV
            gdY = None if gT is None else np.asarray(gT, dtype=float).reshape(-1, 1)
        grad = self.core.backward(cache, gY, gdY)
        if not np.all(np.isfinite(grad)):
            raise NumericalFailureError("non-finite parameter gradient")
        return grad

    def lipschitz_bound(self) -> float:
        """Product of operator norms; upper-bounds |V(t,x)-V(t,x')|/|x-x'|."""
        if self.kind == "quadratic":
            raise ValueError("lipschitz_bound applies to the mlp kind")
        bound = 1.0
        n_hidden = len(self.core.layers) - 1
        for l in range(n_hidden):
            W, _ = self.core.layers[l]
            norm = np.linalg.norm(W, 2)
            bound *= norm + (1.0 if self.core._skip_at(l) else 0.0)
        Wout, _ = self.core.layers[-1]
        bound *= np.linalg.norm(Wout, 2)
        if self.encoding == "angle-sincos":
            bound *= np.sqrt(2.0)
        return float(bound)

    # -- checkpointing -------------------------------------------------------

    def save(self, path):
        header = {
            "kind": self.kind,
            "state_dim": self.state_dim,
            "hidden": self.hidden,
            "skip": self.core.skip,
            "activation": "tanh",
            "encoding": self.encoding,
            "seed": self.seed,
        }
        with open(path, "w") as fh:
            fh.write(json.dumps(header) + "\n")
            for p in self.get_params():
                fh.write(float(p).hex() + "\n")

    @classmethod
    def load(cls, path) -> "ValueNetwork":
        with open(path) as fh:
            header = json.loads(fh.readline())
            params = np.array([float.fromhex(line.strip()) for line in fh if line.strip()])
        net = cls(
            header["state_dim"],
            header["hidden"],
            kind=header["kind"],
            skip=header["skip"],
            encoding=header["encoding"],
            seed=header["seed"],
        )
        net.set_params(params)
        return net


def loss_gradient(net: ValueNetwork, tau, x, loss_fn):
    """Exact parameter gradient of a loss over query-point outputs.

    loss_fn(V, T) receives the values and tau-derivatives at the query
    points and returns (loss, dL/dV, dL/dT); dL/dT may be None when the
    loss does not involve the time derivative.
    """
    V, T = net.value_and_tau_derivative(tau, x)
    loss, gV, gT = loss_fn(V, T)
    return float(loss), net.grad_query(tau, x, gV, gT)


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: np.ndarray | None = None
    second_moment: np.ndarray | None = None


def adam_step(params: np.ndarray, state: AdamState, grad: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update; mutates state, returns new parameters."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != params.shape:
        raise ValueError(f"gradient shape {grad.shape} != parameter shape {params.shape}")
    if state.first_moment is None:
        state.first_moment = np.zeros_like(params)
        state.second_moment = np.zeros_like(params)
    state.step += 1
    state.first_moment = state.beta1 * state.first_moment + (1 - state.beta1) * grad
    state.second_moment = state.beta2 * state.second_moment + (1 - state.beta2) * grad**2
    m_hat = state.first_moment / (1 - state.beta1**state.step)
    v_hat = state.second_moment / (1 - state.beta2**state.step)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
