"""Random collocation: samplers, the finite-difference residual, the
empirical training loss with exact parameter gradient, and the quadrature
estimate of the population residual norm."""

from dataclasses import dataclass

import numpy as np

from .errors import SamplerError
from .fd import FdConfig
from .geometry import Box
from .network import ValueNetwork
from .rng import substream


@dataclass(frozen=True)
class LossWeights:
    lambda_ic: float = 10.0
    lambda_ext: float = 10.0

    def __post_init__(self):
        if not (np.isfinite(self.lambda_ic) and np.isfinite(self.lambda_ext)):
            raise ValueError("loss weights must be finite")
        if self.lambda_ic < 0 or self.lambda_ext < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass(frozen=True)
class CollocationBatch:
    interior_tau: np.ndarray   # (N_r,)
    interior_x: np.ndarray     # (N_r, d)
    initial_x: np.ndarray      # (N_0, d)
    collar_tau: np.ndarray     # (N_b,)
    collar_x: np.ndarray       # (N_b, d)
    seed: int


def sample_batch(omega: Box, T: float, h: float, sizes, seed: int) -> CollocationBatch:
    """Uniform samples on the cylinder interior, the initial slice, and the
    exterior collar (rejection from the enlarged box minus the domain)."""
    n_r, n_0, n_b = (int(s) for s in sizes)
    if min(n_r, n_0, n_b) < 1 or h <= 0:
        raise ValueError("batch sizes must be >= 1 and h > 0")
    rng = substream(seed, "collocation")
    interior_x = omega.sample(rng, n_r)
    interior_tau = rng.uniform(0.0, T, size=n_r)
    initial_x = omega.sample(rng, n_0)
    enlarged = omega.enlarge(h)
    collar_pts = []
    attempts = 0
    proposed = 0
    while len(collar_pts) < n_b:
        chunk = enlarged.sample(rng, max(4 * n_b, 256))
        proposed += chunk.shape[0]
        keep = chunk[~omega.contains(chunk)]
        collar_pts.extend(keep)
        attempts += 1
        if attempts >= 200 and len(collar_pts) / max(proposed, 1) < 1e-4:
            raise SamplerError(
                "collar rejection acceptance below 1e-4; increase h or "
                "parameterize the collar faces directly"
            )
    collar_x = np.array(collar_pts[:n_b])
    collar_tau = rng.uniform(0.0, T, size=n_b)
    return CollocationBatch(interior_tau, interior_x, initial_x, collar_tau, collar_x, seed)


def residual_terms(net: ValueNetwork, fdcfg: FdConfig, tau, x):
    """(tau-derivative, central gradient, discrete Laplacian) at batch points.

    Exactly one dual (tangent) pass at the centers and 4d shifted forwards.
    """
    tau = np.asarray(tau, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = x.shape
    h = fdcfg.h
    V, T = net.value_and_tau_derivative(tau, x)
    shifts = np.empty((2 * d, n, d))
    for i in range(d):
        shifts[2 * i] = x
        shifts[2 * i][:, i] += h
        shifts[2 * i + 1] = x
        shifts[2 * i + 1][:, i] -= h
    flat = shifts.reshape(-1, d)
    tau_rep = np.tile(tau, 2 * d)
    vals = net.forward(tau_rep, flat).reshape(2 * d, n)
    vp = vals[0::2]
    vm = vals[1::2]
    grad0 = ((vp - vm) / (2.0 * h)).T
    lap = np.sum(vp + vm - 2.0 * V[None, :], axis=0) / h**2
    return V, T, grad0, lap


def residual(net: ValueNetwork, drift, running_cost, fdcfg: FdConfig, tau, x) -> np.ndarray:
    """Semi-discrete residual at batch points (tau, x)."""
    tau = np.asarray(tau, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    _, T, grad0, lap = residual_terms(net, fdcfg, tau, x)
    a = np.atleast_2d(drift(tau, x))
    c = np.asarray(running_cost(tau, x), dtype=float)
    return T - np.sum(a * grad0, axis=1) - fdcfg.nu_h * lap - c


def empirical_loss(net, batch: CollocationBatch, drift, running_cost, g,
                   collar_reference, weights: LossWeights, fdcfg: FdConfig):
    """Empirical PINN loss; returns (total, (residual, ic, ext)) parts."""
    res = residual(net, drift, running_cost, fdcfg, batch.interior_tau, batch.interior_x)
    part_res = float(np.mean(res**2))
    v0 = net.forward(np.zeros(batch.initial_x.shape[0]), batch.initial_x)
    part_ic = float(np.mean((v0 - np.asarray(g(batch.initial_x))) ** 2))
    vb = net.forward(batch.collar_tau, batch.collar_x)
    ref = np.asarray(collar_reference(batch.collar_tau, batch.collar_x))
    part_ext = float(np.mean((vb - ref) ** 2))
    total = part_res + weights.lambda_ic * part_ic + weights.lambda_ext * part_ext
    return total, (part_res, part_ic, part_ext)


def empirical_loss_gradient(net, batch: CollocationBatch, drift, running_cost, g,
                            collar_reference, weights: LossWeights, fdcfg: FdConfig):
    """Loss, its parts, and the exact parameter gradient in one pass."""
    tau = batch.interior_tau
    x = batch.interior_x
    n, d = x.shape
    h, nu = fdcfg.h, fdcfg.nu_h
    V, T, grad0, lap = residual_terms(net, fdcfg, tau, x)
    a = np.atleast_2d(drift(tau, x))
    c = np.asarray(running_cost(tau, x), dtype=float)
    res = T - np.sum(a * grad0, axis=1) - nu * lap - c
    part_res = float(np.mean(res**2))
    g_res = 2.0 * res / n

    # adjoints on the center and shifted query values
    gV_center = g_res * (2.0 * d * nu / h**2)
    gT_center = g_res
    gV_shift = np.empty((2 * d, n))
    for i in range(d):
        gV_shift[2 * i] = g_res * (-a[:, i] / (2 * h) - nu / h**2)
        gV_shift[2 * i + 1] = g_res * (a[:, i] / (2 * h) - nu / h**2)
    shifts = np.empty((2 * d, n, d))
    for i in range(d):
        shifts[2 * i] = x
        shifts[2 * i][:, i] += h
        shifts[2 * i + 1] = x
        shifts[2 * i + 1][:, i] -= h

    grad = net.grad_query(tau, x, gV_center, gT_center)

    # no-tangent queries: spatial shifts, initial slice, collar
    n0 = batch.initial_x.shape[0]
    nb = batch.collar_x.shape[0]
    v0 = net.forward(np.zeros(n0), batch.initial_x)
    ic_gap = v0 - np.asarray(g(batch.initial_x))
    part_ic = float(np.mean(ic_gap**2))
    vb = net.forward(batch.collar_tau, batch.collar_x)
    ext_gap = vb - np.asarray(collar_reference(batch.collar_tau, batch.collar_x))
    part_ext = float(np.mean(ext_gap**2))

    all_tau = np.concatenate([np.tile(tau, 2 * d), np.zeros(n0), batch.collar_tau])
    all_x = np.concatenate([shifts.reshape(-1, d), batch.initial_x, batch.collar_x])
    all_gV = np.concatenate(
        [
            gV_shift.reshape(-1),
            2.0 * weights.lambda_ic * ic_gap / n0,
            2.0 * weights.lambda_ext * ext_gap / nb,
        ]
    )
    grad = grad + net.grad_query(all_tau, all_x, all_gV)
    total = part_res + weights.lambda_ic * part_ic + weights.lambda_ext * part_ext
    return total, (part_res, part_ic, part_ext), grad


def quadrature_nodes(omega: Box, T: float, resolution: int):
    """Midpoint tensor nodes on (0,T) x Omega and the common cell volume."""
    d = omega.dim
    axes = [(np.arange(resolution) + 0.5) / resolution * T]
    for i in range(d):
        lo, hi = omega.lo[i], omega.hi[i]
        axes.append(lo + (np.arange(resolution) + 0.5) / resolution * (hi - lo))
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    cell = T * omega.volume / resolution ** (d + 1)
    return pts[:, 0], pts[:, 1:], cell


def population_residual_quadrature(net, drift, running_cost, fdcfg, omega: Box,
                                   T: float, resolution: int = 24,
                                   chunk: int = 65536) -> float:
    """L2(Q_T) norm of the residual field via midpoint tensor quadrature
    (d <= 3); higher dimensions fall back to a quasi-random estimate."""
    d = omega.dim
    if d <= 3:
        taus, xs, cell = quadrature_nodes(omega, T, resolution)
        total = 0.0
        for start in range(0, taus.size, chunk):
            sl = slice(start, start + chunk)
            r = residual(net, drift, running_cost, fdcfg, taus[sl], xs[sl])
            total += float(np.sum(r**2)) * cell
        return float(np.sqrt(total))
    from scipy.stats import qmc

    sampler = qmc.Sobol(d=d + 1, scramble=True, seed=0)
    raw = sampler.random(2**16)
    taus = raw[:, 0] * T
    xs = omega.lo + raw[:, 1:] * omega.widths
    total = 0.0
    for start in range(0, taus.size, chunk):
        sl = slice(start, start + chunk)
        r = residual(net, drift, running_cost, fdcfg, taus[sl], xs[sl])
        total += float(np.sum(r**2))
    vol = T * omega.volume
    return float(np.sqrt(total / taus.size * vol))


def residual_sup_bound(net, drift, running_cost, fdcfg, omega: Box, T: float,
                       resolution: int = 24) -> float:
    """Max |residual| over the quadrature nodes, used as the range bound."""
    taus, xs, _ = quadrature_nodes(omega, T, min(resolution, 24))
    r = residual(net, drift, running_cost, fdcfg, taus, xs)
    return float(np.max(np.abs(r)))


def certification_deviation(M_R: float, n_samples: int, delta: float) -> float:
    """Hoeffding deviation term of the finite-sample residual certificate."""
    return float(M_R**2 * np.sqrt(np.log(2.0 / delta) / (2.0 * n_samples)))
