"""Shift-operator finite-difference calculus.

Two layers: mesh-free operators that query an arbitrary scalar field at
displaced points x +/- h e_i (h is a translation scale, not a grid
spacing), and exact identity checks on zero-extended grid functions.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .fields import GridField, ScalarField
from .geometry import Box


@dataclass(frozen=True)
class FdConfig:
    h: float
    nu_h: float = 0.0

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("h must be positive")
        if self.nu_h < 0:
            raise ValueError("nu_h must be nonnegative")


def _check_domain(points: np.ndarray, h: float, domain: Box | None):
    if domain is None:
        return
    inside = domain.enlarge(h).contains(points, atol=1e-12)
    if not np.all(inside):
        bad = points[~np.atleast_1d(inside)][0]
        raise DomainError(f"query point {bad} outside enlarged domain")


def _shifted(x: np.ndarray, i: int, delta: float) -> np.ndarray:
    out = np.array(x, dtype=float)
    out[..., i] = out[..., i] + delta
    return out


def forward_diff(v: ScalarField, tau, x, i: int, h: float, domain: Box | None = None):
    x = np.asarray(x, dtype=float)
    xp = _shifted(x, i, h)
    _check_domain(np.stack([np.atleast_2d(x), np.atleast_2d(xp)]).reshape(-1, x.shape[-1]), h, domain)
    return (v(tau, xp) - v(tau, x)) / h


def backward_diff(v: ScalarField, tau, x, i: int, h: float, domain: Box | None = None):
    x = np.asarray(x, dtype=float)
    xm = _shifted(x, i, -h)
    _check_domain(np.stack([np.atleast_2d(x), np.atleast_2d(xm)]).reshape(-1, x.shape[-1]), h, domain)
    return (v(tau, x) - v(tau, xm)) / h


def central_diff(v: ScalarField, tau, x, i: int, h: float, domain: Box | None = None):
    x = np.asarray(x, dtype=float)
    xp = _shifted(x, i, h)
    xm = _shifted(x, i, -h)
    _check_domain(np.concatenate([np.atleast_2d(xp), np.atleast_2d(xm)]), h, domain)
    return (v(tau, xp) - v(tau, xm)) / (2.0 * h)


def nabla0(v: ScalarField, tau, x, h: float, domain: Box | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    return np.stack([central_diff(v, tau, x, i, h, domain) for i in range(d)], axis=-1)


def nabla_plus(v: ScalarField, tau, x, h: float, domain: Box | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    return np.stack([forward_diff(v, tau, x, i, h, domain) for i in range(d)], axis=-1)


def laplace_h(v: ScalarField, tau, x, h: float, domain: Box | None = None):
    """Sum of second difference quotients; 2d+1 field queries."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    center = v(tau, x)
    total = 0.0
    for i in range(d):
        xp = _shifted(x, i, h)
        xm = _shifted(x, i, -h)
        _check_domain(np.concatenate([np.atleast_2d(xp), np.atleast_2d(xm)]), h, domain)
        total = total + (v(tau, xp) - 2.0 * center + v(tau, xm)) / h**2
    return total


# ---------------------------------------------------------------------------
# Grid-function operators (zero extension makes the identities exact).
# ---------------------------------------------------------------------------


def shift_array(arr: np.ndarray, axis: int, steps: int) -> np.ndarray:
    """arr evaluated at x + steps*h*e_axis, zero-filled outside the array."""
    if steps == 0:
        return arr.copy()
    out = np.zeros_like(arr)
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    if steps > 0:
        src[axis] = slice(steps, None)
        dst[axis] = slice(None, -steps)
    else:
        src[axis] = slice(None, steps)
        dst[axis] = slice(-steps, None)
    out[tuple(dst)] = arr[tuple(src)]
    return out


def _steps(gf: GridField, h: float) -> int:
    s = h / gf.h_grid
    if abs(s - round(s)) > 1e-9 or round(s) < 1:
        raise ValueError(f"operator scale h={h} is not a positive multiple of h_grid={gf.h_grid}")
    return int(round(s))


def grid_forward_diff(gf: GridField, i: int, h: float) -> np.ndarray:
    s = _steps(gf, h)
    return (shift_array(gf.values, i, s) - gf.values) / h


def grid_backward_diff(gf: GridField, i: int, h: float) -> np.ndarray:
    s = _steps(gf, h)
    return (gf.values - shift_array(gf.values, i, -s)) / h


def grid_central_diff(gf: GridField, i: int, h: float) -> np.ndarray:
    s = _steps(gf, h)
    return (shift_array(gf.values, i, s) - shift_array(gf.values, i, -s)) / (2.0 * h)


def grid_laplace(gf: GridField, h: float) -> np.ndarray:
    s = _steps(gf, h)
    out = np.zeros_like(gf.values)
    for i in range(gf.dim):
        out += (
            shift_array(gf.values, i, s) - 2.0 * gf.values + shift_array(gf.values, i, -s)
        ) / h**2
    return out


def adjointness_defect(phi: GridField, psi: GridField, i: int, h: float) -> float:
    """Absolute defect of the discrete summation-by-parts identity."""
    phi.require_same_grid(psi)
    phi = phi.zero_extend()
    psi = psi.zero_extend()
    s1 = np.sum(phi.values * grid_backward_diff(psi, i, h))
    s2 = np.sum(grid_forward_diff(phi, i, h) * psi.values)
    return abs(s1 + s2) * phi.cell_volume


def transport_identity_defect(z: GridField, a: GridField, i: int, h: float):
    """Shifted-product identity for the central transport term.

    Returns (lhs, rhs, defect) where lhs integrates z * a_i * D0 z over the
    domain and rhs is the equivalent divergence form.  Also asserts the
    transport bound |lhs| <= 0.5 * sup|D+ a_i| * ||z||^2.
    """
    z.require_same_grid(a)
    z = z.zero_extend()
    cell = z.cell_volume
    lhs = float(np.sum(z.values * a.values * grid_central_diff(z, i, h)) * cell)
    s = _steps(z, h)
    dplus_a = grid_forward_diff(a, i, h)
    rhs = float(-0.5 * np.sum(dplus_a * z.values * shift_array(z.values, i, s)) * cell)
    # sup over nodes whose shifted neighbor is still inside the array
    valid = [slice(None)] * z.dim
    valid[i] = slice(None, -s)
    sup_da = float(np.max(np.abs(dplus_a[tuple(valid)])))
    z_sq = float(np.sum(z.values**2) * cell)
    bound = 0.5 * sup_da * z_sq
    if abs(lhs) > bound * (1.0 + 1e-9) + 1e-12:
        raise AssertionError(f"transport bound violated: |lhs|={abs(lhs)} > {bound}")
    return lhs, rhs, abs(lhs - rhs)


def diffusion_identity_defect(z: GridField, h: float) -> float:
    """Defect of sum z*Lap z == -sum_i ||D+ z||^2; also checks the sign."""
    z = z.zero_extend()
    cell = z.cell_volume
    lhs = float(np.sum(z.values * grid_laplace(z, h)) * cell)
    rhs = -sum(float(np.sum(grid_forward_diff(z, i, h) ** 2) * cell) for i in range(z.dim))
    if lhs > 1e-12 * max(1.0, abs(rhs)):
        raise AssertionError(f"sum z*Lap z = {lhs} should be <= 0")
    return abs(lhs - rhs)


def central_forward_bound_check(z: GridField, h: float):
    """(lhs, rhs): central-gradient L2 over the domain vs forward L2 over R^d."""
    z = z.zero_extend()
    cell = z.cell_volume
    interior = z.interior_slices()
    lhs_sq = sum(
        float(np.sum(grid_central_diff(z, i, h)[interior] ** 2) * cell) for i in range(z.dim)
    )
    rhs_sq = sum(float(np.sum(grid_forward_diff(z, i, h) ** 2) * cell) for i in range(z.dim))
    return float(np.sqrt(lhs_sq)), float(np.sqrt(rhs_sq))
