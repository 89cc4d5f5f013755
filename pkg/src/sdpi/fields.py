"""Scalar fields queried at shifted points, and tensor-grid fields.

A scalar field is any deterministic map (tau, x) -> value defined on the
enlarged domain; neural value functions, grid interpolants and closed-form
test functions all share this interface so the same difference operators
apply to each.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError


class ScalarField:
    """Callable v(tau, x); subclasses implement the batched form."""

    def batch(self, tau: np.ndarray, x: np.ndarray) -> np.ndarray:
        """tau: (n,), x: (n, d) -> (n,) values."""
        raise NotImplementedError

    def __call__(self, tau, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            t = np.atleast_1d(float(tau))
            return float(self.batch(t, x[None, :])[0])
        tau = np.broadcast_to(np.asarray(tau, dtype=float), (x.shape[0],))
        return self.batch(np.ascontiguousarray(tau), x)


class FuncField(ScalarField):
    """Wraps a vectorized callable f(tau, x)."""

    def __init__(self, fn):
        self.fn = fn

    def batch(self, tau, x):
        return np.asarray(self.fn(tau, x), dtype=float).reshape(x.shape[0])


def space_field(fn) -> FuncField:
    """Field depending on x only; fn takes (n, d) and returns (n,)."""
    return FuncField(lambda tau, x: fn(x))


@dataclass(frozen=True)
class GridField:
    """Value array on a tensor grid covering the enlarged domain.

    Node i (multi-index) sits at ``origin + i * h_grid``.  The outermost
    ``collar_width`` layers of nodes are the exterior collar; the inner
    block is the domain proper.
    """

    values: np.ndarray
    h_grid: float
    origin: np.ndarray
    collar_width: int = 1

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if any(n < 3 for n in values.shape):
            raise ValueError(f"grid needs >= 3 nodes per axis, got {values.shape}")
        if self.h_grid <= 0:
            raise ValueError("h_grid must be positive")
        if self.collar_width < 1:
            raise ValueError("collar_width must be >= 1")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def cell_volume(self) -> float:
        return float(self.h_grid**self.dim)

    def interior_slices(self) -> tuple:
        c = self.collar_width
        return tuple(slice(c, n - c) for n in self.shape)

    def interior_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[self.interior_slices()] = True
        return mask

    def axis_coords(self, i: int) -> np.ndarray:
        return self.origin[i] + self.h_grid * np.arange(self.shape[i])

    def node_coords(self) -> np.ndarray:
        """(n_nodes, d) coordinates in C order of the flattened array."""
        axes = [self.axis_coords(i) for i in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def zero_extend(self) -> "GridField":
        """Collar (and thereby all exterior) values set to exactly zero."""
        vals = self.values.copy()
        vals[~self.interior_mask()] = 0.0
        return GridField(vals, self.h_grid, self.origin, self.collar_width)

    def with_values(self, values: np.ndarray) -> "GridField":
        return GridField(values, self.h_grid, self.origin, self.collar_width)

    def same_grid(self, other: "GridField") -> bool:
        return (
            self.shape == other.shape
            and self.collar_width == other.collar_width
            and np.isclose(self.h_grid, other.h_grid)
            and np.allclose(self.origin, other.origin)
        )

    def require_same_grid(self, other: "GridField"):
        if not self.same_grid(other):
            raise GridMismatchError(
                f"grid mismatch: {self.shape}/{self.h_grid} vs {other.shape}/{other.h_grid}"
            )

    def interp(self, x: np.ndarray) -> np.ndarray:
        """Multilinear interpolation at points x (n, d); clamped to the grid."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        s = (x - self.origin) / self.h_grid
        out = np.zeros(x.shape[0])
        i0 = np.clip(np.floor(s).astype(int), 0, np.array(self.shape) - 2)
        w = np.clip(s - i0, 0.0, 1.0)
        for corner in range(1 << self.dim):
            bits = np.array([(corner >> i) & 1 for i in range(self.dim)])
            idx = tuple((i0 + bits).T)
            weight = np.prod(np.where(bits, w, 1.0 - w), axis=1)
            out += weight * self.values[idx]
        return out


def grid_from_function(fn, omega_lo, omega_hi, h_grid: float, collar_width: int = 1) -> GridField:
    """Sample fn(x) on a grid covering the box plus a collar ring."""
    omega_lo = np.atleast_1d(np.asarray(omega_lo, dtype=float))
    omega_hi = np.atleast_1d(np.asarray(omega_hi, dtype=float))
    n_interior = np.round((omega_hi - omega_lo) / h_grid).astype(int) + 1
    shape = tuple(n_interior + 2 * collar_width)
    origin = omega_lo - collar_width * h_grid
    gf = GridField(np.zeros(shape), h_grid, origin, collar_width)
    vals = np.asarray(fn(gf.node_coords()), dtype=float).reshape(shape)
    return gf.with_values(vals)
