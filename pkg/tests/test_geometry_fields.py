import numpy as np
import pytest

from sdpi.errors import GridMismatchError
from sdpi.fields import FuncField, GridField, grid_from_function, space_field
from sdpi.geometry import Box


def test_box_basics():
    box = Box(np.array([-1.0, 0.0]), np.array([1.0, 2.0]))
    assert box.dim == 2
    np.testing.assert_array_equal(box.widths, [2.0, 2.0])
    assert box.volume == pytest.approx(4.0)
    assert box.contains(np.array([0.0, 1.0]))
    assert not box.contains(np.array([0.0, 2.5]))


def test_box_cube_and_enlarge():
    box = Box.cube(1.0, 3)
    big = box.enlarge(0.25)
    np.testing.assert_allclose(big.lo, -1.25 * np.ones(3))
    np.testing.assert_allclose(big.hi, 1.25 * np.ones(3))


def test_box_clamp_and_sample():
    box = Box.cube(1.0, 2)
    pts = box.clamp(np.array([[2.0, -3.0], [0.1, 0.2]]))
    np.testing.assert_allclose(pts[0], [1.0, -1.0])
    rng = np.random.default_rng(0)
    sample = box.sample(rng, 100)
    assert sample.shape == (100, 2)
    assert np.all(box.contains(sample))


def test_scalar_field_call_modes():
    f = FuncField(lambda tau, x: tau + x[:, 0])
    assert f(0.5, np.array([1.0])) == pytest.approx(1.5)
    out = f(0.5, np.array([[1.0], [2.0]]))
    np.testing.assert_allclose(out, [1.5, 2.5])


def test_space_field_ignores_tau():
    f = space_field(lambda x: x[:, 0] ** 2)
    assert f(3.0, np.array([2.0])) == f(7.0, np.array([2.0])) == pytest.approx(4.0)


def test_grid_field_validation():
    with pytest.raises(ValueError):
        GridField(np.zeros((2, 5)), 0.1, np.zeros(2))
    with pytest.raises(ValueError):
        GridField(np.zeros((5, 5)), -0.1, np.zeros(2))
    with pytest.raises(ValueError):
        GridField(np.zeros((5, 5)), 0.1, np.zeros(2), collar_width=0)


def test_grid_field_values_read_only():
    gf = GridField(np.zeros((5, 5)), 0.1, np.zeros(2))
    with pytest.raises(ValueError):
        gf.values[0, 0] = 1.0


def test_interior_mask_counts():
    gf = GridField(np.zeros((5, 6)), 0.1, np.zeros(2))
    mask = gf.interior_mask()
    assert mask.sum() == 3 * 4


def test_node_coords_and_axis():
    gf = GridField(np.zeros((3, 3)), 0.5, np.array([-0.5, -0.5]))
    np.testing.assert_allclose(gf.axis_coords(0), [-0.5, 0.0, 0.5])
    coords = gf.node_coords()
    assert coords.shape == (9, 2)
    np.testing.assert_allclose(coords[4], [0.0, 0.0])


def test_zero_extend_only_touches_collar():
    rng = np.random.default_rng(3)
    gf = GridField(rng.standard_normal((5, 5)), 0.1, np.zeros(2))
    z = gf.zero_extend()
    interior = gf.interior_slices()
    np.testing.assert_array_equal(z.values[interior], gf.values[interior])
    assert np.all(z.values[~gf.interior_mask()] == 0.0)


def test_require_same_grid():
    a = GridField(np.zeros((5, 5)), 0.1, np.zeros(2))
    b = GridField(np.zeros((5, 5)), 0.2, np.zeros(2))
    with pytest.raises(GridMismatchError):
        a.require_same_grid(b)
    a.require_same_grid(a.with_values(np.ones((5, 5))))


def test_interp_exact_on_linear():
    # multilinear interpolation reproduces affine functions exactly
    gf = grid_from_function(lambda x: 2.0 * x[:, 0] - x[:, 1] + 1.0,
                            [-1.0, -1.0], [1.0, 1.0], 0.5)
    rng = np.random.default_rng(5)
    pts = rng.uniform(-1.0, 1.0, size=(50, 2))
    np.testing.assert_allclose(gf.interp(pts), 2 * pts[:, 0] - pts[:, 1] + 1.0, atol=1e-12)


def test_grid_from_function_layout():
    gf = grid_from_function(lambda x: np.zeros(x.shape[0]), [0.0], [1.0], 0.25)
    # 5 interior nodes plus one collar node each side
    assert gf.shape == (7,)
    assert gf.axis_coords(0)[0] == pytest.approx(-0.25)
