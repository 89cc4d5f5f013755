import numpy as np
import pytest

from sdpi.errors import DomainError
from sdpi.fd import (
    FdConfig,
    adjointness_defect,
    backward_diff,
    central_diff,
    central_forward_bound_check,
    diffusion_identity_defect,
    forward_diff,
    grid_central_diff,
    grid_forward_diff,
    laplace_h,
    nabla0,
    shift_array,
    transport_identity_defect,
)
from sdpi.fields import FuncField, GridField
from sdpi.geometry import Box

H = 0.1


def random_field(rng, d, n=10):
    return GridField(rng.standard_normal((n,) * d), H, -H * np.ones(d))


def test_fdconfig_validation():
    with pytest.raises(ValueError):
        FdConfig(h=0.0)
    with pytest.raises(ValueError):
        FdConfig(h=0.1, nu_h=-1.0)


def test_meshfree_diffs_on_quadratic():
    # v = x0^2: D+ = 2x + h, D- = 2x - h, D0 = 2x exactly
    v = FuncField(lambda tau, x: x[:, 0] ** 2)
    x = np.array([0.3, -0.2])
    assert forward_diff(v, 0.0, x, 0, H) == pytest.approx(2 * 0.3 + H)
    assert backward_diff(v, 0.0, x, 0, H) == pytest.approx(2 * 0.3 - H)
    assert central_diff(v, 0.0, x, 0, H) == pytest.approx(0.6)
    assert laplace_h(v, 0.0, x, H) == pytest.approx(2.0)


def test_nabla0_vectorized():
    v = FuncField(lambda tau, x: x[:, 0] * x[:, 1])
    xs = np.array([[0.1, 0.2], [0.5, -0.4]])
    g = nabla0(v, 0.0, xs, H)
    assert g.shape == (2, 2)
    np.testing.assert_allclose(g, xs[:, ::-1], atol=1e-12)


def test_domain_check_rejects_outside_queries():
    v = FuncField(lambda tau, x: x[:, 0])
    box = Box.cube(1.0, 1)
    # x + h leaves the enlarged box
    with pytest.raises(DomainError):
        forward_diff(v, 0.0, np.array([1.05]), 0, H, domain=box)
    # inside the enlarged domain is fine
    forward_diff(v, 0.0, np.array([0.95]), 0, H, domain=box)


def test_shift_array_zero_fill():
    a = np.arange(5.0)
    np.testing.assert_array_equal(shift_array(a, 0, 1), [1, 2, 3, 4, 0])
    np.testing.assert_array_equal(shift_array(a, 0, -2), [0, 0, 0, 1, 2])
    np.testing.assert_array_equal(shift_array(a, 0, 0), a)


def test_grid_operator_scale_must_align():
    gf = GridField(np.zeros((5, 5)), H, np.zeros(2))
    with pytest.raises(ValueError):
        grid_forward_diff(gf, 0, 0.15)
    grid_forward_diff(gf, 0, 2 * H)


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("seed", range(20))
def test_identities_random_fields(d, seed):
    rng = np.random.default_rng(seed)
    phi = random_field(rng, d)
    psi = phi.with_values(rng.standard_normal(phi.shape))
    a = phi.with_values(rng.standard_normal(phi.shape))
    z = phi.with_values(rng.standard_normal(phi.shape))
    scale = float(np.linalg.norm(phi.values) * np.linalg.norm(psi.values) * phi.cell_volume)
    zsq = float(np.sum(z.values**2) * z.cell_volume)
    for i in range(d):
        assert adjointness_defect(phi, psi, i, H) / scale < 1e-10
        _, _, defect = transport_identity_defect(z, a, i, H)
        assert defect / zsq < 1e-10
    assert diffusion_identity_defect(z, H) / zsq < 1e-10
    lhs, rhs = central_forward_bound_check(z, H)
    assert lhs <= rhs * (1 + 1e-12)


def test_adjointness_hand_example_1d():
    # phi = psi = indicator of one interior node: sum phi D- psi = 1/h,
    # sum D+ phi psi = -1/h; defect of the sum is exactly zero.
    vals = np.zeros(7)
    vals[3] = 1.0
    gf = GridField(vals, H, np.array([-H]))
    assert adjointness_defect(gf, gf, 0, H) == 0.0


def test_central_forward_spike_ratio():
    # single spike: central-gradient energy is exactly half the forward energy
    vals = np.zeros(9)
    vals[4] = 1.0
    z = GridField(vals, H, np.array([-H]))
    lhs, rhs = central_forward_bound_check(z, H)
    assert lhs == pytest.approx(rhs / 2.0)


def test_diffusion_sign_negative_semidefinite():
    rng = np.random.default_rng(11)
    z = random_field(rng, 2)
    # the check inside raises if sum z * Lap z > 0
    diffusion_identity_defect(z, H)
