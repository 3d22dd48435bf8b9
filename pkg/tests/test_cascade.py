import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from wrinklelab.cascade import (
    ModeCapError,
    build_cascade,
    build_profile,
    cascade_moment,
    choose_n0,
    field_moments,
    identity_residual,
    plan_cascade,
    plateau,
    smoothstep5,
    verify_cascade_bounds,
)
from wrinklelab.solver import default_grids
from wrinklelab.spectral import FrequencyGrid, XGrid, constraint_residual, energy


def test_smoothstep_values_and_derivatives():
    assert smoothstep5(-1.0) == 0.0 and smoothstep5(2.0) == 1.0
    assert smoothstep5(0.5) == pytest.approx(0.5, abs=1e-15)
    for nu in (1, 2):
        assert smoothstep5(0.0, nu) == 0.0 and smoothstep5(1.0, nu) == 0.0
    # derivative integrates to one
    assert quad(lambda u: float(smoothstep5(u, 1)), 0, 1)[0] == pytest.approx(1.0, abs=1e-13)


@pytest.mark.parametrize("nu", [1, 2])
def test_smoothstep_derivatives_match_finite_differences(nu):
    u = np.linspace(0.05, 0.95, 19)
    eps = 1e-6
    fd = (smoothstep5(u + eps, nu - 1) - smoothstep5(u - eps, nu - 1)) / (2 * eps)
    np.testing.assert_allclose(smoothstep5(u, nu), fd, atol=1e-7)


def test_plateau_support():
    t = np.array([0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 5.0])
    np.testing.assert_array_equal(plateau(t), [0, 0, 1, 1, 1, 0, 0])


@pytest.mark.parametrize("nu", [1, 2])
def test_profile_derivatives_match_finite_differences(nu):
    f = build_profile()
    t = np.linspace(0.3, 3.9, 37)
    eps = 1e-6
    fd = (f(t + eps, nu - 1) - f(t - eps, nu - 1)) / (2 * eps)
    np.testing.assert_allclose(f(t, nu), fd, atol=2e-5 * max(1, nu * 10))


def test_profile_identity_on_fine_grid():
    assert identity_residual(build_profile(), 10_000) <= 1e-12


def test_profile_support():
    f = build_profile()
    assert np.all(f(np.array([0.0, 0.2, 0.25, 4.0, 6.0])) == 0.0)


@pytest.mark.parametrize("b, n0", [(1.0, 0), (0.25, 1), (0.3, 0), (0.01, 3)])
def test_choose_n0(b, n0):
    assert choose_n0(b) == n0


def test_choose_n0_rejects_out_of_range():
    with pytest.raises(ValueError):
        choose_n0(1.5)


@given(st.sampled_from([1.0, 1.5, 2.0, 3.0, 4.0]), st.sampled_from([32, 64, 128]))
def test_cascade_is_exactly_feasible(L, N):
    xg, fr = default_grids(L, N)
    c = build_cascade(L, 1.0, xg, fr)
    assert np.max(np.abs(constraint_residual(c))) <= 1e-10
    assert np.all(c.a >= 0) and np.all(c.a[:, 0] == 0)


def test_cascade_raises_mode_cap_error_with_required_M():
    xg = XGrid.graded(64)
    with pytest.raises(ModeCapError) as err:
        build_cascade(1.0, 1.0, xg, FrequencyGrid(1.0, 4))
    assert err.value.required_M == plan_cascade(1.0, 1.0, xg).required_M


def _moment_error(N, alpha, beta):
    xg, fr = default_grids(1.0, N)
    c = build_cascade(1.0, 1.0, xg, fr)
    plan = plan_cascade(1.0, 1.0, xg)
    x = xg.nodes
    sel = (x > 0.05) & (x < 0.95)
    ref = cascade_moment(plan, x[sel], alpha, beta)
    return np.max(np.abs(field_moments(c, alpha, beta)[sel] - ref) / ref)


def test_amplitude_moments_match_continuum_cascade():
    # no derivative in x: nodal values are exact
    for beta in (0, 2):
        assert _moment_error(128, 0, beta) < 1e-12


def test_derivative_moment_converges_at_second_order():
    e1, e2 = _moment_error(128, 1, 0), _moment_error(256, 1, 0)
    assert e2 < 0.05
    assert e1 / e2 > 3.0


def test_cascade_moment_bounds_are_finite_and_energy_bounded():
    xg, fr = default_grids(2.0, 128)
    c = build_cascade(2.0, 1.0, xg, fr)
    rep = verify_cascade_bounds(c, x_lo=1e-3)
    assert all(np.isfinite(v) for v in rep.constants.values())
    assert np.isfinite(energy(c).total)
