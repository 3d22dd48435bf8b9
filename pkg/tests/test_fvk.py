import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from wrinklelab.cascade import build_cascade
from wrinklelab.fvk import (
    E0,
    DeformationField,
    NyquistError,
    antiderivative_y,
    assemble_upper_bound,
    cutoff,
    dy,
    evaluate_EL,
    evaluate_Eh,
    lower_bound_terms,
    required_ny,
    rescale,
    slice_arclength,
    two_sided_x,
    uniform_x,
    unrescale,
    y_grid,
)
from wrinklelab.solver import default_grids
from wrinklelab.spectral import energy


# ---------------------------------------------------------------------------
# closed forms


@pytest.mark.parametrize("n", [5, 64, 513])
def test_planar_deformation_closed_form(n):
    e = evaluate_EL(DeformationField.planar(uniform_x(n), 3.0, 8))
    assert e.total == pytest.approx(-4.0 / 3.0, abs=1e-14)
    assert e.T1a == pytest.approx(0.0, abs=1e-28)
    assert e.T1c == pytest.approx(1 / 3, abs=1e-15) and e.T2 == pytest.approx(1 / 3, abs=1e-15)


def test_zero_deformation_closed_form():
    e = evaluate_EL(DeformationField.zero(uniform_x(33), 2.0, 8))
    assert e.T1a == pytest.approx(2.0, abs=1e-14)
    assert e.total == pytest.approx(2.0 / 3.0, abs=1e-14)


def test_relaxed_minimum_constant():
    assert E0 == -5.0 / 3.0


# ---------------------------------------------------------------------------
# manufactured deformation against adaptive quadrature

L_M = 2.0
K_M = math.pi / L_M
A_M, B_M, C_M = 0.8, 0.3, 0.5


def manufactured(x, y):
    """u3 = A x^2 sin ky, w1 = x + B x sin ky, w2 = C x cos ky and derivatives."""
    s, c = np.sin(K_M * y), np.cos(K_M * y)
    return {
        "u": A_M * x**2 * s,
        "u_x": 2 * A_M * x * s,
        "u_y": A_M * x**2 * K_M * c,
        "u_yy": -A_M * x**2 * K_M**2 * s,
        "u_xy": 2 * A_M * x * K_M * c,
        "u_xx": 2 * A_M * s,
        "w1": x + B_M * x * s,
        "w1_x": 1 + B_M * s,
        "w1_y": B_M * x * K_M * c,
        "w2": C_M * x * c,
        "w2_x": C_M * c,
        "w2_y": -C_M * x * K_M * s,
    }


def manufactured_terms():
    """Term integrals by nested adaptive quadrature of the analytic integrands."""
    L = L_M

    def integ(fun, lo, hi):
        def inner(x):
            return quad(lambda y: fun(manufactured(x, y), x), -L, L, epsabs=1e-13, epsrel=1e-13)[0] / (2 * L)

        return quad(inner, lo, hi, epsabs=1e-13, epsrel=1e-13)[0]

    r = lambda f, x: (f["w2_y"] + 0.5 * f["u_y"] ** 2 - x) ** 2
    return {
        "T1a": integ(lambda f, x: (f["w1_x"] + f["u_x"] ** 2 / (2 * L**2) - 1) ** 2, -1, 1),
        "T1c": integ(r, -1, 0),
        "T2": integ(r, 0, 1),
        "T3": L**-2 * integ(lambda f, x: 0.5 * (L**2 * f["w1_y"] + f["w2_x"] + f["u_x"] * f["u_y"]) ** 2, -1, 1),
        "T4": L**-2 * integ(lambda f, x: f["u_x"] ** 2 + f["u_yy"] ** 2, -1, 1),
        "T5": L**-4 * integ(lambda f, x: 2 * f["u_xy"] ** 2 + L**-2 * f["u_xx"] ** 2, -1, 1),
    }


def manufactured_field(n):
    x = uniform_x(n)
    y = y_grid(L_M, 16)
    f = manufactured(x[:, None], y[None, :])
    return DeformationField(x, L_M, f["w1"], f["w2"], f["u"])


@pytest.fixture(scope="module")
def manufactured_oracle():
    return manufactured_terms()


def test_manufactured_terms_match_quadrature(manufactured_oracle):
    e = evaluate_EL(manufactured_field(4001))
    for name, ref in manufactured_oracle.items():
        assert getattr(e, name) == pytest.approx(ref, rel=2e-6, abs=1e-12), name
    assert e.T1b == -2.0


def test_manufactured_terms_converge_at_second_order(manufactured_oracle):
    def err(n):
        e = evaluate_EL(manufactured_field(n))
        return max(abs(getattr(e, k) - v) for k, v in manufactured_oracle.items())

    assert err(201) / err(401) > 3.5


def test_physical_energy_equals_rescaled_energy():
    d = manufactured_field(101)
    assert evaluate_Eh(unrescale(d)) == pytest.approx(evaluate_EL(d).total, rel=1e-13)


def test_rescale_round_trip():
    d = manufactured_field(21)
    back = rescale(unrescale(d))
    np.testing.assert_allclose(back.u3, d.u3, rtol=1e-15)
    np.testing.assert_allclose(back.w2, d.w2, rtol=1e-15)


# ---------------------------------------------------------------------------
# y operations


def test_spectral_derivative_and_antiderivative():
    L = 1.5
    y = y_grid(L, 32)
    k = 3 * math.pi / L
    g = np.cos(k * y)[None, :]
    np.testing.assert_allclose(dy(g, L), -k * np.sin(k * y)[None, :], atol=1e-12)
    F, closure = antiderivative_y(g, L)
    np.testing.assert_allclose(F, np.sin(k * y)[None, :] / k, atol=1e-14)
    assert abs(closure[0]) < 1e-14
    _, c = antiderivative_y(g + 1.0, L)
    assert c[0] == pytest.approx(2 * L, rel=1e-14)


def test_under_resolved_field_raises():
    x = uniform_x(9)
    y = y_grid(1.0, 8)
    u = np.sin(3 * math.pi * y)[None, :] * x[:, None]
    d = DeformationField(x, 1.0, x[:, None] + 0 * u, 0 * u, u)
    with pytest.raises(NyquistError):
        evaluate_EL(d)


def test_required_ny_is_even_and_above_twice_the_band():
    for b in range(1, 200):
        n = required_ny(b)
        assert n % 2 == 0 and n > 2 * b


def test_non_periodic_closure_is_rejected():
    x = uniform_x(5)
    z = np.zeros((5, 8))
    with pytest.raises(ValueError, match="periodic"):
        DeformationField(x, 1.0, z, z, z, closure={"w1": 1e-3})


def test_json_round_trip():
    d = manufactured_field(11)
    e = DeformationField.from_json(d.to_json())
    assert np.array_equal(e.u3, d.u3) and e.L == d.L


# ---------------------------------------------------------------------------
# cutoff


def test_cutoff_values_and_derivative_bounds():
    phi = cutoff(0.1)
    np.testing.assert_array_equal(phi(np.array([0.0, 0.05, 0.1, 0.5])), [0, 0, 1, 1])
    assert phi(0.075) == pytest.approx(0.5, abs=1e-15)
    x = np.linspace(0, 0.2, 20001)
    b1, b2 = phi.derivative_bounds
    assert np.max(np.abs(phi(x, 1))) == pytest.approx(b1, rel=1e-6)
    assert np.max(np.abs(phi(x, 2))) <= b2 * (1 + 1e-12)
    assert np.max(np.abs(phi(x, 2))) == pytest.approx(b2, rel=1e-3)


# ---------------------------------------------------------------------------
# upper-bound assembly


@pytest.fixture(scope="module")
def assembled():
    xg, fr = default_grids(1.0, 64)
    c = build_cascade(1.0, 1.0, xg, fr)
    return c, assemble_upper_bound(c, 2)


def test_assembled_shear_term_vanishes(assembled):
    _, d = assembled
    e = evaluate_EL(d)
    assert e.T3 < 1e-20
    assert max(d.closure.values()) < 1e-12


def test_assembled_constraint_term_bounds(assembled):
    # w2 absorbs the stretch wherever phi = 1; the residual lives on x < delta
    _, d = assembled
    e = evaluate_EL(d)
    delta = 1 / d.L
    assert e.T2 <= delta**3 / 3 * (1 + 1e-9)
    assert e.T1c == pytest.approx(1 / 3, abs=1e-12)


def test_lower_bound_scalar_energy_is_L2_T4(assembled):
    _, d = assembled
    e = evaluate_EL(d)
    lb = lower_bound_terms(d)
    assert lb["scalar_energy"] == pytest.approx(d.L**2 * e.T4, rel=1e-13)


def test_assembled_arclength_matches_constraint_above_cutoff(assembled):
    c, d = assembled
    s = slice_arclength(d)
    sel = d.x >= 1 / d.L
    np.testing.assert_allclose(s[sel], d.x[sel], atol=1e-12)


def test_assembled_scalar_energy_on_cutoff_free_region(assembled):
    c, d = assembled
    # with delta -> 0 the u3 part reproduces S of the periodic extension
    d0 = assemble_upper_bound(c, 2, delta=1e-9)
    assert lower_bound_terms(d0)["scalar_energy"] == pytest.approx(energy(c).total, rel=1e-12)


@settings(max_examples=10)
@given(st.integers(1, 4))
def test_assembled_excess_is_positive(N):
    xg, fr = default_grids(1.0, 32)
    c = build_cascade(1.0, 1.0, xg, fr)
    d = assemble_upper_bound(c, N)
    assert evaluate_EL(d).excess > 0


def test_two_sided_grid_contains_zero():
    xg, _ = default_grids(1.0, 16)
    x = two_sided_x(xg, 8)
    assert x[0] == -1.0 and x[-1] == 1.0 and np.count_nonzero(x == 0.0) == 1
