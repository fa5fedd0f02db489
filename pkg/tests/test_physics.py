import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xdgtrack.cutcell import classify
from xdgtrack.levelset import PolynomialLevelSet
from xdgtrack.mesh import build_grid
from xdgtrack.physics import (GAMMA, AdvectionLaw, EulerLaw, NonAdmissibleState, VacuumError,
                              advection_flux, advection_speed, advection_upwind, boundary_flux,
                              burgers_flux, burgers_upwind, enthalpy_error, euler_flux,
                              free_stream_enthalpy, godunov_flux, hllc_flux, oblique_shock_angle,
                              oblique_shock_state, pressure, primitive_to_conserved, slipwall_flux,
                              star_pressure)
from xdgtrack.verification import exact_star_pressure, flux_suite, random_euler_states, random_normals
from xdgtrack.xdgspace import make_layout, project

E1 = np.array([[1.0, 0.0]])


def test_advection_speed_at_half():
    assert advection_speed(0.5) == pytest.approx(-0.25, abs=1e-15)


def test_advection_upwind_consistency_and_time_direction():
    c = np.array([0.3, 1.7])
    t = np.array([0.2, 0.9])
    n = np.array([[0.6, 0.8], [-1.0, 0.0]])
    ref = np.einsum("nd,nd->n", advection_flux(c, t)[:, 0], n)
    np.testing.assert_allclose(advection_upwind(c, c, n, t), ref, atol=1e-15)
    # the time direction is always outflow for the inner trace
    up = np.array([[0.0, 1.0]])
    assert advection_upwind(np.array([2.0]), np.array([5.0]), up, np.array([0.5]))[0] == 2.0


def test_burgers_upwind_selects_by_mean_speed():
    assert burgers_upwind(np.array([0.75]), np.array([0.25]), E1)[0] == pytest.approx(0.5 * 0.75 ** 2)
    assert burgers_upwind(np.array([-0.75]), np.array([0.25]), E1)[0] == pytest.approx(0.5 * 0.25 ** 2)
    c = np.array([0.4])
    n = np.array([[0.6, -0.8]])
    ref = burgers_flux(c)[0, 0] @ n[0]
    assert burgers_upwind(c, c, n)[0] == pytest.approx(ref, abs=1e-15)


def test_burgers_rankine_hugoniot_speed():
    cl, cr = 0.75, 0.25
    speed = (0.5 * cl ** 2 - 0.5 * cr ** 2) / (cl - cr)
    assert speed == pytest.approx(0.5)
    # a shock line x = x0 + t/2 carries zero net normal flux
    n = np.array([[1.0, -0.5]]) / math.hypot(1.0, 0.5)
    jump = burgers_flux([cl])[0, 0] @ n[0] - burgers_flux([cr])[0, 0] @ n[0]
    assert abs(jump) < 1e-15


def test_inlet_energy_mach_two():
    U = primitive_to_conserved(1.0, 2.0 * math.sqrt(GAMMA), 0.0, 1.0)
    np.testing.assert_allclose(U, [1.0, 2.0 * math.sqrt(1.4), 0.0, 5.3], rtol=1e-14)
    assert pressure(U) == pytest.approx(1.0)


def test_free_stream_enthalpy_values():
    assert free_stream_enthalpy(2.0) == pytest.approx(6.3, rel=1e-14)
    assert free_stream_enthalpy(4.0) == pytest.approx(14.7, rel=1e-14)


def test_slipwall_tangential_state():
    U = primitive_to_conserved(1.3, 0.8, 0.6, 2.0)
    n = np.array([[0.6, -0.8]])
    np.testing.assert_allclose(slipwall_flux(U, n)[0], [0.0, 1.2, -1.6, 0.0], atol=1e-15)


def test_boundary_kinds():
    U_in = primitive_to_conserved(1.0, 2.0 * math.sqrt(GAMMA), 0.0, 1.0)
    law = EulerLaw(U_in)
    U = primitive_to_conserved(0.7, 1.1, 0.2, 0.9)
    n = np.array([[1.0, 0.0]])
    np.testing.assert_allclose(boundary_flux(law, "right", U, [[1.5, 0.5]], n)[0], euler_flux(U)[0] @ n[0])
    np.testing.assert_allclose(boundary_flux(law, "left", U, [[0.0, 0.5]], -n)[0], -(euler_flux(U_in)[0] @ n[0]))
    with pytest.raises(KeyError):
        boundary_flux(law, "nowhere", U, [[0.0, 0.0]], n)


def test_scalar_dirichlet_uses_exact_solution():
    law = AdvectionLaw(lambda x: (x[:, 0] < 0.25).astype(float))
    n = np.array([[0.0, -1.0]])
    # bottom edge: inflow in time, the flux takes the initial value
    left = law.boundary_flux("bottom", np.array([[7.0]]), n, np.array([[0.1, 0.0]]))
    right = law.boundary_flux("bottom", np.array([[7.0]]), n, np.array([[0.4, 0.0]]))
    assert left[0, 0] == pytest.approx(-1.0)
    assert right[0, 0] == pytest.approx(0.0)


def test_sod_star_pressure():
    ps, us = star_pressure(np.array([1.0]), np.array([0.0]), np.array([1.0]),
                           np.array([0.125]), np.array([0.0]), np.array([0.1]))
    oracle = exact_star_pressure(1.0, 0.0, 1.0, 0.125, 0.0, 0.1)
    assert abs(ps[0] - oracle) <= 1e-10 * oracle
    assert ps[0] == pytest.approx(0.30313, abs=5e-6)
    assert us[0] == pytest.approx(0.92745, abs=5e-5)


def test_vacuum_and_inadmissible_states_raise():
    UL = primitive_to_conserved(1.0, -20.0, 0.0, 0.1)
    UR = primitive_to_conserved(1.0, 20.0, 0.0, 0.1)
    with pytest.raises(VacuumError):
        godunov_flux(UL, UR, E1)
    bad = np.array([[1.0, 0.0, 0.0, -1.0]])
    with pytest.raises(NonAdmissibleState):
        hllc_flux(bad, bad, E1)


def test_stationary_shock_hllc_matches_godunov():
    mach = 2.0
    UL = primitive_to_conserved(1.0, mach * math.sqrt(GAMMA), 0.0, 1.0)
    rho2, u2, _, p2 = oblique_shock_state(1.0, 1.0, mach, math.pi / 2, 0.0)
    UR = primitive_to_conserved(rho2, u2, 0.0, p2)
    g = godunov_flux(UL, UR, E1)[0]
    h = hllc_flux(UL, UR, E1)[0]
    np.testing.assert_allclose(g, euler_flux(UL)[0, :, 0], rtol=1e-10)
    np.testing.assert_allclose(h, g, atol=1e-6 * np.abs(g).max())


def test_wedge_shock_angle():
    beta = oblique_shock_angle(2.0, math.radians(10.0))
    assert math.degrees(beta) == pytest.approx(39.31, abs=0.01)


def test_euler_flux_jacobian_eigenvalues():
    rng = np.random.default_rng(3)
    U = random_euler_states(rng, 20)
    n = random_normals(rng, 20)
    for Ui, ni in zip(U, n):
        h = 1e-6
        J = np.empty((4, 4))
        for k in range(4):
            e = np.zeros(4)
            e[k] = h * max(1.0, abs(Ui[k]))
            J[:, k] = (euler_flux(Ui + e)[0] @ ni - euler_flux(Ui - e)[0] @ ni) / (2 * e[k])
        un = Ui[1:3] @ ni / Ui[0]
        c = math.sqrt(GAMMA * pressure(Ui) / Ui[0])
        ev = np.sort(np.linalg.eigvals(J).real)
        np.testing.assert_allclose(ev, [un - c, un, un, un + c], atol=1e-6 * (abs(un) + c))


def test_flux_suite_passes():
    for name, ok, detail in flux_suite(np.random.default_rng(0)):
        assert ok, f"{name}: {detail}"


def test_enthalpy_error_of_exact_wedge_states():
    mach, wedge = 2.0, math.radians(10.0)
    beta = oblique_shock_angle(mach, wedge)
    U1 = primitive_to_conserved(1.0, mach * math.sqrt(GAMMA), 0.0, 1.0)
    U2 = primitive_to_conserved(*oblique_shock_state(1.0, 1.0, mach, beta, wedge))
    g = build_grid(15, 10, (0.0, 1.5, 0.0, 1.0))
    shock = PolynomialLevelSet.line(0.5, 1.0 / math.tan(beta))
    wall = PolynomialLevelSet.line(0.5, 1.0 / math.tan(wedge))
    topo = classify(g, shock, wall)
    layout = make_layout(topo, 4, 0, active=(0, 1))
    u = project(lambda p, sd: np.tile(U1 if sd == 0 else U2, (len(p), 1)), topo, layout)
    assert enthalpy_error(u, layout, topo, free_stream_enthalpy(mach)) <= 1e-10


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1))
def test_riemann_fluxes_consistent(seed):
    rng = np.random.default_rng(seed)
    U = random_euler_states(rng, 5)
    n = random_normals(rng, 5)
    ref = np.einsum("nid,nd->ni", euler_flux(U), n)
    scale = np.abs(ref).max()
    np.testing.assert_allclose(hllc_flux(U, U, n), ref, atol=1e-12 * scale)
    np.testing.assert_allclose(godunov_flux(U, U, n), ref, atol=1e-12 * scale)
    assert np.all(slipwall_flux(U, n)[:, [0, 3]] == 0.0)
