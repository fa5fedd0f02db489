import numpy as np
import pytest
from scipy.integrate import dblquad

from xdgtrack.cases import get_case
from xdgtrack.cutcell import classify
from xdgtrack.levelset import SplineLevelSet
from xdgtrack.mesh import build_grid, neighbors
from xdgtrack.physics import AdvectionLaw, BurgersLaw, ScaledLaw, advection_speed
from xdgtrack.residual import Discretization, ResidualModel, assemble
from xdgtrack.verification import gradient_check, jvp_check
from xdgtrack.xdgspace import eval_basis, make_layout, n_modes, project


def exact_iterate(name, P=0):
    case = get_case(name)
    model = case.model()
    ls = case.exact_levelset()
    u = case.project_exact(model, ls, P)
    return case, model, ls, u


@pytest.mark.parametrize("name", ["advection", "burgers_straight", "wedge"])
def test_exact_solution_has_zero_constraint_residual(name):
    case, model, ls, u = exact_iterate(name)
    r, R = model.residuals(u, ls, 0)
    assert np.abs(r).max() <= 1e-10


def test_constraint_is_subvector_of_enriched_residual():
    case = get_case("burgers_accelerating")
    model = case.model()
    ls = case.initial_levelset()
    P = 1
    u = case.project_exact(model, ls, P) + 0.01 * np.random.default_rng(0).standard_normal(
        model.layout(ls, P).size)
    R = assemble(u, ls, case.law, case.grid, P)
    r = assemble(u, ls, case.law, case.grid, P, Q=P)
    low = R.reshape(-1, case.law.m, n_modes(P + 1))[:, :, :n_modes(P)].ravel()
    np.testing.assert_allclose(r, low, atol=1e-13)
    with pytest.raises(ValueError):
        assemble(u, ls, case.law, case.grid, P, Q=P + 2)


def test_constant_state_with_outflow_data_has_zero_residual():
    g = build_grid(4, 4)
    ls = SplineLevelSet(g.y_vertices, np.linspace(0.3, 0.6, 5))
    for law in (AdvectionLaw(), BurgersLaw()):
        topo = classify(g, ls)
        layout = make_layout(topo, 1, 1, active=(0, 1))
        u = project(lambda p, sd: np.full(len(p), 0.7), topo, layout)
        R = Discretization(topo, law, 1).residual(u)
        assert np.abs(R).max() <= 1e-14


def test_single_cell_linear_state_matches_hand_quadrature():
    # with inner-state fluxes on every edge, R_i equals the integral of div f(u) times phi_i
    g = build_grid(1, 1)
    topo = classify(g, SplineLevelSet([0.0, 1.0], [5.0, 5.0]))
    layout = make_layout(topo, 1, 1, active=(0, 1))
    u = project(lambda p, sd: p[:, 0], topo, layout)
    R = Discretization(topo, AdvectionLaw(), 1).residual(u)
    box = g.cell_box(0)
    for i in range(n_modes(2)):
        def integrand(t, x):
            return advection_speed(t) * eval_basis(box, 2, [[x, t]])[0, i]
        ref = dblquad(integrand, 0.0, 1.0, 0.0, 1.0, epsabs=1e-14, epsrel=1e-14)[0]
        assert R[i] == pytest.approx(ref, abs=1e-12)


def test_flux_scaling_scales_residual():
    case, model, ls, u = exact_iterate("burgers_accelerating", P=1)
    u = u + 0.01 * np.random.default_rng(1).standard_normal(u.shape)
    R1 = assemble(u, ls, case.law, case.grid, 1)
    R2 = assemble(u, ls, ScaledLaw(case.law, 2.0), case.grid, 1)
    np.testing.assert_allclose(R2, 2.0 * R1, atol=1e-14 * np.abs(R1).max())


def test_linear_law_jacobian_independent_of_state():
    case, model, ls, u = exact_iterate("advection", P=1)
    rng = np.random.default_rng(2)
    disc = model.discretization(ls, 1)
    # coefficients scaled so that point values are of unit size
    J1 = disc.jacobian(0.1 * rng.standard_normal(u.shape)).toarray()
    J2 = disc.jacobian(0.1 * rng.standard_normal(u.shape)).toarray()
    np.testing.assert_allclose(J1, J2, rtol=0, atol=1e-8 * np.abs(J1).max())


@pytest.mark.parametrize("name", ["advection", "burgers_accelerating"])
def test_jacobian_vector_products(name):
    assert jvp_check(get_case(name), np.random.default_rng(3)) <= 1e-5


def test_residual_stencil_is_local():
    case, model, ls, u = exact_iterate("burgers_accelerating", P=1)
    disc = model.discretization(ls, 1)
    layout, test = disc.layout, disc.test_layout
    R0 = disc.residual(u)
    j = case.grid.index(4, 5)
    allowed = {j, *neighbors(case.grid, j)}
    for b in layout.blocks:
        if b[0] != j:
            continue
        du = np.zeros_like(u)
        du[layout.slot(b)] = 0.1
        changed = np.abs(disc.residual(u + du) - R0) > 0
        cells = {test.blocks[k][0] for k in range(len(test.blocks)) if changed[test.slot(test.blocks[k])].any()}
        assert cells <= allowed
        assert j in cells


def test_levelset_jacobian_zero_away_from_cut_cells():
    g = build_grid(4, 4)
    law = AdvectionLaw(lambda p: (p[:, 0] < 0.3).astype(float))
    model = ResidualModel(g, law)
    ls = SplineLevelSet(g.y_vertices, np.full(5, 3.0))
    u = np.random.default_rng(4).standard_normal(model.layout(ls, 0).size)
    assert np.all(model.jacobian_phi(u, ls, 0) == 0.0)


def test_gradient_points_away_from_exact_shock():
    case = get_case("burgers_straight")
    model = case.model()
    exact = case.exact_levelset()
    for shift in (0.03, -0.03):
        ls = exact.set_dofs(exact.dofs() + shift)
        u = case.project_exact(model, ls, 0, sub_domain_wise=True)
        _, _, gphi = model.objective(u, ls, 0)
        # moving every knot along -grad reduces f, i.e. towards the exact position
        assert np.sign(gphi.sum()) == np.sign(shift)


def test_levelset_jacobian_taylor_remainder_is_second_order():
    # the curved advection shock avoids grid vertices, so small moves keep the topology
    case = get_case("advection")
    model = case.model()
    ls = case.exact_levelset()
    ls = ls.set_dofs(ls.dofs() + 0.01)
    u = case.project_exact(model, ls, 0) + 0.01 * np.random.default_rng(5).standard_normal(
        model.layout(ls, 0).size)
    d = np.random.default_rng(6).uniform(-1, 1, ls.n_dofs)
    _, R0 = model.residuals(u, ls, 0)
    Jd = model.jacobian_phi(u, ls, 0) @ d
    errs = []
    for delta in (4e-5, 2e-5, 1e-5):
        _, R = model.residuals(u, ls.set_dofs(ls.dofs() + delta * d), 0)
        errs.append(np.linalg.norm(R - R0 - delta * Jd))
    assert errs[1] / errs[0] < 0.3 and errs[2] / errs[1] < 0.3


def test_objective_smaller_at_exact_interface():
    case = get_case("advection")
    model = case.model()
    fs = []
    for ls in (case.exact_levelset(), case.initial_levelset()):
        u = case.project_exact(model, ls, 0)
        fs.append(model.objective(u, ls, 0, with_gradient=False))
    assert fs[0] < 1e-20 < fs[1]


def test_objective_gradient_matches_finite_differences():
    assert gradient_check(get_case("burgers_straight"), np.random.default_rng(6)) <= 1e-4
