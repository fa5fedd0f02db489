"""Self-checks against independent oracles, run by ``xdgtrack verify``.

Every suite is a function ``suite(rng) -> [(name, ok, detail), ...]``.  The
oracles deliberately avoid the code paths they check: areas come from
adaptive 1D quadrature of the clipped height function and from Monte-Carlo
sampling, the Riemann star pressure from bisection, and derivatives from
finite differences of the objective itself.
"""

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from . import physics as ph
from .cutcell import classify
from .levelset import PolynomialLevelSet, SplineLevelSet
from .mesh import build_grid
from .sqp import interface_rules, kkt_solve, line_search, merit, merit_slope, SqpConfig
from .xdgspace import extrapolate_newborn, make_layout, project


def _check(name, err, tol, fmt="max err {:.2e} (tol {:.0e})"):
    err = float(err)
    return name, bool(np.isfinite(err) and err <= tol), fmt.format(err, tol)


# -- quadrature ------------------------------------------------------------------

def random_spline(rng, box):
    """Cubic Hermite height function over the cell rows that usually cuts the cell."""
    x0, x1, y0, y1 = box
    h = x1 - x0
    vals = rng.uniform(x0 - 0.3 * h, x1 + 0.3 * h, 2)
    slopes = rng.uniform(-2.0, 2.0, 2) * h / (y1 - y0)
    return SplineLevelSet([y0, y1], vals, slopes)


def _kinks(S, levels, y0, y1, n=64):
    """Abscissae in (y0, y1) where ``S`` crosses one of ``levels``."""
    t = np.linspace(y0, y1, n + 1)
    s = S(t)
    out = []
    for lv in levels:
        g = s - lv
        for i in np.nonzero(g[:-1] * g[1:] < 0)[0]:
            out.append(brentq(lambda v: float(S(v)) - lv, t[i], t[i + 1], xtol=1e-15))
    return sorted(out)


def left_moment_oracle(S, box, a=0, b=0):
    """``int int x^a y^b`` over ``{x < S(y)}`` inside ``box`` by adaptive quadrature."""
    x0, x1, y0, y1 = box
    pts = _kinks(S, (x0, x1), y0, y1)

    def g(y):
        xs = min(max(float(S(y)), x0), x1)
        return (xs ** (a + 1) - x0 ** (a + 1)) / (a + 1) * y ** b

    val, _ = quad(g, y0, y1, points=pts or None, epsabs=1e-15, epsrel=1e-13, limit=200)
    return val


def interface_length_oracle(S, dS, box):
    x0, x1, y0, y1 = box
    pts = _kinks(S, (x0, x1), y0, y1)

    def g(y):
        return np.sqrt(1.0 + float(dS(y)) ** 2) if x0 < S(y) < x1 else 0.0

    val, _ = quad(g, y0, y1, points=pts or None, epsabs=1e-15, epsrel=1e-13, limit=200)
    return val


def quadrature_suite(rng, n_configs=200, n_mc=20000):
    box = (0.0, 1.0, 0.0, 1.0)
    grid = build_grid(1, 1, box)
    vol_err = mom_err = len_err = 0.0
    z_num = z_var = 0.0
    z_max = 0.0
    for _ in range(n_configs):
        ls = random_spline(rng, box)
        geo = classify(grid, ls).cells[0]
        fine = classify(grid, ls, order=21).cells[0]
        area_A = geo.areas.get(0, 0.0)
        vol_err = max(vol_err, abs(sum(geo.areas.values()) - 1.0))
        # moments up to degree 3 over the left sub-domain
        for a, b in ((0, 0), (1, 0), (0, 1), (2, 1), (1, 2), (3, 0)):
            exact = left_moment_oracle(ls.height, box, a, b)
            if 0 in geo.volume:
                x, w = geo.volume[0]
                got = float(w @ (x[:, 0] ** a * x[:, 1] ** b))
            else:
                got = 0.0
            mom_err = max(mom_err, abs(got - exact) / max(abs(exact), 1e-3))
        # arclength is not polynomial, so the length rule is requested at a higher order
        length = sum(float(f[2].sum()) for f in fine.interface if f[0] == "s")
        exact_len = interface_length_oracle(ls.height, ls.slope, box)
        len_err = max(len_err, abs(length - exact_len) / max(exact_len, 1e-3))
        # Monte-Carlo area
        p = rng.uniform(0.0, 1.0, (n_mc, 2))
        inside = p[:, 0] < ls.height(p[:, 1])
        mc = inside.mean()
        var = max(mc * (1.0 - mc), 0.25 / n_mc) / n_mc
        z_num += mc - area_A
        z_var += var
        z_max = max(z_max, abs(mc - area_A) / np.sqrt(var))
    z = abs(z_num) / np.sqrt(z_var)
    return [
        _check("volume_sum", vol_err, 1e-12),
        _check("moments_vs_subdivision", mom_err, 1e-9),
        _check("interface_length", len_err, 1e-9),
        _check("monte_carlo_pooled_sigma", z, 3.0, "pooled z {:.2f} (limit {:.0f} sigma)"),
        _check("monte_carlo_worst_sigma", z_max, 5.0, "worst z {:.2f} (limit {:.0f} sigma)"),
    ]


# -- fluxes -------------------------------------------------------------------------

def random_normals(rng, n):
    a = rng.uniform(0.0, 2.0 * np.pi, n)
    return np.column_stack([np.cos(a), np.sin(a)])


def random_euler_states(rng, n, gamma=ph.GAMMA):
    rho = rng.uniform(0.1, 10.0, n)
    u, v = rng.uniform(-3.0, 3.0, (2, n))
    p = rng.uniform(0.1, 10.0, n)
    return ph.primitive_to_conserved(rho, u, v, p, gamma)


def no_vacuum(UL, UR, n, gamma=ph.GAMMA):
    """Mask of pairs whose normal Riemann problem keeps a positive star pressure."""
    def parts(U):
        r = U[:, 0]
        un = (U[:, 1] * n[:, 0] + U[:, 2] * n[:, 1]) / r
        return un, np.sqrt(gamma * ph.pressure(U, gamma) / r)

    uL, cL = parts(UL)
    uR, cR = parts(UR)
    return 2.0 / (gamma - 1.0) * (cL + cR) > uR - uL


def _rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


def exact_star_pressure(rL, uL, pL, rR, uR, pR, gamma=ph.GAMMA):
    """Star pressure by bisection on the textbook pressure function."""
    def fk(p, r, pk):
        c = np.sqrt(gamma * pk / r)
        if p > pk:
            A, B = 2.0 / ((gamma + 1.0) * r), (gamma - 1.0) / (gamma + 1.0) * pk
            return (p - pk) * np.sqrt(A / (p + B))
        return 2.0 * c / (gamma - 1.0) * ((p / pk) ** ((gamma - 1.0) / (2.0 * gamma)) - 1.0)

    g = lambda p: fk(p, rL, pL) + fk(p, rR, pR) + uR - uL
    return brentq(g, 1e-12, 1e4, xtol=1e-15, rtol=1e-15, maxiter=500)


def flux_suite(rng, n=1000):
    out = []
    n_vec = random_normals(rng, n)
    t = rng.uniform(0.0, 1.0, n)
    cL, cR = rng.uniform(-2.0, 2.0, (2, n))
    phys = np.einsum("kd,kd->k", ph.advection_flux(cL, t)[:, 0, :], n_vec)
    out.append(_check("advection_consistency", _rel(ph.advection_upwind(cL, cL, n_vec, t), phys), 1e-12))
    out.append(_check("advection_antisymmetry",
                      _rel(ph.advection_upwind(cL, cR, n_vec, t),
                           -ph.advection_upwind(cR, cL, -n_vec, t)), 1e-12))
    phys = np.einsum("kd,kd->k", ph.burgers_flux(cL)[:, 0, :], n_vec)
    out.append(_check("burgers_consistency", _rel(ph.burgers_upwind(cL, cL, n_vec), phys), 1e-12))
    out.append(_check("burgers_antisymmetry",
                      _rel(ph.burgers_upwind(cL, cR, n_vec), -ph.burgers_upwind(cR, cL, -n_vec)), 1e-12))

    UL, UR = random_euler_states(rng, n), random_euler_states(rng, n)
    while not np.all(keep := no_vacuum(UL, UR, n_vec)):
        UR[~keep] = random_euler_states(rng, int((~keep).sum()))
    phys = np.einsum("kcd,kd->kc", ph.euler_flux(UL), n_vec)
    for name, fn in (("hllc", ph.hllc_flux), ("godunov", ph.godunov_flux)):
        out.append(_check(f"{name}_consistency", _rel(fn(UL, UL, n_vec), phys), 1e-12))
        out.append(_check(f"{name}_antisymmetry", _rel(fn(UL, UR, n_vec), -fn(UR, UL, -n_vec)), 1e-12))
    wall = ph.slipwall_flux(UL, n_vec)
    out.append(_check("slipwall_mass_energy", np.abs(wall[:, [0, 3]]).max(), 1e-15))

    sod = (1.0, 0.0, 1.0, 0.125, 0.0, 0.1)
    ps, _ = ph.star_pressure(*sod)
    ref = exact_star_pressure(*sod)
    out.append(_check("sod_star_pressure", abs(ps[0] - ref) / ref, 1e-10))
    out.append(_check("sod_star_pressure_value", abs(ps[0] - 0.30313), 5e-6))
    prim = np.column_stack([rng.uniform(0.2, 5.0, 50), rng.uniform(-1.0, 1.0, 50), rng.uniform(0.2, 5.0, 50),
                            rng.uniform(0.2, 5.0, 50), rng.uniform(-1.0, 1.0, 50), rng.uniform(0.2, 5.0, 50)])
    err = 0.0
    for row in prim:
        ps, _ = ph.star_pressure(*row)
        ref = exact_star_pressure(*row)
        err = max(err, abs(ps[0] - ref) / ref)
    out.append(_check("random_star_pressure", err, 1e-10))
    return out


# -- derivatives ---------------------------------------------------------------------

def _perturbed_iterate(case, rng, P=1, scale=0.02):
    model = case.model()
    ls = case.initial_levelset()
    exact = case.exact_levelset()
    # halfway between the start and the exact interface, then jittered
    dofs = 0.5 * (ls.dofs() + exact.dofs()) + scale * case.grid.hx * rng.uniform(-1.0, 1.0, ls.n_dofs)
    ls = ls.set_dofs(dofs)
    u = case.project_exact(model, ls, P, sub_domain_wise=False)
    u = u + 0.05 * rng.standard_normal(u.shape)
    return model, ls, u, P


def gradient_check(case, rng, h_u=1e-6, h_phi=1e-6):
    """Worst relative component error of the analytic gradient of ``0.5 ||R||^2``."""
    model, ls, u, P = _perturbed_iterate(case, rng)
    f, gu, gphi = model.objective(u, ls, P)
    free = model.free_dofs(ls)
    fd_u = np.empty_like(gu)
    for i in range(len(u)):
        e = np.zeros_like(u)
        e[i] = h_u
        fd_u[i] = (model.objective(u + e, ls, P, False) - model.objective(u - e, ls, P, False)) / (2 * h_u)
    dofs = ls.dofs()
    fd_phi = np.empty(len(free))
    for c, k in enumerate(free):
        e = np.zeros_like(dofs)
        e[k] = h_phi
        fp = model.objective(u, ls.set_dofs(dofs + e), P, False)
        fm = model.objective(u, ls.set_dofs(dofs - e), P, False)
        fd_phi[c] = (fp - fm) / (2 * h_phi)
    g = np.concatenate([gu, gphi])
    fd = np.concatenate([fd_u, fd_phi])
    # components far below the gradient scale are compared on that scale
    floor = 1e-3 * np.abs(fd).max()
    return float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), floor)))


def jvp_check(case, rng, n_dir=3, h=1e-6):
    model, ls, u, P = _perturbed_iterate(case, rng)
    disc = model.discretization(ls, P)
    J = disc.jacobian(u)
    err = 0.0
    for _ in range(n_dir):
        v = rng.standard_normal(u.shape)
        v /= np.linalg.norm(v)
        fd = (disc.residual(u + h * v) - disc.residual(u - h * v)) / (2 * h)
        Jv = J @ v
        err = max(err, np.linalg.norm(Jv - fd) / max(np.linalg.norm(fd), 1e-12))
    return err


def gradient_suite(rng, names=("advection", "burgers_straight", "burgers_accelerating")):
    from .cases import get_case
    out = []
    for name in names:
        case = get_case(name)
        out.append(_check(f"{name}_gradient", gradient_check(case, rng), 1e-4))
        out.append(_check(f"{name}_jacobian_vector", jvp_check(case, rng), 1e-5))
    return out


# -- KKT and line-search rules ------------------------------------------------------------

def kkt_oracle(B, A, g, r):
    """Range-space solution of the equality-constrained quadratic model."""
    Bi_g = np.linalg.solve(B, g)
    Bi_At = np.linalg.solve(B, A.T)
    lam = np.linalg.solve(A @ Bi_At, r - A @ Bi_g)
    dz = -Bi_g - Bi_At @ lam
    return dz, lam


def three_cell_fixture():
    """Vertical interface in a row of three cells, pushed by ``alpha * 2`` from x = 0.5.

    Returns ``(accepted_alpha, newborn, value)``: the first step length the
    movement rule admits, the newborn blocks and the value carried into them
    from a state equal to one on the left sub-domain.
    """
    grid = build_grid(3, 1, (0.0, 3.0, 0.0, 1.0))
    ls0 = PolynomialLevelSet.line(0.5, 0.0)
    topo0 = classify(grid, ls0)
    layout0 = make_layout(topo0, 1, 0, active=(0, 1))
    u0 = project(lambda p, sd: np.where(sd == 0, 1.0, 0.0) * np.ones((len(p), 1)), topo0, layout0)
    for alpha in (1.0, 0.5, 0.25):
        ls = PolynomialLevelSet.line(0.5 + 2.0 * alpha, 0.0)
        topo = classify(grid, ls)
        ok, _ = interface_rules(topo0, topo)
        if ok:
            layout = make_layout(topo, 1, 0, active=(0, 1))
            u, newborn = extrapolate_newborn(u0, layout0, topo, layout)
            vals = [float(layout.reshape(u)[layout.index[b]][0, 0]) for b in newborn if b[1] == 0]
            return alpha, newborn, vals
    return None, [], []


def kkt_suite(rng, n_problems=20):
    out = []
    err = 0.0
    slope_ok = True
    armijo_ok = True
    for _ in range(n_problems):
        n, k = rng.integers(4, 12), rng.integers(1, 4)
        M = rng.standard_normal((n, n))
        B = M @ M.T + 0.1 * np.eye(n)
        A = rng.standard_normal((k, n))
        g, r = rng.standard_normal(n), rng.standard_normal(k)
        dz, lam = kkt_solve(B, A, g, r)
        dz_o, lam_o = kkt_oracle(B, A, g, r)
        err = max(err, np.abs(dz - dz_o).max() / max(1.0, np.abs(dz_o).max()),
                  np.abs(lam - lam_o).max() / max(1.0, np.abs(lam_o).max()))
        # merit function of the model problem f = g.z + z.Bz/2, c = r + A z
        mu = 2.0 * np.abs(lam).max()
        th0 = merit(0.0, r, mu)
        dth0 = merit_slope(g, dz, r, mu)
        slope_ok &= dth0 < 0.0
        cfg = SqpConfig()

        def evaluate(alpha):
            z = alpha * dz
            return merit(float(g @ z + 0.5 * z @ B @ z), r + A @ z, mu), alpha

        alpha, _, th, _ = line_search(th0, dth0, evaluate, cfg)
        armijo_ok &= alpha is not None and th <= th0 + alpha * cfg.beta * dth0
    out.append(_check("kkt_vs_range_space", err, 1e-12))
    out.append(("merit_descent_direction", bool(slope_ok), "l1 merit slope negative on all problems"))
    out.append(("armijo_acceptance", bool(armijo_ok), "backtracking returns an Armijo step"))
    alpha, newborn, vals = three_cell_fixture()
    ok = alpha == 0.5 and (1, 0) in newborn and len(vals) == 1 and abs(vals[0] - 1.0) < 1e-12
    out.append(("three_cell_fixture", bool(ok), f"alpha={alpha} newborn={newborn} values={vals}"))
    return out


SUITES = {
    "quadrature": quadrature_suite,
    "flux": flux_suite,
    "gradient": gradient_suite,
    "kkt": kkt_suite,
}


def run_suites(names=None, seed=0):
    """Run the named suites (all by default); returns ``(suite, check, ok, detail)`` tuples."""
    names = list(SUITES) if names is None else list(names)
    results = []
    for name in names:
        rng = np.random.default_rng(seed)
        for check, ok, detail in SUITES[name](rng):
            results.append((name, check, ok, detail))
    return results
