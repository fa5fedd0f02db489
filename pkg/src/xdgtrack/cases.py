"""Test problems: domains, exact solutions, initial guesses and solver settings."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .levelset import PolynomialLevelSet, SplineLevelSet, fit_height_function
from .mesh import build_grid
from .physics import (GAMMA, AdvectionLaw, BurgersLaw, EulerLaw, enthalpy_error,
                      free_stream_enthalpy, oblique_shock_angle, oblique_shock_state,
                      primitive_to_conserved)
from .residual import ResidualModel
from .sqp import SqpConfig, newton_state
from .xdgspace import project


@dataclass
class Case:
    """Definition of one shock-tracking problem.

    ``exact_state(points, sd)`` gives the exact solution of sub-domain ``sd``
    extended to arbitrary points; ``exact(points)`` is the exact field;
    ``shock(y)`` the exact interface abscissa.
    """

    name: str
    nx: int
    ny: int
    bounds: tuple
    law: object
    spline_kind: str
    initial_height: object                 # y -> x of the initial shock guess
    initial_slope: object = None
    shock: object = None
    shock_slope: object = None
    exact: object = None
    exact_state: object = None
    wall: object = None                    # fixed wall level set (PolynomialLevelSet)
    active: tuple = (0, 1)
    fixed_knots: tuple = ()
    u0: str = "project-exact"
    config: SqpConfig = field(default_factory=SqpConfig)
    h_inf: float = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = build_grid(self.nx, self.ny, self.bounds)

    def with_grid(self, nx=None, ny=None):
        """Copy on a different grid (knots follow the grid rows)."""
        out = Case(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        out.nx = self.nx if nx is None else int(nx)
        out.ny = self.ny if ny is None else int(ny)
        out.__post_init__()
        return out

    @property
    def knots(self):
        return self.grid.y_vertices

    def model(self):
        # anchoring fixes a knot position; a cubic knot slope stays free
        return ResidualModel(self.grid, self.law, self.wall, self.active, tuple(self.fixed_knots))

    def _spline(self, f, df):
        return fit_height_function(f, df if df is not None else _num_slope(f), self.knots,
                                   self.spline_kind)

    def initial_levelset(self):
        return self._spline(self.initial_height, self.initial_slope)

    def exact_levelset(self):
        if self.shock is None:
            raise ValueError(f"case {self.name!r} has no exact interface")
        return self._spline(self.shock, self.shock_slope)

    def project_exact(self, model, ls, P, sub_domain_wise=None):
        """L2 projection of the exact solution onto the XDG space of ``ls``."""
        sub_domain_wise = self.u0 == "project-exact-states" if sub_domain_wise is None else sub_domain_wise
        topo = model.topology(ls, P)
        layout = model.layout(ls, P)
        m = self.law.m
        if sub_domain_wise:
            return project(lambda p, sd: np.reshape(self.exact_state(p, sd), (len(p), m)), topo, layout)
        return project(lambda p, sd: np.reshape(self.exact(p), (len(p), m)), topo, layout)

    def initial_state(self, model, ls, P, threshold):
        if self.u0 == "newton":
            u = self.project_exact(model, ls, P, sub_domain_wise=True)
            return newton_state(model, ls, u, P, threshold, steps=1)
        return self.project_exact(model, ls, P)

    def interface_error(self, ls):
        """Max deviation of the spline knots from the exact interface."""
        return float(np.max(np.abs(ls.values - np.array([self.shock(y) for y in ls.knots]))))


def shock_breaks(shock, bounds, n=401):
    """Boundary coordinates where the curve ``x = shock(y)`` meets the domain edge."""
    x0, x1, y0, y1 = bounds
    out = {"bottom": [], "top": [], "left": [], "right": []}
    for tag, y in (("bottom", y0), ("top", y1)):
        x = float(shock(y))
        if x0 < x < x1:
            out[tag].append(x)
    t = np.linspace(y0, y1, n)
    s = np.array([float(shock(v)) for v in t])
    for tag, xb in (("left", x0), ("right", x1)):
        g = s - xb
        hits = [float(t[i]) for i in np.nonzero(g == 0.0)[0] if y0 < t[i] < y1]
        for i in np.nonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0)[0]:
            hits.append(brentq(lambda v: float(shock(v)) - xb, t[i], t[i + 1], xtol=1e-15))
        out[tag].extend(sorted(hits))
    return {k: v for k, v in out.items() if v}


def _num_slope(f, h=1e-6):
    return lambda y: (f(y + h) - f(y - h)) / (2 * h)


# -- advection ----------------------------------------------------------------

def advection_shock(t):
    return 0.25 + t ** 3 - 1.5 * t ** 2 + 0.5 * t


def advection_shock_slope(t):
    return 3 * t ** 2 - 3 * t + 0.5


def case_advection(nx=10, ny=10):
    def exact(p):
        return (p[:, 0] < advection_shock(p[:, 1])).astype(float)

    return Case(
        name="advection", nx=nx, ny=ny, bounds=(0.0, 1.0, 0.0, 1.0),
        law=AdvectionLaw(exact, shock_breaks(advection_shock, (0.0, 1.0, 0.0, 1.0))), spline_kind="cubic",
        initial_height=lambda t: 0.7 * t ** 3 - t ** 2 + 0.7 * t + 0.1,
        initial_slope=lambda t: 2.1 * t ** 2 - 2 * t + 0.7,
        shock=advection_shock, shock_slope=advection_shock_slope,
        exact=exact, exact_state=lambda p, sd: np.full(len(p), 1.0 if sd == 0 else 0.0),
        config=SqpConfig(max_iter=60, P_max=0, agg_threshold=0.3),
    )


# -- Burgers ----------------------------------------------------------------------

def case_burgers_straight(nx=10, ny=10):
    def shock(t):
        return 0.25 + 0.5 * t

    def exact(p):
        return np.where(p[:, 0] < shock(p[:, 1]), 0.75, 0.25)

    return Case(
        name="burgers_straight", nx=nx, ny=ny, bounds=(0.0, 1.0, 0.0, 1.0),
        law=BurgersLaw(exact, shock_breaks(shock, (0.0, 1.0, 0.0, 1.0))), spline_kind="linear",
        initial_height=lambda t: -0.2 * t ** 2 + 0.6 * t + 0.4,
        initial_slope=lambda t: -0.4 * t + 0.6,
        shock=shock, shock_slope=lambda t: 0.5,
        exact=exact, exact_state=lambda p, sd: np.full(len(p), 0.75 if sd == 0 else 0.25),
        u0="newton",
        config=SqpConfig(max_iter=30, P_max=0, agg_threshold=0.3),
    )


def accelerating_shock(t):
    """Shock path of the accelerating Burgers problem (Rankine-Hugoniot consistent)."""
    return 7.0 / 3.0 * (1.0 - np.sqrt(1.0 + 3.0 * t)) + 4.0 * t


def accelerating_shock_slope(t):
    return -3.5 / np.sqrt(1.0 + 3.0 * t) + 4.0


def _accelerating_right(p):
    return 3.0 * (p[:, 0] - 1.0) / (1.0 + 3.0 * p[:, 1])


def case_burgers_accelerating(nx=10, ny=10):
    def exact(p):
        return np.where(p[:, 0] < accelerating_shock(p[:, 1]), 4.0, _accelerating_right(p))

    def exact_state(p, sd):
        return np.full(len(p), 4.0) if sd == 0 else _accelerating_right(p)

    return Case(
        name="burgers_accelerating", nx=nx, ny=ny, bounds=(-0.2, 1.0, 0.0, 1.0),
        law=BurgersLaw(exact, shock_breaks(accelerating_shock, (-0.2, 1.0, 0.0, 1.0))),
        spline_kind="cubic",
        initial_height=lambda t: 0.85 * t, initial_slope=lambda t: 0.85,
        shock=accelerating_shock, shock_slope=accelerating_shock_slope,
        exact=exact, exact_state=exact_state, u0="project-exact-states",
        config=SqpConfig(max_iter=150, P_max=3, agg_threshold=0.3),
    )


# -- wedge ---------------------------------------------------------------------------

WEDGE_MACH = 2.0
WEDGE_ANGLE_DEG = 10.0
WEDGE_TIP = 0.5


def case_wedge(nx=15, ny=10, initial_angle_deg=32.0):
    theta = math.radians(WEDGE_ANGLE_DEG)
    beta = oblique_shock_angle(WEDGE_MACH, theta)
    rho2, u2, v2, p2 = oblique_shock_state(1.0, 1.0, WEDGE_MACH, beta, theta)
    U_inf = primitive_to_conserved(1.0, WEDGE_MACH * math.sqrt(GAMMA), 0.0, 1.0)
    U_post = primitive_to_conserved(rho2, u2, v2, p2)
    cot_b, cot_i = 1.0 / math.tan(beta), 1.0 / math.tan(math.radians(initial_angle_deg))

    def shock(y):
        return WEDGE_TIP + y * cot_b

    def exact(p):
        up = p[:, 0] < shock(p[:, 1])
        return np.where(up[:, None], U_inf[None, :], U_post[None, :])

    def exact_state(p, sd):
        return np.tile(U_inf if sd == 0 else U_post, (len(p), 1))

    return Case(
        name="wedge", nx=nx, ny=ny, bounds=(0.0, 1.5, 0.0, 1.0),
        law=EulerLaw(U_inf), spline_kind="linear",
        initial_height=lambda y: WEDGE_TIP + y * cot_i, initial_slope=lambda y: cot_i,
        shock=shock, shock_slope=lambda y: cot_b,
        exact=exact, exact_state=exact_state,
        wall=PolynomialLevelSet.line(WEDGE_TIP, 1.0 / math.tan(theta)),
        active=(0, 1), fixed_knots=(0,), u0="project-exact",
        config=SqpConfig(max_iter=60, P_max=0, agg_threshold=0.4),
        h_inf=free_stream_enthalpy(WEDGE_MACH),
        extra=dict(shock_angle_deg=math.degrees(beta), U_inf=U_inf, U_post=U_post,
                   post_mach=_mach(U_post), pressure_ratio=p2),
    )


def _mach(U):
    rho, mu, mv, E = U
    p = (GAMMA - 1.0) * (E - 0.5 * (mu * mu + mv * mv) / rho)
    return math.hypot(mu, mv) / rho / math.sqrt(GAMMA * p / rho)


def shock_angle_deg(ls, x_max):
    """Angle to the x-axis of a least-squares line through knots inside ``x <= x_max``."""
    sel = ls.values <= x_max + 1e-12
    if sel.sum() < 2:
        raise ValueError("fewer than two knots inside the domain")
    slope = np.polyfit(ls.knots[sel], ls.values[sel], 1)[0]  # dx/dy
    return math.degrees(math.atan2(1.0, slope))


def l1_interface_error(ls, shock, bounds, n=100):
    """Mean absolute deviation over ``n`` samples, both curves clipped to the x-range."""
    x0, x1, y0, y1 = bounds
    t = np.linspace(y0, y1, n)
    a = np.clip(ls.height(t), x0, x1)
    b = np.clip(shock(t), x0, x1)
    return float(np.mean(np.abs(a - b)))


CASES = {
    "advection": case_advection,
    "burgers_straight": case_burgers_straight,
    "burgers_accelerating": case_burgers_accelerating,
    "wedge": case_wedge,
}


def get_case(name, **kw):
    try:
        factory = CASES[name]
    except KeyError:
        raise KeyError(f"unknown case {name!r}; choose from {sorted(CASES)}") from None
    return factory(**kw)


def diagnostics(case, ls, u=None, layout=None, topo=None):
    """Case-specific quality measures of a tracked solution."""
    out = {}
    if case.shock is not None:
        out["knot_error"] = case.interface_error(ls)
        out["l1_interface_error"] = l1_interface_error(ls, case.shock, case.bounds)
        out["start_point"] = float(ls.height(case.bounds[2]))
        out["end_point"] = float(ls.height(case.bounds[3]))
    if case.name == "wedge":
        out["shock_angle_deg"] = shock_angle_deg(ls, case.bounds[1])
        out["exact_shock_angle_deg"] = case.extra["shock_angle_deg"]
    if case.h_inf is not None and u is not None:
        out["enthalpy_error"] = enthalpy_error(u, layout, topo, case.h_inf)
    return out
