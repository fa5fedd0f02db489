"""End-to-end acceptance gate: one test and one summary line per criterion."""
import time

import numpy as np
import pytest

from xdgtrack.cases import diagnostics, get_case
from xdgtrack.sqp import SqpConfig, solve
from xdgtrack.verification import flux_suite, gradient_suite, kkt_suite, quadrature_suite

pytestmark = pytest.mark.slow

_RUNS = {}


def tracked(name):
    """Solve a case once per session; returns (case, result, diagnostics, seconds)."""
    if name not in _RUNS:
        case = get_case(name)
        t0 = time.perf_counter()
        res = solve(case)
        elapsed = time.perf_counter() - t0
        _RUNS[name] = (case, res, diagnostics(case, res.ls, res.u, res.layout, res.topo), elapsed)
    return _RUNS[name]


def suite_ok(results):
    bad = [f"{name} ({detail})" for name, ok, detail in results if not ok]
    return not bad, "; ".join(bad) if bad else f"{len(results)} checks"


def test_criterion_1_advection(acceptance_report):
    case, res, d, sec = tracked("advection")
    ok = (res.converged and res.r_norm <= 1e-8 and res.R_norm <= 1e-8 and res.iterations <= 60
          and d["knot_error"] <= 1e-6 and sec <= 120.0)
    detail = (f"status={res.status} iters={res.iterations} |r|={res.r_norm:.2e} |R|={res.R_norm:.2e} "
              f"knot_err={d['knot_error']:.2e} time={sec:.0f}s")
    assert acceptance_report(1, ok, detail), detail


def test_criterion_2_straight_burgers(acceptance_report):
    case, res, d, _ = tracked("burgers_straight")
    ok = (res.r_norm <= 1e-10 and res.iterations <= 30
          and abs(d["start_point"] - 0.25) <= 1e-6 and abs(d["end_point"] - 0.75) <= 1e-6)
    detail = (f"iters={res.iterations} |r|={res.r_norm:.2e} "
              f"x(0)={d['start_point']:.9f} x(1)={d['end_point']:.9f}")
    assert acceptance_report(2, ok, detail), detail


def test_criterion_3_accelerating_burgers(acceptance_report):
    case, res, d, _ = tracked("burgers_accelerating")
    ok = res.r_norm <= 1e-2 and res.iterations <= 150 and d["l1_interface_error"] <= 2e-2
    detail = (f"P={res.P} iters={res.iterations} |r|={res.r_norm:.2e} "
              f"L1={d['l1_interface_error']:.4f}")
    assert acceptance_report(3, ok, detail), detail


def test_criterion_4_wedge(acceptance_report):
    case, res, d, _ = tracked("wedge")
    exact = case.extra["shock_angle_deg"]
    ok = (res.r_norm <= 1e-8 and res.iterations <= 60 and d["enthalpy_error"] <= 1e-8
          and abs(d["shock_angle_deg"] - exact) <= 0.5)
    detail = (f"iters={res.iterations} |r|={res.r_norm:.2e} h_err={d['enthalpy_error']:.2e} "
              f"angle={d['shock_angle_deg']:.3f} (exact {exact:.2f})")
    assert acceptance_report(4, ok, detail), detail


def test_criterion_5_pipeline_consistency(acceptance_report):
    errs = {}
    for name in ("advection", "burgers_straight", "wedge"):
        case = get_case(name)
        model = case.model()
        ls = case.exact_levelset()
        r, _ = model.residuals(case.project_exact(model, ls, 0), ls, 0)
        errs[name] = np.abs(r).max()
    ok = max(errs.values()) <= 1e-10
    detail = " ".join(f"{k}={v:.1e}" for k, v in errs.items())
    assert acceptance_report(5, ok, detail), detail


def test_criterion_6_quadrature(acceptance_report):
    ok, detail = suite_ok(quadrature_suite(np.random.default_rng(0), n_configs=200))
    assert acceptance_report(6, ok, detail), detail


def test_criterion_7_derivatives(acceptance_report):
    ok, detail = suite_ok(gradient_suite(np.random.default_rng(0)))
    assert acceptance_report(7, ok, detail), detail


def test_criterion_8_kkt_and_merit(acceptance_report):
    ok, detail = suite_ok(kkt_suite(np.random.default_rng(0)))
    beta = SqpConfig().beta
    n_steps, violations = 0, []
    for name in ("advection", "burgers_straight", "burgers_accelerating", "wedge"):
        _, res, _, _ = tracked(name)
        for row in res.trace[1:]:
            if row["alpha"] > 0 and np.isfinite(row["theta0"]):
                n_steps += 1
                if row["theta_alpha"] > row["theta0"] + row["alpha"] * beta * row["dtheta0"]:
                    violations.append(f"{name}@{row['iteration']}")
    ok = ok and not violations
    detail += f"; merit checked on {n_steps} accepted steps, violations: {violations or 'none'}"
    assert acceptance_report(8, ok, detail), detail


def test_criterion_9_fluxes(acceptance_report):
    ok, detail = suite_ok(flux_suite(np.random.default_rng(0), n=1000))
    assert acceptance_report(9, ok, detail), detail
