"""SQP shock-tracking optimizer.

Each outer iteration solves the saddle-point system of a Levenberg-Marquardt
regularised quadratic model of ``f = 0.5 ||R||^2`` subject to the linearised
constraint ``r = 0``, then backtracks on the l1 merit function while keeping
the interface from jumping over cells.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field, fields

import numpy as np
import scipy.linalg as sla

from .cutcell import build_agglomeration
from .physics import enthalpy_error
from .residual import ResidualModel
from .xdgspace import (Agglomeration, ExtrapolationError, eval_basis, extrapolate_newborn,
                       inject, mass_matrix, n_modes)

log = logging.getLogger(__name__)


class KKTError(np.linalg.LinAlgError):
    pass


@dataclass
class SqpConfig:
    gamma0: float = 1.0
    gamma_min: float = 1e-10
    gamma_max: float = 1e10
    kappa: float = 1.5
    sigma_small: float = 1e-2
    sigma_large: float = 1e-1
    L: float = 1.0
    beta: float = 1e-4
    tau: float = 0.5
    alpha_min: float = 1e-8
    n_term: int = 8
    tol_abs: float = 1e-5
    tol_rel: float = 1e-5
    arf_tol: float = 1.001
    min_iters: tuple = (30, 30, 10, 10)
    eps1: float = -0.2
    eps2: float = 1e-2
    eps3: float = 1e-2
    eps4: float = 1e-2
    reinit_max_iter: int = 30
    el_threshold: int = 5
    reinit: bool = True
    agg_threshold: float = 0.3
    max_iter: int = 100
    P_max: int = 0
    max_failed_searches: int = 3

    def __post_init__(self):
        if not (0.0 < self.tau < 1.0):
            raise ValueError("tau must lie in (0, 1)")
        if self.beta <= 0.0:
            raise ValueError("beta must be positive")
        if not (self.gamma_min <= self.gamma0 <= self.gamma_max):
            raise ValueError("need gamma_min <= gamma0 <= gamma_max")
        if not (self.sigma_small < self.sigma_large):
            raise ValueError("need sigma_small < sigma_large")
        if self.n_term < 1 or self.max_iter < 0:
            raise ValueError("n_term must be >= 1 and max_iter >= 0")
        self.min_iters = tuple(self.min_iters)

    def replace(self, **kw):
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        unknown = set(kw) - set(vals)
        if unknown:
            raise TypeError(f"unknown SqpConfig fields: {sorted(unknown)}")
        vals.update(kw)
        return SqpConfig(**vals)

    def min_iter_for(self, P):
        return self.min_iters[min(P, len(self.min_iters) - 1)]


# -- building blocks ---------------------------------------------------------

def kkt_solve(B, Jr, grad, r, rtol=1e-10):
    """Solve ``[[B, Jr^T], [Jr, 0]] [dz; lam] = -[grad; r]`` by dense LU.

    Returns ``(dz, lam)``.  Raises :class:`KKTError` on a singular or
    inaccurately solved system.
    """
    B = np.asarray(B, dtype=float)
    Jr = np.asarray(Jr, dtype=float)
    n, k = B.shape[0], Jr.shape[0]
    K = np.zeros((n + k, n + k))
    K[:n, :n] = B
    K[:n, n:] = Jr.T
    K[n:, :n] = Jr
    rhs = -np.concatenate([np.asarray(grad, dtype=float), np.asarray(r, dtype=float)])
    scale = np.abs(K).max() if K.size else 1.0
    if scale == 0.0:
        if np.any(rhs):
            raise KKTError("zero KKT matrix with nonzero right-hand side")
        return np.zeros(n), np.zeros(k)
    with warnings.catch_warnings():
        # exact zero pivots are reported through KKTError below
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(K, check_finite=True)
    if np.min(np.abs(np.diag(lu))) < 1e-14 * scale:
        raise KKTError("KKT matrix is numerically singular")
    sol = sla.lu_solve((lu, piv), rhs)
    res = np.linalg.norm(K @ sol - rhs)
    if res > rtol * max(1.0, np.linalg.norm(rhs)) * max(1.0, scale):
        raise KKTError(f"inaccurate KKT solve (residual {res:.3e})")
    return sol[:n], sol[n:]


def merit(f, r, mu):
    return f + mu * float(np.abs(r).sum())


def merit_slope(grad, dz, r, mu):
    return float(grad @ dz) - mu * float(np.abs(r).sum())


def line_search(theta0, dtheta0, evaluate, config):
    """Backtracking on ``alpha in {1, tau, tau^2, ...} >= alpha_min``.

    ``evaluate(alpha)`` returns ``(theta, payload)`` or ``None`` when the trial
    is rejected before the merit test (interface rules, invalid geometry).
    Returns ``(alpha, payload, theta, trials)``; ``alpha`` is ``None`` on failure.
    """
    alpha, trials = 1.0, 0
    while alpha >= config.alpha_min:
        trials += 1
        out = evaluate(alpha)
        if out is not None:
            theta, payload = out
            if theta <= theta0 + alpha * config.beta * dtheta0:
                return alpha, payload, theta, trials
        alpha *= config.tau
    return None, None, None, trials


def interface_rules(topo_old, topo_new):
    """Movement rule: a newly cut cell must have had a cut edge-neighbour.

    Returns ``(accept, newly_cut)`` where ``newly_cut`` lists cells that
    became shock-cut.
    """
    from .mesh import neighbors

    old = topo_old.cut_cells()
    new = topo_new.cut_cells()
    newly = sorted(new - old)
    for j in newly:
        if not any(n in old for n in neighbors(topo_old.grid, j)):
            return False, newly
    return True, newly


def update_gamma(gamma, dphi_norm, config):
    if dphi_norm < config.sigma_small * config.L:
        g = gamma / config.kappa
    elif dphi_norm > config.sigma_large * config.L:
        g = gamma * config.kappa
    else:
        g = gamma
    return min(max(g, config.gamma_min), config.gamma_max)


def skyline(values):
    return np.minimum.accumulate(np.asarray(values, dtype=float))


def averaged_reduction_factor(sr, n_term):
    """Mean of ``sr[k] / max(sr[k+1], 1e-100)`` over the last ``n_term`` steps."""
    sr = np.asarray(sr, dtype=float)
    n = len(sr) - 1
    if n < n_term:
        return math.inf
    k = np.arange(n - n_term, n)
    return float(np.mean(sr[k] / np.maximum(sr[k + 1], 1e-100)))


def check_termination(r_hist, R_hist, u_norm, P, iters_at_P, config):
    """Return ``"continue"``, ``"raise_P"``, ``"terminate"`` or ``"stagnated"``.

    ``r_hist``/``R_hist`` hold the residual norms since the current degree
    started (entry 0 is the first iterate at this degree).
    """
    n = len(r_hist) - 1
    if n < config.n_term:
        return "continue"
    tol = config.tol_abs + config.tol_rel * u_norm
    small, flat = True, True
    for hist in (r_hist, R_hist):
        sr = skyline(hist)
        small &= bool(sr[-1] <= tol)
        flat &= averaged_reduction_factor(sr, config.n_term) < config.arf_tol
    at_max = P >= config.P_max
    enough = iters_at_P >= config.min_iter_for(P)
    if small and flat:
        if at_max:
            return "terminate"
        return "raise_P" if enough else "continue"
    if flat and enough:
        return "stagnated" if at_max else "raise_P"
    return "continue"


# -- re-initialisation ----------------------------------------------------------

def _block_mass(topo, block, P):
    j, sd = block
    nodes, w = topo.cells[j].volume[sd]
    phi = eval_basis(topo.grid.cell_box(j), P, nodes)
    return phi, w, phi.T @ (w[:, None] * phi)


def sensor(u, layout, topo):
    """Modal-decay indicator ``log(||U1 - pi_{P-1} U1|| / ||U1||)`` per block (NaN if undefined)."""
    P = layout.P
    C = layout.reshape(u)
    out = np.full(len(layout.blocks), np.nan)
    if P == 0:
        return out
    nl = n_modes(P - 1)
    for k, b in enumerate(layout.blocks):
        _, _, M = _block_mass(topo, b, P)
        c = C[k, 0]
        total = float(c @ M @ c)
        if total <= 0.0:
            continue
        try:
            low = np.linalg.solve(M[:nl, :nl], M[:nl] @ c)
        except np.linalg.LinAlgError:
            continue
        rest = max(total - float(low @ M[:nl, :nl] @ low), 0.0)
        if rest == 0.0:
            out[k] = -np.inf
        else:
            out[k] = 0.5 * math.log(rest / total)
    return out


def _xdg_neighbours(topo, layout):
    """Face-sharing blocks with the face quadrature needed for average jumps."""
    faces = {}
    idx = layout.index
    for f in topo.fragments:
        if isinstance(f.right, str):
            continue
        a, b = (f.left, f.sd), (f.right, f.sd)
        if a in idx and b in idx:
            faces.setdefault((a, b), []).append((f.nodes, f.weights))
    for j, geo in enumerate(topo.cells):
        for which, nodes, w, _, sdm, sdp in geo.interface:
            a, b = (j, sdm), (j, sdp)
            if a in idx and b in idx:
                faces.setdefault((a, b), []).append((nodes, w))
    nbrs = {}
    for (a, b), parts in faces.items():
        nodes = np.concatenate([p[0] for p in parts])
        w = np.concatenate([p[1] for p in parts])
        nbrs.setdefault(a, {})[b] = (nodes, w)
        nbrs.setdefault(b, {})[a] = (nodes, w)
    return nbrs


def reinitialize(u, layout, topo, config, is_el=False):
    """Reset oscillatory cut-cells to same-side patch averages.

    Returns ``(u_new, reset_blocks)``.
    """
    S = sensor(u, layout, topo)
    finite = S[np.isfinite(S)]
    if finite.size == 0:
        return np.array(u, dtype=float), []
    if is_el:
        osc = [b for k, b in enumerate(layout.blocks)
               if np.isfinite(S[k]) and S[k] > config.eps2 * finite.max()]
    else:
        osc = [b for k, b in enumerate(layout.blocks) if np.isfinite(S[k]) and S[k] > config.eps1]
    if not osc:
        return np.array(u, dtype=float), []
    nbrs = _xdg_neighbours(topo, layout)
    flagged = set(osc)
    for b in osc:
        flagged.update(nbrs.get(b, {}))

    C = layout.reshape(u)
    grid = topo.grid

    def values(block, pts):
        return eval_basis(grid.cell_box(block[0]), layout.P, pts) @ C[layout.index[block]].T

    integral, area = {}, {}
    for b in layout.blocks:
        phi, w, _ = _block_mass(topo, b, layout.P)
        integral[b] = (w[:, None] * (phi @ C[layout.index[b]].T)).sum(axis=0)
        area[b] = float(w.sum())

    out = C.copy()
    for b in sorted(flagged):
        patch = [b]
        for nb, (pts, w) in nbrs.get(b, {}).items():
            jump = float(w @ (values(b, pts)[:, 0] - values(nb, pts)[:, 0])) / float(w.sum())
            if abs(jump) <= config.eps3:
                patch.append(nb)
        mean = sum(integral[p] for p in patch) / sum(area[p] for p in patch)
        x0, x1, y0, y1 = grid.cell_box(b[0])
        out[layout.index[b]] = 0.0
        out[layout.index[b], :, 0] = mean * math.sqrt((x1 - x0) * (y1 - y0))
    return out.ravel(), sorted(flagged)


# -- iterate evaluation -------------------------------------------------------------

@dataclass
class Iterate:
    ls: object
    u: np.ndarray          # non-agglomerated coefficients (projected onto the agglomerated space)
    P: int
    disc: object
    agg_P: object
    agg_Q: object
    ua: np.ndarray
    R: np.ndarray          # non-agglomerated enriched residual
    Ra: np.ndarray
    ra: np.ndarray

    @property
    def layout(self):
        return self.disc.layout

    @property
    def topo(self):
        return self.disc.topo

    @property
    def f(self):
        return 0.5 * float(self.Ra @ self.Ra)

    @property
    def r_full(self):
        return self.disc.constraint(self.R)


def agglomerated_rows(agg_Q, P, m):
    nQ = agg_Q.layout.n_modes
    rows = np.arange(agg_Q.size).reshape(-1, m, nQ)
    return rows[:, :, :n_modes(P)].ravel()


def carry_agglomeration(amap, old_blocks, topo, threshold, active):
    """Keep the surviving pairs of ``amap`` on a new topology.

    Only cut-cells that did not exist before are agglomerated afresh, so the
    space stays fixed along a line search unless cells are born or die.
    """
    exists = set(topo.blocks(set(active)))
    out = {s: r for s, r in amap.items() if s in exists and r in exists}
    old_blocks = set(old_blocks)
    fresh = build_agglomeration(topo, threshold, active, strict=False)
    for s, r in sorted(fresh.items()):
        if s in old_blocks or s in out or any(v == s for v in out.values()):
            continue
        out[s] = out.get(r, r)
    return out


def evaluate_iterate(model, ls, u, P, threshold, amap=None):
    """Residuals of ``(ls, u)`` on the agglomerated space (map rebuilt unless given)."""
    disc = model.discretization(ls, P)
    if amap is None:
        amap = build_agglomeration(disc.topo, threshold, model.active, strict=False)
    grid = disc.topo.grid
    agg_P = Agglomeration(disc.layout, amap, grid, mass_matrix(disc.topo, disc.layout) if amap else None)
    agg_Q = Agglomeration(disc.test_layout, amap, grid)
    ua = agg_P.restrict_state(u)
    u = agg_P.prolong(ua)
    R = disc.residual(u)
    Ra = agg_Q.restrict_residual(R)
    ra = Ra[agglomerated_rows(agg_Q, P, disc.m)]
    return Iterate(ls, u, P, disc, agg_P, agg_Q, ua, R, Ra, ra)


# -- driver ------------------------------------------------------------------

TRACE_COLUMNS = ("iteration", "P", "r_norm", "R_norm", "alpha", "gamma", "reinit",
                 "enthalpy_error", "theta0", "dtheta0", "theta_alpha", "n_cut",
                 "r_full_norm", "R_full_norm")


@dataclass
class SqpResult:
    ls: object
    u: np.ndarray
    P: int
    layout: object
    topo: object
    trace: list
    converged: bool
    status: str
    model: object = field(repr=False, default=None)

    @property
    def iterations(self):
        return len(self.trace) - 1

    @property
    def r_norm(self):
        return self.trace[-1]["r_norm"]

    @property
    def R_norm(self):
        return self.trace[-1]["R_norm"]


def newton_state(model, ls, u, P, threshold, steps=1):
    """Newton steps on ``r(u) = 0`` with the level set frozen (agglomerated space)."""
    for _ in range(steps):
        it = evaluate_iterate(model, ls, u, P, threshold)
        J = it.agg_Q.E.T @ (it.disc.jacobian(it.u) @ it.agg_P.E) if not it.agg_P.is_identity \
            else it.disc.jacobian(it.u)
        Jr = J[agglomerated_rows(it.agg_Q, P, it.disc.m)]
        du = np.linalg.solve(Jr.toarray() if hasattr(Jr, "toarray") else Jr, -it.ra)
        u = it.agg_P.prolong(it.ua + du)
    return u


def solve(case, config=None, callback=None):
    """Run the shock-tracking optimisation for ``case``.

    ``callback(k, iterate, row)`` is called after each recorded iterate.
    """
    config = case.config if config is None else config
    model = case.model()
    ls = case.initial_levelset()
    P = 0
    u = case.initial_state(model, ls, P, config.agg_threshold)
    free = model.free_dofs(ls)
    gamma = config.gamma0
    trace = []
    r_hist, R_hist = [], []
    iters_at_P = 0
    failed = 0
    status = "max_iter"
    pending = dict(alpha=np.nan, theta0=np.nan, dtheta0=np.nan, theta_alpha=np.nan, reinit=0)

    it = evaluate_iterate(model, ls, u, P, config.agg_threshold)
    k = 0
    while True:
        row = _trace_row(k, it, gamma, pending, case)
        trace.append(row)
        r_hist.append(row["r_norm"])
        R_hist.append(row["R_norm"])
        if callback is not None:
            callback(k, it, row)
        log.info("it %d P=%d |r|=%.3e |R|=%.3e alpha=%s gamma=%.2e", k, it.P, row["r_norm"],
                 row["R_norm"], row["alpha"], gamma)

        decision = check_termination(r_hist, R_hist, float(np.linalg.norm(it.u)), it.P, iters_at_P, config)
        if decision == "terminate":
            status = "converged"
            break
        if decision == "stagnated":
            status = "stagnated"
            break
        if decision == "raise_P":
            it = _raise_degree(model, it, config)
            gamma = config.gamma0
            iters_at_P = 0
            r_hist = [float(np.linalg.norm(it.ra))]
            R_hist = [float(np.linalg.norm(it.Ra))]
        if k >= config.max_iter:
            break

        # linearisation on the current topology
        disc = it.disc
        Ju = disc.jacobian(it.u)
        Jphi = model.jacobian_phi(it.u, it.ls, it.P)
        JRu = it.agg_P.restrict_jacobian(Ju, it.agg_Q)
        JRu = JRu.toarray() if hasattr(JRu, "toarray") else np.asarray(JRu)
        JRphi = np.asarray(it.agg_Q.restrict_residual(Jphi))
        JR = np.hstack([JRu, JRphi])
        rows = agglomerated_rows(it.agg_Q, it.P, disc.m)
        Jr = JR[rows]
        grad = JR.T @ it.Ra
        nu = JRu.shape[1]
        B = JR.T @ JR
        B[nu:, nu:] += gamma * np.eye(len(free))
        try:
            dz, lam = kkt_solve(B, Jr, grad, it.ra)
        except KKTError:
            gamma = min(gamma * config.kappa ** 4, config.gamma_max)
            failed += 1
            log.warning("KKT solve failed; gamma -> %.3e", gamma)
            if failed > config.max_failed_searches:
                status = "kkt_failure"
                break
            pending = dict(alpha=0.0, theta0=np.nan, dtheta0=np.nan, theta_alpha=np.nan, reinit=0)
            k += 1
            iters_at_P += 1
            continue
        du, dphi_free = dz[:nu], dz[nu:]
        dphi = np.zeros(it.ls.n_dofs)
        dphi[free] = dphi_free
        mu = 2.0 * float(np.abs(lam).max()) if lam.size else 0.0
        theta0 = merit(it.f, it.ra, mu)
        dtheta0 = merit_slope(grad, dz, it.ra, mu)

        base_dofs = it.ls.dofs()
        cur = it

        def trial(alpha):
            ls_t = cur.ls.set_dofs(base_dofs + alpha * dphi)
            try:
                topo_t = model.topology(ls_t, cur.P)
            except ValueError:
                return None
            ok, _ = interface_rules(cur.topo, topo_t)
            if not ok:
                return None
            u_old = cur.agg_P.prolong(cur.ua + alpha * du)
            layout_t = model.layout(ls_t, cur.P)
            try:
                u_t, _ = extrapolate_newborn(u_old, cur.layout, topo_t, layout_t)
                amap_t = carry_agglomeration(cur.agg_P.amap, cur.layout.blocks, topo_t,
                                             config.agg_threshold, model.active)
                it_t = evaluate_iterate(model, ls_t, u_t, cur.P, config.agg_threshold, amap_t)
            except (ExtrapolationError, ValueError, np.linalg.LinAlgError):
                return None
            return merit(it_t.f, it_t.ra, mu), it_t

        alpha, it_new, theta_a, trials = line_search(theta0, dtheta0, trial, config)
        k += 1
        iters_at_P += 1
        if alpha is None:
            failed += 1
            gamma = min(gamma * config.kappa, config.gamma_max)
            log.warning("line search failed (%d)", failed)
            pending = dict(alpha=0.0, theta0=theta0, dtheta0=dtheta0, theta_alpha=np.nan, reinit=0)
            if failed > config.max_failed_searches:
                status = "line_search_failure"
                trace.append(_trace_row(k, it, gamma, pending, case))
                break
            u_re, flagged = _maybe_reinit(it, iters_at_P, config, is_el=True)
            if flagged:
                it = evaluate_iterate(model, it.ls, u_re, it.P, config.agg_threshold)
                pending["reinit"] = 1
            continue
        failed = 0
        gamma = update_gamma(gamma, float(np.linalg.norm(dphi_free)), config)
        it = it_new
        pending = dict(alpha=alpha, theta0=theta0, dtheta0=dtheta0, theta_alpha=theta_a, reinit=0)
        u_re, flagged = _maybe_reinit(it, iters_at_P, config, is_el=trials > config.el_threshold)
        if flagged:
            it = evaluate_iterate(model, it.ls, u_re, it.P, config.agg_threshold)
            pending["reinit"] = 1

    if status != "converged" and status != "stagnated" and it.P >= config.P_max:
        # a stalled line search or iteration cap at a solved state still counts
        tol = config.tol_abs + config.tol_rel * float(np.linalg.norm(it.u))
        if max(trace[-1]["r_norm"], trace[-1]["R_norm"]) <= tol:
            status = "converged"
    converged = status == "converged"
    return SqpResult(it.ls, it.u, it.P, it.layout, it.topo, trace, converged, status, model)


def _maybe_reinit(it, iters_at_P, config, is_el):
    if not config.reinit or it.P == 0 or iters_at_P > config.reinit_max_iter:
        return it.u, []
    if float(np.linalg.norm(it.ra)) <= config.eps4:
        return it.u, []
    return reinitialize(it.u, it.layout, it.topo, config, is_el)


def _raise_degree(model, it, config):
    P = it.P + 1
    u = inject(it.u, it.layout, P)
    layout_new = model.layout(it.ls, P)
    u, _ = extrapolate_newborn(u, it.layout.with_degree(P), model.topology(it.ls, P), layout_new)
    return evaluate_iterate(model, it.ls, u, P, config.agg_threshold)


def _trace_row(k, it, gamma, pending, case):
    row = dict(iteration=k, P=it.P, r_norm=float(np.linalg.norm(it.ra)),
               R_norm=float(np.linalg.norm(it.Ra)), gamma=gamma,
               n_cut=len(it.topo.cut_cells()),
               r_full_norm=float(np.linalg.norm(it.r_full)), R_full_norm=float(np.linalg.norm(it.R)))
    row.update(pending)
    h_inf = getattr(case, "h_inf", None)
    if h_inf is not None:
        try:
            row["enthalpy_error"] = enthalpy_error(it.u, it.layout, it.topo, h_inf)
        except ValueError:
            row["enthalpy_error"] = np.nan
    else:
        row["enthalpy_error"] = np.nan
    return {c: row[c] for c in TRACE_COLUMNS}
