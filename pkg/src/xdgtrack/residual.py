"""Assembly of the XDG residual and its sensitivities.

One :class:`Discretization` is built per cut topology and solution degree
``P``.  It always assembles the enriched residual ``R`` (test degree
``P + 1``); the constraint residual ``r`` is the sub-vector of rows whose
test mode is below ``N_P``, which holds because the modal basis is nested.
"""

import math

import numpy as np
import scipy.sparse as sp

from .cutcell import classify, gauss
from .physics import NonAdmissibleState
from .xdgspace import XdgLayout, eval_basis, extrapolate_newborn, map_rows, n_modes

FD_REL_STEP = 1e-7


def quadrature_points(P):
    """Gauss points per direction for trial degree ``P`` and test degree ``P + 1``."""
    return 2 * P + 3


def classify_for(grid, ls_s, ls_b, P):
    n = quadrature_points(P)
    return classify(grid, ls_s, ls_b, n_x=n, order=2 * n - 1)


def _cell_basis(geo, sd, Q):
    cache = geo.__dict__.setdefault("_basis_cache", {})
    key = (sd, Q)
    if key not in cache:
        nodes, w = geo.volume[sd]
        cache[key] = eval_basis(geo.box, Q, nodes, grad=True)
    return cache[key]


def _fd_jacobian(fun, U, other=None, which=0):
    """Central-difference Jacobian of a pointwise map w.r.t. one state argument.

    ``fun(U)`` (or ``fun(U, other)`` / ``fun(other, U)``) returns ``(n, ...)``;
    the result has shape ``(n, ..., m)``.
    """
    n, m = U.shape
    h = FD_REL_STEP * np.maximum(1.0, np.abs(U))
    stacked = []
    for k in range(m):
        for s in (1.0, -1.0):
            V = U.copy()
            V[:, k] += s * h[:, k]
            stacked.append(V)
    V = np.concatenate(stacked)
    if other is None:
        F = fun(V)
    else:
        O = np.tile(other, (2 * m, 1))
        F = fun(V, O) if which == 0 else fun(O, V)
    F = F.reshape((2 * m, n) + F.shape[1:])
    out = np.empty((n,) + F.shape[2:] + (m,))
    for k in range(m):
        out[..., k] = (F[2 * k] - F[2 * k + 1]) / (2.0 * h[:, k].reshape((n,) + (1,) * (F.ndim - 2)))
    return out


_BASIS_CACHE = {}


def _split_at_breaks(frag, law):
    """Re-integrate a straight boundary fragment piecewise across data jumps."""
    breaks = getattr(law, "boundary_breaks", None)
    if breaks is None or not breaks(frag.right):
        return frag.nodes, frag.weights
    axis = 0 if abs(frag.normal[1]) > 0.5 else 1        # coordinate along the edge
    t = frag.nodes[:, axis]
    mid, half = float(t.mean()), 0.5 * float(frag.weights.sum())
    a, b = mid - half, mid + half
    cuts = sorted(c for c in breaks(frag.right) if a < c < b)
    if not cuts:
        return frag.nodes, frag.weights
    g, gw = gauss(len(t))
    nodes, weights = [], []
    for lo, hi in zip([a] + cuts, cuts + [b]):
        pts = np.repeat(frag.nodes[:1], len(g), axis=0)
        pts[:, axis] = 0.5 * (lo + hi) + 0.5 * (hi - lo) * g
        nodes.append(pts)
        weights.append(0.5 * (hi - lo) * gw)
    return np.concatenate(nodes), np.concatenate(weights)


def _basis_on(box, Q, nodes):
    """Basis values on a persistent node array (quadrature rules are cached upstream)."""
    key = (id(nodes), box, Q)
    hit = _BASIS_CACHE.get(key)
    if hit is not None and hit[0] is nodes:
        return hit[1]
    if len(_BASIS_CACHE) > 500000:
        _BASIS_CACHE.clear()
    val = eval_basis(box, Q, nodes)
    _BASIS_CACHE[key] = (nodes, val)
    return val


class _Faces:
    """Quadrature points of one flux class."""

    def __init__(self, kind, tag=None):
        self.kind, self.tag = kind, tag
        self.b_in, self.b_out, self.x, self.w, self.n = [], [], [], [], []
        self.v_in, self.v_out = [], []

    def add(self, b_in, b_out, x, w, n, v_in, v_out=None):
        k = len(w)
        self.b_in.append(np.full(k, b_in))
        self.b_out.append(np.full(k, -1 if b_out is None else b_out))
        self.x.append(x)
        self.w.append(w)
        self.n.append(np.broadcast_to(np.asarray(n, dtype=float), (k, 2)))
        self.v_in.append(v_in)
        self.v_out.append(np.zeros_like(v_in) if v_out is None else v_out)

    def finalize(self):
        self.size = sum(len(w) for w in self.w)
        if not self.size:
            return self
        for name in ("b_in", "b_out", "x", "w", "n", "v_in", "v_out"):
            setattr(self, name, np.concatenate(getattr(self, name)))
        return self


class Discretization:
    """Quadrature and basis data of one cut topology at trial degree ``P``.

    Parameters
    ----------
    topo : CutTopology
    law : ConservationLaw
    P : int
        Trial degree; the test degree is ``P + 1``.
    active : iterable of int
        Sub-domains carrying DOFs.
    cells : iterable of int or None
        Restrict assembly to these background cells; rows of other cells
        are returned as zero.
    """

    def __init__(self, topo, law, P, active=(0, 1), cells=None):
        self.topo, self.law, self.P, self.Q = topo, law, P, P + 1
        self.active = tuple(sorted(active))
        m = law.m
        self.layout = XdgLayout(topo.blocks(set(self.active)), m, P)
        self.test_layout = self.layout.with_degree(self.Q)
        cell_set = None if cells is None else set(cells)
        self.cells = cell_set
        index = self.layout.index
        grid = topo.grid
        boxes = [grid.cell_box(j) for j, _ in self.layout.blocks]  # tuples, hashable
        nP, nQ = n_modes(P), n_modes(self.Q)

        # volume
        vb, vx, vw, vv, vg = [], [], [], [], []
        for k, (j, sd) in enumerate(self.layout.blocks):
            if cell_set is not None and j not in cell_set:
                continue
            nodes, w = topo.cells[j].volume[sd]
            val, grad = _cell_basis(topo.cells[j], sd, self.Q)
            vb.append(np.full(len(w), k))
            vx.append(nodes)
            vw.append(w)
            vv.append(val)
            vg.append(grad)
        if vb:
            self.vol_b = np.concatenate(vb)
            self.vol_x = np.concatenate(vx)
            self.vol_w = np.concatenate(vw)
            self.vol_v = np.concatenate(vv)
            self.vol_g = np.concatenate(vg)
        else:
            self.vol_b = np.zeros(0, dtype=int)
            self.vol_x = np.zeros((0, 2))
            self.vol_w = np.zeros(0)
            self.vol_v = np.zeros((0, nQ))
            self.vol_g = np.zeros((0, nQ, 2))

        interior = _Faces("interior")
        interface = _Faces("interface")
        wall = _Faces("wall")
        boundary = {}
        Q = self.Q

        def basis(b, nodes):
            return _basis_on(boxes[b], Q, nodes)

        def add_pair(faces, bl, br, x, w, n):
            # a missing side (dropped sliver) falls back to a one-sided consistent flux
            if bl is None and br is None:
                return
            if cell_set is not None and not ((bl is not None and self.layout.blocks[bl][0] in cell_set)
                                             or (br is not None and self.layout.blocks[br][0] in cell_set)):
                return
            if bl is None:
                faces.add(br, None, x, w, -np.asarray(n), basis(br, x))
            elif br is None:
                faces.add(bl, None, x, w, n, basis(bl, x))
            else:
                faces.add(bl, br, x, w, n, basis(bl, x), basis(br, x))

        for f in topo.fragments:
            if f.sd not in self.active:
                continue
            bl = index.get((f.left, f.sd))
            if isinstance(f.right, str):
                if bl is None or (cell_set is not None and f.left not in cell_set):
                    continue
                nodes, w = _split_at_breaks(f, law)
                boundary.setdefault(f.right, _Faces("boundary", f.right)).add(
                    bl, None, nodes, w, f.normal, basis(bl, nodes))
            else:
                add_pair(interior, bl, index.get((f.right, f.sd)), f.nodes, f.weights, f.normal)

        for j, geo in enumerate(topo.cells):
            if not geo.interface or (cell_set is not None and j not in cell_set):
                continue
            for which, nodes, w, normals, sdm, sdp in geo.interface:
                am, ap = sdm in self.active, sdp in self.active
                bm = index.get((j, sdm)) if am else None
                bp = index.get((j, sdp)) if ap else None
                if which == "s":
                    if am and ap:
                        add_pair(interface, bm, bp, nodes, w, normals)
                elif am and ap:
                    add_pair(interior, bm, bp, nodes, w, normals)
                elif am and bm is not None:
                    wall.add(bm, None, nodes, w, normals, basis(bm, nodes))
                elif ap and bp is not None:
                    wall.add(bp, None, nodes, w, -normals, basis(bp, nodes))

        self.faces = [fc.finalize() for fc in [interior, interface, wall]
                      + [boundary[t] for t in sorted(boundary)]]
        self.faces = [fc for fc in self.faces if fc.size]
        self.nP, self.nQ, self.m = nP, nQ, m
        self.n_blocks = len(self.layout.blocks)

        rows = np.arange(self.test_layout.size).reshape(self.n_blocks, m, nQ)
        self.r_rows = rows[:, :, :nP].ravel()
        if cell_set is None:
            self.row_mask = np.ones(self.test_layout.size, dtype=bool)
        else:
            own = np.array([b[0] in cell_set for b in self.layout.blocks], dtype=bool)
            self.row_mask = np.repeat(own, m * nQ)

    # -- evaluation helpers --------------------------------------------------
    def _states(self, C, bidx, v):
        return np.einsum("qin,qn->qi", C[bidx], v[:, :self.nP])

    def _outer_states(self, C, fc, Uin):
        # one-sided points (b_out < 0) see their own trace on both sides
        Uout = self._states(C, np.maximum(fc.b_out, 0), fc.v_out)
        one = fc.b_out < 0
        Uout[one] = Uin[one]
        return Uout

    def _check(self, U, bidx):
        try:
            self.law.check(U)
        except NonAdmissibleState:
            bad = ~((U[:, 0] > 0) & (_safe_pressure(U) > 0)) if U.shape[1] == 4 else np.zeros(len(U), bool)
            k = int(bidx[np.flatnonzero(bad)[0]]) if bad.any() else int(bidx[0])
            raise NonAdmissibleState(f"non-admissible state in cut-cell {self.layout.blocks[k]}")

    def _face_flux(self, fc, Uin, Uout):
        law = self.law
        if fc.kind == "interior":
            return lambda a, b: law.interior_flux(a, b, np.tile(fc.n, (len(a) // fc.size, 1)),
                                                  np.tile(fc.x, (len(a) // fc.size, 1)))
        if fc.kind == "interface":
            return lambda a, b: law.interface_flux(a, b, np.tile(fc.n, (len(a) // fc.size, 1)),
                                                   np.tile(fc.x, (len(a) // fc.size, 1)))
        if fc.kind == "wall":
            return lambda a: law.wall_flux(a, np.tile(fc.n, (len(a) // fc.size, 1)),
                                           np.tile(fc.x, (len(a) // fc.size, 1)))
        return lambda a: law.boundary_flux(fc.tag, a, np.tile(fc.n, (len(a) // fc.size, 1)),
                                           np.tile(fc.x, (len(a) // fc.size, 1)))

    # -- residual --------------------------------------------------------------
    def residual(self, u):
        """Enriched residual ``R`` in the test layout."""
        C = self.layout.reshape(u)
        R = np.zeros((self.n_blocks, self.m, self.nQ))
        if self.vol_w.size:
            U = self._states(C, self.vol_b, self.vol_v)
            self._check(U, self.vol_b)
            f = self.law.flux(U, self.vol_x)
            contrib = -np.einsum("q,qad,qid->qia", self.vol_w, self.vol_g, f)
            np.add.at(R, self.vol_b, contrib)
        for fc in self.faces:
            Uin = self._states(C, fc.b_in, fc.v_in)
            self._check(Uin, fc.b_in)
            fun = self._face_flux(fc, None, None)
            if fc.kind in ("interior", "interface"):
                Uout = self._outer_states(C, fc, Uin)
                self._check(Uout, np.maximum(fc.b_out, 0))
                F = fun(Uin, Uout)
                np.add.at(R, fc.b_in, fc.w[:, None, None] * F[:, :, None] * fc.v_in[:, None, :])
                two = fc.b_out >= 0
                np.add.at(R, fc.b_out[two], -(fc.w[:, None, None] * F[:, :, None]
                                              * fc.v_out[:, None, :])[two])
            else:
                F = fun(Uin)
                np.add.at(R, fc.b_in, fc.w[:, None, None] * F[:, :, None] * fc.v_in[:, None, :])
        return R.ravel()

    def constraint(self, R):
        return R[self.r_rows]

    # -- Jacobian w.r.t. coefficients --------------------------------------------
    def jacobian(self, u):
        """Sparse ``dR/du`` (test layout rows, trial layout columns)."""
        C = self.layout.reshape(u)
        m, nP, nQ = self.m, self.nP, self.nQ
        rows, cols, vals = [], [], []

        def emit(bt, bs, w, vt, dF, vs, sign):
            # dF: (n, m, m) -> entries (bt, i, a) x (bs, k, n)
            T = sign * np.einsum("q,qa,qik,qn->qiakn", w, vt, dF, vs[:, :nP])
            key = bt.astype(np.int64) * self.n_blocks + bs
            uk, inv = np.unique(key, return_inverse=True)
            S = np.zeros((len(uk), m, nQ, m, nP))
            np.add.at(S, inv, T)
            bt_u, bs_u = uk // self.n_blocks, uk % self.n_blocks
            i, a, k, n = np.meshgrid(np.arange(m), np.arange(nQ), np.arange(m), np.arange(nP),
                                     indexing="ij")
            r = ((bt_u[:, None] * m + i.ravel()[None]) * nQ + a.ravel()[None])
            c = ((bs_u[:, None] * m + k.ravel()[None]) * nP + n.ravel()[None])
            rows.append(r.ravel())
            cols.append(c.ravel())
            vals.append(S.reshape(len(uk), -1).ravel())

        if self.vol_w.size:
            U = self._states(C, self.vol_b, self.vol_v)
            dF = _fd_jacobian(lambda V: self.law.flux(V, np.tile(self.vol_x, (len(V) // len(U), 1))), U)
            # dF: (q, i, d, k); contract with the test gradient
            G = -np.einsum("qad,qidk->qiak", self.vol_g, dF)
            T = np.einsum("q,qiak,qn->qiakn", self.vol_w, G, self.vol_v[:, :nP])
            S = np.zeros((self.n_blocks, m, nQ, m, nP))
            np.add.at(S, self.vol_b, T)
            b = np.unique(self.vol_b)
            i, a, k, n = np.meshgrid(np.arange(m), np.arange(nQ), np.arange(m), np.arange(nP),
                                     indexing="ij")
            rows.append(((b[:, None] * m + i.ravel()[None]) * nQ + a.ravel()[None]).ravel())
            cols.append(((b[:, None] * m + k.ravel()[None]) * nP + n.ravel()[None]).ravel())
            vals.append(S[b].reshape(len(b), -1).ravel())

        for fc in self.faces:
            Uin = self._states(C, fc.b_in, fc.v_in)
            fun = self._face_flux(fc, None, None)
            if fc.kind in ("interior", "interface"):
                Uout = self._outer_states(C, fc, Uin)
                dFin = _fd_jacobian(fun, Uin, Uout, which=0)
                dFout = _fd_jacobian(fun, Uout, Uin, which=1)
                two = fc.b_out >= 0
                one = ~two
                if one.any():
                    dFin = dFin.copy()
                    dFin[one] += dFout[one]
                emit(fc.b_in, fc.b_in, fc.w, fc.v_in, dFin, fc.v_in, 1.0)
                if two.any():
                    bi, bo, w, vi, vo = fc.b_in[two], fc.b_out[two], fc.w[two], fc.v_in[two], fc.v_out[two]
                    emit(bi, bo, w, vi, dFout[two], vo, 1.0)
                    emit(bo, bi, w, vo, dFin[two], vi, -1.0)
                    emit(bo, bo, w, vo, dFout[two], vo, -1.0)
            else:
                dF = _fd_jacobian(fun, Uin)
                emit(fc.b_in, fc.b_in, fc.w, fc.v_in, dF, fc.v_in, 1.0)

        shape = (self.test_layout.size, self.layout.size)
        if not rows:
            return sp.csr_matrix(shape)
        J = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=shape).tocsr()
        J.sum_duplicates()
        return J


def _safe_pressure(U, gamma=1.4):
    with np.errstate(all="ignore"):
        return (gamma - 1.0) * (U[:, 3] - 0.5 * (U[:, 1] ** 2 + U[:, 2] ** 2) / U[:, 0])


class ResidualModel:
    """Residual evaluation for a fixed grid, law and optional wall level set.

    The shock level set ``ls`` and the state ``u`` vary; topologies and
    discretizations are cached by level-set DOFs.
    """

    def __init__(self, grid, law, ls_b=None, active=(0, 1), fixed_dofs=(), eps_rel=1e-8):
        self.grid, self.law, self.ls_b = grid, law, ls_b
        self.active = tuple(sorted(active))
        self.fixed_dofs = tuple(sorted(fixed_dofs))
        self.eps = eps_rel * grid.hy
        self._topo_cache = {}
        self._disc_cache = {}

    def _key(self, ls, P):
        return (ls.dofs().tobytes(), P)

    def topology(self, ls, P):
        key = self._key(ls, P)
        topo = self._topo_cache.get(key)
        if topo is None:
            if len(self._topo_cache) > 64:
                self._topo_cache.clear()
            topo = classify_for(self.grid, ls, self.ls_b, P)
            self._topo_cache[key] = topo
        return topo

    def discretization(self, ls, P, cells=None):
        key = self._key(ls, P)
        if cells is None:
            disc = self._disc_cache.get(key)
            if disc is None:
                if len(self._disc_cache) > 16:
                    self._disc_cache.clear()
                disc = Discretization(self.topology(ls, P), self.law, P, self.active)
                self._disc_cache[key] = disc
            return disc
        return Discretization(self.topology(ls, P), self.law, P, self.active, cells)

    def layout(self, ls, P):
        return self.discretization(ls, P).layout

    def residuals(self, u, ls, P):
        """``(r, R)`` on the non-agglomerated layouts."""
        disc = self.discretization(ls, P)
        R = disc.residual(u)
        return disc.constraint(R), R

    def free_dofs(self, ls):
        return [k for k in range(ls.n_dofs) if k not in self.fixed_dofs]

    def affected_cells(self, ls, k):
        """Cells whose geometry depends on level-set DOF ``k`` (knots on grid rows)."""
        knot = ls.dof_knot(k)
        yk = ls.knots[knot]
        y_lo = ls.knots[max(knot - 1, 0)]
        y_hi = ls.knots[min(knot + 1, ls.n_knots - 1)]
        yv = self.grid.y_vertices
        rows = [i for i in range(self.grid.ny) if yv[i + 1] > y_lo + 1e-12 and yv[i] < y_hi - 1e-12]
        if not rows:
            rows = [min(int(np.searchsorted(yv, yk)), self.grid.ny - 1)]
        nx = self.grid.nx
        return [iy * nx + ix for iy in rows for ix in range(nx)]

    def _local_residual(self, u_ref, disc_ref, ls, P, cells):
        """Residual rows of ``cells`` for level set ``ls``, mapped onto ``disc_ref``'s rows."""
        disc = self.discretization(ls, P, cells)
        u, _ = extrapolate_newborn(u_ref, disc_ref.layout, disc.topo, disc.layout)
        R = disc.residual(u)
        return map_rows(R, disc.test_layout, disc_ref.test_layout, disc.m * disc.nQ)

    def jacobian_phi(self, u, ls, P):
        """Central FD of ``R`` w.r.t. the free level-set DOFs, shape ``(N_R, n_free)``."""
        disc = self.discretization(ls, P)
        free = self.free_dofs(ls)
        dofs = ls.dofs()
        J = np.zeros((disc.test_layout.size, len(free)))
        for c, k in enumerate(free):
            cells = self.affected_cells(ls, k)
            e = np.zeros_like(dofs)
            e[k] = self.eps
            Rp = self._local_residual(u, disc, ls.set_dofs(dofs + e), P, cells)
            Rm = self._local_residual(u, disc, ls.set_dofs(dofs - e), P, cells)
            own = np.repeat(np.array([b[0] in set(cells) for b in disc.layout.blocks], dtype=bool),
                            disc.m * disc.nQ)
            J[own, c] = (Rp[own] - Rm[own]) / (2.0 * self.eps)
        return J

    def jacobian_u(self, u, ls, P):
        return self.discretization(ls, P).jacobian(u)

    def objective(self, u, ls, P, with_gradient=True):
        """``f = 0.5 ||R||^2`` and optionally ``(grad_u f, grad_phi f)``."""
        _, R = self.residuals(u, ls, P)
        f = 0.5 * float(R @ R)
        if not with_gradient:
            return f
        gu = self.jacobian_u(u, ls, P).T @ R
        gphi = self.jacobian_phi(u, ls, P).T @ R
        return f, gu, gphi


def assemble(u, ls, law, grid, P, Q=None, ls_b=None, active=(0, 1)):
    """Residual of test degree ``Q`` (``P`` or ``P + 1``) for state ``u`` on level set ``ls``."""
    Q = P + 1 if Q is None else Q
    if Q not in (P, P + 1):
        raise ValueError("Q must be P or P + 1")
    disc = Discretization(classify_for(grid, ls, ls_b, P), law, P, active)
    R = disc.residual(u)
    return disc.constraint(R) if Q == P else R
