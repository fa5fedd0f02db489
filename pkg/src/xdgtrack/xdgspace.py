"""Modal XDG space: basis, coefficient layout and the transfers between layouts."""

import functools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cutcell import gauss, subdomain_index
from .mesh import neighbors


class ExtrapolationError(ValueError):
    pass


def n_modes(P):
    return (P + 1) * (P + 2) // 2


@functools.lru_cache(maxsize=16)
def mode_list(P):
    """Total-degree modes ``(a, b)`` ordered by degree, so lower degrees nest."""
    return tuple((d - b, b) for d in range(P + 1) for b in range(d + 1))


def _legendre(xi, P):
    """Legendre values and derivatives up to degree P, shape (P+1, n)."""
    xi = np.asarray(xi, dtype=float)
    val = np.zeros((P + 1,) + xi.shape)
    der = np.zeros_like(val)
    val[0] = 1.0
    if P >= 1:
        val[1] = xi
        der[1] = 1.0
    for n in range(2, P + 1):
        val[n] = ((2 * n - 1) * xi * val[n - 1] - (n - 1) * val[n - 2]) / n
        der[n] = der[n - 2] + (2 * n - 1) * val[n - 1]
    return val, der


def eval_basis(box, P, points, grad=False):
    """Orthonormal (on the full cell) Legendre basis of total degree ``P``.

    Returns values of shape ``(n, N_P)`` and, with ``grad=True``, physical
    gradients of shape ``(n, N_P, 2)``.
    """
    x0, x1, y0, y1 = box
    hx, hy = x1 - x0, y1 - y0
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    xi = (2.0 * pts[:, 0] - (x0 + x1)) / hx
    eta = (2.0 * pts[:, 1] - (y0 + y1)) / hy
    lx, dlx = _legendre(xi, P)
    ly, dly = _legendre(eta, P)
    modes = mode_list(P)
    a = np.array([m[0] for m in modes])
    b = np.array([m[1] for m in modes])
    scale = np.sqrt((2 * a + 1) * (2 * b + 1) / (hx * hy))
    vals = (lx[a] * ly[b]).T * scale
    if not grad:
        return vals
    gx = (dlx[a] * ly[b]).T * scale * (2.0 / hx)
    gy = (lx[a] * dly[b]).T * scale * (2.0 / hy)
    return vals, np.stack([gx, gy], axis=-1)


def full_cell_rule(box, n):
    g, w = gauss(n)
    x0, x1, y0, y1 = box
    xs = 0.5 * (x0 + x1) + 0.5 * (x1 - x0) * g
    ys = 0.5 * (y0 + y1) + 0.5 * (y1 - y0) * g
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    W = np.outer(w, w) * 0.25 * (x1 - x0) * (y1 - y0)
    return np.column_stack([X.ravel(), Y.ravel()]), W.ravel()


def transfer_matrix(box_to, box_from, P):
    """Coefficients in ``box_to``'s basis of each ``box_from`` basis polynomial."""
    nodes, w = full_cell_rule(box_to, P + 1)
    bt = eval_basis(box_to, P, nodes)
    bf = eval_basis(box_from, P, nodes)
    return bt.T @ (w[:, None] * bf)


@dataclass
class XdgLayout:
    """Global coefficient numbering; only nonempty, active cut-cells carry DOFs.

    Index of (block b, component i, mode n) is ``(b * m + i) * N_P + n``.
    """

    blocks: tuple
    m: int
    P: int
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.blocks = tuple(self.blocks)
        self.index = {b: k for k, b in enumerate(self.blocks)}

    @property
    def n_modes(self):
        return n_modes(self.P)

    @property
    def block_size(self):
        return self.m * self.n_modes

    @property
    def size(self):
        return len(self.blocks) * self.block_size

    def slot(self, block):
        k = self.index[block]
        return slice(k * self.block_size, (k + 1) * self.block_size)

    def reshape(self, u):
        return np.asarray(u).reshape(len(self.blocks), self.m, self.n_modes)

    def with_degree(self, P):
        return XdgLayout(self.blocks, self.m, P)


def make_layout(topo, m, P, active=(0, 1, 2, 3)):
    return XdgLayout(topo.blocks(set(active)), m, P)


def cut_mass_matrix(topo, block, P):
    j, sd = block
    nodes, w = topo.cells[j].volume[sd]
    phi = eval_basis(topo.grid.cell_box(j), P, nodes)
    return phi.T @ (w[:, None] * phi)


def mass_matrix(topo, layout):
    """Block-diagonal cut-cell mass matrix of ``layout`` (sparse)."""
    eye_m = sp.identity(layout.m, format="csr")
    blocks = [sp.kron(eye_m, cut_mass_matrix(topo, b, layout.P)) for b in layout.blocks]
    if not blocks:
        return sp.csr_matrix((0, 0))
    return sp.block_diag(blocks, format="csr")


def project(f, topo, layout):
    """Cut-cell-wise L2 projection of ``f(points, sd) -> (n, m)`` values."""
    u = np.zeros((len(layout.blocks), layout.m, layout.n_modes))
    for k, (j, sd) in enumerate(layout.blocks):
        nodes, w = topo.cells[j].volume[sd]
        phi = eval_basis(topo.grid.cell_box(j), layout.P, nodes)
        mass = phi.T @ (w[:, None] * phi)
        vals = np.asarray(f(nodes, sd), dtype=float).reshape(len(w), layout.m)
        rhs = phi.T @ (w[:, None] * vals)
        try:
            u[k] = np.linalg.solve(mass, rhs).T
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"singular cut mass matrix in block {(j, sd)}") from exc
    return u.ravel()


def inject(u, layout, P_new):
    """Zero-pad coefficients into the degree ``P_new >= P`` layout."""
    if P_new < layout.P:
        raise ValueError("inject needs P_new >= P")
    src = layout.reshape(u)
    out = np.zeros(src.shape[:2] + (n_modes(P_new),))
    out[..., :layout.n_modes] = src
    return out.ravel()


def truncate(u, layout, P_new):
    src = layout.reshape(u)
    return np.ascontiguousarray(src[..., :n_modes(P_new)]).ravel()


def _same_sd_grid_neighbors(topo, j, sd):
    return [(n, sd) for n in neighbors(topo.grid, j) if topo.exists(n, sd)]


def extrapolate_newborn(u_old, layout_old, topo_new, layout_new):
    """Carry coefficients onto a new topology.

    Cut-cells present before keep their coefficients; newborn cut-cells get
    the polynomial of their largest (by new area) same-sub-domain neighbour
    with known coefficients, re-expressed in their own basis.  Returns the
    new coefficient vector and the list of newborn blocks.
    """
    if layout_old.P != layout_new.P or layout_old.m != layout_new.m:
        raise ValueError("layouts must share degree and component count")
    src = layout_old.reshape(u_old)
    out = np.zeros((len(layout_new.blocks), layout_new.m, layout_new.n_modes))
    known = {}
    for k, b in enumerate(layout_new.blocks):
        if b in layout_old.index:
            out[k] = src[layout_old.index[b]]
            known[b] = out[k]
    pending = [b for b in layout_new.blocks if b not in known]
    newborn = list(pending)
    grid = topo_new.grid
    while pending:
        progress = []
        for b in pending:
            cands = [n for n in _same_sd_grid_neighbors(topo_new, *b) if n in known]
            if not cands:
                continue
            donor = max(cands, key=lambda n: (topo_new.area(*n), n))
            T = transfer_matrix(grid.cell_box(b[0]), grid.cell_box(donor[0]), layout_new.P)
            progress.append((b, known[donor] @ T.T))
        if not progress:
            raise ExtrapolationError(f"newborn cut-cells without a known neighbour: {pending}")
        for b, coeffs in progress:
            known[b] = coeffs
            out[layout_new.index[b]] = coeffs
        done = {b for b, _ in progress}
        pending = [b for b in pending if b not in done]
    return out.ravel(), newborn


def map_rows(vec, layout_from, layout_to, n_per_block):
    """Re-index per-block data; blocks missing in ``layout_from`` become zero."""
    src = np.asarray(vec).reshape(len(layout_from.blocks), n_per_block)
    out = np.zeros((len(layout_to.blocks), n_per_block))
    for k, b in enumerate(layout_to.blocks):
        i = layout_from.index.get(b)
        if i is not None:
            out[k] = src[i]
    return out.ravel()


# -- agglomeration basis change ------------------------------------------------

class Agglomeration:
    """Extension operator ``E`` from the agglomerated space to the cut-cell space.

    Agglomerated DOFs live on the non-source blocks; a source block carries
    its root's polynomial extended over the source cell.  ``E`` is sparse.
    """

    def __init__(self, layout, amap, grid, mass=None):
        self.layout = layout
        self.amap = dict(amap)
        self.keep = [b for b in layout.blocks if b not in self.amap]
        self.keep_index = {b: k for k, b in enumerate(self.keep)}
        bs = layout.block_size
        rows, cols, vals = [], [], []
        eye_m = np.eye(layout.m)
        for k, b in enumerate(layout.blocks):
            if b in self.amap:
                root = self.amap[b]
                c = self.keep_index[root]
                T = transfer_matrix(grid.cell_box(b[0]), grid.cell_box(root[0]), layout.P)
                blk = np.kron(eye_m, T)
            else:
                c = self.keep_index[b]
                blk = np.eye(bs)
            ii, jj = np.nonzero(np.abs(blk) > 1e-15)
            rows.append(k * bs + ii)
            cols.append(c * bs + jj)
            vals.append(blk[ii, jj])
        shape = (layout.size, len(self.keep) * bs)
        if rows:
            self.E = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                   shape=shape)
        else:
            self.E = sp.csr_matrix(shape)
        # restriction weights: cut-cell mass (L2 projection) or plain coefficients
        self.M = sp.identity(shape[0], format="csr") if mass is None else sp.csr_matrix(mass)
        self._EtM = (self.E.T @ self.M).tocsr()
        self._gram = spla.splu((self._EtM @ self.E).tocsc()) if shape[1] else None

    @property
    def size(self):
        return self.E.shape[1]

    @property
    def is_identity(self):
        return not self.amap

    def restrict_state(self, u):
        """Weighted least-squares restriction ``(E^T M E)^{-1} E^T M u``."""
        if self.is_identity:
            return np.array(u, dtype=float)
        return self._gram.solve(self._EtM @ np.asarray(u, dtype=float))

    def prolong(self, ua):
        if self.is_identity:
            return np.array(ua, dtype=float)
        return self.E @ ua

    def restrict_residual(self, r):
        if self.is_identity:
            return np.array(r, dtype=float)
        return self.E.T @ r

    def restrict_jacobian(self, J, test=None):
        """``E_test^T J E`` (``test`` defaults to ``self``); columns only when ``test is False``."""
        test = self if test is None else test
        out = J if self.is_identity else J @ self.E
        if test is not False and not test.is_identity:
            out = test.E.T @ out
        return out


def sample(u, layout, topo, points):
    """Evaluate the XDG field at points; NaN where no block exists (void)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    cells = np.asarray(topo.grid.locate(pts))
    coeffs = layout.reshape(u)
    out = np.full((len(pts), layout.m), np.nan)
    fs = topo.ls_s.eval(pts[:, 0], pts[:, 1]) if topo.ls_s is not None else -np.ones(len(pts))
    fb = topo.ls_b.eval(pts[:, 0], pts[:, 1]) if topo.ls_b is not None else -np.ones(len(pts))
    sd = np.array([subdomain_index(a, b) for a, b in zip(fs, fb)], dtype=int)
    groups = {}
    for i, key in enumerate(zip(cells.tolist(), sd.tolist())):
        groups.setdefault(key, []).append(i)
    for b, idx in groups.items():
        k = layout.index.get(b)
        if k is None:
            continue
        phi = eval_basis(topo.grid.cell_box(b[0]), layout.P, pts[idx])
        out[idx] = phi @ coeffs[k].T
    return out
