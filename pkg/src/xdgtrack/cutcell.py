"""Cut-cell decomposition and quadrature for height-function interfaces.

Every interface is a graph ``x = X(y)`` that is polynomial on each grid row,
so a cell can be split into horizontal slabs in which the ordering of the
cell's vertical edges and the interface curves is fixed.  Inside a slab each
sub-domain piece lies between two bounding curves and is integrated with a
tensor Gauss-Legendre rule (outer in y, inner in x).

Sub-domains are numbered ``A=0, B=1, C=2, D=3`` following the sign pattern
of ``(phi_s, phi_b)``: ``(-,-), (+,-), (-,+), (+,+)``.
"""

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly

from .mesh import neighbors

SUBDOMAINS = ("A", "B", "C", "D")
AREA_DROP = 1e-14
LENGTH_DROP = 1e-14


class GeometryError(ValueError):
    pass


class AgglomerationError(ValueError):
    pass


def subdomain_index(phi_s, phi_b):
    return int(phi_s > 0) + 2 * int(phi_b > 0)


@functools.lru_cache(maxsize=64)
def gauss(n):
    g, w = np.polynomial.legendre.leggauss(n)
    return g, w


def _ny_for(order, degree, n_min):
    return max(n_min, math.ceil((degree * (order + 1) + 1) / 2))


def _real_roots(coeffs, lo=0.0, hi=1.0):
    """Real roots of a polynomial (monomial coeffs) strictly inside (lo, hi)."""
    c = np.trim_zeros(np.asarray(coeffs, dtype=float), "b")
    if c.size <= 1:
        return []
    tail = np.abs(c[1:]).sum()
    if abs(c[0]) > tail and lo == 0.0 and hi == 1.0:
        return []  # |p(t) - p(0)| <= sum |c_i| on [0, 1]
    if tail <= 1e-15 * abs(c).max():
        return []
    if c.size == 2:
        cand = [-c[0] / c[1]]
    else:
        r = npoly.polyroots(c)
        cand = [z.real for z in r if abs(z.imag) <= 1e-6 * (1.0 + abs(z.real))]
    dc = npoly.polyder(c)
    out = []
    for t in cand:
        for _ in range(3):
            d = npoly.polyval(t, dc)
            if d == 0.0:
                break
            step = npoly.polyval(t, c) / d
            if abs(step) > 1e-3:
                break
            t -= step
        if lo + 1e-14 < t < hi - 1e-14:
            out.append(float(t))
    return out


@dataclass
class CellGeometry:
    """Quadrature data of one background cell.

    ``volume[sd] = (nodes, weights)``; ``interface`` holds tuples
    ``(which, nodes, weights, normals, sd_minus, sd_plus)`` where ``which``
    is ``"s"`` or ``"b"`` and the normal points from ``sd_minus``
    (level set negative) to ``sd_plus``.
    """

    box: tuple
    volume: dict
    areas: dict
    interface: list
    cut_s: bool
    cut_b: bool

    @property
    def cell_area(self):
        x0, x1, y0, y1 = self.box
        return (x1 - x0) * (y1 - y0)


def _pieces_at(t, x0, x1, curves):
    """Bounding functions inside (x0, x1) at parameter t, sorted by abscissa."""
    inside = []
    for name, c in curves:
        v = npoly.polyval(t, c)
        if x0 < v < x1:
            inside.append((v, name, c))
    inside.sort(key=lambda r: r[0])
    return inside


def _cut_cell(box, ps, pb, n_x, order):
    """Decompose one cell. ``ps``/``pb`` are local polynomial coefficient tuples or None."""
    x0, x1, y0, y1 = box
    hy = y1 - y0
    area = (x1 - x0) * hy
    curves = []
    if ps is not None:
        curves.append(("s", np.asarray(ps)))
    if pb is not None:
        curves.append(("b", np.asarray(pb)))

    breaks = [0.0, 1.0]
    for _, c in curves:
        for xe in (x0, x1):
            breaks += _real_roots(npoly.polysub(c, [xe]))
    if len(curves) == 2:
        breaks += _real_roots(npoly.polysub(curves[0][1], curves[1][1]))
    breaks = np.unique(np.round(np.array(breaks), 15))

    def sd_at(x, t):
        fs = x - npoly.polyval(t, ps) if ps is not None else -1.0
        fb = x - npoly.polyval(t, pb) if pb is not None else -1.0
        return subdomain_index(fs, fb)

    deg = max([len(c) - 1 for _, c in curves] + [0])
    ny = _ny_for(order, deg, n_x) if deg > 0 else n_x
    gx, wx = gauss(n_x)
    gy, wy = gauss(ny)
    ns = _ny_for(order, deg, n_x) + 2 if deg > 0 else n_x
    gs, ws = gauss(ns)

    vol_nodes = {}
    vol_w = {}
    interface = []
    cut = {"s": False, "b": False}

    for ta, tb in zip(breaks[:-1], breaks[1:]):
        if tb - ta <= 1e-15:
            continue
        tm = 0.5 * (ta + tb)
        inside = _pieces_at(tm, x0, x1, curves)
        bounds = [(x0, None)] + [(v, c) for v, _, c in inside] + [(x1, None)]
        tq = ta + (tb - ta) * 0.5 * (gy + 1.0)
        yq = y0 + hy * tq
        wyq = wy * 0.5 * (tb - ta) * hy
        for k in range(len(bounds) - 1):
            (vl, cl), (vr, cr) = bounds[k], bounds[k + 1]
            sd = sd_at(0.5 * (vl + vr), tm)
            lo = np.full_like(tq, x0) if cl is None else npoly.polyval(tq, cl)
            hi = np.full_like(tq, x1) if cr is None else npoly.polyval(tq, cr)
            width = np.maximum(hi - lo, 0.0)
            xq = lo[:, None] + width[:, None] * 0.5 * (gx[None, :] + 1.0)
            w = wyq[:, None] * width[:, None] * 0.5 * wx[None, :]
            pts = np.column_stack([xq.ravel(), np.repeat(yq, n_x)])
            vol_nodes.setdefault(sd, []).append(pts)
            vol_w.setdefault(sd, []).append(w.ravel())

        # interface segments in this slab
        tqs = ta + (tb - ta) * 0.5 * (gs + 1.0)
        yqs = y0 + hy * tqs
        wqs = ws * 0.5 * (tb - ta) * hy
        for v, name, c in inside:
            cut[name] = True
            xs = npoly.polyval(tqs, c)
            slope = npoly.polyval(tqs, npoly.polyder(c)) / hy
            nrm = np.sqrt(1.0 + slope * slope)
            normals = np.column_stack([1.0 / nrm, -slope / nrm])
            xm = v
            if name == "s":
                fb = (xm - npoly.polyval(tm, pb)) if pb is not None else -1.0
                sdm, sdp = subdomain_index(-1.0, fb), subdomain_index(1.0, fb)
            else:
                fs = (xm - npoly.polyval(tm, ps)) if ps is not None else -1.0
                sdm, sdp = subdomain_index(fs, -1.0), subdomain_index(fs, 1.0)
            interface.append((name, np.column_stack([xs, yqs]), wqs * nrm, normals, sdm, sdp))

    volume, areas = {}, {}
    for sd in vol_nodes:
        w = np.concatenate(vol_w[sd])
        a = float(w.sum())
        if a <= AREA_DROP * area:
            continue
        volume[sd] = (np.concatenate(vol_nodes[sd]), w)
        areas[sd] = a
    return CellGeometry(box, volume, areas, interface, cut["s"], cut["b"])


@functools.lru_cache(maxsize=50000)
def _cut_cell_cached(box, ps, pb, n_x, order):
    return _cut_cell(box, ps, pb, n_x, order)


@functools.lru_cache(maxsize=200000)
def _vertical_pieces(xe, y0, y1, ps, pb, n):
    g, w = gauss(n)
    cuts = [0.0, 1.0]
    for c in (ps, pb):
        if c is not None:
            cuts += _real_roots(npoly.polysub(np.asarray(c), [xe]))
    cuts = np.unique(np.round(np.array(cuts), 15))
    out = []
    for ta, tb in zip(cuts[:-1], cuts[1:]):
        length = (tb - ta) * (y1 - y0)
        if length <= LENGTH_DROP * (y1 - y0):
            continue
        tm = 0.5 * (ta + tb)
        fs = xe - npoly.polyval(tm, ps) if ps is not None else -1.0
        fb = xe - npoly.polyval(tm, pb) if pb is not None else -1.0
        yq = y0 + (y1 - y0) * (ta + (tb - ta) * 0.5 * (g + 1.0))
        out.append((subdomain_index(fs, fb), np.column_stack([np.full_like(yq, xe), yq]),
                    w * 0.5 * length))
    return tuple(out)


@functools.lru_cache(maxsize=200000)
def _horizontal_pieces(ye, x0, x1, hs, hb, n):
    """``hs``/``hb`` are the interface abscissae at height ``ye`` (or None)."""
    g, w = gauss(n)
    cuts = [x0, x1]
    for v in (hs, hb):
        if v is not None and x0 < v < x1:
            cuts.append(v)
    cuts = np.unique(np.array(cuts))
    out = []
    for xa, xb in zip(cuts[:-1], cuts[1:]):
        length = xb - xa
        if length <= LENGTH_DROP * (x1 - x0):
            continue
        xm = 0.5 * (xa + xb)
        fs = xm - hs if hs is not None else -1.0
        fb = xm - hb if hb is not None else -1.0
        xq = xa + length * 0.5 * (g + 1.0)
        out.append((subdomain_index(fs, fb), np.column_stack([xq, np.full_like(xq, ye)]),
                    w * 0.5 * length))
    return tuple(out)


def _edge_pieces(edge, ls_s, ls_b, ps, pb, n):
    """Split one grid edge at interface crossings into ``(sd, nodes, weights)`` pieces."""
    (ax, ay), (bx, by) = edge.p0, edge.p1
    if ax == bx:  # vertical edge, parameter t along the row
        return _vertical_pieces(float(ax), float(ay), float(by), ps, pb, n)
    hs = float(ls_s.height(ay)) if ls_s is not None else None
    hb = float(ls_b.height(ay)) if ls_b is not None else None
    return _horizontal_pieces(float(ay), float(ax), float(bx), hs, hb, n)


@dataclass
class EdgeFragment:
    """Part of a grid edge lying in one sub-domain."""

    edge: int
    sd: int
    left: int
    right: object  # cell id or boundary tag
    normal: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def length(self):
        return float(self.weights.sum())


@dataclass
class CutTopology:
    grid: object
    ls_s: object
    ls_b: object
    n_x: int
    order: int
    cells: list = field(repr=False)
    fragments: list = field(repr=False)

    def exists(self, j, sd):
        return sd in self.cells[j].areas

    def area(self, j, sd):
        return self.cells[j].areas.get(sd, 0.0)

    def fraction(self, j, sd):
        return self.area(j, sd) / self.grid.cell_area

    def subdomains(self, j):
        return sorted(self.cells[j].areas)

    def cut_cells(self):
        """Background cells cut by the shock interface."""
        return frozenset(j for j, c in enumerate(self.cells) if c.cut_s)

    def is_cut(self, j):
        return self.cells[j].cut_s or self.cells[j].cut_b

    def blocks(self, active=None):
        out = []
        for j, c in enumerate(self.cells):
            for sd in sorted(c.areas):
                if active is None or sd in active:
                    out.append((j, sd))
        return out

    def signature(self, active=None):
        return tuple(self.blocks(active))

    def dump_csv(self, path_or_buf=None):
        """CSV lines ``cell,subdomain,area,fraction``."""
        lines = ["cell,subdomain,area,fraction"]
        for j, sd in self.blocks():
            a = self.area(j, sd)
            lines.append(f"{j},{SUBDOMAINS[sd]},{a:.17g},{a / self.grid.cell_area:.17g}")
        text = "\n".join(lines) + "\n"
        if path_or_buf is None:
            return text
        with open(path_or_buf, "w") as fh:
            fh.write(text)
        return text


def _row_poly(ls, y0, y1):
    if ls is None:
        return None
    return tuple(float(v) for v in ls.local_poly(y0, y1))


def classify(grid, ls_s, ls_b=None, n_x=4, order=None):
    """Build the cut-cell topology for shock level set ``ls_s`` and optional wall ``ls_b``.

    ``n_x`` Gauss points are used per direction on straight pieces; curved
    slabs get enough points to integrate polynomials of degree ``order``
    exactly (default ``2 * n_x - 1``).
    """
    if order is None:
        order = 2 * n_x - 1
    if ls_s is not None and hasattr(ls_s, "knots"):
        y_min, y_max = grid.bounds[2], grid.bounds[3]
        tol = 1e-12 * (y_max - y_min)
        if ls_s.knots[0] > y_min + tol or ls_s.knots[-1] < y_max - tol:
            raise GeometryError("spline knot range does not cover the grid")
    yv = grid.y_vertices
    xv = grid.x_vertices
    row_s = [_row_poly(ls_s, yv[i], yv[i + 1]) for i in range(grid.ny)]
    row_b = [_row_poly(ls_b, yv[i], yv[i + 1]) for i in range(grid.ny)]

    cells = []
    for j in range(grid.n_cells):
        ix, iy = j % grid.nx, j // grid.nx
        box = (float(xv[ix]), float(xv[ix + 1]), float(yv[iy]), float(yv[iy + 1]))
        cells.append(_cut_cell_cached(box, row_s[iy], row_b[iy], n_x, order))

    hs = [None] * (grid.ny + 1) if ls_s is None else [float(v) for v in ls_s.height(yv)]
    hb = [None] * (grid.ny + 1) if ls_b is None else [float(v) for v in ls_b.height(yv)]
    fragments = []
    for k, e in enumerate(grid.edges):
        iy = min(int(round((e.p0[1] - yv[0]) / grid.hy)), grid.ny)
        if e.p0[0] == e.p1[0]:
            iy = min(iy, grid.ny - 1)
            pieces = _vertical_pieces(float(e.p0[0]), float(e.p0[1]), float(e.p1[1]),
                                      row_s[iy], row_b[iy], n_x)
        else:
            pieces = _horizontal_pieces(float(e.p0[1]), float(e.p0[0]), float(e.p1[0]),
                                        hs[iy], hb[iy], n_x)
        for sd, nodes, w in pieces:
            fragments.append(EdgeFragment(k, sd, e.left, e.right, np.asarray(e.normal), nodes, w))
    return CutTopology(grid, ls_s, ls_b, n_x, order, cells, fragments)


# -- standalone rules ------------------------------------------------------

def volume_rule(topo_or_grid, j, sd, order, ls_s=None, ls_b=None):
    """Quadrature ``(nodes, weights)`` on cut-cell ``(j, sd)`` exact for total degree ``order``."""
    if isinstance(topo_or_grid, CutTopology):
        grid, ls_s, ls_b = topo_or_grid.grid, topo_or_grid.ls_s, topo_or_grid.ls_b
    else:
        grid = topo_or_grid
    box = grid.cell_box(j)
    y0, y1 = box[2], box[3]
    geo = _cut_cell(tuple(map(float, box)), _row_poly(ls_s, y0, y1), _row_poly(ls_b, y0, y1),
                    math.ceil((order + 1) / 2), order)
    if sd not in geo.volume:
        raise GeometryError(f"sub-domain {SUBDOMAINS[sd]} empty in cell {j}")
    return geo.volume[sd]


def surface_rule(topo_or_grid, j, which, order, ls_s=None, ls_b=None):
    """Interface quadrature ``(nodes, weights, normals)`` of interface ``which`` in cell ``j``."""
    if isinstance(topo_or_grid, CutTopology):
        grid, ls_s, ls_b = topo_or_grid.grid, topo_or_grid.ls_s, topo_or_grid.ls_b
    else:
        grid = topo_or_grid
    box = grid.cell_box(j)
    y0, y1 = box[2], box[3]
    geo = _cut_cell(tuple(map(float, box)), _row_poly(ls_s, y0, y1), _row_poly(ls_b, y0, y1),
                    math.ceil((order + 1) / 2), order)
    segs = [s for s in geo.interface if s[0] == which]
    if not segs:
        return np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2))
    return (np.concatenate([s[1] for s in segs]), np.concatenate([s[2] for s in segs]),
            np.concatenate([s[3] for s in segs]))


def edge_rules(topo):
    """Edge fragments grouped by background edge id."""
    out = {}
    for f in topo.fragments:
        out.setdefault(f.edge, []).append(f)
    return out


# -- agglomeration ----------------------------------------------------------

def _same_sd_links(topo, active):
    links = {}
    for f in topo.fragments:
        if f.sd not in active or isinstance(f.right, str):
            continue
        a, b = (f.left, f.sd), (f.right, f.sd)
        if topo.exists(*a) and topo.exists(*b):
            links.setdefault(a, set()).add(b)
            links.setdefault(b, set()).add(a)
    return links


def build_agglomeration(topo, threshold, active=(0, 1, 2, 3), strict=True):
    """Map small cut-cells onto their largest same-sub-domain edge neighbour.

    Returns ``{source: root}`` with chains already resolved, where cut-cells
    are ``(cell, sub-domain)`` pairs.
    """
    if not (0.0 < threshold < 1.0):
        raise ValueError("threshold must lie in (0, 1)")
    active = set(active)
    links = _same_sd_links(topo, active)
    small = {b for b in topo.blocks(active) if topo.fraction(*b) <= threshold}
    target = {}
    for b in sorted(small):
        nbrs = links.get(b, set())
        if not nbrs:
            if strict:
                raise AgglomerationError(f"cut-cell {b} has no same-sub-domain neighbour")
            continue
        target[b] = max(sorted(nbrs), key=lambda n: topo.area(*n))

    # break cycles among small cut-cells: the largest member becomes a root
    for b in sorted(target):
        path, cur = [], b
        while cur in target and cur not in path:
            path.append(cur)
            cur = target[cur]
        if cur in target:
            cycle = path[path.index(cur):]
            del target[max(cycle, key=lambda m: (topo.area(*m), m))]

    resolved = {}
    for b in target:
        r = target[b]
        while r in target:
            r = target[r]
        resolved[b] = r
    return resolved


def cut_neighbors(topo, cells):
    """Cells sharing an edge with any cell in ``cells``."""
    out = set()
    for j in cells:
        out.update(neighbors(topo.grid, j))
    return out
