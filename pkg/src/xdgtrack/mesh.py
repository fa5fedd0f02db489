"""Cartesian background grid."""

import functools
from dataclasses import dataclass, field

import numpy as np

BOUNDARY_TAGS = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class Edge:
    """One grid edge.

    ``left`` is the cell the normal points away from, ``right`` the cell it
    points into, or a boundary tag string for domain edges (normal outward).
    """

    left: int
    right: object
    normal: tuple
    p0: tuple
    p1: tuple

    @property
    def is_boundary(self):
        return isinstance(self.right, str)

    @property
    def tag(self):
        return self.right if self.is_boundary else None


@dataclass(frozen=True)
class BackgroundGrid:
    nx: int
    ny: int
    bounds: tuple
    edges: tuple = field(repr=False)
    cell_edges: tuple = field(repr=False)

    @property
    def n_cells(self):
        return self.nx * self.ny

    @property
    def hx(self):
        return (self.bounds[1] - self.bounds[0]) / self.nx

    @property
    def hy(self):
        return (self.bounds[3] - self.bounds[2]) / self.ny

    @property
    def x_vertices(self):
        return np.linspace(self.bounds[0], self.bounds[1], self.nx + 1)

    @property
    def y_vertices(self):
        return np.linspace(self.bounds[2], self.bounds[3], self.ny + 1)

    @property
    def cell_area(self):
        return self.hx * self.hy

    def index(self, ix, iy):
        return iy * self.nx + ix

    def ij(self, j):
        self._check(j)
        return j % self.nx, j // self.nx

    def cell_box(self, j):
        """(x0, x1, y0, y1) of cell ``j``."""
        return self._boxes[j]

    @functools.cached_property
    def _boxes(self):
        xv, yv = self.x_vertices, self.y_vertices
        return tuple((float(xv[ix]), float(xv[ix + 1]), float(yv[iy]), float(yv[iy + 1]))
                     for iy in range(self.ny) for ix in range(self.nx))

    def locate(self, points):
        """Cell index of each point; points on the outer boundary are clamped inside."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        x0, x1, y0, y1 = self.bounds
        ix = np.floor((points[:, 0] - x0) / self.hx).astype(int)
        iy = np.floor((points[:, 1] - y0) / self.hy).astype(int)
        ix = np.clip(ix, 0, self.nx - 1)
        iy = np.clip(iy, 0, self.ny - 1)
        return iy * self.nx + ix

    def _check(self, j):
        if not (0 <= j < self.n_cells):
            raise IndexError(f"cell id {j} out of range [0, {self.n_cells})")


def build_grid(nx, ny, bounds=(0.0, 1.0, 0.0, 1.0)):
    """Build an ``nx`` x ``ny`` grid with row-major cell ids starting at (x_min, y_min).

    Vertical edges carry normal (1, 0), horizontal edges (0, 1); boundary
    edges carry the outward normal.
    """
    nx, ny = int(nx), int(ny)
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be >= 1")
    x_min, x_max, y_min, y_max = map(float, bounds)
    if not (x_min < x_max and y_min < y_max):
        raise ValueError(f"degenerate bounds {bounds}")
    xv = np.linspace(x_min, x_max, nx + 1)
    yv = np.linspace(y_min, y_max, ny + 1)

    edges = []
    cell_edges = [[] for _ in range(nx * ny)]

    def add(edge, *cells):
        k = len(edges)
        edges.append(edge)
        for c in cells:
            cell_edges[c].append(k)

    # vertical edges
    for iy in range(ny):
        for ix in range(nx + 1):
            p0, p1 = (xv[ix], yv[iy]), (xv[ix], yv[iy + 1])
            if ix == 0:
                c = iy * nx
                add(Edge(c, "left", (-1.0, 0.0), p0, p1), c)
            elif ix == nx:
                c = iy * nx + nx - 1
                add(Edge(c, "right", (1.0, 0.0), p0, p1), c)
            else:
                a, b = iy * nx + ix - 1, iy * nx + ix
                add(Edge(a, b, (1.0, 0.0), p0, p1), a, b)
    # horizontal edges
    for iy in range(ny + 1):
        for ix in range(nx):
            p0, p1 = (xv[ix], yv[iy]), (xv[ix + 1], yv[iy])
            if iy == 0:
                c = ix
                add(Edge(c, "bottom", (0.0, -1.0), p0, p1), c)
            elif iy == ny:
                c = (ny - 1) * nx + ix
                add(Edge(c, "top", (0.0, 1.0), p0, p1), c)
            else:
                a, b = (iy - 1) * nx + ix, iy * nx + ix
                add(Edge(a, b, (0.0, 1.0), p0, p1), a, b)

    return BackgroundGrid(nx, ny, (x_min, x_max, y_min, y_max), tuple(edges),
                          tuple(tuple(e) for e in cell_edges))


def neighbors(grid, j):
    """Edge-sharing neighbours of cell ``j`` (no diagonals)."""
    grid._check(j)
    out = []
    for k in grid.cell_edges[j]:
        e = grid.edges[k]
        if e.is_boundary:
            continue
        out.append(e.right if e.left == j else e.left)
    return sorted(out)
