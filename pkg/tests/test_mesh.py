import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xdgtrack.mesh import build_grid, neighbors


def test_single_cell_has_four_boundary_edges():
    g = build_grid(1, 1)
    assert g.n_cells == 1
    assert len(g.edges) == 4
    assert sorted(e.tag for e in g.edges) == ["bottom", "left", "right", "top"]


def test_edge_count_10x10():
    g = build_grid(10, 10)
    assert g.n_cells == 100
    assert len(g.edges) == 220


def test_wedge_grid_cell_size():
    g = build_grid(15, 10, (0.0, 1.5, 0.0, 1.0))
    assert g.hx == pytest.approx(0.1, abs=1e-15)
    assert g.hy == pytest.approx(0.1, abs=1e-15)


@pytest.mark.parametrize("bounds", [(0, 0, 0, 1), (1, 0, 0, 1), (0, 1, 1, 1)])
def test_degenerate_bounds_rejected(bounds):
    with pytest.raises(ValueError):
        build_grid(2, 2, bounds)


def test_zero_cells_rejected():
    with pytest.raises(ValueError):
        build_grid(0, 3)


def test_neighbor_counts():
    g = build_grid(10, 10)
    assert len(neighbors(g, 0)) == 2
    assert len(neighbors(g, g.index(4, 5))) == 4
    assert neighbors(build_grid(1, 1), 0) == []


def test_neighbors_invalid_id():
    with pytest.raises(IndexError):
        neighbors(build_grid(2, 2), 4)


def test_interior_normals_point_from_left_to_right_cell():
    g = build_grid(4, 3, (0.0, 2.0, -1.0, 1.0))
    for e in g.edges:
        if e.is_boundary:
            continue
        cl = np.mean(np.reshape(g.cell_box(e.left), (2, 2)), axis=1)
        cr = np.mean(np.reshape(g.cell_box(e.right), (2, 2)), axis=1)
        assert np.dot(cr - cl, e.normal) > 0


@settings(max_examples=30, deadline=None)
@given(nx=st.integers(1, 12), ny=st.integers(1, 12),
       x0=st.floats(-5, 5), y0=st.floats(-5, 5),
       w=st.floats(0.1, 10), h=st.floats(0.1, 10))
def test_grid_invariants(nx, ny, x0, y0, w, h):
    g = build_grid(nx, ny, (x0, x0 + w, y0, y0 + h))
    assert len(g.edges) == nx * (ny + 1) + ny * (nx + 1)
    area = sum((b[1] - b[0]) * (b[3] - b[2]) for b in map(g.cell_box, range(g.n_cells)))
    assert area == pytest.approx(w * h, rel=1e-12)
    # incidence is symmetric and every boundary edge carries exactly one tag
    for k, e in enumerate(g.edges):
        assert k in g.cell_edges[e.left]
        if e.is_boundary:
            assert e.tag in ("left", "right", "bottom", "top")
        else:
            assert e.tag is None
            assert k in g.cell_edges[e.right]
    for j in range(g.n_cells):
        nb = neighbors(g, j)
        assert len(nb) == len(set(nb))
        assert all(j in neighbors(g, n) for n in nb)
