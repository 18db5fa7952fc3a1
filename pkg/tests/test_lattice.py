import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradlab.lattice import (Ball, DomainError, FieldConfig, LatticeDomain, TriadicCube, build_square,
                             domain_from_descriptor, edge_masks, edges, path_domain, triadic_partition)


def test_square_counts():
    d = build_square(3)
    assert d.shape == (7, 7)
    assert d.n_interior == 25
    assert len(d.boundary) == 24
    assert d.index((0, 0)) == (3, 3)


def test_degenerate_square_rejected():
    with pytest.raises(DomainError):
        LatticeDomain(0)


def test_ball_vertices_and_boundary():
    b = Ball((0, 0), 2)
    # |x|^2 < 4: the 3x3 block plus the four axis points at distance... none, (2,0) has |x|^2 = 4
    assert b.interior == {(x, y) for x in (-1, 0, 1) for y in (-1, 0, 1)}
    assert len(b.boundary) == 12


@given(st.integers(-5, 5), st.integers(-5, 5), st.floats(1.0, 6.0))
@settings(max_examples=30, deadline=None)
def test_ball_boundary_is_exit_set(cx, cy, R):
    b = Ball((cx, cy), R)
    inside = b.interior
    exits = {(x + dx, y + dy) for x, y in inside for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1))} - inside
    assert exits == b.boundary


def test_triadic_partition_tiles():
    cells = triadic_partition(2, 1)
    assert len(cells) == 9
    pts = set().union(*(c.vertices for c in cells))
    assert pts == TriadicCube(2).vertices


def test_triadic_partition_level_check():
    with pytest.raises(DomainError):
        triadic_partition(1, 2)


def test_edge_kinds_on_path():
    d = path_domain(3)
    ex, ey = edge_masks(d, "internal")
    assert ex.sum() + ey.sum() == 2
    ex, ey = edge_masks(d, "touching")
    # 3 vertices x 4 edges, minus double-counted internal edges
    assert ex.sum() + ey.sum() == 10
    assert len(edges(d, "touching")) == 10


def test_field_zero_extension():
    d = build_square(2)
    v = np.zeros(d.shape)
    v[d.index((1, 1))] = 3.0
    f = FieldConfig(d, v)
    assert f.at(np.array([1, 10]), np.array([1, 10])).tolist() == [3.0, 0.0]


def test_descriptor_roundtrip():
    for d in (build_square(4), Ball((1, 2), 3.5), path_domain(2)):
        assert domain_from_descriptor(d.descriptor()) == d
