from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gasket_bhi.geometry import (
    F_MINUS, F_PLUS, Cell, ExactPoint, GasketGraph, build_window, dilate, mirror_permutation,
    same_graph, vertex_measure_weights, vertices_in_cells, window_mass,
)


@pytest.mark.parametrize("k", range(0, 7))
def test_vertex_count(k):
    g = build_window(F_PLUS, k)
    assert g.n == (3 ** (k + 1) + 3) // 2
    assert len(g.cells) == 3 ** k


@pytest.mark.parametrize("k", [1, 3, 5])
def test_degrees(k):
    g = build_window(F_PLUS, k)
    assert sorted(np.unique(g.degree)) == [2, 4]
    assert g.rim.sum() == 3
    assert {g.point(i) for i in np.flatnonzero(g.rim)} == set(F_PLUS.vertices)


def test_union_window_shares_origin(both4):
    o = both4.locate(ExactPoint(0, 0))
    assert both4.degree[o] == 4
    assert both4.rim.sum() == 4


def test_measure_weights_sum_to_window_mass(g3):
    w = vertex_measure_weights(g3)
    assert sum(w) == window_mass(g3) == 1


def test_locate_roundtrip(g3):
    for i in range(g3.n):
        assert g3.locate(g3.point(i)) == i
    with pytest.raises(KeyError):
        g3.locate(ExactPoint(Fraction(1, 3), 0))


def test_save_load(tmp_path, g3):
    g3.save(tmp_path / "g.json")
    assert same_graph(GasketGraph.load(tmp_path / "g.json"), g3)


def test_cell_children_partition():
    c = Cell(ExactPoint(0, 0), 0)
    kids = c.children()
    assert all(k.level == 1 for k in kids)
    assert set().union(*(set(k.vertices) for k in kids)) >= set(c.vertices)
    for k in kids:
        assert all(c.contains(p) for p in k.vertices)


def test_dilation_maps_cells():
    c = Cell(ExactPoint(Fraction(1, 2), 0), 1)
    assert c.dilate(1) == Cell(ExactPoint(1, 0), 0)
    assert c.dilate(1).dilate(-1) == c


def test_mirror_permutation_is_involution(g3):
    p = mirror_permutation(g3)
    assert p is not None
    assert np.array_equal(p[p], np.arange(g3.n))
    assert np.array_equal(g3.degree[p], g3.degree)


def test_vertices_in_cells(g3):
    idx = vertices_in_cells(g3, [Cell(ExactPoint(0, 0), 1)])
    assert len(idx) == (3 ** 3 + 3) // 2


def test_dilate_graph(g3):
    h = dilate(g3, 1)
    assert h.n == g3.n
    assert h.point(0) == g3.point(0).dilate(1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 4), st.integers(0, 2 ** 4))
def test_points_are_in_gasket_or_not_located(x, y):
    g = build_window(F_MINUS, 3)
    p = ExactPoint(Fraction(x - 16, 16), Fraction(y, 16))
    try:
        i = g.locate(p)
    except KeyError:
        return
    assert g.point(i) == p
