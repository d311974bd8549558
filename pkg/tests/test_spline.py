from fractions import Fraction

import pytest

from gasket_bhi.spline import (
    descent_matrix, phi0_state, vertex_table, verify_spline_condition, write_states_csv,
)


def test_midpoint_values():
    t = vertex_table(1)
    mids = sorted(v for xy, v in t.items() if xy in {(1, 1), (2, 0), (3, 1)})
    assert mids == [Fraction(1, 25), Fraction(12, 25), Fraction(12, 25)]


def test_partition_of_unity_depth3():
    tabs = [vertex_table(3, top) for top in (1, 2, 3)]
    for xy in tabs[0]:
        assert sum(t[xy] for t in tabs) == 1


def test_home_state():
    s = phi0_state("")
    assert s.values == (1, 0, 0)
    assert s.derivatives == (0, 0, 0)


def test_child_state():
    s = phi0_state("1")
    assert s.values == (1, Fraction(12, 25), Fraction(12, 25))
    assert s.satisfies_condition()


@pytest.mark.parametrize("depth", [1, 3, 5])
def test_verify_no_violations(depth):
    rep = verify_spline_condition(depth)
    assert rep.ok
    assert rep.states_checked == (3 ** (depth + 1) - 1) // 2
    assert rep.min_value >= 0 and rep.max_value == 1


def test_descent_matrices_distinct():
    assert all(descent_matrix(j).shape == (6, 6) for j in (1, 2, 3))


def test_bad_path():
    with pytest.raises(ValueError):
        phi0_state("14")


def test_states_csv(tmp_path):
    n = write_states_csv(tmp_path / "s.csv", 2)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert n == 9
    assert len([l for l in lines if l and not l.startswith("#")]) == 10
