import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gasket_bhi.geometry import F_PLUS, ExactPoint, build_window, dilate
from gasket_bhi.stable import (
    WALK_DIM, DomainSystem, StableParams, SubordinationWeights, binomial_weights_exact,
    build_fractional_operator, exact_weight, exit_time_solve, green_table, harmonic_measure_rows,
    harmonic_solve, lambda_from_terms, lambda_functional, lambda_terms, time_per_jump,
)


def _ball(g, c, r2):
    return np.array([i for i in g.interior if g.point(i).sqdist(c) < r2], dtype=np.int64)


def test_weights_exact_half():
    assert binomial_weights_exact(Fraction(1, 2), 4) == [Fraction(1, 2), Fraction(1, 8),
                                                         Fraction(1, 16), Fraction(5, 128)]


@pytest.mark.parametrize("beta", [0.2, 0.5, 0.9])
def test_weights_sum_and_tail(beta):
    w = SubordinationWeights.make(beta, 5000)
    assert np.all(w.c > 0)
    assert abs(w.c.sum() + w.tail - 1) < 1e-12
    assert abs(w.c[999] - exact_weight(beta, 1000)) < 1e-12 * w.c[999]


def test_params():
    p = StableParams(0.5)
    assert abs(p.beta - 0.5 / WALK_DIM) < 1e-15
    assert p.in_theorem_range and not StableParams(1.5).in_theorem_range
    with pytest.raises(ValueError):
        StableParams(2.5)
    assert time_per_jump(1.0, 0) == pytest.approx(1 / 6)


@pytest.mark.parametrize("boundary", ["absorbing", "reflecting"])
def test_operator_invariants(g5, boundary):
    op = build_fractional_operator(g5, 0.5 / WALK_DIM, boundary=boundary)
    L = op.matrix()
    m = op.measure
    S = m[:, None] * L
    assert np.abs(S - S.T).max() <= 1e-10 * np.abs(S).max()
    off = L - np.diag(np.diag(L))
    assert off.max() <= 1e-12
    if boundary == "reflecting":
        assert np.abs(op.row_sums()).max() <= 1e-10
    else:
        assert op.row_sums().min() > 0


def test_beta_one_is_walk_generator(g3):
    op = build_fractional_operator(g3, 1.0)
    L = op.matrix()
    assert np.all(np.diag(L) == 1.0)
    rows = op.states
    for r, i in enumerate(rows):
        for c, j in enumerate(rows):
            if i != j:
                want = -1.0 / g3.degree[i] if j in g3.neighbors[i] else 0.0
                assert L[r, c] == want


def test_series_matches_spectral(g3):
    beta = 0.6
    a = build_fractional_operator(g3, beta).matrix()
    b = build_fractional_operator(g3, beta, mode="series", M=20000).matrix()
    assert np.abs(a - b).max() < 2e-3


def test_fractional_power_composes(g3):
    half = build_fractional_operator(g3, 0.5).matrix()
    full = build_fractional_operator(g3, 1.0).matrix()
    assert np.abs(half @ half - full).max() < 1e-10


def test_harmonic_solution_is_harmonic(g5):
    op = build_fractional_operator(g5, 0.4)
    D = _ball(g5, ExactPoint(Fraction(1, 2), 0), Fraction(1, 16))
    data = np.zeros(g5.n)
    data[g5.coords[:, 0] < g5.coords[g5.locate(ExactPoint(Fraction(1, 4), 0)), 0]] = 1.0
    data[D] = 0.0
    sol = harmonic_solve(op, D, data)
    res = op.apply(np.nan_to_num(sol.values))[D]
    assert np.abs(res).max() < 1e-10
    h = sol.on_domain()
    assert h.min() >= 0 and h.max() <= 1
    assert np.all(sol.killed >= -1e-12)


def test_harmonic_measure_rows_sum(g5):
    op = build_fractional_operator(g5, 0.3)
    D = _ball(g5, ExactPoint(Fraction(1, 2), 0), Fraction(1, 16))
    rest = np.setdiff1d(op.states, D)
    H = harmonic_measure_rows(op, D, rest)
    killed = harmonic_solve(op, D, np.zeros(g5.n)).killed
    assert np.abs(H.sum(axis=1) + killed - 1).max() < 1e-10
    assert H.min() >= -1e-14


def test_green_symmetric_and_rows(g5):
    op = build_fractional_operator(g5, 0.5)
    D = _ball(g5, ExactPoint(Fraction(1, 2), 0), Fraction(1, 16))
    G = green_table(op, D)
    K = G.kernel
    assert np.abs(K - K.T).max() < 1e-10 * K.max()
    assert np.abs(G.exit_steps() - exit_time_solve(op, D)).max() < 1e-9


@pytest.mark.parametrize("j", [1, 2, 3])
def test_walk_exit_from_cell_pair(j):
    # two order-j cells at the midpoint of the bottom edge: 5^(k-j) base-walk steps
    k = 5
    g = build_window(F_PLUS, k)
    x0 = ExactPoint(Fraction(1, 2), 0)
    from gasket_bhi.harness import star_domain
    D = star_domain(g, x0, j)
    op = build_fractional_operator(g, 1.0)
    t = exit_time_solve(op, D)[np.searchsorted(D, g.locate(x0))]
    assert t == pytest.approx(5.0 ** (k - j), rel=1e-10)


def test_exit_time_monotone_in_domain(g5):
    op = build_fractional_operator(g5, 0.5)
    c = ExactPoint(Fraction(1, 2), 0)
    small, big = _ball(g5, c, Fraction(1, 64)), _ball(g5, c, Fraction(1, 16))
    ts = exit_time_solve(op, small)
    tb = exit_time_solve(op, big)[np.searchsorted(big, small)]
    assert np.all(tb > ts)


def test_domain_system_refinement(g3, rng):
    op = build_fractional_operator(g3, 0.7)
    D = g3.interior
    sysm = DomainSystem(op, D)
    b = rng.normal(size=len(D))
    x = sysm.solve(b)
    assert np.abs(op.block(D, D) @ x - b).max() < 1e-12
    assert sysm.condition >= 1


def test_lambda_dilation_exact():
    g = build_window(F_PLUS, 3)
    h = dilate(g, 1)
    v = ExactPoint(Fraction(1, 2), 0)
    f = np.array([Fraction(1)] * g.n, dtype=object)
    tg = lambda_terms(g, v, Fraction(1, 16), f)
    th = lambda_terms(h, v.dilate(1), Fraction(1, 4), f)
    assert {q * 4: s * 3 for q, s in tg.items()} == th
    for alpha in (0.3, 0.9):
        a = lambda_from_terms(tg, alpha)
        b = 2 ** alpha * lambda_from_terms(th, alpha)
        assert a == pytest.approx(b, rel=1e-12)
        assert a == pytest.approx(lambda_functional(g, v, Fraction(1, 16), np.ones(g.n), alpha), rel=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.05, 0.95))
def test_generator_positive_on_interior(beta):
    g = build_window(F_PLUS, 2)
    L = build_fractional_operator(g, beta).matrix()
    assert np.all(np.linalg.eigvalsh((L + L.T) / 2) > 0)
