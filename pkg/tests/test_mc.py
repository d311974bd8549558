import math
from fractions import Fraction

import numpy as np
import pytest

from gasket_bhi.geometry import ExactPoint
from gasket_bhi.mc import (
    FLAGGED, KILLED, SeedPlan, StepCountSampler, clopper_pearson, estimate_harmonic_measure,
    laplace_check, sample_positive_stable, simulate_stable_exit, simulate_walk_exit,
)
from gasket_bhi.stable import SubordinationWeights


def _ball(g, c, r2):
    return np.array([i for i in g.interior if g.point(i).sqdist(c) < r2], dtype=np.int64)


def test_seed_plan_streams():
    p = SeedPlan(5, 100)
    assert np.array_equal(p.seeds(0), SeedPlan(5, 100).seeds(0))
    assert not np.array_equal(p.seeds(0), p.seeds(1))


def test_sampler_table_and_tail():
    s = StepCountSampler(0.4, M=1024)
    w = SubordinationWeights.make(0.4, 1024)
    assert s.tail == pytest.approx(w.tail, rel=1e-12)
    m = s.sample(200_000, 3)
    assert m.min() >= 1
    assert np.mean(m == 1) == pytest.approx(0.4, abs=0.005)
    assert np.mean(m > 1024) == pytest.approx(w.tail, abs=0.003)


def test_sampler_deterministic():
    s = StepCountSampler(0.5)
    assert np.array_equal(s.sample(1000, 11), s.sample(1000, 11))


def test_walk_exit_deterministic_and_complete(g3):
    D = _ball(g3, ExactPoint(Fraction(1, 2), 0), Fraction(1, 16))
    x = g3.locate(ExactPoint(Fraction(1, 2), 0))
    a = simulate_walk_exit(g3, D, x, SeedPlan(1, 500))
    b = simulate_walk_exit(g3, D, x, SeedPlan(1, 500))
    assert np.array_equal(a.exit_vertex, b.exit_vertex) and np.array_equal(a.steps, b.steps)
    ok = a.exit_vertex >= 0
    assert not np.isin(a.exit_vertex[ok], D).any()
    assert not (a.exit_vertex == FLAGGED).any()


def test_stable_exit_lands_outside(g3):
    D = _ball(g3, ExactPoint(Fraction(1, 2), 0), Fraction(1, 16))
    x = g3.locate(ExactPoint(Fraction(1, 2), 0))
    r = simulate_stable_exit(g3, D, x, 0.3, SeedPlan(2, 2000))
    landed = r.exit_vertex[r.exit_vertex >= 0]
    assert not np.isin(landed, D).any()
    assert np.all((r.exit_vertex >= 0) | (r.exit_vertex == KILLED))
    assert r.jumps.min() >= 1


def test_clopper_pearson_covers():
    lo, hi = clopper_pearson(50, 100)
    assert lo < 0.5 < hi
    lo, hi = clopper_pearson(0, 100)
    assert lo == 0 and hi > 0


def test_estimate_rows(g3):
    D = _ball(g3, ExactPoint(Fraction(1, 2), 0), Fraction(1, 16))
    rest = np.setdiff1d(g3.interior, D)
    x = g3.locate(ExactPoint(Fraction(1, 2), 0))
    est = estimate_harmonic_measure(g3, D, {"rest": rest}, [x], 0.5, SeedPlan(1, 1000))
    assert est.counts.sum() == 1000 - est.flagged.sum()
    assert abs(est.freq.sum() - 1) < 1e-12
    rows = list(est.rows())
    assert len(rows) == len(est.labels)


def test_positive_stable_laplace():
    S = sample_positive_stable(0.5, 200_000, 4)
    for s, emp, exact, se in laplace_check(S, 0.5):
        assert abs(emp - exact) < 4 * se
        assert exact == pytest.approx(math.exp(-s ** 0.5))
