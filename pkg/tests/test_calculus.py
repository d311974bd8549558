from fractions import Fraction

import numpy as np
import pytest

from gasket_bhi.calculus import (
    extend_midpoints, gauss_green_check, gauss_green_residual, graph_energy, harmonic_extension,
    laplacian_vector, normal_derivative,
)
from gasket_bhi.geometry import F_PLUS, build_window


def _harmonic(values, depth):
    g = build_window(F_PLUS, 0)
    f = np.array([Fraction(v) for v in values], dtype=object)
    for _ in range(depth):
        f, g = harmonic_extension(f, g)
    return f, g


def test_extend_midpoints_rule():
    assert extend_midpoints(Fraction(1), Fraction(0), Fraction(0)) == (Fraction(1, 5), Fraction(2, 5), Fraction(2, 5))


@pytest.mark.parametrize("depth", [1, 2, 4])
def test_harmonic_energy_invariant(depth):
    f, g = _harmonic([1, 0, 0], depth)
    assert graph_energy(f, g) == 2


def test_harmonic_laplacian_vanishes():
    f, g = _harmonic([1, 2, -3], 4)
    lap = laplacian_vector(np.asarray(f, float), g)
    assert np.nanmax(np.abs(lap)) < 1e-9


def test_normal_derivatives_of_harmonic_sum_to_zero():
    f, g = _harmonic([1, 2, -3], 4)
    total = sum(normal_derivative(f, v, F_PLUS, g).value for v in F_PLUS.vertices)
    assert total == 0
    d = normal_derivative(f, F_PLUS.vertices[0], F_PLUS, g)
    assert len({v for _, v in d.sequence}) == 1


def test_gauss_green_exact():
    f = lambda p: p.a * p.a + 3 * p.b * p.b
    g = lambda p: p.a + 2 * p.b
    assert all(r == 0 for _, r in gauss_green_check(f, g, F_PLUS, [2, 3, 4]))


def test_gauss_green_float(g3, rng):
    f = rng.normal(size=g3.n)
    h = rng.normal(size=g3.n)
    assert gauss_green_residual(f, h, F_PLUS, g3) < 1e-8 * max(1.0, graph_energy(f, g3))


def test_shape_mismatch(g3):
    with pytest.raises(ValueError):
        graph_energy(np.zeros(3), g3)
