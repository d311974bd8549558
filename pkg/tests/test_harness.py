from fractions import Fraction

import numpy as np

from gasket_bhi.config import ExperimentConfig
from gasket_bhi.harness import (
    domain_vertices, make_geometry, prepare, random_shape, run_bhi, shrink_about, solve_instance,
)
from gasket_bhi.geometry import Cell, ExactPoint

SMALL = dict(level=5, level_fine=6, d_level=4, b_order=2, instances=4, alphas=(0.5,))


def test_random_shapes_deterministic():
    cfg = ExperimentConfig().with_(**SMALL)
    geo = make_geometry(cfg, cfg.level)
    a = [random_shape(cfg, geo.B, i).cells for i in range(3)]
    b = [random_shape(cfg, geo.B, i).cells for i in range(3)]
    assert a == b


def test_instance_ratio_at_least_one():
    cfg = ExperimentConfig().with_(**SMALL)
    geo = make_geometry(cfg, cfg.level)
    prep = prepare(geo, 0.5, cfg)
    for i in range(cfg.instances):
        out = solve_instance(prep, domain_vertices(geo, random_shape(cfg, geo.B, i)))
        assert not out.flags
        assert out.R >= 1 and np.isfinite(out.R)
        assert out.certificate < 1e-8


def test_shrink_about():
    x0 = ExactPoint(1, 0)
    c = Cell(ExactPoint(0, 0), 0)
    assert shrink_about(c, x0) == Cell(ExactPoint(Fraction(1, 2), 0), 1)


def test_run_bhi_small():
    cfg = ExperimentConfig().with_(**SMALL)
    rep = run_bhi(cfg)
    assert rep.passed, [c for c in rep.checks if not c.passed]
    assert len(rep.ratios) == 2 * cfg.instances
