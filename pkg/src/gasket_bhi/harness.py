"""Experiment batteries: boundary Harnack ratios, lemma constants, scaling fits.

Geometry of a battery
    B   the two ``m``-cells of the window meeting at ``x0`` (``m = b_order``)
    B'  the two ``(m+1)``-cells meeting at ``x0``
    E1, E2  target cells far from ``x0``; f and g are the harmonic measures of
        E1 and E2 from a random open set D inside B

Random sets D are unions of cells of order ``d_level`` inside B (or the
variants in :func:`random_shape`).  A corner of a chosen cell belongs to D
only when it is shared by two chosen cells, so D is open in F.

All quantities for a fixed (level, alpha) are sliced from one dense block of
the generator on a region around B, so each instance costs one Cholesky
factorisation of ``L_DD``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .geometry import (
    F_MINUS,
    F_PLUS,
    Cell,
    ExactPoint,
    GasketGraph,
    build_window,
    dilate,
    sqdist_to,
    vertices_in_cells,
)
from .mc import FLAGGED, KILLED, SeedPlan, estimate_harmonic_measure, simulate_walk_exit
from .stable import (
    WALK_DIM,
    DomainSystem,
    StableParams,
    build_fractional_operator,
    exit_time_solve,
    harmonic_measure_rows,
    lambda_from_terms,
    lambda_terms,
    time_per_jump,
)

REPORT_SCHEMA = "gasket-bhi-report/1"


# ------------------------------------------------------------ reports

@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""


@dataclass
class ExperimentReport:
    kind: str
    config: ExperimentConfig | None
    summary: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    ratios: list = field(default_factory=list)      # dict rows
    constants: list = field(default_factory=list)   # dict rows
    diagnostics: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name, value, tolerance, passed, detail=""):
        self.checks.append(Check(name, float(value), float(tolerance), bool(passed), detail))

    def as_dict(self) -> dict:
        cfg = self.config
        return {
            "schema": REPORT_SCHEMA,
            "tool_version": __version__,
            "kind": self.kind,
            "config_hash": cfg.digest() if cfg else None,
            "config": cfg.text() if cfg else None,
            "seed_plan": {"master": cfg.seed, "instances": cfg.instances} if cfg else None,
            "passed": self.passed,
            "checks": [c.__dict__ for c in self.checks],
            "summary": self.summary,
            "diagnostics": self.diagnostics,
        }


# ------------------------------------------------------------ geometry helpers

def cells_at_vertex(x0: ExactPoint, order: int, window) -> list[Cell]:
    """The cells of the given order inside the window having ``x0`` as a vertex."""
    h = Fraction(2) ** (-order)
    cands = [x0, ExactPoint(x0.a - h, x0.b), ExactPoint(x0.a - h / 2, x0.b - h / 2)]
    out = []
    for c in cands:
        cell = Cell(c, order)
        if cell.is_gasket_cell() and any(_inside(cell, w) for w in window):
            out.append(cell)
    return sorted(out)


def _inside(cell: Cell, outer: Cell) -> bool:
    return cell.level >= outer.level and all(outer.contains(v) for v in cell.vertices)


def descendants(cell: Cell, order: int) -> list[Cell]:
    cells = [cell]
    for _ in range(order - cell.level):
        cells = [ch for c in cells for ch in c.children()]
    return sorted(cells)


def shrink_about(cell: Cell, x0: ExactPoint, n: int = 1) -> Cell:
    """Image of a cell under y -> x0 + 2**-n (y - x0)."""
    f = Fraction(1, 2 ** n)
    c = cell.corner
    return Cell(ExactPoint(x0.a + (c.a - x0.a) * f, x0.b + (c.b - x0.b) * f), cell.level + n)


def shrink_point(p: ExactPoint, x0: ExactPoint, n: int = 1) -> ExactPoint:
    f = Fraction(1, 2 ** n)
    return ExactPoint(x0.a + (p.a - x0.a) * f, x0.b + (p.b - x0.b) * f)


@dataclass(frozen=True)
class Shape:
    """An open set in base-scale coordinates: interior of a cell union plus points."""

    cells: tuple[Cell, ...]
    points: tuple[ExactPoint, ...] = ()

    def shrink(self, x0: ExactPoint, n: int) -> "Shape":
        if n == 0:
            return self
        return Shape(tuple(sorted(shrink_about(c, x0, n) for c in self.cells)),
                     tuple(shrink_point(p, x0, n) for p in self.points))

    def vertices(self, graph: GasketGraph) -> np.ndarray:
        idx = set()
        corner_count: dict[ExactPoint, int] = {}
        for c in self.cells:
            idx.update(graph.cell_vertex_indices(c).tolist())
            for v in c.vertices:
                corner_count[v] = corner_count.get(v, 0) + 1
        for v, k in corner_count.items():
            if k == 1:
                idx.discard(graph.locate(v))
        for p in self.points:
            idx.add(graph.locate(p))
        return np.array(sorted(idx), dtype=np.int64)


def random_shape(cfg: ExperimentConfig, B: list[Cell], instance: int) -> Shape:
    """Random open subset of B; it always meets the inner ball B(x0, p1 r)."""
    rng = np.random.default_rng([cfg.seed, instance])
    r2 = cfg.p1_sq * Fraction(1, 4 ** B[0].level)
    x0 = cfg.x0
    if cfg.d_family == "vertices":
        pts = sorted({v for b in B for c in descendants(b, cfg.d_level) for v in c.vertices}
                     - {v for b in B for v in b.vertices if v != x0})
        keep = rng.random(len(pts)) < cfg.density
        near = [i for i, p in enumerate(pts) if p.sqdist(x0) < r2]
        if not keep[near].any():
            keep[near[rng.integers(len(near))]] = True
        return Shape((), tuple(p for p, k in zip(pts, keep) if k))
    cand = [c for b in B for c in descendants(b, cfg.d_level)]
    if cfg.d_family == "cells":
        keep = rng.random(len(cand)) < cfg.density
    else:
        # slit: everything in B except the sub-cell addressed by slit_path
        cut = B[0]
        for ch in cfg.slit_path:
            cut = cut.children()[int(ch) - 1]
        keep = np.array([not _inside(c, cut) for c in cand])
    meets = [i for i, c in enumerate(cand) if any(v.sqdist(x0) < r2 for v in c.vertices)]
    if not keep[meets].any():
        anchor = [i for i in meets if x0 in cand[i].vertices]
        keep[anchor[rng.integers(len(anchor))]] = True
    return Shape(tuple(c for c, k in zip(cand, keep) if k))


@dataclass
class Geometry:
    """Exact sets of one battery at scale ``m`` and graph level ``k``."""

    cfg: ExperimentConfig
    graph: GasketGraph
    m: int
    B: list
    Bp: list
    E1: np.ndarray
    E2: np.ndarray
    d2: list          # exact squared distances to x0
    region: np.ndarray

    @property
    def radius_unit_sq(self) -> Fraction:
        return Fraction(1, 4 ** self.m)

    _memo: dict = field(default_factory=dict, repr=False)

    def ball(self, p_sq) -> np.ndarray:
        key = ("ball", Fraction(p_sq))
        if key not in self._memo:
            r2 = key[1] * self.radius_unit_sq
            self._memo[key] = np.array([i for i, q in enumerate(self.d2) if q < r2], dtype=np.int64)
        return self._memo[key]

    def in_bprime(self) -> np.ndarray:
        if "bprime" not in self._memo:
            self._memo["bprime"] = vertices_in_cells(self.graph, self.Bp)
        return self._memo["bprime"]


_GRAPHS: dict = {}


def _graph(window, level) -> GasketGraph:
    key = (window, level)
    if key not in _GRAPHS:
        if len(_GRAPHS) > 4:
            _GRAPHS.pop(next(iter(_GRAPHS)))
        _GRAPHS[key] = build_window(window, level)
    return _GRAPHS[key]


def make_geometry(cfg: ExperimentConfig, level: int, m: int | None = None) -> Geometry:
    m = cfg.b_order if m is None else m
    window = cfg.window_cells()
    g = _graph(window, level)
    B = cells_at_vertex(cfg.x0, m, window)
    Bp = cells_at_vertex(cfg.x0, m + 1, window)
    if len(B) != 2 or len(Bp) != 2:
        raise ValueError(f"x0={cfg.x0} is not the common vertex of two cells of order {m} in the window")
    rim = g.rim
    E = []
    for corner in (cfg.target1, cfg.target2):
        cell = Cell(corner, cfg.target_order)
        if not cell.is_gasket_cell() or not any(_inside(cell, w) for w in window):
            raise ValueError(f"target cell {cell} is not a cell of the window")
        idx = vertices_in_cells(g, [cell])
        E.append(idx[~rim[idx]])
    d2 = sqdist_to(cfg.x0, g)
    inB = vertices_in_cells(g, B)
    if np.intersect1d(inB, np.concatenate(E)).size or np.intersect1d(E[0], E[1]).size:
        raise ValueError("targets must be disjoint from B and from each other")
    geo = Geometry(cfg, g, m, B, Bp, E[0], E[1], d2, np.zeros(0, dtype=np.int64))
    reach = max([cfg.p2_sq, cfg.p5_sq, *cfg.p3_sq])
    region = np.union1d(inB, geo.ball(reach))
    geo.region = region[~rim[region]]
    return geo


# ------------------------------------------------------------ per-(level, alpha) data

@dataclass
class Prepared:
    geo: Geometry
    alpha: float
    beta: float
    A: np.ndarray          # generator block on the region
    measure: np.ndarray
    lE1: np.ndarray        # (L 1_E1) on the region
    lE2: np.ndarray
    lball: np.ndarray      # (L 1_{B(x0, p2 r)}) on the region
    f_ext: np.ndarray      # exterior data for f on graph vertices
    g_ext: np.ndarray
    tpj: float

    def pos(self, D) -> np.ndarray:
        p = np.searchsorted(self.geo.region, D)
        if (p >= len(self.geo.region)).any() or (self.geo.region[np.minimum(p, len(self.geo.region) - 1)] != D).any():
            raise ValueError("D leaves the prepared region")
        return p

    def system(self, D) -> DomainSystem:
        p = self.pos(D)
        return DomainSystem.from_matrix(D, self.A[np.ix_(p, p)], self.measure[p])


def prepare(geo: Geometry, alpha: float, cfg: ExperimentConfig) -> Prepared:
    beta = alpha / WALK_DIM
    op = build_fractional_operator(geo.graph, beta, mode=cfg.mode, boundary=cfg.boundary,
                                   **({"M": cfg.series_terms} if cfg.mode == "series" else {}))
    R = geo.region
    n = geo.graph.n

    def lind(idx):
        v = np.zeros(n)
        v[idx] = 1.0
        return op.apply(v)[R]

    ball = geo.ball(cfg.p2_sq)
    ball = ball[~geo.graph.rim[ball]]
    f_ext = np.zeros(n)
    f_ext[geo.E1] = 1.0
    g_ext = np.zeros(n)
    g_ext[geo.E2] = 1.0
    return Prepared(geo, alpha, beta, op.block(R, R), op.measure[op._positions(R)],
                    lind(geo.E1), lind(geo.E2), lind(ball), f_ext, g_ext,
                    time_per_jump(beta, geo.graph.level))


# ------------------------------------------------------------ one instance

@dataclass
class InstanceOutcome:
    D: np.ndarray
    f: np.ndarray            # on graph vertices (exterior data off D)
    g: np.ndarray
    R: float
    R_swapped: float
    n_eval: int
    condition: float
    certificate: float
    flags: list


def _ratio_spread(f, g) -> float:
    q = f / g
    return float(q.max() / q.min())


def solve_instance(prep: Prepared, D: np.ndarray) -> InstanceOutcome:
    flags = []
    sysm = prep.system(D)
    p = prep.pos(D)
    hf = sysm.solve(-prep.lE1[p])
    hg = sysm.solve(-prep.lE2[p])
    cert = max(float(np.abs(sysm.A @ hf + prep.lE1[p]).max()),
               float(np.abs(sysm.A @ hg + prep.lE2[p]).max()))
    f = prep.f_ext.copy()
    f[D] = hf
    g = prep.g_ext.copy()
    g[D] = hg
    ev = np.intersect1d(D, prep.geo.in_bprime())
    R = Rs = math.nan
    if len(ev) == 0:
        flags.append("empty_eval_set")
    elif (f[ev] <= 0).any() or (g[ev] <= 0).any():
        flags.append("vanishing_solution")
    else:
        R = _ratio_spread(f[ev], g[ev])
        Rs = _ratio_spread(g[ev], f[ev])
    return InstanceOutcome(D, f, g, R, Rs, len(ev), sysm.condition, cert, flags)


def domain_vertices(geo: Geometry, shape: Shape) -> np.ndarray:
    D = shape.vertices(geo.graph)
    bad = geo.graph.rim[D] | np.isin(D, geo.E1) | np.isin(D, geo.E2)
    return D[~bad]


# ------------------------------------------------------------ batteries

def _quantiles(vals) -> dict:
    v = np.asarray(vals, dtype=float)
    if len(v) == 0:
        return {}
    q = np.quantile(v, [0.5, 0.9, 0.99])
    return {"max": float(v.max()), "median": float(q[0]), "q90": float(q[1]), "q99": float(q[2]),
            "min": float(v.min())}


def run_bhi(cfg: ExperimentConfig, levels=None, progress=None) -> ExperimentReport:
    """Ratio statistic R(D) for every alpha and instance at ``level`` and ``level_fine``."""
    levels = levels or sorted({cfg.level, cfg.level_fine})
    rep = ExperimentReport("bhi", cfg)
    shapes = None
    for level in levels:
        geo = make_geometry(cfg, level)
        if shapes is None:
            shapes = [random_shape(cfg, geo.B, i) for i in range(cfg.instances)]
        for alpha in cfg.alphas:
            prep = prepare(geo, alpha, cfg)
            Rs, excluded = [], 0
            conds, certs = [], []
            for i, shape in enumerate(shapes):
                out = solve_instance(prep, domain_vertices(geo, shape))
                flags = list(out.flags)
                if not StableParams(alpha).in_theorem_range:
                    flags.append("outside_theorem_range")
                ok = not out.flags
                if ok:
                    Rs.append(out.R)
                    if abs(out.R - out.R_swapped) > 1e-12 * out.R or out.R < 1:
                        flags.append("symmetry_violation")
                else:
                    excluded += 1
                conds.append(out.condition)
                certs.append(out.certificate)
                rep.ratios.append({"alpha": alpha, "instance_id": i, "level": level,
                                   "R": out.R if ok else None, "n_D": len(out.D),
                                   "n_eval": out.n_eval, "flags": ";".join(flags)})
                if progress:
                    progress(f"bhi level={level} alpha={alpha} instance={i}")
            key = f"alpha={alpha}/level={level}"
            rate = excluded / cfg.instances
            rep.summary[key] = {"R": _quantiles(Rs), "excluded": excluded, "excluded_rate": rate,
                                "max_condition": float(max(conds)), "max_certificate": float(max(certs))}
            finite = bool(Rs) and all(math.isfinite(r) for r in Rs)
            rep.check(f"R finite and >= 1 [{key}]", min(Rs) if Rs else math.nan, 1.0,
                      finite and min(Rs) >= 1.0)
            rep.check(f"excluded rate [{key}]", rate, cfg.max_excluded, rate < cfg.max_excluded)
            rep.check(f"harmonicity certificate [{key}]", max(certs), 1e-8, max(certs) <= 1e-8)
            bad = sum("symmetry_violation" in r["flags"] for r in rep.ratios
                      if r["alpha"] == alpha and r["level"] == level)
            rep.check(f"R symmetric in f and g [{key}]", bad, 0, bad == 0)
    if len(levels) >= 2:
        lo, hi = levels[0], levels[-1]
        for alpha in cfg.alphas:
            a = rep.summary[f"alpha={alpha}/level={lo}"]["R"].get("max", math.nan)
            b = rep.summary[f"alpha={alpha}/level={hi}"]["R"].get("max", math.nan)
            rel = abs(a - b) / b
            rep.check(f"max R stable between levels {lo} and {hi} [alpha={alpha}]", rel, cfg.tol_level,
                      rel <= cfg.tol_level, f"max R: {a:.6g} vs {b:.6g}")
    return rep


@dataclass
class LemmaConstants:
    c4: float                 # escape, max over the inner ball
    c7: dict                  # upper, p3_sq -> max
    c8: float                 # factorisation, max over f and g
    c8p: float                # factorisation, min over f and g
    R_ball: float             # ratio spread on the factorisation evaluation set
    flags: list


def lemma_constants(prep: Prepared, D: np.ndarray, cfg: ExperimentConfig) -> LemmaConstants:
    geo = prep.geo
    alpha, m = prep.alpha, geo.m
    flags = []
    out = solve_instance(prep, D)
    f, g = out.f, out.g
    sysm = prep.system(D)
    p = prep.pos(D)

    # escape
    if not np.isin(D, geo.ball(cfg.p2_sq)).all():
        raise ValueError("D must lie inside B(x0, p2 r)")
    inner = np.isin(D, geo.ball(cfg.p1_sq))
    c4 = math.nan
    if inner.any():
        stay = sysm.solve(-(prep.lball[p] - sysm.A.sum(axis=1)))
        steps = sysm.solve(np.ones(len(D)))
        etau = steps * prep.tpj
        c4 = float(((1 - stay[inner]) / (2 ** (alpha * m) * etau[inner])).max())
    else:
        flags.append("escape:empty_inner_ball")

    # upper bound sweep
    terms = {}
    c7 = {}
    for p3 in cfg.p3_sq:
        r2 = p3 * geo.radius_unit_sq
        pts = np.isin(D, geo.ball(p3))
        lam = _lambda(geo, r2, f, alpha)
        if not pts.any() or lam <= 0:
            flags.append(f"upper:{p3}:degenerate")
            c7[p3] = math.nan
            continue
        c7[p3] = float(f[D[pts]].max() * 2 ** (alpha * m) / lam)

    # factorisation on D' = D n B(x0, p5 r)
    Dp_mask = np.isin(D, geo.ball(cfg.p5_sq))
    Dp = D[Dp_mask]
    c8 = c8p = Rb = math.nan
    ev = np.isin(Dp, geo.ball(cfg.p1_sq))
    if ev.any():
        sp = DomainSystem.from_matrix(Dp, sysm.A[np.ix_(Dp_mask, Dp_mask)], prep.measure[p][Dp_mask])
        etau = sp.solve(np.ones(len(Dp)))[ev] * prep.tpj
        r1 = cfg.p1_sq * geo.radius_unit_sq
        lf, lg = _lambda(geo, r1, f, alpha), _lambda(geo, r1, g, alpha)
        if lf > 0 and lg > 0 and (f[Dp[ev]] > 0).all() and (g[Dp[ev]] > 0).all():
            rf = f[Dp[ev]] / (lf * etau)
            rg = g[Dp[ev]] / (lg * etau)
            c8 = float(max(rf.max(), rg.max()))
            c8p = float(min(rf.min(), rg.min()))
            Rb = _ratio_spread(f[Dp[ev]], g[Dp[ev]])
        else:
            flags.append("factorization:degenerate")
    else:
        flags.append("factorization:empty_eval_set")
    return LemmaConstants(c4, c7, c8, c8p, Rb, flags + out.flags)


def _lambda(geo: Geometry, r2, f, alpha) -> float:
    # only vertices with f != 0 contribute
    nz = np.flatnonzero(np.nan_to_num(f) != 0)
    w = geo.graph.weights_float
    total = 0.0
    expo = -(math.log(3) / math.log(2) + alpha) / 2
    for i in nz:
        q = geo.d2[i]
        if q >= r2:
            total += float(q) ** expo * f[i] * w[i]
    return total


def run_lemma_battery(cfg: ExperimentConfig, progress=None) -> ExperimentReport:
    """Escape, upper and factorisation constants at scale m and at the dilated scale m+1."""
    rep = ExperimentReport("lemmas", cfg)
    base = make_geometry(cfg, cfg.level)
    shapes = [random_shape(cfg, base.B, i) for i in range(cfg.instances)]
    scales = [(cfg.b_order, cfg.level), (cfg.b_order + 1, cfg.level + 1)]
    agg = {}
    for m, level in scales:
        geo = make_geometry(cfg, level, m)
        for alpha in cfg.alphas:
            prep = prepare(geo, alpha, cfg)
            vals = {"c4": [], "c8": [], "c8p": [], **{f"c7@{p}": [] for p in cfg.p3_sq}}
            excluded = 0
            chain_fail = 0
            for i, shape in enumerate(shapes):
                D = domain_vertices(geo, shape.shrink(cfg.x0, m - cfg.b_order))
                lc = lemma_constants(prep, D, cfg)
                flagged = bool(lc.flags)
                excluded += flagged
                tag = f"m={m};level={level}"
                if not flagged:
                    bound = (lc.c8 / lc.c8p) ** 2
                    holds = lc.R_ball <= bound * (1 + 1e-9)
                    chain_fail += not holds
                    vals["c4"].append(lc.c4)
                    vals["c8"].append(lc.c8)
                    vals["c8p"].append(lc.c8p)
                    for p3, v in lc.c7.items():
                        vals[f"c7@{p3}"].append(v)
                rows = [("escape", lc.c4, lc.c4), ("factorization", lc.c8p, lc.c8)]
                rows += [(f"upper(p3^2={p3})", v, v) for p3, v in lc.c7.items()]
                for name, lo, hi in rows:
                    rep.constants.append({"lemma": name, "alpha": alpha, "scale": tag, "instance_id": i,
                                          "c_hat_low": None if flagged else lo,
                                          "c_hat_high": None if flagged else hi,
                                          "flags": ";".join(lc.flags)})
                if progress:
                    progress(f"lemmas m={m} alpha={alpha} instance={i}")
            key = f"alpha={alpha}/m={m}"
            agg[(alpha, m)] = {
                "c4": max(vals["c4"]), "c8": max(vals["c8"]), "c8p": min(vals["c8p"]),
                **{f"c7@{p}": max(vals[f"c7@{p}"]) for p in cfg.p3_sq},
            } if vals["c4"] else {}
            rate = excluded / cfg.instances
            rep.summary[key] = {"aggregate": {k: float(v) for k, v in agg[(alpha, m)].items()},
                                "excluded_rate": rate, "chain_failures": chain_fail,
                                "upper_sweep": [[str(p), float(max(vals[f"c7@{p}"]))] for p in cfg.p3_sq]
                                if vals["c4"] else []}
            rep.check(f"R <= (c8/c8')^2 per instance [{key}]", chain_fail, 0, chain_fail == 0)
            allv = [v for vs in vals.values() for v in vs]
            ok = bool(allv) and all(math.isfinite(v) and v > 0 for v in allv)
            rep.check(f"constants positive and finite [{key}]", min(allv) if allv else math.nan, 0.0, ok)
            rep.check(f"excluded rate [{key}]", rate, cfg.max_excluded, rate < cfg.max_excluded)
    (m0, _), (m1, _) = scales
    for alpha in cfg.alphas:
        a, b = agg.get((alpha, m0), {}), agg.get((alpha, m1), {})
        for name in a:
            rel = abs(a[name] - b[name]) / a[name]
            rep.check(f"{name} stable under dilation [alpha={alpha}]", rel, cfg.tol_scale,
                      rel <= cfg.tol_scale, f"{a[name]:.6g} at m={m0} vs {b[name]:.6g} at m={m1}")
    return rep


# ------------------------------------------------------------ scaling suite

def _slope(x, y) -> float:
    return float(np.polyfit(np.asarray(x, float), np.asarray(y, float), 1)[0])


def exit_exponent_fit(cfg: ExperimentConfig, alpha: float) -> tuple[float, list]:
    """Slope of log2 E-steps(center) against log2 r over the configured balls."""
    g = _graph(cfg.scaling_cells(), cfg.scaling_level)
    op = build_fractional_operator(g, alpha / WALK_DIM, boundary=cfg.boundary)
    c = g.locate(cfg.scaling_center)
    d2 = sqdist_to(cfg.scaling_center, g)
    rows = []
    for r2 in cfg.scaling_radii_sq:
        D = np.array([i for i in op.states if d2[i] < r2], dtype=np.int64)
        t = exit_time_solve(op, D)[np.searchsorted(D, c)]
        rows.append((0.5 * math.log2(r2), float(t)))
    return _slope([r[0] for r in rows], [math.log2(r[1]) for r in rows]), rows


def star_domain(g: GasketGraph, v: ExactPoint, order: int) -> np.ndarray:
    """Vertices of the two order-j cells at v, without their outer corners."""
    cells = cells_at_vertex(v, order, g.window)
    idx = vertices_in_cells(g, cells)
    outer = [g.locate(p) for c in cells for p in c.vertices if p != v]
    return np.setdiff1d(idx, outer)


def walk_dimension_fit(cfg: ExperimentConfig, x0: ExactPoint | None = None):
    """Base-walk exit steps from stars of decreasing order: MC mean and exact solve."""
    x0 = x0 or cfg.x0
    g = _graph(cfg.window_cells(), cfg.walk_level)
    op = build_fractional_operator(g, 1.0)
    c = g.locate(x0)
    rows = []
    for j in cfg.walk_orders:
        D = star_domain(g, x0, j)
        exact = float(exit_time_solve(op, D)[np.searchsorted(D, c)])
        batch = simulate_walk_exit(g, D, c, SeedPlan(cfg.seed, cfg.walk_paths), stream=j)
        # landing on the killing rim is an exit as well
        ok = batch.exit_vertex != FLAGGED
        rows.append({"order": j, "log2_r": -j, "mc_mean": float(batch.steps[ok].mean()),
                     "mc_se": float(batch.steps[ok].std(ddof=1) / math.sqrt(ok.sum())),
                     "exact": exact, "killed": int((batch.exit_vertex == KILLED).sum())})
    slope_mc = _slope([r["log2_r"] for r in rows], [math.log2(r["mc_mean"]) for r in rows])
    slope_exact = _slope([r["log2_r"] for r in rows], [math.log2(r["exact"]) for r in rows])
    return slope_mc, slope_exact, rows


def lambda_dilation_identity(cfg: ExperimentConfig, n: int = 1, level: int = 4):
    """Exact check of Lambda_{v,r}(f) = 2^(alpha n) Lambda_{2^n v, 2^n r}(f_n).

    Returns (exact_match, relative float discrepancy per alpha).
    """
    window = cfg.window_cells()
    g = build_window(window, level)
    h = dilate(g, -n) if n < 0 else dilate(g, n)
    v = cfg.x0
    r2 = cfg.p1_sq * Fraction(1, 4 ** cfg.b_order)
    f = np.array([g.point(i).sqdist(v) + 1 for i in range(g.n)], dtype=object)
    t_g = lambda_terms(g, v, r2, f)
    t_h = lambda_terms(h, v.dilate(n), r2 * 4 ** n, f)  # f_n(y) = f(2^-n y): same vertex order
    scaled = {q * 4 ** n: s * 3 ** n for q, s in t_g.items()}
    exact = scaled == t_h
    rel = {}
    for alpha in cfg.alphas:
        a = lambda_from_terms(t_g, alpha)
        b = 2 ** (alpha * n) * lambda_from_terms(t_h, alpha)
        rel[alpha] = abs(a - b) / abs(a)
    return exact, rel


def run_scaling_suite(cfg: ExperimentConfig) -> ExperimentReport:
    rep = ExperimentReport("scaling", cfg)
    for alpha in cfg.alphas:
        s, rows = exit_exponent_fit(cfg, alpha)
        rep.summary[f"exit_exponent/alpha={alpha}"] = {"slope": s, "points": rows}
        rep.check(f"exit-time exponent [alpha={alpha}]", abs(s - alpha), cfg.tol_exponent,
                  abs(s - alpha) <= cfg.tol_exponent, f"slope {s:.6f}")
    exact, rel = lambda_dilation_identity(cfg)
    rep.summary["lambda_dilation"] = {"exact": exact, "float_rel": {str(k): v for k, v in rel.items()}}
    rep.check("Lambda dilation identity (exact terms)", 0.0 if exact else 1.0, 0.0, exact)
    s_mc, s_ex, rows = walk_dimension_fit(cfg)
    rep.summary["walk_dimension"] = {"slope_mc": s_mc, "slope_exact": s_ex, "target": WALK_DIM,
                                     "points": rows}
    rep.check("walk dimension (Monte Carlo)", abs(s_mc - WALK_DIM), cfg.tol_exponent,
              abs(s_mc - WALK_DIM) <= cfg.tol_exponent, f"slope {s_mc:.6f}")
    return rep


# ------------------------------------------------------------ oracle battery

def oracle_instance(level: int = 4):
    """Level-k instance on F+ u F-: D is the ball of radius 1/2 at the origin."""
    g = _graph((F_PLUS, F_MINUS), level)
    O = ExactPoint(0, 0)
    d2 = sqdist_to(O, g)
    D = np.array([i for i in g.interior if d2[i] < Fraction(1, 4)], dtype=np.int64)
    rest = np.setdiff1d(g.interior, D)
    left = rest[g.coords[rest, 0] < g.coords[g.locate(O), 0]]
    right = rest[g.coords[rest, 0] > g.coords[g.locate(O), 0]]
    return g, D, {"E_left": left, "E_right": right}


def run_mc_validation(alphas=(0.3, 0.5, 0.7, 0.9), level: int = 4, n_paths: int = 100_000,
                      seed: int = 1, start: ExactPoint = ExactPoint(Fraction(1, 8), 0),
                      n_sigma: float = 3.0) -> ExperimentReport:
    """Monte Carlo exit laws and jump counts against the spectral solver."""
    rep = ExperimentReport("mc-validate", None)
    g, D, targets = oracle_instance(level)
    x = g.locate(start)
    plan = SeedPlan(seed, n_paths)
    for alpha in alphas:
        beta = alpha / WALK_DIM
        op = build_fractional_operator(g, beta)
        cols = np.concatenate(list(targets.values()))
        H = harmonic_measure_rows(op, D, cols)[np.searchsorted(D, x)]
        p, k = [], 0
        for idx in targets.values():
            p.append(H[k:k + len(idx)].sum())
            k += len(idx)
        p.append(1 - sum(p))
        steps = exit_time_solve(op, D)[np.searchsorted(D, x)]
        est = estimate_harmonic_measure(g, D, targets, [x], beta, plan)
        freq = est.freq[0]
        n_ok = n_paths - est.flagged[0]
        for lab, pe, fe in zip(est.labels, p, freq):
            sd = math.sqrt(pe * (1 - pe) / n_ok)
            z = abs(fe - pe) / sd if sd > 0 else (0.0 if fe == pe else math.inf)
            rep.check(f"exit law {lab} [alpha={alpha}]", z, n_sigma, z <= n_sigma,
                      f"mc {fe:.6f} solver {pe:.6f}")
        se = est.sd_jumps[0] / math.sqrt(n_ok)
        z = abs(est.mean_jumps[0] - steps) / se
        rep.check(f"mean jump count [alpha={alpha}]", z, n_sigma, z <= n_sigma,
                  f"mc {est.mean_jumps[0]:.6f} solver {steps:.6f}")
        rep.summary[f"alpha={alpha}"] = {"solver": [float(v) for v in p], "mc": [float(v) for v in freq],
                                         "mean_jumps": float(est.mean_jumps[0]), "exit_steps": float(steps),
                                         "flagged": int(est.flagged[0])}
        for row in est.rows():
            rep.ratios.append(dict(zip(("start", "target", "count", "N", "ci_lo", "ci_hi"), row),
                                   alpha=alpha))
    rep.diagnostics["seed_plan"] = plan.as_dict()
    return rep


# ------------------------------------------------------------ subordinator law

def run_subordinator_law(beta: float = 0.5, n_samples: int = 1_000_000, seed: int = 1,
                         m_check: int = 10_000, n_sigma: float = 3.0) -> ExperimentReport:
    """Laplace transform and tail of the stable sampler; asymptotics of c_m."""
    from scipy import stats as st

    from .mc import StepCountSampler, laplace_check, sample_positive_stable, tail_constant
    from .stable import exact_weight

    rep = ExperimentReport("subordinator", None)
    S = sample_positive_stable(beta, n_samples, seed)
    for s, emp, exact, se in laplace_check(S, beta):
        z = abs(emp - exact) / se
        rep.check(f"Laplace transform at s={s}", z, n_sigma, z <= n_sigma, f"{emp:.6f} vs {exact:.6f}")
    textbook = beta / math.gamma(1 - beta)
    cm = exact_weight(beta, m_check) * m_check ** (1 + beta)
    rel = abs(cm - textbook) / textbook
    rep.check(f"c_m m^(1+beta) at m={m_check}", rel, 0.05, rel <= 0.05, f"{cm:.6f} vs {textbook:.6f}")
    est, _ = tail_constant(S, beta)
    alpha = beta * WALK_DIM
    rep.summary["tail_constants"] = {
        "beta": beta, "alpha": alpha,
        "beta_over_gamma": textbook,
        "A_alpha": StableParams(alpha).A_alpha,
        "empirical": est,
        "c_m_scaled": cm,
    }
    sampler = StepCountSampler(beta)
    m = sampler.sample(n_samples, seed + 1)
    c = sampler.weights.c[:64]
    counts = np.bincount(np.minimum(m, 65).astype(np.int64), minlength=66)[1:]
    expected = n_samples * np.append(c, 1 - c.sum())
    chi = float(((counts - expected) ** 2 / expected).sum())
    p = float(st.chi2.sf(chi, len(expected) - 1))
    rep.check("step-count sampler chi-square p-value", p, 1e-3, p >= 1e-3)
    rep.summary["sampler"] = {"chi2": chi, "p_value": p, "tail_mass": sampler.tail,
                              "tail_fraction": float((m > sampler.M).mean()),
                              "envelope_acceptance": sampler.acceptance}
    return rep
