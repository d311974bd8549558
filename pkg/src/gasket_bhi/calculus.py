"""Finite-level energy, Laplacian and normal derivatives on gasket graphs.

Functions on a graph are plain 1-d arrays indexed like ``graph.coords``.
Object arrays of :class:`fractions.Fraction` are accepted everywhere, in
which case all results are exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .geometry import Cell, ExactPoint, GasketGraph, build_window

ENERGY_RENORM = Fraction(5, 3)
# makes (3/2) 5^k sum_{w~v}(f(w)-f(v)) consistent with <Lf, g> = -E(f, g)
# under the equal-split vertex measure
LAPLACIAN_CONST = Fraction(3, 2)


def _values(f, graph: GasketGraph) -> np.ndarray:
    f = np.asarray(f)
    if f.shape != (graph.n,):
        raise ValueError(f"function has shape {f.shape}, graph has {graph.n} vertices")
    return f


def _power(base: Fraction, k: int, exact: bool):
    return base ** k if exact else float(base) ** k


def _is_exact(*arrays) -> bool:
    return all(a.dtype == object for a in arrays)


def graph_energy(f, graph: GasketGraph, g=None):
    """Renormalised (polarised) energy ``(5/3)^k sum_{u~w} (f(u)-f(w))(g(u)-g(w))``."""
    f = _values(f, graph)
    g = f if g is None else _values(g, graph)
    e = graph.edges
    df = f[e[:, 0]] - f[e[:, 1]]
    dg = df if g is f else g[e[:, 0]] - g[e[:, 1]]
    exact = _is_exact(f, g)
    total = sum(df * dg, Fraction(0)) if exact else float(np.dot(df, dg))
    return _power(ENERGY_RENORM, graph.level, exact) * total


def extend_midpoints(x1, x2, x3):
    """Harmonic values at the midpoints opposite v1, v2, v3 of a cell."""
    two_fifths = Fraction(2, 5)
    fifth = Fraction(1, 5)
    if not all(isinstance(x, (int, Fraction)) for x in (x1, x2, x3)):
        two_fifths, fifth = 0.4, 0.2
    return (
        two_fifths * (x2 + x3) + fifth * x1,
        two_fifths * (x1 + x3) + fifth * x2,
        two_fifths * (x1 + x2) + fifth * x3,
    )


def harmonic_extension(f, graph: GasketGraph, fine: GasketGraph | None = None):
    """Extend ``f`` from the level-k graph to level k+1 by the 1/5-2/5 rule."""
    f = _values(f, graph)
    if fine is None:
        fine = build_window(graph.window, graph.level + 1)
    if fine.level != graph.level + 1:
        raise ValueError("target graph must be one level finer")
    out = np.empty(fine.n, dtype=f.dtype)
    idx = fine.index
    for i, (x, y) in enumerate(graph.coords):
        out[idx[(2 * int(x), 2 * int(y))]] = f[i]
    for a, b, c in graph.cells:
        pa, pb, pc = (graph.coords[j] * 2 for j in (a, b, c))
        m1, m2, m3 = extend_midpoints(f[a], f[b], f[c])
        # midpoint opposite vertex a lies on edge bc, etc.
        for m, (p, q) in ((m1, (pb, pc)), (m2, (pa, pc)), (m3, (pa, pb))):
            out[idx[((int(p[0]) + int(q[0])) // 2, (int(p[1]) + int(q[1])) // 2)]] = m
    return out, fine


def discrete_laplacian(f, v: int, graph: GasketGraph):
    """``(3/2) 5^k sum_{w ~ v} (f(w) - f(v))`` at a non-rim vertex."""
    f = _values(f, graph)
    if graph.rim[v]:
        raise ValueError(f"vertex {v} is on the rim")
    nb = graph.neighbors[v]
    s = sum((f[w] - f[v] for w in nb if w >= 0), Fraction(0) if f.dtype == object else 0.0)
    exact = f.dtype == object
    c = LAPLACIAN_CONST * Fraction(5) ** graph.level if exact \
        else float(LAPLACIAN_CONST) * 5.0 ** graph.level
    return c * s


def laplacian_vector(f, graph: GasketGraph) -> np.ndarray:
    """Discrete Laplacian at every non-rim vertex (NaN on the rim), floats."""
    f = np.asarray(_values(f, graph), dtype=float)
    nb = graph.neighbors
    s = np.where(nb >= 0, f[np.maximum(nb, 0)] - f[:, None], 0.0).sum(axis=1)
    out = 1.5 * 5.0 ** graph.level * s
    out[graph.rim] = np.nan
    return out


@dataclass(frozen=True)
class DerivativeEstimate:
    value: object
    sequence: tuple  # (depth, estimate) pairs


def normal_derivative(f, v: ExactPoint, S: Cell, graph: GasketGraph, depth: int | None = None):
    """``(5/3)^K (2 f(v) - f(u_K) - f(w_K))`` with its sequence over depths n..K."""
    f = _values(f, graph)
    K = graph.level if depth is None else depth
    if K > graph.level:
        raise ValueError(f"depth {K} exceeds graph level {graph.level}")
    if v not in S.vertices:
        raise ValueError("v must be a vertex of S")
    exact = f.dtype == object
    others = [u for u in S.vertices if u != v]
    fv = f[graph.locate(v)]
    seq = []
    for k in range(S.level, K + 1):
        t = Fraction(1, 2 ** (k - S.level))
        pts = [ExactPoint(v.a + (u.a - v.a) * t, v.b + (u.b - v.b) * t) for u in others]
        fu, fw = (f[graph.locate(p)] for p in pts)
        seq.append((k, _power(ENERGY_RENORM, k, exact) * (2 * fv - fu - fw)))
    return DerivativeEstimate(seq[-1][1], tuple(seq))


def cell_energy(f, g, S: Cell, graph: GasketGraph):
    """Polarised level-k energy restricted to edges inside ``S``."""
    f = _values(f, graph)
    g = _values(g, graph)
    inside = set(graph.cell_vertex_indices(S).tolist())
    e = [(u, w) for u, w in graph.edges if u in inside and w in inside]
    exact = _is_exact(f, g)
    total = sum(((f[u] - f[w]) * (g[u] - g[w]) for u, w in e), Fraction(0) if exact else 0.0)
    return _power(ENERGY_RENORM, graph.level, exact) * total


def gauss_green_residual(f, g, S: Cell, graph: GasketGraph):
    """``|E_S(f,g) + <Lf, g>_mu - sum_{dS} d_S f g|`` at the graph's level."""
    f = _values(f, graph)
    g = _values(g, graph)
    exact = _is_exact(f, g)
    inside = graph.cell_vertex_indices(S)
    bnd = [graph.locate(p) for p in S.vertices]
    w = graph.weights if exact else graph.weights_float
    # interior vertices of S have all four neighbours in S
    lap = sum((discrete_laplacian(f, int(i), graph) * g[i] * w[i]
               for i in inside if i not in bnd), Fraction(0) if exact else 0.0)
    bterm = sum((normal_derivative(f, p, S, graph).value * g[graph.locate(p)] for p in S.vertices),
                Fraction(0) if exact else 0.0)
    return abs(cell_energy(f, g, S, graph) + lap - bterm)


def gauss_green_check(f_of_point, g_of_point, S: Cell, depths):
    """Residual sequence over ``depths`` for functions given on points."""
    out = []
    for K in depths:
        graph = build_window(S, K)
        f = np.array([f_of_point(graph.point(i)) for i in range(graph.n)], dtype=object)
        g = np.array([g_of_point(graph.point(i)) for i in range(graph.n)], dtype=object)
        out.append((K, gauss_green_residual(f, g, S, graph)))
    return out
