"""Finite windows of the infinite Sierpinski gasket with exact coordinates.

A point is stored as a pair of rationals ``(a, b)`` standing for the planar
point ``(a, b*sqrt(3))``.  Squared distances ``da**2 + 3*db**2`` are then
exact rationals, so ball membership and incidence are decided without
floating point.

Inside a :class:`GasketGraph` built at level ``k`` the vertices are kept as
integers ``(X, Y)`` with ``a = X / 2**(k+1)`` and ``b = Y / 2**(k+1)``.  A
level-``k`` cell with lower-left corner ``(X, Y)`` then has vertices
``(X, Y), (X+2, Y), (X+1, Y+1)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

MAX_VERTICES = 400_000
GRAPH_FORMAT = "gasket-graph/1"


@dataclass(frozen=True, order=True)
class ExactPoint:
    a: Fraction
    b: Fraction

    def __post_init__(self):
        object.__setattr__(self, "a", Fraction(self.a))
        object.__setattr__(self, "b", Fraction(self.b))

    def sqdist(self, other: "ExactPoint") -> Fraction:
        da = self.a - other.a
        db = self.b - other.b
        return da * da + 3 * db * db

    def dilate(self, n: int) -> "ExactPoint":
        f = Fraction(2) ** n
        return ExactPoint(self.a * f, self.b * f)

    def mirror(self) -> "ExactPoint":
        return ExactPoint(-self.a, self.b)

    def midpoint(self, other: "ExactPoint") -> "ExactPoint":
        return ExactPoint((self.a + other.a) / 2, (self.b + other.b) / 2)

    @property
    def xy(self) -> tuple[float, float]:
        return float(self.a), float(self.b) * 3 ** 0.5

    def level_hint(self) -> int:
        """Smallest k >= 0 with 2**(k+1)*a and 2**(k+1)*b integral."""
        den = max(self.a.denominator, self.b.denominator)
        k = 0
        while den > 2 ** (k + 1):
            k += 1
        if (self.a * 2 ** (k + 1)).denominator != 1 or (self.b * 2 ** (k + 1)).denominator != 1:
            raise ValueError(f"{self} is not a dyadic gasket point")
        return k

    def __repr__(self):
        return f"ExactPoint({self.a}, {self.b})"


P1 = ExactPoint(0, 0)
P2 = ExactPoint(1, 0)
P3 = ExactPoint(Fraction(1, 2), Fraction(1, 2))
ORIGIN = P1


@dataclass(frozen=True, order=True)
class Cell:
    """An n-cell given by its lower-left corner; all cells of F point upward."""

    corner: ExactPoint
    level: int = 0

    @property
    def side(self) -> Fraction:
        return Fraction(2) ** (-self.level)

    @property
    def vertices(self) -> tuple[ExactPoint, ExactPoint, ExactPoint]:
        c, h = self.corner, self.side
        return (c, ExactPoint(c.a + h, c.b), ExactPoint(c.a + h / 2, c.b + h / 2))

    def children(self) -> tuple["Cell", "Cell", "Cell"]:
        """The three (n+1)-cells, ordered to contain vertex 1, 2, 3 respectively."""
        c, h = self.corner, self.side / 2
        return (
            Cell(c, self.level + 1),
            Cell(ExactPoint(c.a + h, c.b), self.level + 1),
            Cell(ExactPoint(c.a + h / 2, c.b + h / 2), self.level + 1),
        )

    def dilate(self, n: int) -> "Cell":
        return Cell(self.corner.dilate(n), self.level - n)

    def contains(self, p: ExactPoint) -> bool:
        """Membership in the cell as a subset of F (not the solid triangle)."""
        lam = self.barycentric(p)
        if lam is None:
            return False
        # walk down the dyadic digits; p is in the gasket cell iff at every
        # stage some barycentric weight reaches 1/2
        for _ in range(64):
            if any(x == 1 for x in lam):
                return True
            j = max(range(3), key=lambda i: lam[i])
            if lam[j] < Fraction(1, 2):
                return False
            lam = tuple(2 * x - (1 if i == j else 0) for i, x in enumerate(lam))
        return all(x.denominator == 1 for x in lam)

    def barycentric(self, p: ExactPoint):
        """Barycentric coordinates of ``p`` w.r.t. the vertices, or None if outside."""
        v1 = self.corner
        h = self.side
        # p = v1 + s*(v2-v1) + t*(v3-v1) with v2-v1 = (h,0), v3-v1 = (h/2,h/2)
        t = (p.b - v1.b) / (h / 2)
        s = (p.a - v1.a - t * h / 2) / h
        lam = (1 - s - t, s, t)
        if any(x < 0 for x in lam):
            return None
        return lam

    def is_gasket_cell(self) -> bool:
        """True when this is one of the cells of the infinite gasket."""
        c = self.corner.dilate(self.level)
        return _is_zero_cell_corner(c)


def _is_zero_cell_corner(c: ExactPoint) -> bool:
    if c.b.denominator > 2 or c.a.denominator > 2:
        return False
    j = 2 * c.b
    if j.denominator != 1 or j < 0:
        return False
    j = int(j)
    for a0 in (c.a, -c.a - 1):
        i = a0 - c.b
        if i.denominator == 1 and i >= 0 and (int(i) & j) == 0:
            return True
    return False


F_PLUS = Cell(ExactPoint(0, 0), 0)
F_MINUS = Cell(ExactPoint(-1, 0), 0)


def _cells_connected(cells: Sequence[Cell]) -> bool:
    verts = [set(c.vertices) for c in cells]
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for j in range(len(cells)):
            if j not in seen and verts[i] & verts[j]:
                seen.add(j)
                stack.append(j)
    return len(seen) == len(cells)


def _cells_overlap(cells: Sequence[Cell]) -> bool:
    for i, c in enumerate(cells):
        for d in cells[i + 1:]:
            big, small = (c, d) if c.level <= d.level else (d, c)
            # nested cells share their interior
            if big.contains(small.vertices[0]) and big.contains(small.vertices[1]) \
                    and big.contains(small.vertices[2]):
                return True
    return False


@dataclass(frozen=True)
class GasketGraph:
    level: int
    window: tuple[Cell, ...]
    coords: np.ndarray = field(repr=False)   # (n, 2) int64, scale 2**(level+1)
    cells: np.ndarray = field(repr=False)    # (m, 3) vertex indices, corner order
    neighbors: np.ndarray = field(repr=False)  # (n, 4) indices, -1 padded
    degree: np.ndarray = field(repr=False)

    @property
    def scale(self) -> int:
        return 2 ** (self.level + 1)

    @property
    def n(self) -> int:
        return len(self.coords)

    @cached_property
    def index(self) -> dict[tuple[int, int], int]:
        return {(int(x), int(y)): i for i, (x, y) in enumerate(self.coords)}

    @cached_property
    def rim(self) -> np.ndarray:
        return self.degree == 2

    @cached_property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.rim)

    @cached_property
    def incident_cells(self) -> np.ndarray:
        return np.bincount(self.cells.ravel(), minlength=self.n)

    @cached_property
    def weights(self) -> tuple[Fraction, ...]:
        return vertex_measure_weights(self)

    @cached_property
    def weights_float(self) -> np.ndarray:
        return self.incident_cells * (3.0 ** (-self.level) / 3.0)

    @cached_property
    def edges(self) -> np.ndarray:
        e = np.concatenate([self.cells[:, [0, 1]], self.cells[:, [1, 2]], self.cells[:, [0, 2]]])
        e.sort(axis=1)
        return e

    @cached_property
    def xy(self) -> np.ndarray:
        s = self.scale
        return np.column_stack([self.coords[:, 0] / s, self.coords[:, 1] * (3 ** 0.5) / s])

    def point(self, i: int) -> ExactPoint:
        x, y = self.coords[i]
        return ExactPoint(Fraction(int(x), self.scale), Fraction(int(y), self.scale))

    def locate(self, p: ExactPoint) -> int:
        """Index of the vertex at ``p``; KeyError if ``p`` is not a vertex."""
        X, Y = p.a * self.scale, p.b * self.scale
        if X.denominator != 1 or Y.denominator != 1:
            raise KeyError(p)
        return self.index[(int(X), int(Y))]

    def sqdist_scaled(self, p: ExactPoint) -> list[Fraction]:
        """Exact squared distances to ``p`` in units of scale**-2."""
        X, Y = p.a * self.scale, p.b * self.scale
        return [(int(x) - X) ** 2 + 3 * (int(y) - Y) ** 2 for x, y in self.coords]

    def adjacency(self):
        from scipy import sparse
        e = self.edges
        data = np.ones(2 * len(e))
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))

    def cells_at(self, level: int) -> list[Cell]:
        """All ``level``-cells of the window (level between window order and self.level)."""
        out = []
        for base in self.window:
            stack = [base]
            while stack:
                c = stack.pop()
                if c.level == level:
                    out.append(c)
                elif c.level < level:
                    stack.extend(c.children())
        return sorted(out)

    def cell_vertex_indices(self, cell: Cell) -> np.ndarray:
        """Indices of all graph vertices lying in ``cell``."""
        s = self.scale
        X0, Y0 = cell.corner.a * s, cell.corner.b * s
        L = cell.side * s
        if X0.denominator != 1 or Y0.denominator != 1 or L.denominator != 1:
            raise ValueError("cell is finer than the graph")
        X0, Y0, L = int(X0), int(Y0), int(L)
        out = []
        for c in _subcell_corners(X0, Y0, L):
            for v in ((c[0], c[1]), (c[0] + 2, c[1]), (c[0] + 1, c[1] + 1)):
                i = self.index.get(v)
                if i is None:
                    raise ValueError("cell is not inside the window")
                out.append(i)
        return np.unique(np.array(out, dtype=np.int64))

    def to_dict(self) -> dict:
        return {
            "format": GRAPH_FORMAT,
            "level": self.level,
            "window": [[str(c.corner.a), str(c.corner.b), c.level] for c in self.window],
            "vertices": self.coords.tolist(),
            "cells": self.cells.tolist(),
            "neighbors": [[int(j) for j in row if j >= 0] for row in self.neighbors],
            "weights": [f"{w.numerator}/{w.denominator}" for w in self.weights],
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def from_dict(cls, data: dict) -> "GasketGraph":
        if data.get("format") != GRAPH_FORMAT:
            raise ValueError(f"unsupported graph format {data.get('format')!r}")
        window = tuple(Cell(ExactPoint(Fraction(a), Fraction(b)), int(n)) for a, b, n in data["window"])
        coords = np.array(data["vertices"], dtype=np.int64).reshape(-1, 2)
        cells = np.array(data["cells"], dtype=np.int64).reshape(-1, 3)
        nb = np.full((len(coords), 4), -1, dtype=np.int64)
        for i, row in enumerate(data["neighbors"]):
            nb[i, :len(row)] = row
        g = cls(int(data["level"]), window, coords, cells, nb, (nb >= 0).sum(axis=1))
        if [f"{w.numerator}/{w.denominator}" for w in g.weights] != data["weights"]:
            raise ValueError("stored weights do not match the geometry")
        return g

    @classmethod
    def load(cls, path) -> "GasketGraph":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _subcell_corners(X0: int, Y0: int, L: int) -> list[tuple[int, int]]:
    corners = [(X0, Y0)]
    while L > 2:
        h = L // 2
        corners = [c for X, Y in corners for c in ((X, Y), (X + h, Y), (X + h // 2, Y + h // 2))]
        L = h
    return corners


def _as_cells(window_spec) -> tuple[Cell, ...]:
    if isinstance(window_spec, Cell):
        window_spec = [window_spec]
    cells = []
    for c in window_spec:
        if isinstance(c, Cell):
            cells.append(c)
        elif isinstance(c, ExactPoint):
            cells.append(Cell(c, 0))
        else:
            cells.append(Cell(ExactPoint(*c[:2]), int(c[2]) if len(c) > 2 else 0))
    return tuple(sorted(set(cells)))


def build_window(window_spec, k: int, max_vertices: int = MAX_VERTICES) -> GasketGraph:
    """Level-``k`` graph (cells of side 2**-k) on a finite union of cells of F."""
    cells = _as_cells(window_spec)
    if not cells:
        raise ValueError("empty window")
    if k < 0:
        raise ValueError("level must be >= 0")
    for c in cells:
        if not c.is_gasket_cell():
            raise ValueError(f"{c} is not a cell of the infinite gasket")
        if c.level > k:
            raise ValueError(f"window cell {c} is finer than level {k}")
    if _cells_overlap(cells):
        raise ValueError("window cells overlap")
    if not _cells_connected(cells):
        raise ValueError("window is disconnected")
    est = sum((3 ** (k - c.level + 1) + 3) // 2 for c in cells)
    if est > max_vertices:
        raise ValueError(f"level {k} window needs ~{est} vertices (cap {max_vertices})")

    s = 2 ** (k + 1)
    corners = []
    for c in cells:
        L = c.side * s
        corners.extend(_subcell_corners(int(c.corner.a * s), int(c.corner.b * s), int(L)))
    corners = np.array(corners, dtype=np.int64)
    tri = np.stack([corners, corners + [2, 0], corners + [1, 1]], axis=1)  # (m, 3, 2)
    flat = tri.reshape(-1, 2)
    uniq, inv = np.unique(flat, axis=0, return_inverse=True)
    # np.unique sorts rows lexicographically on (X, Y)
    cell_idx = inv.reshape(-1, 3)
    order = np.lexsort((cell_idx[:, 2], cell_idx[:, 1], cell_idx[:, 0]))
    cell_idx = cell_idx[order]

    n = len(uniq)
    e = np.concatenate([cell_idx[:, [0, 1]], cell_idx[:, [1, 2]], cell_idx[:, [0, 2]]])
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    o = np.lexsort((dst, src))
    src, dst = src[o], dst[o]
    deg = np.bincount(src, minlength=n)
    if deg.max() > 4:
        raise ValueError("degenerate window: vertex of degree > 4")
    nb = np.full((n, 4), -1, dtype=np.int64)
    start = np.concatenate([[0], np.cumsum(deg)[:-1]])
    pos = np.arange(len(src)) - start[src]
    nb[src, pos] = dst
    return GasketGraph(k, cells, uniq.astype(np.int64), cell_idx.astype(np.int64), nb, deg)


def vertex_measure_weights(graph: GasketGraph) -> tuple[Fraction, ...]:
    """Equal split of each level-k cell's mass 3**-k among its three vertices."""
    unit = Fraction(1, 3 ** (graph.level + 1))
    return tuple(unit * int(c) for c in graph.incident_cells)


def window_mass(graph: GasketGraph) -> Fraction:
    return sum((Fraction(3) ** (-c.level) for c in graph.window), Fraction(0))


def ball_membership(center: ExactPoint, r2, graph: GasketGraph) -> np.ndarray:
    """Indices of vertices at squared distance strictly below ``r2``."""
    r2 = Fraction(r2)
    if r2 <= 0:
        return np.zeros(0, dtype=np.int64)
    bound = r2 * graph.scale ** 2
    d2 = graph.sqdist_scaled(center)
    return np.array([i for i, q in enumerate(d2) if q < bound], dtype=np.int64)


def sqdist_to(center: ExactPoint, graph: GasketGraph) -> list[Fraction]:
    """Exact squared Euclidean distances from ``center`` to every vertex."""
    s2 = graph.scale ** 2
    return [q / s2 for q in graph.sqdist_scaled(center)]


def dilate(obj, n: int):
    """Dilation by 2**n about the origin (points, cells or graphs)."""
    if isinstance(obj, ExactPoint):
        return obj.dilate(n)
    if isinstance(obj, Cell):
        return obj.dilate(n)
    if isinstance(obj, GasketGraph):
        # integer coordinates are unchanged; only the scale (level) moves
        return GasketGraph(obj.level - n, tuple(sorted(c.dilate(n) for c in obj.window)),
                           obj.coords, obj.cells, obj.neighbors, obj.degree)
    raise TypeError(type(obj))


def mirror_permutation(graph: GasketGraph) -> np.ndarray | None:
    """Vertex permutation of the reflection about the window's vertical axis.

    Returns None when the window is not mirror symmetric.
    """
    X = graph.coords[:, 0]
    c = int(X.min() + X.max())
    perm = np.empty(graph.n, dtype=np.int64)
    for i, (x, y) in enumerate(graph.coords):
        j = graph.index.get((c - int(x), int(y)))
        if j is None:
            return None
        perm[i] = j
    return perm


def same_graph(g: GasketGraph, h: GasketGraph) -> bool:
    """Exact equality of vertex sets (as points) and edge sets."""
    if g.n != h.n:
        return False
    pg = [g.point(i) for i in range(g.n)]
    ph = [h.point(i) for i in range(h.n)]
    if pg != ph:
        return False
    return np.array_equal(np.unique(g.edges, axis=0), np.unique(h.edges, axis=0))


def vertices_in_cells(graph: GasketGraph, cells: Iterable[Cell]) -> np.ndarray:
    idx = [graph.cell_vertex_indices(c) for c in cells]
    if not idx:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.concatenate(idx))
