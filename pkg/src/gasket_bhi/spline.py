"""The better-basis spline phi0 in exact arithmetic, and cutoff functions.

A state of a k-cell S' inside the home cell S is the 6-vector

    (phi0(u1), phi0(u2), phi0(u3), (3/5)^k d phi0(u1), (3/5)^k d phi0(u2), (3/5)^k d phi0(u3))

where d is the outer normal derivative relative to S'.  Descending into
the child cell at u_j multiplies the state by ``descent_matrix(j)``.  Slots
always follow the geometric order of :meth:`Cell.vertices` (lower-left,
lower-right, apex).
"""
from __future__ import annotations

import csv
import itertools
import threading
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .geometry import Cell, ExactPoint, GasketGraph

DEPTH_CAP = 10

_M1_NUMERATORS = (
    (75, 0, 0, 0, 0, 0),
    (36, 36, 3, -7, -7, -1),
    (36, 3, 36, -7, -1, -7),
    (0, 0, 0, 45, 0, 0),
    (-90, 90, 0, 15, -15, 0),
    (-90, 0, 90, 15, 0, -15),
)
DENOMINATOR = 75


def _slot_permutation(j: int) -> list[int]:
    """Permutation of the 6 slots swapping vertex 1 with vertex j."""
    p = [0, 1, 2]
    p[0], p[j - 1] = p[j - 1], p[0]
    return p + [i + 3 for i in p]


def descent_numerators(j: int) -> np.ndarray:
    """Integer matrix N_j with descent_matrix(j) = N_j / 75."""
    if j not in (1, 2, 3):
        raise ValueError("child index must be 1, 2 or 3")
    m = np.array(_M1_NUMERATORS, dtype=object)
    p = _slot_permutation(j)
    return m[np.ix_(p, p)]


def descent_matrix(j: int) -> np.ndarray:
    return np.vectorize(lambda x: Fraction(x, DENOMINATOR), otypes=[object])(descent_numerators(j))


_N = {j: descent_numerators(j) for j in (1, 2, 3)}
_NF = {j: _N[j].astype(float) / DENOMINATOR for j in (1, 2, 3)}


def initial_state(top: int = 1) -> tuple[int, ...]:
    """State of the home cell for the copy of phi0 equal to 1 at vertex ``top``."""
    v = [0] * 6
    v[top - 1] = 1
    return tuple(v)


@dataclass(frozen=True)
class SplineState:
    path: str
    values: tuple[Fraction, Fraction, Fraction]
    derivatives: tuple[Fraction, Fraction, Fraction]

    @property
    def vector(self) -> tuple[Fraction, ...]:
        return self.values + self.derivatives

    def satisfies_condition(self) -> bool:
        return all(v >= 0 and abs(d) <= 3 * v for v, d in zip(self.values, self.derivatives))


def _normalize_path(path) -> str:
    s = "".join(str(c) for c in path)
    if any(c not in "123" for c in s):
        raise ValueError(f"bad cell path {path!r}")
    if len(s) > DEPTH_CAP:
        raise ValueError(f"path longer than depth cap {DEPTH_CAP}")
    return s


def _step(num: Sequence[int], j: int) -> tuple[int, ...]:
    m = _N[j]
    return tuple(int(sum(m[r, c] * num[c] for c in range(6))) for r in range(6))


def phi0_state(path="", top: int = 1) -> SplineState:
    """Exact state after descending along ``path`` from the home cell."""
    path = _normalize_path(path)
    num = initial_state(top)
    for ch in path:
        num = _step(num, int(ch))
    den = DENOMINATOR ** len(path)
    vec = tuple(Fraction(x, den) for x in num)
    return SplineState(path, vec[:3], vec[3:])


def iter_states(depth: int, top: int = 1):
    """Yield (path, integer numerators) for all paths of length ``depth``.

    The exact state is numerators / 75**depth.  Paths come in lexicographic order.
    """
    if depth > DEPTH_CAP:
        raise ValueError(f"depth {depth} exceeds cap {DEPTH_CAP}")
    level = [("", initial_state(top))]
    for _ in range(depth):
        level = [(p + str(j), _step(num, j)) for p, num in level for j in (1, 2, 3)]
    yield from level


def _child_offset(j: int, side: int) -> tuple[int, int]:
    h = side // 2
    return ((0, 0), (h, 0), (h // 2, h // 2))[j - 1]


def path_corner(path: str, depth_scale: int) -> tuple[int, int]:
    """Integer corner of the sub-cell at ``path`` in units where the home cell has X-side ``depth_scale``."""
    X = Y = 0
    L = depth_scale
    for ch in path:
        dx, dy = _child_offset(int(ch), L)
        X, Y, L = X + dx, Y + dy, L // 2
    return X, Y


def _cell_vertex_coords(X: int, Y: int, L: int):
    return ((X, Y), (X + L, Y), (X + L // 2, Y + L // 2))


def phi0_at_vertex(p: ExactPoint, S: Cell, top: int = 1) -> Fraction:
    """Exact value of phi0 (equal to 1 at vertex ``top`` of S) at a dyadic vertex of S."""
    lam = S.barycentric(p)
    if lam is None:
        raise ValueError(f"{p} lies outside {S}")
    path = ""
    while True:
        for i, x in enumerate(lam):
            if x == 1:
                return phi0_state(path, top).values[i]
        j = next((i for i in range(3) if lam[i] >= Fraction(1, 2)), None)
        if j is None or len(path) >= DEPTH_CAP:
            raise ValueError(f"{p} is not a vertex of {S} within depth {DEPTH_CAP}")
        path += str(j + 1)
        lam = tuple(2 * x - (1 if i == j else 0) for i, x in enumerate(lam))


class _Memo:
    """Memo of exact states; concurrent readers, serialised writers."""

    def __init__(self):
        self._data = {}
        self._lock = threading.Lock()

    def get(self, key, compute):
        try:
            return self._data[key]
        except KeyError:
            pass
        value = compute()
        with self._lock:
            return self._data.setdefault(key, value)


_memo = _Memo()


def vertex_table(depth: int, top: int = 1) -> dict[tuple[int, int], Fraction]:
    """phi0 at every level-``depth`` vertex of the unit home cell, keyed by integer coords.

    Coordinates use X-side ``2**(depth+1)`` for the home cell.  Raises if two
    sibling paths disagree on a shared vertex.
    """
    def compute():
        L = 2 ** (depth + 1)
        den = DENOMINATOR ** depth
        table = {}
        for path, num in iter_states(depth, top):
            X, Y = path_corner(path, L)
            for slot, xy in enumerate(_cell_vertex_coords(X, Y, 2)):
                val = Fraction(num[slot], den)
                old = table.setdefault(xy, val)
                if old != val:
                    raise AssertionError(f"sibling disagreement at {xy}: {old} vs {val}")
        return table
    return _memo.get(("table", depth, top), compute)


@dataclass
class SplineReport:
    depth: int
    states_checked: int = 0
    negative: int = 0
    above_one: int = 0
    derivative_violations: int = 0
    sibling_mismatches: int = 0
    partition_failures: int = 0
    derivative_scale_failures: int = 0
    matching_failures: int = 0
    min_value: Fraction = Fraction(1)
    max_value: Fraction = Fraction(0)
    max_derivative_ratio: Fraction = Fraction(0)

    @property
    def violations(self) -> int:
        return (self.negative + self.above_one + self.derivative_violations + self.sibling_mismatches
                + self.partition_failures + self.derivative_scale_failures + self.matching_failures)

    @property
    def ok(self) -> bool:
        return self.violations == 0

    def as_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            out[k] = f"{v.numerator}/{v.denominator}" if isinstance(v, Fraction) else v
        out["violations"] = self.violations
        return out


def verify_spline_condition(depth: int) -> SplineReport:
    """Exhaustive exact check of all cell states with path length <= depth.

    Checks 0 <= phi0 <= 1, (3/5)^k |d| <= 3 phi0, agreement of values (and
    cancellation of the two one-sided derivatives) at vertices shared by
    sibling cells, the partition of unity by the three rotated copies, and
    the 3/5 scaling of the derivative at the retained corner.
    """
    if depth > DEPTH_CAP:
        raise ValueError(f"depth {depth} exceeds cap {DEPTH_CAP}")
    rep = SplineReport(depth)
    L = 2 ** (depth + 1)
    values: dict[tuple[int, int], Fraction] = {}
    derivs: dict[tuple[int, int], list] = {}
    levels = {top: [("", initial_state(top))] for top in (1, 2, 3)}
    for k in range(depth + 1):
        den = DENOMINATOR ** k
        side = L >> k
        for idx, (path, num) in enumerate(levels[1]):
            rep.states_checked += 1
            vals = [Fraction(x, den) for x in num[:3]]
            ds = [Fraction(x, den) for x in num[3:]]
            for v, d in zip(vals, ds):
                rep.negative += v < 0
                rep.above_one += v > 1
                rep.derivative_violations += abs(d) > 3 * v
                rep.min_value = min(rep.min_value, v)
                rep.max_value = max(rep.max_value, v)
                if v > 0:
                    rep.max_derivative_ratio = max(rep.max_derivative_ratio, abs(d) / (3 * v))
            rot = [levels[t][idx][1] for t in (2, 3)]
            total = [num[i] + rot[0][i] + rot[1][i] for i in range(6)]
            rep.partition_failures += total != [den] * 3 + [0] * 3
            X, Y = path_corner(path, L)
            for slot, xy in enumerate(_cell_vertex_coords(X, Y, side)):
                old = values.setdefault(xy, vals[slot])
                rep.sibling_mismatches += old != vals[slot]
                derivs.setdefault((k, xy), []).append(ds[slot])
            if k < depth:
                # retained corner of child j keeps slot j with derivative scaled by 3/5
                for j in (1, 2, 3):
                    child = _step(num, j)
                    if child[j - 1] != num[j - 1] * DENOMINATOR \
                            or child[j + 2] * 5 != num[j + 2] * 3 * DENOMINATOR:
                        rep.derivative_scale_failures += 1
        for (lvl, xy), ds in derivs.items():
            if lvl == k and len(ds) == 2:
                rep.matching_failures += ds[0] + ds[1] != 0
        if k < depth:
            for top in (1, 2, 3):
                levels[top] = [(p + str(j), _step(num, j)) for p, num in levels[top] for j in (1, 2, 3)]
    return rep


def write_states_csv(path_or_file, depth: int, top: int = 1) -> int:
    """Dump states of all cells at exactly ``depth`` as num/den strings."""
    den = DENOMINATOR ** depth
    rows = 0
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "v1", "v2", "v3", "d1", "d2", "d3"])
        for p, num in iter_states(depth, top):
            fr = [Fraction(x, den) for x in num]
            w.writerow([p or "-"] + [f"{x.numerator}/{x.denominator}" for x in fr])
            rows += 1
    finally:
        if own:
            fh.close()
    return rows


# ---------------------------------------------------------------- cutoffs

def phi0_float_values(depth: int, top: int = 1) -> dict[tuple[int, int], float]:
    """Floating-point phi0 at level-``depth`` vertices of the home cell (coords as in vertex_table)."""
    L = 2 ** (depth + 1)
    states = np.zeros((1, 6))
    states[0, top - 1] = 1.0
    corners = np.zeros((1, 2), dtype=np.int64)
    side = L
    for _ in range(depth):
        h = side // 2
        offs = np.array([[0, 0], [h, 0], [h // 2, h // 2]], dtype=np.int64)
        states = np.concatenate([states @ _NF[j].T for j in (1, 2, 3)], axis=0)
        corners = np.concatenate([corners + offs[j] for j in range(3)], axis=0)
        side = h
    out = {}
    for (X, Y), st in zip(corners.tolist(), states):
        for slot, xy in enumerate(_cell_vertex_coords(X, Y, side)):
            out[xy] = float(st[slot])
    return out


@dataclass(frozen=True)
class CutoffPiece:
    cell: Cell
    kind: str          # "one", "zero", "phi0" or "one_minus_phi0"
    top: int = 0       # vertex of the cell where the phi0 copy equals 1


@dataclass(frozen=True)
class Cutoff:
    level: int
    pieces: tuple[CutoffPiece, ...]
    support_vertices: frozenset

    def values(self, graph: GasketGraph, exact: bool = False) -> np.ndarray:
        """Evaluate on every vertex of ``graph`` (level >= cutoff level)."""
        depth = graph.level - self.level
        if depth < 0:
            raise ValueError("graph is coarser than the cutoff cells")
        out = np.full(graph.n, np.nan, dtype=object if exact else float)
        tables = {}
        for piece in self.pieces:
            idx = graph.cell_vertex_indices(piece.cell)
            if piece.kind in ("one", "zero"):
                val = 1 if piece.kind == "one" else 0
                vals = [Fraction(val) if exact else float(val)] * len(idx)
            else:
                key = piece.top
                if key not in tables:
                    tables[key] = vertex_table(depth, key) if exact else phi0_float_values(depth, key)
                t = tables[key]
                s = graph.scale
                X0 = int(piece.cell.corner.a * s)
                Y0 = int(piece.cell.corner.b * s)
                vals = [t[(int(graph.coords[i, 0]) - X0, int(graph.coords[i, 1]) - Y0)] for i in idx]
                if piece.kind == "one_minus_phi0":
                    vals = [1 - v for v in vals]
            for i, v in zip(idx, vals):
                if exact:
                    prev = out[i]
                    if isinstance(prev, Fraction) and prev != v:
                        raise AssertionError(f"cutoff discontinuous at vertex {i}")
                out[i] = v
        return out


def cutoff_assemble(cells: Iterable[Cell], window_cells: Iterable[Cell]) -> Cutoff:
    """Piecewise cutoff equal to 1 on ``cells`` and 0 on n-cells away from them."""
    cells = sorted(set(cells))
    window_cells = sorted(set(window_cells))
    levels = {c.level for c in cells} | {c.level for c in window_cells}
    if len(levels) != 1:
        raise ValueError("cutoff cells and window cells must share one level")
    n = levels.pop()
    wset = set(window_cells)
    if not set(cells) <= wset:
        raise ValueError("cutoff cells must belong to the window")
    V = {v for c in cells for v in c.vertices}
    pieces = []
    for c in window_cells:
        inV = [v in V for v in c.vertices]
        cnt = sum(inV)
        if cnt == 3:
            pieces.append(CutoffPiece(c, "one"))
        elif cnt == 0:
            pieces.append(CutoffPiece(c, "zero"))
        elif cnt == 1:
            pieces.append(CutoffPiece(c, "phi0", inV.index(True) + 1))
        elif cnt == 2:
            pieces.append(CutoffPiece(c, "one_minus_phi0", inV.index(False) + 1))
        else:  # pragma: no cover
            raise AssertionError("unreachable vertex pattern")
    return Cutoff(n, tuple(pieces), frozenset(V))


def cells_meeting_ball(window_cells: Iterable[Cell], center: ExactPoint, r2) -> list[Cell]:
    """n-cells having a vertex strictly inside B(center, r)."""
    r2 = Fraction(r2)
    return [c for c in window_cells if any(v.sqdist(center) < r2 for v in c.vertices)]


def cutoff_fractional_bound(cutoff: Cutoff, window, beta: float, levels: Sequence[int], **op_kwargs):
    """Sup-norm of the discrete fractional Laplacian of the cutoff across levels.

    Values are reported in continuous-time units, ``(6 * 5**k)**beta * max|(I-P)^beta phi|``,
    where ``6 * 5**k (I - P)`` is the level-k graph approximation of minus the
    Laplacian.  Returns a list of (level, bound, raw_operational_max).
    """
    from .geometry import build_window
    from .stable import build_fractional_operator

    out = []
    for k in levels:
        g = build_window(window, k)
        op = build_fractional_operator(g, beta, **op_kwargs)
        phi = cutoff.values(g)
        lphi = op.apply(phi)
        raw = float(np.nanmax(np.abs(lphi))) if np.isfinite(lphi).any() else 0.0
        out.append((k, raw * (6.0 * 5.0 ** k) ** beta, raw))
    return out


def all_paths(depth: int) -> Iterable[str]:
    return ("".join(p) for p in itertools.product("123", repeat=depth))
