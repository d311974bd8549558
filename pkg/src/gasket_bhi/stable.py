"""Discrete alpha-stable process on a gasket window.

The base process is the nearest-neighbour walk ``P`` on the window graph.
With an absorbing rim the walk is killed on reaching a rim vertex, so the
chain lives on the non-rim vertices; with a reflecting rim every vertex is
a state.  Subordination by the discrete stable law ``c_m`` gives the jump
kernel ``Q = sum_m c_m P^m`` and the generator ``L = I - Q = (I - P)^beta``
with ``beta = alpha / d_w``.

Time is counted in jumps of the chain.  On a level-k graph ``6 * 5**k (I - P)``
approximates minus the Laplacian, so one jump corresponds to
``(6 * 5**k) ** -beta`` units of continuous time; see :func:`time_per_jump`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy import sparse

from .geometry import ExactPoint, GasketGraph, mirror_permutation, sqdist_to

HAUSDORFF_DIM = math.log(3) / math.log(2)
WALK_DIM = math.log(5) / math.log(2)
SPECTRAL_CAP = 5000


@dataclass(frozen=True)
class StableParams:
    alpha: float

    def __post_init__(self):
        if not 0 < self.alpha < WALK_DIM:
            raise ValueError(f"alpha must lie in (0, d_w={WALK_DIM:.4f}), got {self.alpha}")

    @property
    def beta(self) -> float:
        return self.alpha / WALK_DIM

    d = HAUSDORFF_DIM
    d_w = WALK_DIM

    @property
    def A_alpha(self) -> float:
        """Tail constant alpha / (2 Gamma(1 - alpha/d_w)) of the subordinator density."""
        return self.alpha / (2 * math.gamma(1 - self.beta))

    @property
    def textbook_tail(self) -> float:
        """beta / Gamma(1 - beta): tail constant of the density for Laplace exponent u**beta."""
        return self.beta / math.gamma(1 - self.beta)

    @property
    def in_theorem_range(self) -> bool:
        return 0 < self.alpha < 1


def time_per_jump(beta: float, level: int) -> float:
    return (6.0 * 5.0 ** level) ** (-beta)


# ------------------------------------------------------------ weights

@dataclass(frozen=True)
class SubordinationWeights:
    """Weights c_m = (-1)^(m+1) binom(beta, m), m = 1..M."""

    beta: float
    M: int
    c: np.ndarray = field(repr=False)

    @classmethod
    def make(cls, beta: float, M: int) -> "SubordinationWeights":
        if not 0 < beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        m = np.arange(1, M, dtype=float)
        ratios = (m - beta) / (m + 1)
        c = beta * np.concatenate([[1.0], np.cumprod(ratios)])
        return cls(beta, M, c)

    @property
    def tail(self) -> float:
        """t_M = 1 - sum_{m<=M} c_m = prod_{k<=M} (1 - beta/k)."""
        if self.beta == 1:
            return 0.0
        return math.exp(math.lgamma(self.M + 1 - self.beta) - math.lgamma(1 - self.beta)
                        - math.lgamma(self.M + 1))

    def exact(self, m: int) -> float:
        return exact_weight(self.beta, m)


def exact_weight(beta: float, m: int) -> float:
    if beta == 1:
        return 1.0 if m == 1 else 0.0
    return beta * math.exp(math.lgamma(m - beta) - math.lgamma(1 - beta) - math.lgamma(m + 1))


def binomial_weights_exact(beta: Fraction, M: int) -> list[Fraction]:
    """c_1..c_M in exact arithmetic for rational beta."""
    beta = Fraction(beta)
    out = [beta]
    for m in range(1, M):
        out.append(out[-1] * (m - beta) / (m + 1))
    return out


# ------------------------------------------------------------ operator

class SolverError(RuntimeError):
    pass


def _graph_key(graph: GasketGraph):
    return (graph.level, graph.window, graph.n)


@dataclass
class _Basis:
    states: np.ndarray              # graph indices of chain states
    sqrt_m: np.ndarray              # sqrt of the degree measure on states
    blocks: list                    # [(T sparse (ns, nb), lam (nb,), U (nb, nb))]
    P: sparse.csr_matrix            # one-step kernel on states (substochastic when absorbing)

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.sort(np.concatenate([b[1] for b in self.blocks]))


_BASIS_CACHE: dict = {}
_BASIS_CACHE_SIZE = 3


def _walk_kernel(graph: GasketGraph, boundary: str):
    if boundary == "absorbing":
        states = graph.interior
    elif boundary == "reflecting":
        states = np.arange(graph.n)
    else:
        raise ValueError(f"unknown boundary mode {boundary!r}")
    A = graph.adjacency()[states][:, states].tocsr()
    deg = graph.degree[states].astype(float)
    P = sparse.diags(1.0 / deg) @ A
    return states, deg, A, P.tocsr()


def _symmetry_blocks(graph: GasketGraph, states: np.ndarray, use_symmetry: bool):
    ns = len(states)
    perm = mirror_permutation(graph) if use_symmetry else None
    if perm is None:
        return [sparse.identity(ns, format="csr")]
    pos = np.full(graph.n, -1)
    pos[states] = np.arange(ns)
    sperm = pos[perm[states]]
    if (sperm < 0).any():
        return [sparse.identity(ns, format="csr")]
    sym_r, sym_c, sym_v, anti_r, anti_c, anti_v = [], [], [], [], [], []
    ks = ka = 0
    h = 1 / math.sqrt(2)
    for i in range(ns):
        j = sperm[i]
        if j == i:
            sym_r.append(i), sym_c.append(ks), sym_v.append(1.0)
            ks += 1
        elif i < j:
            sym_r += [i, j]; sym_c += [ks, ks]; sym_v += [h, h]
            anti_r += [i, j]; anti_c += [ka, ka]; anti_v += [h, -h]
            ks += 1
            ka += 1
    Ts = sparse.csr_matrix((sym_v, (sym_r, sym_c)), shape=(ns, ks))
    Ta = sparse.csr_matrix((anti_v, (anti_r, anti_c)), shape=(ns, ka))
    return [Ts, Ta] if ka else [Ts]


def spectral_basis(graph: GasketGraph, boundary: str = "absorbing", cap: int = SPECTRAL_CAP,
                   use_symmetry: bool = True) -> _Basis:
    """Eigen-decomposition of the degree-symmetrised walk, split by mirror symmetry."""
    key = (_graph_key(graph), boundary, use_symmetry)
    if key in _BASIS_CACHE:
        return _BASIS_CACHE[key]
    states, deg, A, P = _walk_kernel(graph, boundary)
    sq = np.sqrt(deg)
    S = sparse.diags(1 / sq) @ A @ sparse.diags(1 / sq)
    blocks = []
    for T in _symmetry_blocks(graph, states, use_symmetry):
        if T.shape[1] > cap:
            raise SolverError(f"spectral block of size {T.shape[1]} exceeds cap {cap}")
        Sb = (T.T @ S @ T).toarray()
        try:
            w, U = np.linalg.eigh(np.eye(len(Sb)) - Sb)
        except np.linalg.LinAlgError as exc:  # pragma: no cover
            raise SolverError(f"eigensolver failed: {exc}") from exc
        w = np.clip(w, 0.0, 2.0)
        w[w < 1e-12] = 0.0  # roundoff zero would survive a small power
        blocks.append((T, w, U))
    basis = _Basis(states, sq, blocks, P)
    if len(_BASIS_CACHE) >= _BASIS_CACHE_SIZE:
        _BASIS_CACHE.pop(next(iter(_BASIS_CACHE)))
    _BASIS_CACHE[key] = basis
    return basis


def clear_cache():
    _BASIS_CACHE.clear()


class FractionalOperator:
    """The generator ``L = (I - P)^beta`` restricted to the chain's state space.

    Rows and columns are addressed by graph vertex indices.  ``block`` gives
    dense sub-matrices, ``apply`` multiplies a function on the graph (values
    off the state space are ignored, i.e. the cemetery carries value 0).
    """

    def __init__(self, graph: GasketGraph, beta: float, boundary: str = "absorbing",
                 mode: str = "spectral", M: int = 100_000, tail_policy: str = "renormalize",
                 cap: int = SPECTRAL_CAP, use_symmetry: bool = True):
        if not 0 < beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        self.graph = graph
        self.beta = float(beta)
        self.boundary = boundary
        self.mode = mode
        self.M = M
        self.tail_policy = tail_policy
        states, deg, _, P = _walk_kernel(graph, boundary)
        self.states = states
        self.measure = deg
        self._P = P
        self._pos = np.full(graph.n, -1)
        self._pos[states] = np.arange(len(states))
        self._dense = None
        self._basis = None
        if self.beta == 1.0:
            self._dense = np.eye(len(states)) - P.toarray()
        elif mode == "spectral":
            self._basis = spectral_basis(graph, boundary, cap, use_symmetry)
        elif mode == "series":
            self._dense = self._series_matrix()
        else:
            raise ValueError(f"unknown mode {mode!r}")

    # -- construction helpers
    def _series_matrix(self) -> np.ndarray:
        w = SubordinationWeights.make(self.beta, self.M)
        c = w.c.copy()
        if self.tail_policy == "renormalize":
            c /= 1.0 - w.tail
        elif self.tail_policy == "tail-to-last":
            c[-1] += w.tail
        else:
            raise ValueError(f"unknown tail policy {self.tail_policy!r}")
        P = self._P.toarray()
        Pm = P.copy()
        Q = c[0] * Pm
        for m in range(1, self.M):
            Pm = Pm @ P
            Q += c[m] * Pm
            if np.abs(Pm).max() < 1e-300:
                break
        return np.eye(len(P)) - Q

    def _positions(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        p = self._pos[idx]
        if (p < 0).any():
            raise ValueError("index is not a state of the chain (rim vertex in absorbing mode?)")
        return p

    # -- access
    @property
    def n_states(self) -> int:
        return len(self.states)

    def block(self, rows, cols) -> np.ndarray:
        r = self._positions(rows)
        c = self._positions(cols)
        if self._dense is not None:
            return self._dense[np.ix_(r, c)]
        sq = self._basis.sqrt_m
        out = np.zeros((len(r), len(c)))
        for T, lam, U in self._basis.blocks:
            Wr = T[r] @ U
            Wc = Wr if r is c else T[c] @ U
            out += (Wr * lam ** self.beta) @ Wc.T
        return out * (sq[c][None, :] / sq[r][:, None])

    def matrix(self) -> np.ndarray:
        return self.block(self.states, self.states)

    def apply_states(self, v: np.ndarray) -> np.ndarray:
        """L v for v given on the state space."""
        if self._dense is not None:
            return self._dense @ v
        sq = self._basis.sqrt_m
        x = sq * v
        out = np.zeros_like(x)
        for T, lam, U in self._basis.blocks:
            out += T @ (U @ (lam ** self.beta * (U.T @ (T.T @ x))))
        return out / sq

    def apply(self, f) -> np.ndarray:
        """(L f) on graph vertices; NaN off the state space."""
        f = np.asarray(f, dtype=float)
        out = np.full(self.graph.n, np.nan)
        out[self.states] = self.apply_states(f[self.states])
        return out

    def row_sums(self) -> np.ndarray:
        return self.apply_states(np.ones(self.n_states))

    @property
    def eigenvalues(self) -> np.ndarray:
        """Spectrum of I - P on the state space."""
        if self._basis is not None:
            return self._basis.eigenvalues
        sq = np.sqrt(self.measure)
        S = (sparse.diags(sq) @ self._P @ sparse.diags(1 / sq)).toarray()
        return np.clip(np.linalg.eigvalsh(np.eye(len(S)) - (S + S.T) / 2), 0.0, 2.0)


def build_fractional_operator(graph: GasketGraph, beta: float, mode: str = "spectral",
                              boundary: str = "absorbing", **kw) -> FractionalOperator:
    return FractionalOperator(graph, beta, boundary=boundary, mode=mode, **kw)


# ------------------------------------------------------------ solvers

@dataclass
class HarmonicSolution:
    domain: np.ndarray       # graph indices of D
    values: np.ndarray       # h on D, boundary data off D (NaN on the cemetery)
    killed: np.ndarray | None  # killed mass per start vertex of D
    condition: float

    def on_domain(self) -> np.ndarray:
        return self.values[self.domain]


class DomainSystem:
    """Cholesky factor of the symmetrised ``L_DD`` with iterative refinement."""

    def __init__(self, op: FractionalOperator, D):
        D = np.unique(np.asarray(D, dtype=np.int64))
        if len(D) == 0:
            raise ValueError("empty domain")
        self._setup(D, op.block(D, D), op.measure[op._positions(D)])

    @classmethod
    def from_matrix(cls, D, A, measure) -> "DomainSystem":
        """Factor a block that was sliced from a larger precomputed one."""
        self = cls.__new__(cls)
        self._setup(np.asarray(D, dtype=np.int64), A, np.asarray(measure, dtype=float))
        return self

    def _setup(self, D, A, measure):
        self.D = D
        self.sq = np.sqrt(measure)
        self.A = A
        As = A * (self.sq[:, None] / self.sq[None, :])
        As = (As + As.T) / 2
        try:
            self.cho = sla.cho_factor(As, lower=False, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SolverError("L_DD is not positive definite") from exc
        anorm = np.abs(As).sum(axis=0).max()
        rcond, info = sla.lapack.dpocon(self.cho[0], anorm)
        self.condition = float("inf") if rcond == 0 else 1.0 / rcond

    def solve(self, b: np.ndarray, refine: int = 1) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        scale = self.sq if b.ndim == 1 else self.sq[:, None]
        x = sla.cho_solve(self.cho, b * scale, check_finite=False) / scale
        for _ in range(refine):
            r = b - self.A @ x
            x = x + sla.cho_solve(self.cho, r * scale, check_finite=False) / scale
        return x


def _rhs(op: FractionalOperator, D: np.ndarray, g: np.ndarray) -> np.ndarray:
    ext = np.zeros(op.graph.n)
    ext[op.states] = g[op.states]
    ext[D] = 0.0
    return -op.apply(ext)[D]


def harmonic_solve(op: FractionalOperator, D, g, with_killed: bool = True,
                   system: DomainSystem | None = None) -> HarmonicSolution:
    """Discrete regular harmonic function in D with exterior data g."""
    sysm = system or DomainSystem(op, D)
    D = sysm.D
    g = np.asarray(g, dtype=float)
    if g.shape != (op.graph.n,):
        raise ValueError("boundary data must be given on every graph vertex")
    h = sysm.solve(_rhs(op, D, g))
    values = np.where(np.isin(np.arange(op.graph.n), op.states), g, np.nan)
    values[D] = h
    killed = None
    if with_killed:
        ones = np.zeros(op.graph.n)
        ones[op.states] = 1.0
        killed = 1.0 - sysm.solve(_rhs(op, D, ones))
    return HarmonicSolution(D, values, killed, sysm.condition)


def harmonic_measure_rows(op: FractionalOperator, D, targets, system=None) -> np.ndarray:
    """P^x(X(tau_D) = y) for x in D (rows) and y in ``targets`` (columns)."""
    sysm = system or DomainSystem(op, D)
    targets = np.asarray(targets, dtype=np.int64)
    B = -op.block(sysm.D, targets)
    return sysm.solve(B)


def exit_time_solve(op: FractionalOperator, D, system=None) -> np.ndarray:
    """Expected number of jumps before leaving D, per start vertex (sorted D order)."""
    sysm = system or DomainSystem(op, D)
    return sysm.solve(np.ones(len(sysm.D)))


@dataclass
class GreenTable:
    domain: np.ndarray
    visits: np.ndarray       # expected visits to y before exit, from x
    measure: np.ndarray      # degree measure on D

    @property
    def kernel(self) -> np.ndarray:
        """Visits per unit of reference measure; symmetric."""
        return self.visits / self.measure[None, :]

    def exit_steps(self) -> np.ndarray:
        return self.visits.sum(axis=1)


def green_table(op: FractionalOperator, D, cap: int = 3000) -> GreenTable:
    D = np.unique(np.asarray(D, dtype=np.int64))
    if len(D) > cap:
        raise SolverError(f"|D| = {len(D)} exceeds dense Green cap {cap}")
    sysm = DomainSystem(op, D)
    G = sysm.solve(np.eye(len(D)))
    return GreenTable(D, G, op.measure[op._positions(D)])


# ------------------------------------------------------------ Lambda

def lambda_terms(graph: GasketGraph, v: ExactPoint, r2, f) -> dict[Fraction, object]:
    """Exact grouping {squared distance: sum of f*w} over vertices outside B(v, r)."""
    r2 = Fraction(r2)
    w = graph.weights
    out: dict[Fraction, object] = {}
    for i, q in enumerate(sqdist_to(v, graph)):
        if q >= r2 and f[i] != 0:
            out[q] = out.get(q, 0) + f[i] * w[i]
    return out


def lambda_functional(graph: GasketGraph, v: ExactPoint, r2, f, alpha: float,
                      d2: Sequence[Fraction] | None = None) -> float:
    """Quadrature of the tail integral of rho(y, v)^(-d-alpha) f(y) over B(v, r)^c."""
    r2 = Fraction(r2)
    if r2 <= 0:
        raise ValueError("radius must be positive")
    q = np.array([float(x) for x in (d2 if d2 is not None else sqdist_to(v, graph))])
    outside = np.array([x >= r2 for x in (d2 if d2 is not None else sqdist_to(v, graph))])
    f = np.nan_to_num(np.asarray(f, dtype=float))
    vals = np.zeros(graph.n)
    vals[outside] = q[outside] ** (-(HAUSDORFF_DIM + alpha) / 2)
    return float(np.sum(vals * f * graph.weights_float))


def lambda_from_terms(terms: dict, alpha: float) -> float:
    return float(sum(float(s) * float(q) ** (-(HAUSDORFF_DIM + alpha) / 2) for q, s in terms.items()))


# ------------------------------------------------------------ lemma checks

def ball(graph: GasketGraph, v: ExactPoint, r2, d2=None) -> np.ndarray:
    r2 = Fraction(r2)
    d2 = d2 if d2 is not None else sqdist_to(v, graph)
    return np.array([i for i, q in enumerate(d2) if q < r2], dtype=np.int64)


@dataclass
class CheckResult:
    low: float
    high: float
    ratios: np.ndarray
    points: np.ndarray
    flagged: bool = False
    note: str = ""


def _scale_pow(alpha: float, m: int) -> float:
    return 2.0 ** (alpha * m)


def escape_check(op: FractionalOperator, D, v: ExactPoint, r1_2, r2_2, alpha: float, m: int = 0,
                 d2=None) -> CheckResult:
    """Empirical c4: P^x(X(tau_D) not in B(v, r2)) / (2^(alpha m) E^x tau_D) for x in D n B(v, r1).

    Killed mass counts as exiting the ball (the rim lies outside it).
    """
    g = op.graph
    d2 = d2 if d2 is not None else sqdist_to(v, g)
    sysm = DomainSystem(op, D)
    D = sysm.D
    inner = np.intersect1d(D, ball(g, v, r1_2, d2))
    if len(inner) == 0:
        raise ValueError("D does not meet the inner ball")
    big = ball(g, v, r2_2, d2)
    if not np.all(np.isin(D, big)):
        raise ValueError("D must lie inside the outer ball")
    target = np.zeros(g.n)
    inside = np.setdiff1d(np.intersect1d(big, op.states), D)
    target[inside] = 1.0
    stay = harmonic_solve(op, D, target, with_killed=False, system=sysm).values
    steps = exit_time_solve(op, D, system=sysm)
    pos = np.searchsorted(D, inner)
    p_out = 1.0 - stay[inner]
    etau = steps[pos] * time_per_jump(op.beta, g.level)
    ratios = p_out / (_scale_pow(alpha, m) * etau)
    return CheckResult(float(ratios.min()), float(ratios.max()), ratios, inner)


def upper_check(op: FractionalOperator, D, f, v: ExactPoint, r3_2, alpha: float, m: int = 0,
                d2=None) -> CheckResult:
    """Empirical c7: f(x) / (2^(-alpha m) Lambda_{v,r3}(f)) for x in D n B(v, r3)."""
    g = op.graph
    d2 = d2 if d2 is not None else sqdist_to(v, g)
    D = np.unique(np.asarray(D, dtype=np.int64))
    pts = np.intersect1d(D, ball(g, v, r3_2, d2))
    lam = lambda_functional(g, v, r3_2, f, alpha, d2)
    if lam <= 0:
        return CheckResult(np.nan, np.nan, np.zeros(0), pts, True, "Lambda vanishes")
    ratios = np.asarray(f, dtype=float)[pts] / (lam / _scale_pow(alpha, m))
    return CheckResult(float(ratios.min()), float(ratios.max()), ratios, pts)


def factorization_check(op: FractionalOperator, D, f, v: ExactPoint, r1_2, r5_2, alpha: float,
                        d2=None) -> CheckResult:
    """Empirical c8', c8: f(x) / (Lambda_{v,r1}(f) E^x tau_D') over x in D' n B(v, r1).

    D' = D n B(v, r5); f is harmonic in D and vanishes on D^c n B(v, r5).
    """
    g = op.graph
    d2 = d2 if d2 is not None else sqdist_to(v, g)
    D = np.unique(np.asarray(D, dtype=np.int64))
    Dp = np.intersect1d(D, ball(g, v, r5_2, d2))
    pts = np.intersect1d(Dp, ball(g, v, r1_2, d2))
    if len(pts) == 0:
        return CheckResult(np.nan, np.nan, np.zeros(0), pts, True, "empty evaluation set")
    lam = lambda_functional(g, v, r1_2, f, alpha, d2)
    if lam <= 0:
        return CheckResult(np.nan, np.nan, np.zeros(0), pts, True, "Lambda vanishes")
    steps = exit_time_solve(op, Dp)
    etau = steps[np.searchsorted(Dp, pts)] * time_per_jump(op.beta, g.level)
    ratios = np.asarray(f, dtype=float)[pts] / (lam * etau)
    return CheckResult(float(ratios.min()), float(ratios.max()), ratios, pts)
