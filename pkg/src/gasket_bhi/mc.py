"""Monte Carlo simulation of the base walk and the subordinated jump chain.

Every path is seeded from its own stream, derived from a master seed with
``numpy.random.SeedSequence``.  Paths are distributed over numba threads;
the worker count (``GASKET_WORKERS``) changes wall time only.

A jump runs the base walk for ``m`` steps, ``m`` drawn from the discrete
stable law ``c_m``.  With an absorbing rim the walk is killed when it lands
on a rim vertex.  Exits from ``D`` are read off at jump landing sites.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numba

numba.config.THREADING_LAYER = os.environ.get("NUMBA_THREADING_LAYER", "workqueue")
import numpy as np
from numba import njit, prange
from scipy import stats

from .geometry import GasketGraph
from .stable import SubordinationWeights

TAIL_START = 2 ** 16
STEP_CAP = 10 ** 8
JUMP_CAP = 10 ** 7
MAX_FLAGGED_FRACTION = 1e-4
WORKERS_ENV = "GASKET_WORKERS"
KILLED = -1
FLAGGED = -2


def configure_workers() -> int:
    """Apply the worker count from the environment; returns the count in use."""
    n = os.environ.get(WORKERS_ENV)
    if n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
    return numba.get_num_threads()


@dataclass(frozen=True)
class SeedPlan:
    master: int
    n_paths: int

    def seeds(self, stream: int = 0) -> np.ndarray:
        """Per-path 32-bit seeds; ``stream`` separates independent families."""
        ss = np.random.SeedSequence([self.master, stream])
        return ss.generate_state(self.n_paths, dtype=np.uint32).astype(np.int64)

    def as_dict(self) -> dict:
        return {"master": self.master, "n_paths": self.n_paths}


# ------------------------------------------------------------ step counts

@njit(cache=True)
def _log_ratio(m, beta):
    # log Gamma(m - beta) - log Gamma(m + 1), asymptotic for large m
    if m < 1e7:
        return math.lgamma(m - beta) - math.lgamma(m + 1.0)
    return -(1.0 + beta) * math.log(m) + beta * (1.0 + beta) / (2.0 * m)


@njit(cache=True)
def _tail_accept_ratio(m, beta, log_front):
    # c_m / (m^-beta - (m+1)^-beta), without the envelope normalisation
    env = -math.expm1(-beta * math.log1p(1.0 / m)) * math.exp(-beta * math.log(m))
    return math.exp(log_front + _log_ratio(m, beta)) / env


class StepCountSampler:
    """Exact table for m <= M, Pareto-envelope rejection beyond."""

    def __init__(self, beta: float, M: int = TAIL_START):
        self.beta = float(beta)
        self.M = M
        w = SubordinationWeights.make(beta, M)
        self.weights = w
        self.cdf = np.cumsum(w.c)
        self.tail = w.tail
        if beta < 1:
            self.log_front = math.log(beta) - math.lgamma(1 - beta)
            self.bound = float(_tail_accept_ratio(float(M + 1), beta, self.log_front)) * (1 + 1e-9)
        else:
            self.log_front = 0.0
            self.bound = 1.0

    @property
    def acceptance(self) -> float:
        """Envelope acceptance rate, a lower bound over the tail."""
        limit = math.exp(self.log_front) / self.beta if self.beta < 1 else 1.0
        return limit / self.bound

    def args(self):
        return self.cdf, self.beta, self.M, self.log_front, self.bound

    def sample(self, n: int, seed: int) -> np.ndarray:
        return _sample_many(n, seed, *self.args())


@njit(cache=True)
def _draw_m(cdf, beta, M, log_front, bound):
    u = np.random.random()
    if u < cdf[M - 1]:
        lo, hi = 0, M - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if cdf[mid] > u:
                hi = mid
            else:
                lo = mid + 1
        return float(lo + 1)
    while True:
        v = 1.0 - np.random.random()
        m = math.floor((M + 1.0) * v ** (-1.0 / beta))
        if m > 4e18:
            m = 4e18
        if np.random.random() * bound <= _tail_accept_ratio(m, beta, log_front):
            return m


@njit(cache=True)
def _sample_many(n, seed, cdf, beta, M, log_front, bound):
    np.random.seed(seed)
    out = np.empty(n)
    for i in range(n):
        out[i] = _draw_m(cdf, beta, M, log_front, bound)
    return out


# ------------------------------------------------------------ walks

@njit(cache=True)
def _walk(x, nsteps, neighbors, degree, kill):
    """Advance the base walk; returns (vertex or KILLED, steps taken)."""
    done = 0
    while done < nsteps:
        x = neighbors[x, int(np.random.random() * degree[x])]
        done += 1
        if kill[x]:
            return -1, done
    return x, done


@njit(parallel=True, cache=True)
def _stable_paths(starts, seeds, neighbors, degree, kill, in_D, unit_jumps,
                  cdf, beta, M, log_front, bound, step_cap, jump_cap):
    n = len(seeds)
    exit_v = np.empty(n, dtype=np.int64)
    jumps = np.empty(n, dtype=np.int64)
    steps = np.empty(n, dtype=np.int64)
    for p in prange(n):
        np.random.seed(seeds[p])
        x = starts[p]
        nj = 0
        ns = 0
        status = 0
        while True:
            if unit_jumps:
                m = 1.0
            else:
                m = _draw_m(cdf, beta, M, log_front, bound)
            left = step_cap - ns
            if m > left:
                m = left + 1.0
            x, took = _walk(x, np.int64(m), neighbors, degree, kill)
            nj += 1
            ns += took
            if x < 0:
                status = -1
                break
            if ns > step_cap or nj > jump_cap:
                status = -2
                break
            if not in_D[x]:
                break
        exit_v[p] = x if status == 0 else status
        jumps[p] = nj
        steps[p] = ns
    return exit_v, jumps, steps


@dataclass
class PathBatch:
    exit_vertex: np.ndarray   # vertex index, KILLED, or FLAGGED
    jumps: np.ndarray
    steps: np.ndarray

    @property
    def flagged(self) -> int:
        return int(np.sum(self.exit_vertex == FLAGGED))

    @property
    def n(self) -> int:
        return len(self.exit_vertex)


def _domain_mask(graph: GasketGraph, D) -> np.ndarray:
    mask = np.zeros(graph.n, dtype=np.bool_)
    mask[np.asarray(D, dtype=np.int64)] = True
    return mask


def _kill_mask(graph: GasketGraph, boundary: str) -> np.ndarray:
    if boundary == "absorbing":
        return graph.rim.astype(np.bool_)
    if boundary == "reflecting":
        return np.zeros(graph.n, dtype=np.bool_)
    raise ValueError(f"unknown boundary mode {boundary!r}")


def simulate_stable_exit(graph: GasketGraph, D, x: int | np.ndarray, beta: float,
                         plan: SeedPlan, boundary: str = "absorbing", stream: int = 0,
                         step_cap: int = STEP_CAP, jump_cap: int = JUMP_CAP,
                         sampler: StepCountSampler | None = None) -> PathBatch:
    """Run ``plan.n_paths`` jump-chain paths from ``x`` until they land outside D."""
    configure_workers()
    in_D = _domain_mask(graph, D)
    starts = np.broadcast_to(np.asarray(x, dtype=np.int64), (plan.n_paths,)).copy()
    if not in_D[starts].all():
        raise ValueError("start vertex must lie in D")
    kill = _kill_mask(graph, boundary)
    if kill[starts].any():
        raise ValueError("start vertex lies on the absorbing rim")
    sampler = sampler or StepCountSampler(beta)
    out = _stable_paths(starts, plan.seeds(stream), graph.neighbors.astype(np.int64),
                        graph.degree.astype(np.int64), kill, in_D, beta == 1.0,
                        *sampler.args(), step_cap, jump_cap)
    return PathBatch(*out)


def simulate_walk_exit(graph: GasketGraph, D, x, plan: SeedPlan, boundary: str = "absorbing",
                       stream: int = 0, step_cap: int = STEP_CAP) -> PathBatch:
    """Plain nearest-neighbour walk until it leaves D (one step per jump)."""
    return simulate_stable_exit(graph, D, x, 1.0, plan, boundary, stream, step_cap, step_cap)


# ------------------------------------------------------------ harmonic measure

def clopper_pearson(k, n, level: float = 0.997):
    """Exact binomial interval; vectorised over k."""
    k = np.asarray(k)
    a = (1 - level) / 2
    lo = np.where(k > 0, stats.beta.ppf(a, k, n - k + 1), 0.0)
    hi = np.where(k < n, stats.beta.ppf(1 - a, k + 1, n - k), 1.0)
    return lo, hi


@dataclass
class HarmonicEstimate:
    starts: np.ndarray
    labels: list             # target names; the last column is "killed"
    counts: np.ndarray       # (n_starts, n_labels)
    n_paths: int
    flagged: np.ndarray      # per start
    mean_jumps: np.ndarray
    sd_jumps: np.ndarray
    seeds: SeedPlan
    warnings: list

    @property
    def freq(self) -> np.ndarray:
        valid = (self.n_paths - self.flagged)[:, None]
        return self.counts / valid

    def intervals(self, level: float = 0.997):
        valid = (self.n_paths - self.flagged)[:, None]
        return clopper_pearson(self.counts, valid, level)

    def rows(self):
        lo, hi = self.intervals()
        for i, x in enumerate(self.starts):
            for j, lab in enumerate(self.labels):
                yield int(x), lab, int(self.counts[i, j]), self.n_paths, float(lo[i, j]), float(hi[i, j])


def estimate_harmonic_measure(graph: GasketGraph, D, targets: dict, starts, beta: float,
                              plan: SeedPlan, boundary: str = "absorbing",
                              ci_width: float | None = None) -> HarmonicEstimate:
    """Exit frequencies per target for each start vertex.

    ``targets`` maps names to vertex arrays; together with the killed state
    they must cover every landing site outside D.
    """
    label = np.full(graph.n, -1, dtype=np.int64)
    names = list(targets)
    for j, name in enumerate(names):
        idx = np.asarray(targets[name], dtype=np.int64)
        if (label[idx] >= 0).any():
            raise ValueError("targets overlap")
        label[idx] = j
    in_D = _domain_mask(graph, D)
    kill = _kill_mask(graph, boundary)
    uncovered = ~in_D & ~kill & (label < 0)
    if uncovered.any():
        raise ValueError(f"{int(uncovered.sum())} vertices outside D belong to no target")
    starts = np.asarray(starts, dtype=np.int64)
    counts = np.zeros((len(starts), len(names) + 1), dtype=np.int64)
    flagged = np.zeros(len(starts), dtype=np.int64)
    mj = np.zeros(len(starts))
    sj = np.zeros(len(starts))
    sampler = StepCountSampler(beta)
    warnings = []
    for i, x in enumerate(starts):
        batch = simulate_stable_exit(graph, D, int(x), beta, plan, boundary, stream=i, sampler=sampler)
        ok = batch.exit_vertex != FLAGGED
        flagged[i] = batch.flagged
        ev = batch.exit_vertex[ok]
        lab = np.where(ev >= 0, label[np.maximum(ev, 0)], len(names))
        counts[i] = np.bincount(lab, minlength=len(names) + 1)
        mj[i] = batch.jumps[ok].mean()
        sj[i] = batch.jumps[ok].std(ddof=1) if ok.sum() > 1 else 0.0
        if flagged[i] > MAX_FLAGGED_FRACTION * plan.n_paths:
            warnings.append(f"start {int(x)}: {int(flagged[i])} flagged paths")
    if ci_width is not None:
        worst = 3 * 0.5 / math.sqrt(plan.n_paths)
        if worst > ci_width:
            warnings.append(f"N={plan.n_paths} cannot guarantee CI half-width {ci_width}")
    return HarmonicEstimate(starts, names + ["killed"], counts, plan.n_paths, flagged, mj, sj,
                            plan, warnings)


# ------------------------------------------------------------ one-sided stable

def sample_positive_stable(beta: float, n: int, seed: int) -> np.ndarray:
    """Kanter's representation of the law with Laplace transform exp(-s**beta)."""
    if not 0 < beta <= 1:
        raise ValueError("beta must lie in (0, 1]")
    if beta == 1:
        return np.ones(n)
    rng = np.random.default_rng(seed)
    u = np.pi * rng.random(n)
    e = rng.standard_exponential(n)
    a = (np.sin(beta * u) ** (beta / (1 - beta)) * np.sin((1 - beta) * u)
         / np.sin(u) ** (1 / (1 - beta)))
    return (a / e) ** ((1 - beta) / beta)


def laplace_check(samples: np.ndarray, beta: float, s_values=(0.5, 1.0, 2.0)):
    """Rows (s, empirical mean of exp(-sS), exp(-s^beta), standard error)."""
    out = []
    for s in s_values:
        v = np.exp(-s * samples)
        out.append((s, float(v.mean()), math.exp(-s ** beta), float(v.std(ddof=1) / math.sqrt(len(v)))))
    return out


def tail_constant(samples: np.ndarray, beta: float, lo: float = 1e2, hi: float = 1e4, bins: int = 20):
    """Histogram estimate of lim u^(1+beta) * density over [lo, hi]."""
    edges = np.geomspace(lo, hi, bins + 1)
    counts, _ = np.histogram(samples, edges)
    dens = counts / (len(samples) * np.diff(edges))
    mid = np.sqrt(edges[:-1] * edges[1:])
    vals = mid ** (1 + beta) * dens
    # pool bins by counts for a stable point estimate
    est = float(np.sum(counts) / len(samples) / np.sum(np.diff(edges) * mid ** (-1 - beta)))
    return est, vals
