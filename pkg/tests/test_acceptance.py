"""Acceptance battery: one PASS/FAIL line per criterion.

The heavy batteries run once per session through module fixtures; the
summary lines are printed at the end of the pytest run.
"""
import filecmp
from fractions import Fraction
import math
import time

import numpy as np
import pytest

from gasket_bhi.cli import main
from gasket_bhi.config import ExperimentConfig
from gasket_bhi.geometry import F_PLUS, build_window
from gasket_bhi.harness import run_bhi, run_lemma_battery, run_mc_validation, run_scaling_suite, \
    run_subordinator_law
from gasket_bhi.spline import vertex_table, verify_spline_condition
from gasket_bhi.stable import WALK_DIM, build_fractional_operator

RESULTS: dict[int, str] = {}
ALPHAS = (0.3, 0.5, 0.7, 0.9)


def record(n: int, title: str, ok: bool, detail: str):
    line = f"criterion {n} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


def _failed(rep):
    return "; ".join(f"{c.name}={c.value:.4g}" for c in rep.checks if not c.passed)


def test_1_spline_exactness(capsys):
    t = time.perf_counter()
    assert main(["spline-verify", "--depth", "6"]) == 0
    dt = time.perf_counter() - t
    rep = verify_spline_condition(6)
    ok = rep.violations == 0 and dt < 10 and rep.states_checked >= 3 ** 6
    record(1, "spline exactness", ok,
           f"{rep.states_checked} states, {rep.violations} violations, {dt:.2f} s")


def test_2_spline_values():
    t = vertex_table(1)
    mids = sorted(t[xy] for xy in ((1, 1), (2, 0), (3, 1)))
    want = [Fraction(1, 25), Fraction(12, 25), Fraction(12, 25)]
    tabs = [vertex_table(1, top) for top in (1, 2, 3)]
    unity = all(sum(tb[xy] for tb in tabs) == 1 for xy in t)
    record(2, "spline values", mids == want and unity, f"midpoints {[str(m) for m in mids]}, partition {unity}")


def test_3_operator_sanity():
    g = build_window(F_PLUS, 5)
    worst = {}
    ok = True
    for alpha in ALPHAS:
        for boundary in ("absorbing", "reflecting"):
            op = build_fractional_operator(g, alpha / WALK_DIM, boundary=boundary)
            L = op.matrix()
            S = op.measure[:, None] * L
            sym = np.abs(S - S.T).max() / np.abs(S).max()
            off = (L - np.diag(np.diag(L))).max()
            ok &= sym <= 1e-10 and off <= 1e-12
            worst["sym"] = max(worst.get("sym", 0), sym)
            worst["off"] = max(worst.get("off", -1), off)
            if boundary == "reflecting":
                rs = np.abs(op.row_sums()).max()
                ok &= rs <= 1e-10
                worst["const"] = max(worst.get("const", 0), rs)
    op = build_fractional_operator(g, 1.0)
    P = op._P.toarray()
    exact = np.array_equal(op.matrix(), np.eye(len(op.states)) - P)
    ok &= exact
    record(3, "operator sanity", ok,
           f"symmetry {worst['sym']:.1e}, max off-diagonal {worst['off']:.1e}, "
           f"constants {worst['const']:.1e}, beta=1 exact {exact}")


def test_4_oracle_equivalence():
    rep = run_mc_validation(ALPHAS, level=4, n_paths=100_000, seed=1)
    zmax = max(c.value for c in rep.checks)
    record(4, "oracle equivalence", rep.passed,
           f"{len(rep.checks)} comparisons, max |z| {zmax:.2f} (limit 3) {_failed(rep)}")


def test_5_scaling_exponents():
    rep = run_scaling_suite(ExperimentConfig())
    slopes = {k: v["slope"] for k, v in rep.summary.items() if k.startswith("exit_exponent")}
    walk = rep.summary["walk_dimension"]
    detail = (f"walk slope {walk['slope_mc']:.4f} (exact-solve {walk['slope_exact']:.4f}) vs {WALK_DIM:.4f}; "
              + ", ".join(f"{k.split('=')[1]}->{s:.3f}" for k, s in slopes.items())
              + f"; Lambda exact {rep.summary['lambda_dilation']['exact']}")
    record(5, "scaling exponents", rep.passed, detail + (" " + _failed(rep) if not rep.passed else ""))


def test_6_subordinator_law():
    rep = run_subordinator_law(0.5, 1_000_000, seed=1, m_check=10_000)
    tc = rep.summary["tail_constants"]
    record(6, "subordinator law", rep.passed,
           f"c_m m^1.5 {tc['c_m_scaled']:.5f} vs beta/Gamma(1-beta) {tc['beta_over_gamma']:.5f}; "
           f"empirical tail {tc['empirical']:.4f}; A_alpha {tc['A_alpha']:.4f} (reported only) "
           + _failed(rep))


@pytest.fixture(scope="module")
def bhi_report():
    return run_bhi(ExperimentConfig())


def test_7_bhi_battery(bhi_report):
    rep = bhi_report
    maxes = []
    for alpha in ALPHAS:
        a = rep.summary[f"alpha={alpha}/level=7"]
        b = rep.summary[f"alpha={alpha}/level=8"]
        maxes.append(f"{alpha}: {a['R']['max']:.3f}/{b['R']['max']:.3f} excl {a['excluded_rate']:.2f}")
    record(7, "BHI battery", rep.passed, "max R level 7/8 " + "; ".join(maxes) + " " + _failed(rep))


def test_8_lemma_battery():
    rep = run_lemma_battery(ExperimentConfig())
    drift = max((c.value for c in rep.checks if "dilation" in c.name), default=math.nan)
    chain = sum(s.get("chain_failures", 0) for s in rep.summary.values())
    record(8, "lemma battery", rep.passed,
           f"chain failures {chain}, max dilation drift {drift:.3f} (limit 0.25) " + _failed(rep))


SMALL = ["--set", "level=5", "--set", "level_fine=6", "--set", "d_level=4", "--set", "b_order=2",
         "--set", "instances=5", "--set", "walk_paths=2000", "--set", "scaling_level=5",
         "--set", "walk_level=5"]


def test_9_determinism(tmp_path):
    same = []
    runs = [["bhi", "run", *SMALL], ["bhi", "lemmas", *SMALL], ["bhi", "scaling", *SMALL],
            ["mc-validate", "--alphas", "0.5", "--paths", "3000", "--samples", "20000"]]
    for argv in runs:
        dirs = [tmp_path / f"{argv[0]}-{argv[1]}-{i}" for i in range(2)]
        for d in dirs:
            main([*argv, "--out", str(d)])
        names = sorted(p.name for p in dirs[0].iterdir() if p.name != "runs.jsonl")
        match, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], names, shallow=False)
        same.append((" ".join(argv[:2]), len(match), mismatch + errors))
    ok = all(not bad for _, _, bad in same) and all(n >= 2 for _, n, _ in same)
    record(9, "determinism", ok, "; ".join(f"{c}: {n} identical files{' ' + str(b) if b else ''}"
                                            for c, n, b in same))
