import json

import pytest

from gasket_bhi.cli import main


def test_spline_verify(capsys):
    assert main(["spline-verify", "--depth", "3"]) == 0
    assert "violations: 0" in capsys.readouterr().out


def test_spline_eval_rational(capsys):
    assert main(["spline-eval", "--path", "2"]) == 0
    assert "values 12/25 0/1 1/25" in capsys.readouterr().out


def test_solve_harmonic_and_manifest(tmp_path):
    g = tmp_path / "g.json"
    assert main(["build-graph", "--level", "3", "--out", str(g)]) == 0
    out = tmp_path / "h"
    args = ["solve-harmonic", "--graph", str(g), "--center", "1/2,0", "--r2", "1/16",
            "--alpha", "0.5", "--target-cell", "0,0,2", "--out", str(out)]
    assert main(args) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert set(man["outputs"]) == {"harmonic.csv", "killed.csv"}


@pytest.mark.parametrize("cmd", ["exit-time", "green"])
def test_domain_commands(tmp_path, cmd):
    assert main([cmd, "--level", "4", "--center", "1/2,0", "--r2", "1/16", "--alpha", "0.7",
                 "--out", str(tmp_path)]) == 0


def test_usage_errors(capsys):
    assert main(["bhi", "run", "--set", "alphas=1.5"]) == 2
    assert main(["bhi", "run", "--set", "nope=1"]) == 2
    assert main(["exit-time", "--level", "3", "--alpha", "0.5"]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["spline-eval", "--format", "hex"])
    assert exc.value.code == 2


def test_print_config(capsys):
    assert main(["bhi", "run", "--print-config", "--set", "instances=3"]) == 0
    assert "instances = 3" in capsys.readouterr().out


def test_mc_harmonic(tmp_path):
    args = ["mc-harmonic", "--level", "3", "--center", "1/2,0", "--r2", "1/16", "--alpha", "0.5",
            "--target-cell", "0,0,2", "--start", "1/2,0", "--paths", "2000", "--out", str(tmp_path)]
    assert main(args) == 0
    lines = (tmp_path / "frequencies.csv").read_text().splitlines()
    assert lines[0] == "alpha,start,target,count,N,ci_lo,ci_hi"
