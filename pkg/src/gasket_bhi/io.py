"""Deterministic CSV/JSON output and run manifests.

Rationals are written as ``num/den`` and floats with 17 significant digits.
Files never contain timings, so identical runs give identical bytes; wall
times go to the append-only ``runs.jsonl`` of the run directory.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__

MANIFEST_SCHEMA = "gasket-bhi-manifest/1"


def fmt(v) -> str:
    """Scalar to CSV text."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, Fraction):
        return f"{v.numerator}/{v.denominator}"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if math.isnan(v) else format(v, ".17g")
    return str(v)


def _encode(v, indent: int) -> str:
    pad = " " * indent
    inner = " " * (indent + 1)
    if isinstance(v, dict):
        if not v:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {_encode(x, indent + 1)}" for k, x in v.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(v, (list, tuple, np.ndarray)):
        if len(v) == 0:
            return "[]"
        items = [inner + _encode(x, indent + 1) for x in v]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if v is None:
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, Fraction):
        return json.dumps(f"{v.numerator}/{v.denominator}")
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return format(v, ".17g") if math.isfinite(v) else "null"
    return json.dumps(str(v))


def dumps(obj) -> str:
    """JSON text with 17-significant-digit floats; non-finite floats become null."""
    return _encode(obj, 0) + "\n"


def write_text(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    return path


def csv_text(header: list[str], rows, schema: str | None = None) -> str:
    buf = io.StringIO()
    if schema:
        buf.write(f"# {schema}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        if isinstance(r, dict):
            r = [r.get(h) for h in header]
        w.writerow([fmt(x) for x in r])
    return buf.getvalue()


def write_csv(path, header, rows, schema=None) -> Path:
    return write_text(Path(path), csv_text(header, rows, schema))


def write_json(path, obj) -> Path:
    return write_text(Path(path), dumps(obj))


@dataclass
class RunManifest:
    command: str
    config_hash: str | None = None
    seed_plan: dict | None = None
    tolerances: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)   # file name -> sha256
    started: float = field(default_factory=time.time)

    def as_dict(self) -> dict:
        return {"schema": MANIFEST_SCHEMA, "tool_version": __version__, "command": self.command,
                "config_hash": self.config_hash, "seed_plan": self.seed_plan,
                "tolerances": self.tolerances, "diagnostics": self.diagnostics,
                "outputs": dict(sorted(self.outputs.items()))}

    def record(self, path: Path):
        self.outputs[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()

    def finish(self, outdir) -> Path:
        outdir = Path(outdir)
        path = write_json(outdir / "manifest.json", self.as_dict())
        entry = {"command": self.command, "config_hash": self.config_hash,
                 "wall_time_s": round(time.time() - self.started, 3), "finished": time.time()}
        with open(outdir / "runs.jsonl", "a") as fh:
            fh.write(json.dumps(entry) + "\n")
        return path


RATIO_COLUMNS = ["alpha", "instance_id", "level", "R", "n_D", "n_eval", "flags"]
FREQUENCY_COLUMNS = ["alpha", "start", "target", "count", "N", "ci_lo", "ci_hi"]
CONSTANT_COLUMNS = ["lemma", "alpha", "scale", "instance_id", "c_hat_low", "c_hat_high", "flags"]


def emit_results(report, outdir, command: str | None = None) -> list[Path]:
    """Write report.json, ratios.csv, constants.csv and the manifest."""
    outdir = Path(outdir)
    d = report.as_dict()
    man = RunManifest(command or report.kind, d["config_hash"], d["seed_plan"],
                      {c.name: c.tolerance for c in report.checks}, report.diagnostics)
    ref = f"{report.kind}; config {d['config_hash']}; see manifest.json"
    paths = [write_json(outdir / "report.json", d)]
    if report.ratios:
        if "R" in report.ratios[0]:
            paths.append(write_csv(outdir / "ratios.csv", RATIO_COLUMNS, report.ratios, ref))
        else:
            paths.append(write_csv(outdir / "frequencies.csv", FREQUENCY_COLUMNS, report.ratios, ref))
    if report.constants:
        paths.append(write_csv(outdir / "constants.csv", CONSTANT_COLUMNS, report.constants, ref))
    for p in paths:
        man.record(p)
    paths.append(man.finish(outdir))
    return paths
