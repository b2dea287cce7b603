"""Scenario reports: JSON serialization, diffs and on-disk artifacts.

Reports carry no wall-clock data, so identical configs give byte-identical
``report.json``.  Floats are written with ``repr`` precision; non-finite
values become ``null``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Union

import numpy as np

from .errors import SchemaMismatch

SCHEMA_VERSION = 1
BRANCH_FIELDS = ("key", "site", "weight", "time", "time_std", "phase", "photon_count")


def clean(obj):
    """Recursively convert numpy types to plain Python and non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


@dataclass
class ScenarioReport:
    scenario: str
    branches: List[dict]
    audits: Dict[str, object]
    metrics: Dict[str, object]
    provenance: Dict[str, object]
    # artifacts kept out of report.json
    series: Dict[str, list] = field(default_factory=dict)
    curves: Dict[str, Dict[str, list]] = field(default_factory=dict)
    events: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return clean({
            "schema_version": SCHEMA_VERSION,
            "scenario": self.scenario,
            "branches": self.branches,
            "audits": self.audits,
            "metrics": self.metrics,
            "provenance": self.provenance,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise SchemaMismatch(f"report schema {d.get('schema_version')!r} != {SCHEMA_VERSION}")
        return cls(d["scenario"], d["branches"], d["audits"], d["metrics"], d["provenance"])

    @classmethod
    def from_json(cls, text: str) -> "ScenarioReport":
        return cls.from_dict(json.loads(text))

    def failed_audits(self) -> List[str]:
        return sorted(k[:-3] for k, v in self.audits.items() if k.endswith("_ok") and v is False)


def _as_dict(r: Union[ScenarioReport, dict]) -> dict:
    return r.to_dict() if isinstance(r, ScenarioReport) else r


def _wrap(p: float) -> float:
    return float((p + np.pi) % (2 * np.pi) - np.pi)


def diff_reports(a: Union[ScenarioReport, dict], b: Union[ScenarioReport, dict], tol: float = 0.0) -> dict:
    """Per-branch weight/time/phase deltas keyed by branch key.

    Only branches whose deltas exceed ``tol`` are listed; ``max_abs`` always
    summarizes all matched branches.  Phase deltas are wrapped to [-pi, pi).
    """
    da, db = _as_dict(a), _as_dict(b)
    if da.get("schema_version") != db.get("schema_version"):
        raise SchemaMismatch(
            f"schema versions differ: {da.get('schema_version')!r} vs {db.get('schema_version')!r}")
    ba = {r["key"]: r for r in da["branches"]}
    bb = {r["key"]: r for r in db["branches"]}
    rows, max_abs = [], {"weight": 0.0, "time": 0.0, "phase": 0.0}
    for key in sorted(set(ba) & set(bb)):
        ra, rb = ba[key], bb[key]
        delta = {
            "weight": rb["weight"] - ra["weight"],
            "time": rb["time"] - ra["time"],
            "phase": _wrap(rb["phase"] - ra["phase"]),
        }
        for k, v in delta.items():
            max_abs[k] = max(max_abs[k], abs(v))
        if any(abs(v) > tol for v in delta.values()) or ra.get("photon_count") != rb.get("photon_count"):
            rows.append({"key": key, **delta})
    only_a = sorted(set(ba) - set(bb))
    only_b = sorted(set(bb) - set(ba))
    return {
        "scenario": [da.get("scenario"), db.get("scenario")],
        "branches": rows,
        "only_a": only_a,
        "only_b": only_b,
        "max_abs": max_abs,
        "empty": not rows and not only_a and not only_b,
    }


# --------------------------------------------------------------------------
# files

def write_atomic(path: str, text: str):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def table_csv(columns: Dict[str, list], config_hash: str) -> str:
    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    names = list(columns)
    w.writerow(names)
    for row in zip(*(columns[n] for n in names)):
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def read_table_csv(path: str) -> Dict[str, np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    names, data = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
    return {n: data[:, i] for i, n in enumerate(names)}


def plot_table(csv_path: str, svg_path: str, config_hash: str, title: str = "", logy: bool = False):
    """Plot every column of a table CSV against its first column as a standalone SVG."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    data = read_table_csv(csv_path)
    names = list(data)
    with matplotlib.rc_context({"svg.hashsalt": config_hash, "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for n in names[1:]:
            ax.plot(data[names[0]], data[n], label=n)
        ax.set_xlabel(names[0])
        if logy:
            ax.set_yscale("log")
        if title:
            ax.set_title(title)
        if len(names) > 2:
            ax.legend(fontsize=7)
        fig.tight_layout()
        tmp = svg_path + ".tmp"
        fig.savefig(tmp, format="svg", metadata={"Date": None, "Description": f"config_hash={config_hash}"})
        plt.close(fig)
        os.replace(tmp, svg_path)


def write_outputs(report: ScenarioReport, out_dir: str, config_hash: str, plots: bool = True) -> List[str]:
    """Write report.json, series.csv, events.jsonl, curve CSVs and optional SVG plots."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    def put(name, text):
        p = os.path.join(out_dir, name)
        write_atomic(p, text)
        paths.append(p)
        return p

    put("report.json", report.to_json())
    series_path = put("series.csv", table_csv(report.series, config_hash))
    put("events.jsonl", "".join(line + "\n" for line in report.events))
    curve_paths = {name: put(f"curve_{name}.csv", table_csv(cols, config_hash))
                   for name, cols in sorted(report.curves.items())}
    if plots:
        svg = os.path.join(out_dir, "series.svg")
        plot_table(series_path, svg, config_hash, f"{report.scenario}: norm and weights vs t")
        paths.append(svg)
        for name, p in curve_paths.items():
            svg = os.path.join(out_dir, f"curve_{name}.svg")
            plot_table(p, svg, config_hash, name.replace("_", " "))
            paths.append(svg)
    return paths


def load_report(path: str) -> ScenarioReport:
    with open(path, encoding="utf-8") as fh:
        return ScenarioReport.from_json(fh.read())
