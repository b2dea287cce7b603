import json
import os

import numpy as np
import pytest

from slicesim.errors import SchemaMismatch
from slicesim.report import (ScenarioReport, clean, diff_reports, load_report, read_table_csv, table_csv,
                             write_outputs)


def make(weights=(0.5, 0.5), phases=(0.0, 1.0)):
    rows = [{"key": f"{s}#0", "site": s, "weight": w, "time": 1.0, "time_std": 0.1, "phase": p, "photon_count": 1}
            for s, w, p in zip("AB", weights, phases)]
    return ScenarioReport("demo", rows, {"norm_ok": True, "energy_ok": True},
                          {"x": np.float64(0.1), "bad": float("nan"), "arr": np.arange(3)},
                          {"config_hash": "hash123", "version": "0"},
                          series={"t": [0.0, 0.1], "w": [0.0, 0.25]},
                          curves={"c": {"x": [1.0, 2.0], "y": [3.0, 4.0]}},
                          events=['{"kind": "capture", "run_id": "hash123"}'])


def test_clean_converts_numpy_and_nan():
    assert clean({"a": np.int64(2), "b": [np.nan, np.float32(1.5)], "c": (True,)}) == \
        {"a": 2, "b": [None, 1.5], "c": [True]}


def test_json_is_stable_and_full_precision():
    r = make(phases=(0.1 + 0.2, 1 / 3))
    text = r.to_json()
    assert text == make(phases=(0.1 + 0.2, 1 / 3)).to_json()
    d = json.loads(text)
    assert d["branches"][0]["phase"] == 0.1 + 0.2
    assert d["branches"][1]["phase"] == 1 / 3
    assert d["metrics"]["bad"] is None
    assert ScenarioReport.from_json(text).to_json() == text


def test_diff_self_is_empty():
    d = diff_reports(make(), make())
    assert d["empty"] and d["branches"] == [] and d["max_abs"] == {"weight": 0.0, "time": 0.0, "phase": 0.0}


def test_diff_reports_deltas_and_wrap():
    a = make(phases=(3.1, 0.0))
    b = make(weights=(0.5, 0.5 + 1e-9), phases=(-3.1, 0.0))
    d = diff_reports(a, b)
    assert not d["empty"]
    assert d["max_abs"]["weight"] == pytest.approx(1e-9)
    assert d["max_abs"]["phase"] == pytest.approx(2 * np.pi - 6.2)
    assert diff_reports(a, b, tol=1.0)["branches"] == []


def test_diff_missing_keys_and_schema():
    a = make()
    b = make()
    b.branches = b.branches[:1]
    d = diff_reports(a, b)
    assert d["only_a"] == ["B#0"] and not d["empty"]
    bad = a.to_dict()
    bad["schema_version"] = 99
    with pytest.raises(SchemaMismatch):
        diff_reports(a, bad)
    with pytest.raises(SchemaMismatch):
        ScenarioReport.from_dict(bad)


def test_failed_audits():
    r = make()
    assert r.failed_audits() == []
    r.audits["norm_ok"] = False
    assert r.failed_audits() == ["norm"]


def test_table_csv_round_trip():
    text = table_csv({"t": [0.0, 0.1], "v": [1 / 3, 2.0]}, "h")
    assert text.splitlines()[0] == "# config_hash=h"


def test_outputs_are_written_and_deterministic(tmp_path):
    r = make()
    a, b = tmp_path / "a", tmp_path / "b"
    pa = write_outputs(r, str(a), "hash123")
    write_outputs(r, str(b), "hash123")
    names = sorted(os.path.basename(p) for p in pa)
    assert names == ["curve_c.csv", "curve_c.svg", "events.jsonl", "report.json", "series.csv", "series.svg"]
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n
        assert b"hash123" in (a / n).read_bytes(), n
    assert load_report(str(a / "report.json")).to_json() == r.to_json()
    cols = read_table_csv(str(a / "series.csv"))
    np.testing.assert_array_equal(cols["w"], [0.0, 0.25])
    assert not [p for p in os.listdir(a) if p.startswith(".tmp")]
