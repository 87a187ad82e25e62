"""Golden-run regression: pinned reports from the first validated build.

The datasets are regenerated from their pinned (config, seed) pairs — the
simulator is byte-deterministic, so this is equivalent to shipping the data —
and the analysis output must match the frozen reports.
"""

import json
from pathlib import Path

import pytest

from gupsim.cli import main

GOLDEN = Path(__file__).parent / "golden"


def assert_deep_close(got, want, path="", rtol=1e-9):
    if isinstance(want, dict):
        assert set(got) == set(want), f"key mismatch at {path}"
        for k in want:
            assert_deep_close(got[k], want[k], f"{path}.{k}", rtol)
    elif isinstance(want, list):
        assert len(got) == len(want), f"length mismatch at {path}"
        for i, (g, w) in enumerate(zip(got, want)):
            assert_deep_close(g, w, f"{path}[{i}]", rtol)
    elif isinstance(want, float):
        assert got == pytest.approx(want, rel=rtol, abs=1e-12), f"value at {path}"
    else:
        assert got == want, f"value at {path}"


def test_golden_analyze_report(tmp_path):
    rc = main(["simulate", "--config", str(GOLDEN / "analyze_config.json"),
               "--out", str(tmp_path / "out"), "--series", "2"])
    assert rc == 0
    rc = main(["analyze", "--in", str(tmp_path / "out")])
    assert rc == 0
    got = json.loads((tmp_path / "out" / "analysis.report").read_text())
    want = json.loads((GOLDEN / "analyze_report.json").read_text())
    assert_deep_close(got, want)


def test_golden_thermometry_report(tmp_path):
    rc = main(["simulate", "--config", str(GOLDEN / "thermometry_config.json"),
               "--out", str(tmp_path / "th"), "--stationary", "6"])
    assert rc == 0
    rc = main(["thermometry", "--in", str(tmp_path / "th")])
    assert rc == 0
    got = json.loads((tmp_path / "th" / "thermometry.report").read_text())
    want = json.loads((GOLDEN / "thermometry_report.json").read_text())
    assert_deep_close(got, want)
    # round trip lands on the configured occupancy
    assert got["n_bar"] == pytest.approx(5.0, abs=0.5)
    assert got["purity"] == pytest.approx(1.0 / 11.0, abs=0.02)
