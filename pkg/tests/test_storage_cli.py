import hashlib
import json
import math
from pathlib import Path

import numpy as np
import pytest

from gupsim.cli import main
from gupsim.detection import DetectionConfig, QuadratureRecord, SpectrumEstimate, TimeSeries
from gupsim.dynamics import (
    DeformationParams,
    MechanicalMode,
    PhaseState,
    integrate_trajectory,
)
from gupsim.optomech import OpticalCavity
from gupsim.protocol import CampaignConfig, ProtocolSchedule, run_series
from gupsim.storage import (
    config_from_dict,
    config_hash,
    config_to_dict,
    load_config,
    load_dataset,
    load_raw,
    load_record,
    save_config,
    save_dataset,
    save_raw,
    save_record,
    save_spectrum,
    save_trajectory,
)

TWO_PI = 2 * math.pi
MODE = MechanicalMode(omega_m=TWO_PI * 525800.0,
                      gamma_m=TWO_PI * 525800.0 / 6.4e6,
                      mass=1e-10, T_bath=9.0)


def small_config(**kw):
    defaults = dict(
        mode=MODE, cavity=OpticalCavity(), deformation=DeformationParams(0.0),
        detection=DetectionConfig(), schedule=ProtocolSchedule.from_series(0.2),
        seed=2024, n_bar=5.0, alpha_sq=1200.0)
    defaults.update(kw)
    return CampaignConfig(**defaults)


def dir_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


class TestConfigRoundTrip:
    def test_dict_round_trip(self):
        cfg = small_config(series_probe_detunings=(0.0, 1000.0),
                           shift_injection=(500.0, 1e-5),
                           deformation=DeformationParams(beta0=1e30))
        d1 = config_to_dict(cfg)
        cfg2 = config_from_dict(d1)
        d2 = config_to_dict(cfg2)
        assert d1 == d2
        assert config_hash(d1) == config_hash(d2)

    def test_file_round_trip(self, tmp_path):
        cfg = small_config()
        h = save_config(cfg, tmp_path / "c.json")
        cfg2 = load_config(tmp_path / "c.json")
        assert config_hash(config_to_dict(cfg2)) == h

    def test_hash_sensitive_to_fields(self):
        d1 = config_to_dict(small_config(seed=1))
        d2 = config_to_dict(small_config(seed=2))
        assert config_hash(d1) != config_hash(d2)


class TestRecordIO:
    def test_record_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        x = TimeSeries(0.0, 3.2e-6, rng.standard_normal(64), {"seed": "[1, 2]"})
        y = TimeSeries(0.0, 3.2e-6, rng.standard_normal(64), {"seed": "[1, 2]"})
        rec = QuadratureRecord(x, y, cycle_index=7)
        save_record(rec, tmp_path / "r.qrec")
        back = load_record(tmp_path / "r.qrec")
        assert back.cycle_index == 7
        np.testing.assert_array_equal(back.x_quad.samples, x.samples)
        np.testing.assert_array_equal(back.y_quad.samples, y.samples)
        assert back.x_quad.dt == x.dt

    def test_raw_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(4)
        ts = TimeSeries(-0.002, 4e-7, rng.standard_normal(1000), {"kind": "bhd"})
        save_raw(ts, tmp_path / "r.braw")
        back = load_raw(tmp_path / "r.braw")
        np.testing.assert_array_equal(back.samples, ts.samples)
        assert back.t0 == ts.t0 and back.dt == ts.dt

    def test_dataset_round_trip(self, tmp_path):
        cfg = small_config(store_raw=True)
        ds = run_series(cfg, 0)
        save_dataset(ds, tmp_path / "d")
        back = load_dataset(tmp_path / "d")
        assert len(back.records) == len(ds.records)
        assert back.raw is not None and len(back.raw) == len(ds.raw)
        np.testing.assert_array_equal(back.records[0].x_quad.samples,
                                      ds.records[0].x_quad.samples)
        assert back.config_snapshot == ds.config_snapshot

    def test_spectrum_export(self, tmp_path):
        spec = SpectrumEstimate(freqs=np.array([1.0, 2.0, 3.0]),
                                psd=np.array([0.5, 1.5, 0.25]),
                                resolution=1.0, n_averages=3)
        save_spectrum(spec, tmp_path / "s.dat", header={"note": "x"})
        text = (tmp_path / "s.dat").read_text()
        assert "# columns: freq_hz psd_per_hz" in text
        rows = [l for l in text.splitlines() if not l.startswith("#")]
        assert len(rows) == 3 and float(rows[1].split()[1]) == 1.5

    def test_trajectory_export(self, tmp_path):
        traj = integrate_trajectory(PhaseState(x=1e-12, p=0.0), MODE,
                                    DeformationParams(0.0),
                                    dt=MODE.period / 200, n_steps=100)
        save_trajectory(traj, tmp_path / "t.dat")
        text = (tmp_path / "t.dat").read_text()
        assert "# beta0: 0.0" in text
        rows = [l for l in text.splitlines() if not l.startswith("#")]
        assert len(rows) == 101
        assert float(rows[0].split()[1]) == 1e-12


@pytest.fixture(scope="module")
def campaign_dir(tmp_path_factory):
    """A small simulated campaign shared by the CLI tests."""
    root = tmp_path_factory.mktemp("campaign")
    cfg = small_config(store_raw=False,
                       schedule=ProtocolSchedule.from_series(0.4, group_size=5))
    save_config(cfg, root / "config.json")
    rc = main(["simulate", "--config", str(root / "config.json"),
               "--out", str(root / "out"), "--series", "2"])
    assert rc == 0
    return root


class TestCli:
    def test_simulate_layout(self, campaign_dir):
        out = campaign_dir / "out"
        assert (out / "campaign.manifest").exists()
        for k in (0, 1):
            d = out / f"series_{k:02d}"
            assert (d / "config.snapshot").exists()
            assert len(list((d / "records").glob("*.qrec"))) == 10
            summary = json.loads((d / "summary.report").read_text())
            assert summary["kind"] == "operating-point"
            assert summary["operating"]["n_bar"] == 5.0

    def test_simulate_determinism(self, campaign_dir, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            rc = main(["simulate", "--config", str(campaign_dir / "config.json"),
                       "--out", str(out), "--series", "1"])
            assert rc == 0
        assert dir_digest(a) == dir_digest(b)

    def test_analyze(self, campaign_dir):
        out = campaign_dir / "out"
        rc = main(["analyze", "--in", str(out)])
        assert rc == 0
        report = json.loads((out / "analysis.report").read_text())
        assert report["n_series"] == 2
        assert report["shift_x"]["n"] == 4
        assert "null_compatible_2sigma" in report
        assert (out / "series_00" / "summary.report").exists()

    def test_shift_scan(self, campaign_dir):
        out = campaign_dir / "out"
        rc = main(["shift-scan", "--in", str(out)])
        assert rc == 0
        report = json.loads((out / "shift_scan.report").read_text())
        assert "slope" in report and "theory_slope" in report
        assert report["theory_slope"] == pytest.approx(2.6734, abs=1e-3)

    def test_bound(self, campaign_dir, capsys):
        out = campaign_dir / "out"
        main(["analyze", "--in", str(out)])
        capsys.readouterr()
        rc = main(["bound", "--summary", str(out / "analysis.report"),
                   "--quadrature", "x"])
        assert rc == 0
        result = json.loads(capsys.readouterr().out)
        assert result["beta0_limit"] > 0
        assert result["convention"] == "mean-square-displacement"

    def test_bound_rejects_unknown_convention(self, campaign_dir, capsys):
        out = campaign_dir / "out"
        main(["analyze", "--in", str(out)])
        rc = main(["bound", "--summary", str(out / "analysis.report"),
                   "--convention", "peak-hold"])
        assert rc != 0
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "UnknownConvention"

    def test_emit_plot_data(self, campaign_dir):
        out = campaign_dir / "out"
        rc = main(["emit-plot-data", "--what", "histogram", "--in", str(out)])
        assert rc == 0
        rc = main(["emit-plot-data", "--what", "quadratures", "--in", str(out)])
        assert rc == 0
        pd = out / "plot_data"
        assert (pd / "shift_histogram_x.dat").exists()
        assert (pd / "quadrature_y.dat").exists()

    def test_thermometry_stationary(self, tmp_path, capsys):
        root = tmp_path / "th"
        cfg = small_config(alpha_sq=0.0)
        save_config(cfg, tmp_path / "c.json")
        rc = main(["simulate", "--config", str(tmp_path / "c.json"),
                   "--out", str(root), "--stationary", "4"])
        assert rc == 0
        rc = main(["thermometry", "--in", str(root)])
        assert rc == 0
        report = json.loads((root / "thermometry.report").read_text())
        assert report["n_bar"] == pytest.approx(5.0, abs=1.5)
        assert report["purity"] == pytest.approx(1.0 / 11.0, abs=0.03)

    def test_thermometry_single_file(self, tmp_path, capsys):
        root = tmp_path / "th1"
        cfg = small_config(alpha_sq=0.0)
        save_config(cfg, tmp_path / "c1.json")
        main(["simulate", "--config", str(tmp_path / "c1.json"),
              "--out", str(root), "--stationary", "1"])
        capsys.readouterr()
        rc = main(["thermometry", "--in", str(root / "stationary" / "0000.braw"),
                   "--out", str(tmp_path / "single.report")])
        assert rc == 0
        report = json.loads((tmp_path / "single.report").read_text())
        assert math.isfinite(report["n_bar"])

    def test_machine_readable_error(self, tmp_path, capsys):
        rc = main(["analyze", "--in", str(tmp_path / "nothing")])
        assert rc != 0
        err = json.loads(capsys.readouterr().err)
        assert "error" in err and "message" in err

    def test_bad_config_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{\"mode\": {}}")
        rc = main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")])
        assert rc != 0
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "KeyError"
