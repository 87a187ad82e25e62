"""Command-line interface.

Subcommands:
    simulate        run a campaign from a config file, write dataset directories
    analyze         ring-down + transient-shift fits and campaign summary
    thermometry     PSD, Lorentzian pair fit, occupancy and purity report
    shift-scan      width-vs-shift table and regression against the spring line
    bound           deformation-parameter upper limit from a summary file
    emit-plot-data  two-column text exports (spectra, histograms, quadratures)

Every failure exits nonzero after printing a machine-readable JSON error
record to stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .detection import average_spectra, fit_lorentzian_pair, welch_psd
from .dynamics import purity
from .errors import GupsimError
from .estimation import (
    AMPLITUDE_CONVENTION,
    ShiftStatistics,
    beta_bound,
    width_vs_shift_scan,
)
from .optomech import spring_damping_slope
from .protocol import analyze_dataset, run_campaign, summarize_campaign
from .storage import (
    config_from_dict,
    config_hash,
    load_dataset,
    load_raw,
    save_dataset,
    save_histogram,
    save_spectrum,
)

TWO_PI = 2.0 * math.pi


def _fail(kind: str, message: str, code: int = 1) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def _stats_dict(s: ShiftStatistics) -> dict:
    counts, edges = s.histogram
    return {"mean_hz": s.mean, "std_hz": s.std, "n": s.n_samples,
            "standard_error_hz": s.standard_error, "z": s.z_score,
            "p_null": s.p_null, "histogram_counts": counts.tolist(),
            "histogram_edges_hz": edges.tolist()}


def cmd_simulate(args) -> int:
    cfg_dict = json.loads(Path(args.config).read_text())
    cfg_dict.pop("config_hash", None)
    cfg = config_from_dict(cfg_dict)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = Path(args.out)
    if args.stationary is not None:
        return _simulate_stationary(cfg, out, args.stationary)
    datasets = run_campaign(cfg, args.series)
    for ds in datasets:
        d = out / f"series_{ds.series_index:02d}"
        save_dataset(ds, d)
        # operating-point summary; `analyze` replaces it with the full analysis
        from .optomech import operating_report
        variant = cfg.series_variant(ds.series_index)
        summary = {
            "kind": "operating-point",
            "series_index": ds.series_index,
            "n_records": len(ds.records),
            "probe_detuning_hz": ds.probe_detuning / TWO_PI,
            "operating": operating_report(variant.operating_state),
            "provenance": {k: str(v) for k, v in sorted(ds.provenance.items())},
        }
        (d / "summary.report").write_text(
            json.dumps(summary, sort_keys=True, indent=2) + "\n")
    manifest = {
        "tool_version": __version__,
        "config_hash": config_hash(datasets[0].config_snapshot),
        "n_series": len(datasets),
        "series_dirs": [f"series_{ds.series_index:02d}" for ds in datasets],
    }
    (out / "campaign.manifest").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    print(f"wrote {len(datasets)} series to {out}")
    return 0


def _simulate_stationary(cfg, out: Path, duration: float) -> int:
    """Pump-on stationary records in 1 s chunks, for sideband thermometry."""
    from .detection import synthesize_bhd
    from .storage import config_to_dict, save_raw
    out.mkdir(parents=True, exist_ok=True)
    (out / "stationary").mkdir(exist_ok=True)
    snapshot = config_to_dict(cfg)
    snapshot["config_hash"] = config_hash(snapshot)
    (out / "config.snapshot").write_text(
        json.dumps(snapshot, sort_keys=True, indent=2) + "\n")
    chunk = 1.0
    n_chunks = max(int(round(duration / chunk)), 1)
    state = cfg.operating_state
    for k in range(n_chunks):
        ts = synthesize_bhd(state, cfg.mode, cfg.cavity, cfg.detection,
                            duration=chunk, seed=[cfg.seed, k])
        save_raw(ts, out / "stationary" / f"{k:04d}.braw")
    print(f"wrote {n_chunks} stationary records to {out / 'stationary'}")
    return 0


def _dataset_dirs(root: Path) -> list[Path]:
    root = Path(root)
    if (root / "records").is_dir():
        return [root]
    dirs = sorted(p for p in root.glob("series_*") if (p / "records").is_dir())
    if not dirs:
        raise FileNotFoundError(f"no dataset directories under {root}")
    return dirs


def cmd_analyze(args) -> int:
    dirs = _dataset_dirs(Path(args.indir))
    analyses = []
    for d in dirs:
        ds = load_dataset(d)
        a = analyze_dataset(ds, group_size=args.group_size)
        analyses.append(a)
        report = {
            "kind": "series-analysis",
            "series_index": a.series_index,
            "probe_detuning_hz": a.probe_detuning / TWO_PI,
            "n_groups": a.n_groups,
            "ringdown": [
                {"cycle_group": k, "A": f.A, "tau_s": f.tau, "f_m_hz": f.f_m,
                 "phi_rad": f.phi, "B": f.B, "delta_phi_rad": f.delta_phi,
                 "gamma_eff_hz": f.gamma_eff_hz,
                 "gamma_eff_hz_err": f.gamma_eff_hz_err,
                 "f_m_hz_err": f.f_m_err, "converged": f.converged,
                 "iterations": f.iterations, "window_s": list(f.window)}
                for k, f in enumerate(a.ringdown_fits)],
            "shift_x": _stats_dict(a.stats_x),
            "shift_y": _stats_dict(a.stats_y),
        }
        (d / "summary.report").write_text(
            json.dumps(report, sort_keys=True, indent=2) + "\n")
    summary = summarize_campaign(analyses)
    snapshot = load_dataset(dirs[0]).config_snapshot
    campaign = {
        "tool_version": __version__,
        "n_series": len(analyses),
        "shift_x": _stats_dict(summary.stats_x),
        "shift_y": _stats_dict(summary.stats_y),
        "operating": snapshot.get("operating", {}),
        "mode": snapshot.get("mode", {}),
        "null_compatible_2sigma": {
            "x": summary.stats_x.null_compatible(),
            "y": summary.stats_y.null_compatible(),
        },
    }
    out = Path(args.out) if args.out else Path(args.indir) / "analysis.report"
    out.write_text(json.dumps(campaign, sort_keys=True, indent=2) + "\n")
    print(f"X: mean {summary.stats_x.mean:+.1f} Hz, std {summary.stats_x.std:.1f} Hz, "
          f"n {summary.stats_x.n_samples}, z {summary.stats_x.z_score:+.2f}")
    print(f"Y: mean {summary.stats_y.mean:+.1f} Hz, std {summary.stats_y.std:.1f} Hz, "
          f"n {summary.stats_y.n_samples}, z {summary.stats_y.z_score:+.2f}")
    print(f"wrote {out}")
    return 0


def _load_detection_for(path: Path):
    """DetectionConfig from the dataset's config snapshot."""
    snap = json.loads((path / "config.snapshot").read_text())
    snap.pop("config_hash", None)
    snap.pop("provenance", None)
    return config_from_dict(snap).detection


def cmd_thermometry(args) -> int:
    target = Path(args.indir)
    if target.is_file():
        raws = [load_raw(target)]
        root = target.parent.parent
        if not (root / "config.snapshot").exists():
            return _fail("NoConfig", f"cannot locate config.snapshot near {target}")
        det = _load_detection_for(root)
    elif (target / "stationary").is_dir():
        raws = [load_raw(p) for p in sorted((target / "stationary").glob("*.braw"))]
        det = _load_detection_for(target)
        root = target
    else:
        dirs = _dataset_dirs(target)
        raws = []
        for d in dirs:
            raws.extend(load_raw(p) for p in sorted((d / "raw").glob("*.braw")))
        if not raws:
            return _fail("NoRawData",
                         "thermometry needs raw series (simulate with store_raw "
                         "or --stationary)")
        det = _load_detection_for(dirs[0])
        root = target
    seg = int(round(det.sample_rate / args.resolution))
    spectra = []
    for ts in raws:
        if len(ts) >= seg:
            spectra.append(welch_psd(ts, segment_length=seg))
    if not spectra:
        return _fail("SegmentTooLong", "raw records shorter than one PSD segment")
    spec = average_spectra(spectra)
    fit = fit_lorentzian_pair(spec, det)
    report = {
        "n_averages": spec.n_averages,
        "resolution_hz": spec.resolution,
        "stokes": {"center_hz": fit.stokes.center, "width_hz": fit.stokes.width,
                   "area": fit.stokes.area},
        "antistokes": {"center_hz": fit.antistokes.center,
                       "width_hz": fit.antistokes.width, "area": fit.antistokes.area},
        "corrected_ratio": fit.corrected_ratio,
        "corrected_ratio_err": fit.corrected_ratio_err,
        "n_bar": fit.occupancy,
        "n_bar_err": fit.occupancy_err,
        "purity": purity(fit.occupancy) if math.isfinite(fit.occupancy) else 0.0,
        "gamma_eff_hz": 0.5 * (fit.stokes.width + fit.antistokes.width),
    }
    out = Path(args.out) if args.out else root / "thermometry.report"
    out.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    print(f"n_bar = {report['n_bar']:.2f} +/- {report['n_bar_err']:.2f}, "
          f"purity = {report['purity']:.4f}, "
          f"R = {report['corrected_ratio']:.3f}")
    print(f"wrote {out}")
    return 0


def cmd_shift_scan(args) -> int:
    dirs = _dataset_dirs(Path(args.indir))
    analyses = [analyze_dataset(load_dataset(d), group_size=args.group_size)
                for d in dirs]
    fits = [f for a in analyses for f in a.ringdown_fits]
    scan = width_vs_shift_scan(fits)
    snap = json.loads((dirs[0] / "config.snapshot").read_text())
    snap.pop("config_hash", None)
    snap.pop("provenance", None)
    cfg = config_from_dict(snap)
    theory = spring_damping_slope(cfg.cavity, cfg.mode)
    table = Path(args.indir) / "shift_scan.dat"
    lines = ["# columns: f_m_hz width_hz width_err_hz"]
    for fm, w, we in scan.points:
        lines.append(f"{fm!r} {w!r} {we!r}")
    table.write_text("\n".join(lines) + "\n")
    report = {"slope": scan.slope, "slope_err": scan.slope_err,
              "offset_hz": scan.offset, "offset_err_hz": scan.offset_err,
              "theory_slope": theory,
              "slope_over_theory": scan.slope / theory}
    out = Path(args.indir) / "shift_scan.report"
    out.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    print(f"slope = {scan.slope:.3f} +/- {scan.slope_err:.3f} "
          f"(theory {theory:.3f}), offset = {scan.offset:.2f} Hz")
    print(f"wrote {out} and {table}")
    return 0


def cmd_bound(args) -> int:
    summary = json.loads(Path(args.summary).read_text())
    if args.convention != AMPLITUDE_CONVENTION:
        return _fail("UnknownConvention",
                     f"supported amplitude convention: {AMPLITUDE_CONVENTION!r}")
    quad = args.quadrature.lower()
    key = f"shift_{quad}"
    if key not in summary:
        return _fail("MissingStatistics", f"summary lacks {key}")
    s = summary[key]
    counts = np.array(s["histogram_counts"])
    edges = np.array(s["histogram_edges_hz"])
    stats = ShiftStatistics(mean=s["mean_hz"], std=s["std_hz"],
                            n_samples=s["n"], histogram=(counts, edges),
                            quadrature=quad.upper())
    op = summary["operating"]
    md = summary["mode"]
    from .dynamics import MechanicalMode
    from .optomech import CooledState
    mode = MechanicalMode(omega_m=TWO_PI * md["frequency_hz"],
                          gamma_m=TWO_PI * md["damping_hz"],
                          mass=md["mass_kg"], T_bath=md["bath_temperature_k"])
    operating = CooledState(n_bar=op["n_bar"], gamma_eff=TWO_PI * op["gamma_eff_hz"],
                            omega_eff=mode.omega_m,
                            alpha=complex(math.sqrt(op["alpha_sq"]), 0.0))
    b = beta_bound(stats, operating, mode)
    result = {"beta0_limit": b.beta0_limit, "beta_tilde_limit": b.beta_tilde_limit,
              "epsilon_max": b.epsilon_max, "delta_f_max_hz": b.delta_f_max,
              "amplitude_sq_m2": b.amplitude_sq, "convention": b.convention,
              "quadrature": quad.upper(), "degenerate": b.degenerate}
    print(json.dumps(result, sort_keys=True, indent=2))
    return 0


def cmd_emit_plot_data(args) -> int:
    root = Path(args.indir)
    outdir = Path(args.out) if args.out else root / "plot_data"
    outdir.mkdir(parents=True, exist_ok=True)
    if args.what == "spectra":
        dirs = _dataset_dirs(root)
        det = _load_detection_for(dirs[0])
        raws = []
        for d in dirs:
            raws.extend(load_raw(p) for p in sorted((d / "raw").glob("*.braw")))
        if not raws:
            return _fail("NoRawData", "spectra need raw series (store_raw)")
        seg = int(round(det.sample_rate / args.resolution))
        spectra = [welch_psd(ts, segment_length=seg) for ts in raws if len(ts) >= seg]
        spec = average_spectra(spectra)
        save_spectrum(spec, outdir / "heterodyne_spectrum.dat")
        print(f"wrote {outdir / 'heterodyne_spectrum.dat'}")
    elif args.what == "histogram":
        dirs = _dataset_dirs(root)
        analyses = [analyze_dataset(load_dataset(d), group_size=args.group_size)
                    for d in dirs]
        summary = summarize_campaign(analyses)
        for name, stats in (("x", summary.stats_x), ("y", summary.stats_y)):
            counts, edges = stats.histogram
            save_histogram(counts, edges, outdir / f"shift_histogram_{name}.dat",
                           header={"mean_hz": stats.mean, "std_hz": stats.std,
                                   "n": stats.n_samples})
        print(f"wrote shift histograms to {outdir}")
    elif args.what == "quadratures":
        dirs = _dataset_dirs(root)
        ds = load_dataset(dirs[0])
        grouped = ds.grouped_records(args.group_size or 10)
        rec = grouped[0]
        t = rec.times
        for name, q in (("x", rec.x_quad.samples), ("y", rec.y_quad.samples)):
            lines = ["# columns: t_s " + name]
            for i in range(t.size):
                lines.append(f"{t[i]!r} {q[i]!r}")
            (outdir / f"quadrature_{name}.dat").write_text("\n".join(lines) + "\n")
        print(f"wrote quadrature traces to {outdir}")
    else:
        return _fail("UnknownTarget", f"unknown --what {args.what}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gupsim", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a campaign and write datasets")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--series", type=int, default=1)
    s.add_argument("--stationary", type=float, default=None, metavar="SECONDS",
                   help="write pump-on stationary records instead of cycles")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("analyze", help="fit ring-downs and transient shifts")
    s.add_argument("--in", dest="indir", required=True)
    s.add_argument("--out", default=None)
    s.add_argument("--group-size", type=int, default=None)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("thermometry", help="sideband thermometry from raw records")
    s.add_argument("--in", dest="indir", required=True)
    s.add_argument("--out", default=None)
    s.add_argument("--resolution", type=float, default=50.0)
    s.set_defaults(func=cmd_thermometry)

    s = sub.add_parser("shift-scan", help="width-vs-shift regression")
    s.add_argument("--in", dest="indir", required=True)
    s.add_argument("--group-size", type=int, default=None)
    s.set_defaults(func=cmd_shift_scan)

    s = sub.add_parser("bound", help="deformation-parameter upper limit")
    s.add_argument("--summary", required=True)
    s.add_argument("--convention", default=AMPLITUDE_CONVENTION)
    s.add_argument("--quadrature", default="x", choices=["x", "y", "X", "Y"])
    s.set_defaults(func=cmd_bound)

    s = sub.add_parser("emit-plot-data", help="two-column exports of figures content")
    s.add_argument("--what", required=True,
                   choices=["spectra", "histogram", "quadratures"])
    s.add_argument("--in", dest="indir", required=True)
    s.add_argument("--out", default=None)
    s.add_argument("--resolution", type=float, default=50.0)
    s.add_argument("--group-size", type=int, default=None)
    s.set_defaults(func=cmd_emit_plot_data)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GupsimError as exc:
        return _fail(type(exc).__name__, str(exc))
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        return _fail(type(exc).__name__, str(exc))


if __name__ == "__main__":
    raise SystemExit(main())
