#!/usr/bin/env python3
"""Produce two-column text artifacts for plotting: heterodyne sideband spectra
(cooled and coherently excited), averaged quadrature ring-down traces, and the
shift histogram of a small null campaign."""

import argparse
import math
from pathlib import Path

from gupsim.detection import (
    DetectionConfig,
    average_spectra,
    fit_lorentzian_pair,
    synthesize_bhd,
    welch_psd,
)
from gupsim.dynamics import DeformationParams, MechanicalMode
from gupsim.optomech import CooledState, OpticalCavity
from gupsim.protocol import (
    CampaignConfig,
    ProtocolSchedule,
    analyze_dataset,
    run_campaign,
    summarize_campaign,
)
from gupsim.storage import save_histogram, save_spectrum

TWO_PI = 2 * math.pi


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="figure_data")
    ap.add_argument("--seconds", type=int, default=10,
                    help="averaging time per spectrum")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    mode = MechanicalMode(omega_m=TWO_PI * 525800.0,
                          gamma_m=TWO_PI * 525800.0 / 6.4e6,
                          mass=1e-10, T_bath=9.0)
    cavity = OpticalCavity()
    det = DetectionConfig()

    for name, n_bar, alpha_sq in (("cooled", 5.0, 0.0), ("excited", 6.6, 35.0)):
        state = CooledState(n_bar=n_bar, gamma_eff=TWO_PI * 6000.0,
                            omega_eff=det.omega_exc,
                            alpha=complex(math.sqrt(alpha_sq), 0.0))
        spectra = []
        for k in range(args.seconds):
            ts = synthesize_bhd(state, mode, cavity, det, 1.0, [args.seed, k])
            spectra.append(welch_psd(ts, segment_length=50000))
        spec = average_spectra(spectra)
        fit = fit_lorentzian_pair(spec, det)
        save_spectrum(spec, out / f"sidebands_{name}.dat",
                      header={"n_bar_fit": fit.occupancy,
                              "ratio_fit": fit.corrected_ratio})
        print(f"{name}: n_bar = {fit.occupancy:.2f}, R = {fit.corrected_ratio:.3f}")

    cfg = CampaignConfig(
        mode=mode, cavity=cavity, deformation=DeformationParams(0.0),
        detection=det, schedule=ProtocolSchedule.from_series(2.0),
        seed=args.seed, n_bar=5.0, gamma_eff=TWO_PI * 6000.0, alpha_sq=1200.0)
    datasets = run_campaign(cfg, 2)
    rec = datasets[0].grouped_records(10)[0]
    t = rec.times
    for quad, samples in (("x", rec.x_quad.samples), ("y", rec.y_quad.samples)):
        lines = [f"# columns: t_s {quad}"]
        lines += [f"{float(a)!r} {float(b)!r}" for a, b in zip(t, samples)]
        (out / f"ringdown_{quad}.dat").write_text("\n".join(lines) + "\n")

    summary = summarize_campaign([analyze_dataset(ds) for ds in datasets])
    for quad, stats in (("x", summary.stats_x), ("y", summary.stats_y)):
        counts, edges = stats.histogram
        save_histogram(counts, edges, out / f"shift_histogram_{quad}.dat",
                       header={"mean_hz": stats.mean, "std_hz": stats.std,
                               "n": stats.n_samples})
    print(f"artifacts in {out}/")


if __name__ == "__main__":
    main()
