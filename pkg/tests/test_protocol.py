import math
from dataclasses import replace

import numpy as np
import pytest

from gupsim.detection import DetectionConfig
from gupsim.dynamics import DeformationParams, MechanicalMode
from gupsim.estimation import fit_ringdown, fit_transient_shift
from gupsim.optomech import OpticalCavity, optical_damping_and_spring
from gupsim.protocol import (
    PROTOCOL_1_DECAY,
    CampaignConfig,
    ProtocolSchedule,
    predicted_shift_at_switchoff,
    run_campaign,
    run_cycle,
    run_series,
)

TWO_PI = 2 * math.pi
MODE = MechanicalMode(omega_m=TWO_PI * 525800.0,
                      gamma_m=TWO_PI * 525800.0 / 6.4e6,
                      mass=1e-10, T_bath=9.0)
# microkelvin bath keeps the thermal drive negligible for noise-free checks
COLD_MODE = replace(MODE, T_bath=1e-6)


def quiet_config(**kw):
    defaults = dict(
        mode=COLD_MODE, cavity=OpticalCavity(), deformation=DeformationParams(0.0),
        detection=DetectionConfig(background_psd=0.0),
        schedule=ProtocolSchedule(), seed=5, n_bar=0.0, alpha_sq=1e8,
        switch_burst=False)
    defaults.update(kw)
    return CampaignConfig(**defaults)


def noisy_config(**kw):
    defaults = dict(
        mode=MODE, cavity=OpticalCavity(), deformation=DeformationParams(0.0),
        detection=DetectionConfig(), schedule=ProtocolSchedule(), seed=5,
        n_bar=5.0, alpha_sq=1200.0)
    defaults.update(kw)
    return CampaignConfig(**defaults)


class TestSchedule:
    def test_cycle_math(self):
        s = ProtocolSchedule()
        assert s.cycle == pytest.approx(0.040)
        assert s.cycles_per_series == 1250
        assert s.cycles_per_series * s.cycle == pytest.approx(s.series_duration)

    def test_from_series(self):
        s = ProtocolSchedule.from_series(series_duration=0.8)
        assert s.cycles_per_series == 20

    def test_inconsistent_rejected(self):
        with pytest.raises(ValueError):
            ProtocolSchedule(cycles_per_series=10, series_duration=50.0)

    def test_group_math(self):
        # a 50 s series at 40 ms per cycle gives 1250 cycles and 125 averaged
        # records at group size 10
        s = ProtocolSchedule()
        assert s.cycles_per_series // s.group_size == 125


class TestConfig:
    def test_scenario_validation(self):
        with pytest.raises(ValueError):
            quiet_config(scenario="protocol_3")

    def test_short_pump_warns(self):
        with pytest.warns(UserWarning):
            quiet_config(gamma_eff=TWO_PI * 10.0)

    def test_long_measure_warns(self):
        mode = replace(COLD_MODE, gamma_m=TWO_PI * 20.0)
        with pytest.warns(UserWarning):
            quiet_config(mode=mode)

    def test_operating_state(self):
        cfg = noisy_config()
        st = cfg.operating_state
        assert st.n_bar == 5.0
        assert st.alpha_sq == pytest.approx(1200.0)
        assert st.omega_eff == cfg.detection.omega_exc

    def test_excitation_sweep_requires_pulsed(self):
        cfg = quiet_config(scenario=PROTOCOL_1_DECAY,
                           alpha_sq_per_series=(10.0, 20.0))
        with pytest.raises(ValueError):
            cfg.series_variant(0)


class TestRunCycle:
    def test_record_spans_measure_exactly(self):
        cfg = quiet_config()
        rec = run_cycle(cfg, 0, [5, 0, 0])
        assert rec.x_quad.t0 == 0.0
        n_expect = int(round(cfg.schedule.measure * cfg.detection.record_rate))
        assert len(rec.x_quad) == n_expect
        # the default analysis windows always fit inside
        assert rec.times[-1] >= 1.0e-3 and rec.times[0] <= 0.0

    def test_deterministic(self):
        cfg = quiet_config()
        a = run_cycle(cfg, 3, [5, 0, 3])
        b = run_cycle(cfg, 3, [5, 0, 3])
        assert np.array_equal(a.x_quad.samples, b.x_quad.samples)
        assert np.array_equal(a.y_quad.samples, b.y_quad.samples)

    def test_null_cycle_has_no_shift_mechanism(self):
        # beta0 = 0 and zero probe detuning: constant post-switch-off f_m and
        # a transient shift consistent with zero at the synthesis noise floor
        cfg = quiet_config()
        rec = run_cycle(cfg, 0, [5, 0, 0])
        fit = fit_ringdown(rec)
        assert abs(fit.f_m) < 0.01
        assert fit.gamma_eff_hz == pytest.approx(COLD_MODE.gamma_m / TWO_PI,
                                                 abs=0.01)
        sx, sy = fit_transient_shift(rec, fit)
        assert abs(sx.delta_fm0) < 1.0
        assert abs(sy.delta_fm0) < 1.0

    def test_detuned_probe_matches_spring_model(self):
        cav = OpticalCavity(probe_detuning=0.05 * OpticalCavity().kappa)
        g_opt, d_omega = optical_damping_and_spring(cav, COLD_MODE,
                                                    cav.probe_detuning)
        cfg = quiet_config(cavity=cav)
        rec = run_cycle(cfg, 0, [6, 0, 0])
        fit = fit_ringdown(rec)
        assert fit.f_m == pytest.approx(d_omega / TWO_PI, rel=2e-3)
        assert fit.gamma_eff == pytest.approx(g_opt + COLD_MODE.gamma_m, rel=2e-3)

    def test_protocol1_decay_constant(self):
        # with the cooling beam kept on, the amplitude decays with 2/gamma_eff
        cfg = quiet_config(scenario=PROTOCOL_1_DECAY)
        rec = run_cycle(cfg, 0, [8, 0, 0])
        fit = fit_ringdown(rec, window=(1.5e-4, 4.5e-4))
        assert fit.tau == pytest.approx(2.0 / cfg.gamma_eff, rel=0.01)

    def test_deformed_cycle_shifts_fitted_frequency(self):
        # at zero probe detuning with negligible re-thermalization the
        # deformation shift is constant over the record, so the ring-down fit
        # absorbs exactly the predicted frequency offset
        cfg0 = quiet_config(alpha_sq=1e6)
        target = 300.0
        amp_sq = 2 * COLD_MODE.x_zpf() ** 2 * (2 * cfg0.alpha_sq + 1)
        eps = 2 * target / (COLD_MODE.omega_m / TWO_PI)
        bt = eps / ((COLD_MODE.mass * COLD_MODE.omega_m) ** 2 * amp_sq)
        cfg1 = replace(cfg0, deformation=DeformationParams.from_beta_tilde(bt))
        assert predicted_shift_at_switchoff(cfg1) == pytest.approx(target, rel=1e-3)
        fit0 = fit_ringdown(run_cycle(cfg0, 0, [7, 0, 0]))
        fit1 = fit_ringdown(run_cycle(cfg1, 0, [7, 0, 0]))
        assert fit1.f_m - fit0.f_m == pytest.approx(target, rel=0.01)

    def test_deformed_cycle_transient_response(self):
        # the injection also changes the early-window estimate (through the
        # frequency step at switch-off); the differential response at fixed
        # seed is the pipeline's closed-loop sensitivity
        cfg0 = quiet_config(alpha_sq=1e6)
        target = 300.0
        amp_sq = 2 * COLD_MODE.x_zpf() ** 2 * (2 * cfg0.alpha_sq + 1)
        eps = 2 * target / (COLD_MODE.omega_m / TWO_PI)
        bt = eps / ((COLD_MODE.mass * COLD_MODE.omega_m) ** 2 * amp_sq)
        cfg1 = replace(cfg0, deformation=DeformationParams.from_beta_tilde(bt))
        shifts = {}
        for name, cfg in (("off", cfg0), ("on", cfg1)):
            rec = run_cycle(cfg, 0, [7, 0, 0])
            base = fit_ringdown(rec)
            sx, _ = fit_transient_shift(rec, base)
            shifts[name] = sx.delta_fm0
        assert abs(shifts["on"] - shifts["off"]) > 0.3 * target

    def test_burst_rejected_by_lockin_filter(self):
        cfg_off = quiet_config()
        cfg_on = replace(cfg_off, switch_burst=True)
        a = run_cycle(cfg_off, 0, [9, 0, 0])
        b = run_cycle(cfg_on, 0, [9, 0, 0])
        scale = np.max(np.abs(a.x_quad.samples))
        leak = np.max(np.abs(a.x_quad.samples - b.x_quad.samples)) / scale
        assert leak < 5e-3

    def test_pump_segment_stationarity(self):
        # last 10% of the pump-on segment shows no variance trend at 95%
        cfg = noisy_config()
        rec = run_cycle(cfg, 0, [21, 0, 0], include_pump=True, trim=False)
        t = rec.times
        m = (t >= -0.1 * cfg.schedule.pump_on) & (t < 0.0)
        z = rec.x_quad.samples[m] + 1j * rec.y_quad.samples[m]
        power = np.abs(z - z.mean()) ** 2
        nbin = 10
        bins = np.array_split(power, nbin)
        v = np.array([b.mean() for b in bins])
        tc = np.array([b.mean() for b in np.array_split(t[m], nbin)])
        G = np.column_stack([tc - tc.mean(), np.ones(nbin)])
        coef, *_ = np.linalg.lstsq(G, v, rcond=None)
        resid = v - G @ coef
        se = math.sqrt(float(resid @ resid) / (nbin - 2) /
                       float(np.sum((tc - tc.mean()) ** 2)))
        assert abs(coef[0]) < 2.31 * se   # t(8) two-sided 95%

    def test_coherent_phase_constant_across_cycles(self):
        cfg = quiet_config()
        fits = []
        for k in range(3):
            rec = run_cycle(cfg, k, [5, 0, k])
            fits.append(fit_ringdown(rec))
        phases = [f.phi for f in fits]
        assert np.ptp(phases) < 1e-3


class TestCampaign:
    def small_cfg(self, **kw):
        return noisy_config(schedule=ProtocolSchedule.from_series(
            series_duration=0.2, group_size=5), **kw)

    def test_n_series_validation(self):
        with pytest.raises(ValueError):
            run_campaign(self.small_cfg(), 0)

    def test_series_detunings_applied(self):
        kappa = OpticalCavity().kappa
        cfg = self.small_cfg(series_probe_detunings=(0.0, 0.05 * kappa))
        datasets = run_campaign(cfg, 2)
        assert datasets[0].probe_detuning == 0.0
        assert datasets[1].probe_detuning == pytest.approx(0.05 * kappa)

    def test_record_count_equals_cycles(self):
        cfg = self.small_cfg()
        ds = run_series(cfg, 0)
        assert len(ds.records) == cfg.schedule.cycles_per_series
        assert [r.cycle_index for r in ds.records] == list(
            range(cfg.schedule.cycles_per_series))

    def test_grouped_records(self):
        cfg = self.small_cfg()
        ds = run_series(cfg, 0)
        groups = ds.grouped_records(5)
        assert len(groups) == 1
        assert groups[0].x_quad.metadata["n_averaged"] == 5

    def test_campaign_deterministic(self):
        cfg = self.small_cfg()
        a = run_campaign(cfg, 1)[0]
        b = run_campaign(cfg, 1)[0]
        for ra, rb in zip(a.records, b.records):
            assert np.array_equal(ra.x_quad.samples, rb.x_quad.samples)

    def test_excitation_sweep_changes_amplitude(self):
        cfg = self.small_cfg(alpha_sq_per_series=(400.0, 1600.0))
        datasets = run_campaign(cfg, 2)
        a0 = np.max(np.abs(datasets[0].records[0].x_quad.samples))
        a1 = np.max(np.abs(datasets[1].records[0].x_quad.samples))
        assert a1 / a0 == pytest.approx(2.0, rel=0.2)
