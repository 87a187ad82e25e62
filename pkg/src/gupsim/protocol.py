"""Orchestration of the experimental cycle and campaign management.

A cycle is pump-on (cooling + coherent excitation, 30 ms) followed by a
measurement segment (10 ms) after pump switch-off. The synthesis stitches a
stationary pump-on tail onto the free-decay segment: the sideband envelopes
continue through the switch with their instantaneous values, the coherent
amplitude rings down at the probe-only rate, the occupancy relaxes toward the
bath, and, for beta0 > 0, the instantaneous frequency follows the
amplitude-dependent law of the deformed oscillator evaluated on the
deterministic envelope of the total amplitude.

Two scenarios: `protocol_1_decay` keeps the cooling beam on during the
measurement (fast ring-down, amplitude sweeps down through the window);
`protocol_2_pulsed` switches the whole pump off (slow ring-down, amplitude
set by the excitation strength, which may be varied between series).
"""

from __future__ import annotations

import cmath
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from .detection import (
    DetectionConfig,
    QuadratureRecord,
    TimeSeries,
    assemble_bhd,
    average_records,
    complex_ou_segment,
    lockin_demodulate,
    stationary_envelope,
)
from .dynamics import DeformationParams, MechanicalMode
from .estimation import (
    DEFAULT_BASE_WINDOW,
    DEFAULT_EARLY_WINDOW,
    RingdownFit,
    ShiftFit,
    ShiftStatistics,
    aggregate_shifts,
    fit_ringdown,
    fit_transient_shift,
)
from .optomech import CooledState, OpticalCavity, optical_damping_and_spring

TWO_PI = 2.0 * math.pi

PROTOCOL_1_DECAY = "protocol_1_decay"
PROTOCOL_2_PULSED = "protocol_2_pulsed"
SCENARIOS = (PROTOCOL_1_DECAY, PROTOCOL_2_PULSED)

# out-of-band drum modes excited by the radiation-pressure step at switch-off;
# the lock-in filter must reject them. The onset is smoothed over a few tens
# of microseconds so the burst energy stays concentrated at the mode
# frequencies instead of exciting the filter's broadband step response.
SWITCH_BURST_MODES_HZ = (341e3, 812e3)
SWITCH_BURST_DECAY_S = 1e-3
SWITCH_BURST_ONSET_S = 2e-5


@dataclass(frozen=True)
class ProtocolSchedule:
    """Cycle timing: pump_on + measure = cycle, repeated over a series."""

    pump_on: float = 0.030
    measure: float = 0.010
    cycles_per_series: int = 1250
    series_duration: float = 50.0
    group_size: int = 10
    pre_roll: float = 0.002     # pump-on tail synthesized before switch-off

    def __post_init__(self):
        if min(self.pump_on, self.measure, self.pre_roll) <= 0:
            raise ValueError("schedule durations must be positive")
        if self.cycles_per_series < 1 or self.group_size < 1:
            raise ValueError("cycles_per_series and group_size must be >= 1")
        expected = self.cycles_per_series * self.cycle
        if abs(expected - self.series_duration) > 0.5 * self.cycle:
            raise ValueError(
                f"series_duration {self.series_duration} s inconsistent with "
                f"{self.cycles_per_series} cycles of {self.cycle} s")
        if self.pre_roll > self.pump_on:
            raise ValueError("pre_roll cannot exceed pump_on")

    @property
    def cycle(self) -> float:
        return self.pump_on + self.measure

    @classmethod
    def from_series(cls, series_duration: float = 50.0, pump_on: float = 0.030,
                    measure: float = 0.010, group_size: int = 10,
                    pre_roll: float = 0.002) -> "ProtocolSchedule":
        cycles = int(round(series_duration / (pump_on + measure)))
        return cls(pump_on=pump_on, measure=measure, cycles_per_series=cycles,
                   series_duration=series_duration, group_size=group_size,
                   pre_roll=pre_roll)


@dataclass(frozen=True)
class CampaignConfig:
    """Everything needed to reproduce a campaign: physics, detection, schedule, seed."""

    mode: MechanicalMode
    cavity: OpticalCavity
    deformation: DeformationParams
    detection: DetectionConfig
    schedule: ProtocolSchedule
    n_bar: float = 5.0
    gamma_eff: float = TWO_PI * 6000.0      # pump-on effective linewidth, rad/s
    alpha_sq: float = 35.0
    excitation_phase: float = 0.0
    n_backaction: float = 0.3
    seed: int = 0
    scenario: str = PROTOCOL_2_PULSED
    series_probe_detunings: tuple[float, ...] | None = None    # rad/s, per series
    alpha_sq_per_series: tuple[float, ...] | None = None
    shift_injection: tuple[float, float] | None = None          # (delta0_hz, tau_s)
    switch_burst: bool = True
    store_raw: bool = False

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; one of {SCENARIOS}")
        if self.n_bar < 0 or self.alpha_sq < 0:
            raise ValueError("n_bar and alpha_sq must be >= 0")
        if self.schedule.pump_on * self.gamma_eff < 10.0:
            warnings.warn("pump_on is not long compared to 1/gamma_eff; the "
                          "stationary-state assumption is doubtful", stacklevel=2)
        if self.schedule.measure > 0.1 / self.mode.gamma_m:
            warnings.warn("measurement window is not short compared to the free "
                          "damping time", stacklevel=2)

    @property
    def operating_state(self) -> CooledState:
        return CooledState(
            n_bar=self.n_bar, gamma_eff=self.gamma_eff,
            omega_eff=self.detection.omega_exc,
            alpha=cmath.rect(math.sqrt(self.alpha_sq), self.excitation_phase))

    def cycle_seed(self, series_index: int, cycle_index: int) -> list[int]:
        return [self.seed, series_index, cycle_index]

    def series_variant(self, series_index: int) -> "CampaignConfig":
        """Per-series configuration: probe detuning and excitation sweeps."""
        out = self
        if self.series_probe_detunings is not None:
            det = self.series_probe_detunings[series_index % len(self.series_probe_detunings)]
            out = replace(out, cavity=replace(self.cavity, probe_detuning=det))
        if self.alpha_sq_per_series is not None:
            if self.scenario != PROTOCOL_2_PULSED:
                raise ValueError("excitation sweeps are a protocol_2_pulsed feature")
            a = self.alpha_sq_per_series[series_index % len(self.alpha_sq_per_series)]
            out = replace(out, alpha_sq=a)
        return out


@dataclass
class Dataset:
    """One series of cycles plus the configuration snapshot that produced it."""

    records: list[QuadratureRecord]
    config_snapshot: dict
    provenance: dict
    series_index: int = 0
    probe_detuning: float = 0.0
    raw: list[TimeSeries] | None = None

    def grouped_records(self, group_size: int) -> list[QuadratureRecord]:
        """Average consecutive cycles in groups (coherent excitation phase)."""
        out = []
        n = len(self.records)
        for g, start in enumerate(range(0, n - group_size + 1, group_size)):
            out.append(average_records(self.records[start:start + group_size],
                                       cycle_index=g))
        return out


def _measurement_rates(cfg: CampaignConfig) -> tuple[float, float, float, float]:
    """(gamma_meas, d_omega_probe, drive_S, drive_AS) for the post-switch-off segment.

    The bath kick rates keep the Stokes/anti-Stokes envelope variances at
    n(t)+1 and n(t) exactly at zero probe detuning; an anti-damped probe
    contributes its gain quantum noise with a positive kick rate.
    """
    if cfg.cavity.probe_detuning != 0.0:
        gamma_opt, d_omega = optical_damping_and_spring(
            cfg.cavity, cfg.mode, cfg.cavity.probe_detuning)
    else:
        gamma_opt, d_omega = 0.0, 0.0
    gm = cfg.mode.gamma_m
    if cfg.scenario == PROTOCOL_1_DECAY:
        gamma_meas = cfg.gamma_eff + gamma_opt
        drive_as = cfg.gamma_eff * cfg.n_bar + max(-gamma_opt, 0.0)
        drive_s = cfg.gamma_eff * (cfg.n_bar + 1.0) + abs(gamma_opt)
    else:
        n_th = cfg.mode.thermal_occupancy(cfg.deformation.constants)
        gamma_meas = gm + gamma_opt
        drive_as = gm * n_th + max(-gamma_opt, 0.0)
        drive_s = gm * (n_th + 1.0) + abs(gamma_opt)
    return gamma_meas, d_omega, drive_s, drive_as


def _occupancy_curve(cfg: CampaignConfig, t: np.ndarray, gamma_meas: float,
                     drive_as: float) -> np.ndarray:
    """Deterministic n(t) over the measurement segment (anti-Stokes variance)."""
    if gamma_meas != 0.0:
        n_ss = drive_as / gamma_meas
        decay = np.exp(-gamma_meas * t)
        return cfg.n_bar * decay + n_ss * (1.0 - decay)
    return cfg.n_bar + drive_as * t


def _gup_shift_curve(cfg: CampaignConfig, t: np.ndarray, gamma_meas: float,
                     n_curve: np.ndarray) -> np.ndarray:
    """Instantaneous frequency shift (Hz) from the deformed-bracket dynamics.

    eps(t) = beta_tilde * (m Omega)^2 * A(t)^2 with the mean-square-displacement
    amplitude convention A^2 = 2 x_zpf^2 (2|alpha(t)|^2 + 2 n(t) + 1); the shift
    follows delta_f = f * (sqrt(1+eps) - 1).
    """
    bt = cfg.deformation.beta_tilde
    if bt == 0.0:
        return np.zeros_like(t)
    mode = cfg.mode
    const = cfg.deformation.constants
    alpha_sq_t = cfg.alpha_sq * np.exp(-gamma_meas * t)
    amp_sq = 2.0 * mode.x_zpf(const) ** 2 * (2.0 * alpha_sq_t + 2.0 * n_curve + 1.0)
    eps = bt * (mode.mass * mode.omega_m) ** 2 * amp_sq
    f0 = mode.omega_m / TWO_PI
    return f0 * (np.sqrt(1.0 + eps) - 1.0)


def predicted_shift_at_switchoff(cfg: CampaignConfig) -> float:
    """delta_f (Hz) the deformation produces at t = 0 for this operating point."""
    gamma_meas, _, _, _ = _measurement_rates(cfg)
    n0 = np.array([cfg.n_bar])
    return float(_gup_shift_curve(cfg, np.zeros(1), gamma_meas, n0)[0])


def _switch_burst(rng: np.random.Generator, t: np.ndarray, amplitude: float) -> np.ndarray:
    """Decaying out-of-band tones launched by the radiation-pressure step at t=0."""
    out = np.zeros_like(t)
    live = t >= 0.0
    tl = t[live]
    envelope = (1.0 - np.exp(-tl / SWITCH_BURST_ONSET_S)) * np.exp(
        -tl / SWITCH_BURST_DECAY_S)
    for f in SWITCH_BURST_MODES_HZ:
        phase = rng.uniform(0.0, TWO_PI)
        out[live] += amplitude * envelope * np.cos(TWO_PI * f * tl + phase)
    return out


def run_cycle(cfg: CampaignConfig, cycle_index: int, seed,
              include_pump: bool = False, trim: bool = True,
              return_raw: bool = False):
    """Synthesize and demodulate one experimental cycle.

    Returns the QuadratureRecord of the measurement segment (t = 0 at pump
    switch-off); with return_raw=True returns (record, raw TimeSeries). With
    include_pump=True the full pump-on segment is synthesized (for
    stationarity checks); otherwise only a short pre-roll keeps the lock-in
    filter state physical across the switch.
    """
    det = cfg.detection
    sched = cfg.schedule
    fs = det.sample_rate
    dt = 1.0 / fs
    rng = np.random.default_rng(seed)

    pre = sched.pump_on if include_pump else sched.pre_roll
    n_pre = int(round(pre * fs))
    n_meas = int(round(sched.measure * fs))
    t = (np.arange(n_pre + n_meas) - n_pre) * dt
    t_meas = t[n_pre:]

    # pump-on: stationary cooled state with constant coherent drive
    alpha0 = cmath.rect(math.sqrt(cfg.alpha_sq), cfg.excitation_phase)
    u_s = np.empty(n_pre + n_meas, dtype=complex)
    u_as = np.empty(n_pre + n_meas, dtype=complex)
    u_s[:n_pre] = stationary_envelope(rng, n_pre, dt, cfg.gamma_eff, cfg.n_bar + 1.0)
    u_as[:n_pre] = stationary_envelope(rng, n_pre, dt, cfg.gamma_eff, cfg.n_bar)

    # measurement: envelopes continue through the switch
    gamma_meas, d_omega_probe, drive_s, drive_as = _measurement_rates(cfg)
    u_s[n_pre:] = complex_ou_segment(rng, n_meas, dt, gamma_meas, drive_s,
                                     u_s[n_pre - 1])
    u_as[n_pre:] = complex_ou_segment(rng, n_meas, dt, gamma_meas, drive_as,
                                      u_as[n_pre - 1])

    # coherent amplitude: constant while driven, rings down after the switch
    alpha = np.empty(n_pre + n_meas, dtype=complex)
    alpha[:n_pre] = alpha0
    alpha[n_pre:] = alpha0 * np.exp(-0.5 * gamma_meas * t_meas)

    # mechanical phase relative to the excitation tone after the switch:
    # probe spring offset f_m plus the deformation-induced chirp plus any
    # injected test shift
    f_m = d_omega_probe / TWO_PI
    n_curve = _occupancy_curve(cfg, t_meas, gamma_meas, drive_as)
    delta_f = _gup_shift_curve(cfg, t_meas, gamma_meas, n_curve)
    if cfg.shift_injection is not None:
        d0, tau_s = cfg.shift_injection
        delta_f = delta_f + d0 * np.exp(-t_meas / tau_s)
    inst_f = f_m + delta_f
    phase = np.zeros(n_pre + n_meas)
    phase[n_pre:] = TWO_PI * np.concatenate(
        [[0.0], np.cumsum(0.5 * (inst_f[1:] + inst_f[:-1]) * dt)])
    rot = np.exp(1j * phase)

    env_s = (alpha + u_s) * rot
    env_as = (alpha + u_as) * rot
    f_stokes = (det.omega_exc + det.delta_lo) / TWO_PI
    f_antistokes = (det.omega_exc - det.delta_lo) / TWO_PI
    samples = assemble_bhd(t, env_s, env_as, f_stokes, f_antistokes,
                           det.background_psd, fs, rng)
    if cfg.switch_burst:
        samples = samples + _switch_burst(rng, t, 3.0 * math.sqrt(max(cfg.alpha_sq, 1.0)))

    raw = TimeSeries(t0=float(t[0]), dt=dt, samples=samples,
                     metadata={"seed": repr(seed), "cycle_index": cycle_index,
                               "kind": "bhd", "scenario": cfg.scenario})
    rec = lockin_demodulate(raw, det, cycle_index=cycle_index)
    if trim:
        rec = rec.window(0.0, sched.measure)
    if return_raw:
        return rec, raw
    return rec


def run_series(cfg: CampaignConfig, series_index: int = 0) -> Dataset:
    """All cycles of one series.

    Each cycle draws from its own derived seed [seed, series, cycle], so cycles
    are independent and could be generated in parallel; this implementation
    runs them in order and appends records by cycle index.
    """
    scfg = cfg.series_variant(series_index)
    records = []
    raws = [] if cfg.store_raw else None
    for k in range(scfg.schedule.cycles_per_series):
        seed = scfg.cycle_seed(series_index, k)
        if cfg.store_raw:
            rec, raw = run_cycle(scfg, k, seed, return_raw=True)
            raws.append(raw)
        else:
            rec = run_cycle(scfg, k, seed)
        records.append(rec)
    from .storage import config_to_dict   # local import to avoid a cycle
    snapshot = config_to_dict(scfg)
    return Dataset(records=records, config_snapshot=snapshot,
                   provenance={"seed": scfg.seed, "series_index": series_index,
                               "tool_version": __version__},
                   series_index=series_index,
                   probe_detuning=scfg.cavity.probe_detuning, raw=raws)


def run_campaign(cfg: CampaignConfig, n_series: int) -> list[Dataset]:
    """Deterministic sequence of series; detunings/excitations may vary per series."""
    if n_series < 1:
        raise ValueError("n_series must be >= 1")
    return [run_series(cfg, s) for s in range(n_series)]


# --- analysis pipeline --------------------------------------------------------

@dataclass
class SeriesAnalysis:
    series_index: int
    probe_detuning: float
    ringdown_fits: list[RingdownFit]
    shift_fits_x: list[ShiftFit]
    shift_fits_y: list[ShiftFit]
    stats_x: ShiftStatistics
    stats_y: ShiftStatistics
    n_groups: int


def analyze_dataset(ds: Dataset, group_size: int | None = None,
                    base_window: tuple[float, float] = DEFAULT_BASE_WINDOW,
                    early_window: tuple[float, float] = DEFAULT_EARLY_WINDOW,
                    f_lower: float = 8000.0, f_upper: float = 16000.0) -> SeriesAnalysis:
    """Group-average the cycles, fit ring-downs and early-window shifts."""
    if group_size is None:
        group_size = int(ds.config_snapshot.get("schedule", {}).get("group_size", 10))
    grouped = ds.grouped_records(group_size)
    fits = []
    sx = []
    sy = []
    for rec in grouped:
        base = fit_ringdown(rec, window=base_window, f_lower=f_lower, f_upper=f_upper)
        fits.append(base)
        fx, fy = fit_transient_shift(rec, base, early_window=early_window)
        sx.append(fx)
        sy.append(fy)
    return SeriesAnalysis(series_index=ds.series_index,
                          probe_detuning=ds.probe_detuning,
                          ringdown_fits=fits, shift_fits_x=sx, shift_fits_y=sy,
                          stats_x=aggregate_shifts(sx), stats_y=aggregate_shifts(sy),
                          n_groups=len(grouped))


@dataclass
class CampaignSummary:
    analyses: list[SeriesAnalysis]
    stats_x: ShiftStatistics
    stats_y: ShiftStatistics

    @property
    def all_ringdown_fits(self) -> list[RingdownFit]:
        return [f for a in self.analyses for f in a.ringdown_fits]


def summarize_campaign(analyses: list[SeriesAnalysis]) -> CampaignSummary:
    """Pool the per-quadrature shift statistics over all series."""
    sx = [f for a in analyses for f in a.shift_fits_x]
    sy = [f for a in analyses for f in a.shift_fits_y]
    return CampaignSummary(analyses=analyses,
                           stats_x=aggregate_shifts(sx),
                           stats_y=aggregate_shifts(sy))
