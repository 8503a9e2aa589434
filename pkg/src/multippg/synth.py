"""Deterministic synthetic multi-site PPG and Lead I ECG recordings.

Beat times integrate a piecewise-linear HR profile. Every PPG site renders a
two-Gaussian pulse (systolic plus dicrotic wave) at its own lag, with
optional continuous sensor noise and scripted noise events; the ECG renders
Gaussian QRS complexes and T waves at the true beat times.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .beats import hr_from_beats
from .core import BeatSeries, EcgSignal, HrSeries, PipelineError, Signal, site_label

NOISE_KINDS = ("white", "motion_sine", "dropout")
BAND_HZ = (0.6, 3.3)


class InvalidScenarioError(PipelineError, ValueError):
    pass


@dataclass(frozen=True)
class SitePulse:
    site: str
    amplitude: float = 1.0
    lag_ms: float = 0.0
    # pulse geometry as fractions of the local interbeat interval
    systolic_width: float = 0.10
    dicrotic_delay: float = 0.40
    dicrotic_width: float = 0.12
    dicrotic_amp: float = 0.45
    dc: float = 0.0
    # continuous in-band sensor noise; None disables it
    noise_snr_db: Optional[float] = None


@dataclass(frozen=True)
class NoiseEvent:
    site: str
    start_s: float
    end_s: float
    kind: str = "white"
    snr_db: float = 0.0


@dataclass(frozen=True)
class SynthScenario:
    duration_s: float
    rate_hz: float = 128.0
    hr_profile: tuple = ((0.0, 60.0),)
    sites: tuple = (SitePulse("head"),)
    noise_events: tuple = ()
    seed: int = 0
    hrv_ms: float = 0.0
    resp_rate_hz: float = 0.25
    resp_amp: float = 0.1
    ecg_snr_db: Optional[float] = None

    def validate(self) -> None:
        if not self.duration_s > 0 or not self.rate_hz > 0:
            raise InvalidScenarioError("duration_s and rate_hz must be positive")
        if not self.hr_profile:
            raise InvalidScenarioError("hr_profile is empty")
        times = [t for t, _ in self.hr_profile]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise InvalidScenarioError("hr_profile times must be strictly increasing")
        for _, bpm in self.hr_profile:
            if not 40.0 <= bpm <= 185.0:
                raise InvalidScenarioError(f"hr_profile value {bpm} outside [40, 185] bpm")
        if not self.sites:
            raise InvalidScenarioError("scenario has no sites")
        names = [str(site_label(s.site)) for s in self.sites]
        if len(set(names)) != len(names):
            raise InvalidScenarioError("duplicate site labels")
        for s in self.sites:
            if abs(s.lag_ms) > 150.0:
                raise InvalidScenarioError(f"lag_ms {s.lag_ms} of {s.site} outside +-150 ms")
            if min(s.systolic_width, s.dicrotic_width) <= 0:
                raise InvalidScenarioError("pulse widths must be positive")
        for ev in self.noise_events:
            if str(site_label(ev.site)) not in names:
                raise InvalidScenarioError(f"noise event for unknown site {ev.site!r}")
            if not 0 <= ev.start_s < ev.end_s <= self.duration_s:
                raise InvalidScenarioError(
                    f"noise window [{ev.start_s}, {ev.end_s}] not inside the recording")
            if ev.kind not in NOISE_KINDS:
                raise InvalidScenarioError(f"unknown noise kind {ev.kind!r}")


class SynthRecording(NamedTuple):
    signals: list
    ecg: EcgSignal
    truth_beats: dict
    truth_hr: HrSeries


def beat_times(scenario: SynthScenario, t: np.ndarray, rng=None) -> np.ndarray:
    """Times where the integrated HR phase crosses k + 1/2."""
    knots_t, knots_v = zip(*scenario.hr_profile)
    hr = np.interp(t, knots_t, knots_v)
    dt = 1.0 / scenario.rate_hz
    phase = np.r_[0.0, np.cumsum(0.5 * (hr[1:] + hr[:-1]) / 60.0 * dt)]
    k = np.arange(int(np.floor(phase[-1] - 0.5)) + 1) + 0.5
    beats = np.interp(k, phase, t)
    if scenario.hrv_ms > 0 and rng is not None and beats.size:
        beats = beats + rng.normal(0.0, scenario.hrv_ms / 1000.0, beats.size)
        beats = np.sort(np.clip(beats, 0.0, t[-1]))
    return beats


def _local_ibi(beats: np.ndarray) -> np.ndarray:
    if beats.size < 2:
        return np.ones_like(beats)
    d = np.diff(beats)
    return np.r_[d[0], 0.5 * (d[1:] + d[:-1]), d[-1]] if beats.size > 2 else np.r_[d, d]


def _gauss_train(n, rate, centers, sigmas, amps) -> np.ndarray:
    out = np.zeros(n)
    for c, s, a in zip(centers, sigmas, amps):
        i0 = max(int(np.floor((c - 5 * s) * rate)), 0)
        i1 = min(int(np.ceil((c + 5 * s) * rate)) + 1, n)
        if i1 <= i0:
            continue
        tt = np.arange(i0, i1) / rate
        out[i0:i1] += a * np.exp(-0.5 * ((tt - c) / s) ** 2)
    return out


def render_pulses(n, rate, beats, pulse: SitePulse) -> np.ndarray:
    """Pulse waveform (zero DC) whose systolic maxima sit at ``beats + lag``."""
    ibi = _local_ibi(beats)
    tp = beats + pulse.lag_ms / 1000.0
    sys = _gauss_train(n, rate, tp, pulse.systolic_width * ibi, np.ones_like(tp))
    dic = _gauss_train(n, rate, tp + pulse.dicrotic_delay * ibi, pulse.dicrotic_width * ibi,
                       np.full(tp.shape, pulse.dicrotic_amp))
    return pulse.amplitude * (sys + dic)


def band_power(x, rate, band=BAND_HZ) -> float:
    """Mean power of ``x`` inside ``band`` via the FFT."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return 0.0
    spec = np.fft.rfft(x - x.mean())
    f = np.fft.rfftfreq(x.size, 1.0 / rate)
    sel = (f >= band[0]) & (f <= band[1])
    return float(np.sum(np.abs(spec[sel]) ** 2) / x.size ** 2)


def _scale_to_snr(noise, clean, rate, snr_db) -> np.ndarray:
    p_sig = band_power(clean, rate)
    p_noise = band_power(noise, rate)
    if p_noise <= 0 or p_sig <= 0:
        return noise
    return noise * np.sqrt(p_sig * 10 ** (-snr_db / 10.0) / p_noise)


def _motion(rng, n, rate, clean) -> np.ndarray:
    """Baseline and amplitude modulation by 2-3 drifting in-band sinusoids."""
    t = np.arange(n) / rate
    base = np.zeros(n)
    for _ in range(rng.integers(2, 4)):
        f0 = rng.uniform(0.5, 3.0)
        drift = np.cumsum(rng.normal(0.0, 0.02, n)) / np.sqrt(rate)
        freq = np.clip(f0 + drift, 0.5, 3.0)
        phase = 2 * np.pi * np.cumsum(freq) / rate + rng.uniform(0, 2 * np.pi)
        base += rng.uniform(0.5, 1.0) * np.sin(phase)
    fam = rng.uniform(0.5, 3.0)
    am = 0.5 * np.sin(2 * np.pi * fam * t + rng.uniform(0, 2 * np.pi))
    return base * np.std(clean) / max(np.std(base), 1e-12) + am * clean


def _ecg(n, rate, beats) -> np.ndarray:
    ibi = _local_ibi(beats)
    q = _gauss_train(n, rate, beats - 0.025, np.full(beats.shape, 0.008), np.full(beats.shape, -0.12))
    r = _gauss_train(n, rate, beats, np.full(beats.shape, 0.010), np.ones(beats.shape))
    s = _gauss_train(n, rate, beats + 0.025, np.full(beats.shape, 0.008), np.full(beats.shape, -0.2))
    tw = _gauss_train(n, rate, beats + 0.3 * np.sqrt(ibi), 0.05 * np.sqrt(ibi),
                      np.full(beats.shape, 0.25))
    return q + r + s + tw


def generate(scenario: SynthScenario) -> SynthRecording:
    """Render one recording; identical scenarios give bit-identical output."""
    scenario.validate()
    rate = float(scenario.rate_hz)
    n = int(round(scenario.duration_s * rate))
    t = np.arange(n) / rate
    rng = np.random.default_rng(scenario.seed)
    beats = beat_times(scenario, t, rng)
    truth_idx = np.unique(np.clip(np.round(beats * rate).astype(np.int64), 0, n - 1))
    truth = {"ecg": BeatSeries(truth_idx, np.ones(truth_idx.size, bool), rate, n, "ecg")}

    signals = []
    for pulse in scenario.sites:
        site = site_label(pulse.site)
        clean = render_pulses(n, rate, beats, pulse)
        x = clean.copy()
        if pulse.noise_snr_db is not None:
            x += _scale_to_snr(rng.normal(size=n), clean, rate, pulse.noise_snr_db)
        for ev in scenario.noise_events:
            if site_label(ev.site) != site:
                continue
            i0, i1 = int(round(ev.start_s * rate)), int(round(ev.end_s * rate))
            span = clean[i0:i1]
            if ev.kind == "dropout":
                x[i0:i1] = 1e-3 * pulse.amplitude * rng.normal(size=i1 - i0)
                continue
            if ev.kind == "white":
                noise = rng.normal(size=i1 - i0)
            else:
                noise = _motion(rng, i1 - i0, rate, span)
            x[i0:i1] += _scale_to_snr(noise, span, rate, ev.snr_db)
        resp = scenario.resp_amp * pulse.amplitude * np.sin(
            2 * np.pi * scenario.resp_rate_hz * t + rng.uniform(0, 2 * np.pi))
        signals.append(Signal(x + resp + pulse.dc, rate, site, 0.0))
        tp = np.round((beats + pulse.lag_ms / 1000.0) * rate).astype(np.int64)
        tp = np.unique(tp[(tp >= 0) & (tp < n)])
        truth[site] = BeatSeries(tp, np.ones(tp.size, bool), rate, n, site)

    ecg = _ecg(n, rate, beats)
    if scenario.ecg_snr_db is not None:
        p_sig = np.mean(ecg ** 2)
        ecg = ecg + rng.normal(0.0, np.sqrt(p_sig * 10 ** (-scenario.ecg_snr_db / 10.0)), n)
    truth_hr = hr_from_beats(truth["ecg"])
    return SynthRecording(signals, EcgSignal(ecg, rate, 0.0), truth, truth_hr)


DEFAULT_SITES = (
    SitePulse("head", 1.0, 80.0, 0.09, 0.38, 0.11, 0.50, 2.0, 12.0),
    SitePulse("sternum", 0.6, 40.0, 0.10, 0.40, 0.13, 0.35, -1.0, 10.0),
    SitePulse("wrist", 1.4, 130.0, 0.11, 0.42, 0.14, 0.30, 0.5, 9.0),
    SitePulse("ankle", 0.8, 150.0, 0.12, 0.45, 0.15, 0.25, 3.0, 9.0),
)


def sweep_profile(rng, duration_s, lo=55.0, hi=130.0) -> tuple:
    """Piecewise-linear HR profile alternating between low and high plateaus,
    touching both ends of ``[lo, hi]``."""
    knots = [(0.0, lo)]
    t, up = 0.0, True
    while t < duration_s:
        t = min(t + rng.uniform(120.0, 240.0), duration_s)
        if up:
            v = hi if len(knots) == 1 else rng.uniform(lo + 0.6 * (hi - lo), hi)
        else:
            v = rng.uniform(lo, lo + 0.4 * (hi - lo))
        knots.append((round(t, 3), round(float(v), 3)))
        up = not up
    return tuple(knots)


def burst_events(rng, duration_s, sites, snr_db=-5.0, kind="motion_sine",
                 min_len_s=15.0, max_len_s=45.0, max_gap_s=4.0, margin_s=5.0) -> tuple:
    """Disjoint noise bursts; sites take turns in shuffled rounds, so every site
    is corrupted for roughly ``1 / len(sites)`` of the time and never together
    with another site."""
    events, t = [], margin_s
    order: list = []
    while True:
        if not order:
            order = list(rng.permutation(len(sites)))
        length = rng.uniform(min_len_s, max_len_s)
        if t + length > duration_s - margin_s:
            break
        site = sites[order.pop()]
        events.append(NoiseEvent(site, round(t, 3), round(t + length, 3), kind, snr_db))
        t += length + rng.uniform(0.0, max_gap_s)
    return tuple(events)


def burst_scenario(seed: int, duration_s: float = 1200.0, rate_hz: float = 128.0,
                   snr_db: float = -5.0, sites=DEFAULT_SITES) -> SynthScenario:
    """One recording of the multi-site burst suite: HR sweeping 55-130 bpm,
    disjoint motion bursts at ``snr_db`` on every site."""
    rng = np.random.default_rng(10_000 + seed)
    names = [s.site for s in sites]
    return SynthScenario(
        duration_s=duration_s, rate_hz=rate_hz,
        hr_profile=sweep_profile(rng, duration_s),
        sites=tuple(sites),
        noise_events=burst_events(rng, duration_s, names, snr_db),
        seed=seed, hrv_ms=15.0)


def clean_scenario(seed: int, duration_s: float = 300.0, rate_hz: float = 128.0,
                   sites=DEFAULT_SITES) -> SynthScenario:
    """Noise-free recording with the same HR sweep family."""
    rng = np.random.default_rng(20_000 + seed)
    quiet = tuple(SitePulse(**{**s.__dict__, "noise_snr_db": None}) for s in sites)
    return SynthScenario(duration_s=duration_s, rate_hz=rate_hz,
                         hr_profile=sweep_profile(rng, duration_s), sites=quiet, seed=seed)
