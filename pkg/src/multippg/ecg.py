"""Ground-truth HR from Lead I ECG with Pan-Tompkins R-peak detection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks

from .beats import hr_from_beats
from .core import BeatSeries, EcgSignal, HrSeries, TooShortError
from .dsp import BandpassSpec, bandpass_array, moving_average


@dataclass(frozen=True)
class PanTompkinsConfig:
    band: BandpassSpec = BandpassSpec(5.0, 15.0, 2)
    integration_s: float = 0.150
    refractory_s: float = 0.200
    t_wave_s: float = 0.360
    learning_s: float = 2.0
    refine_s: float = 0.025
    search_s: float = 0.075
    min_duration_s: float = 10.0


class _Level:
    """Running signal/noise peak levels and the derived thresholds."""

    def __init__(self, signal_peak: float, noise_peak: float):
        self.spk = signal_peak
        self.npk = noise_peak

    @property
    def thr1(self) -> float:
        return self.npk + 0.25 * (self.spk - self.npk)

    @property
    def thr2(self) -> float:
        return 0.5 * self.thr1

    def signal(self, peak: float, searchback: bool = False) -> None:
        if searchback:
            self.spk = 0.25 * peak + 0.75 * self.spk
        else:
            self.spk = 0.125 * peak + 0.875 * self.spk

    def noise(self, peak: float) -> None:
        self.npk = 0.125 * peak + 0.875 * self.npk


def _five_point_derivative(x: np.ndarray, rate: float) -> np.ndarray:
    xp = np.pad(x, 2, mode="edge")
    return (-xp[:-4] - 2 * xp[1:-3] + 2 * xp[3:-1] + xp[4:]) * (rate / 8.0)


def pan_tompkins_rpeaks(ecg: EcgSignal, cfg: PanTompkinsConfig = PanTompkinsConfig()) -> BeatSeries:
    """R peaks via bandpass, derivative, squaring, moving-window integration
    and adaptive dual thresholds with search-back.

    Filtering and integration are zero-phase so integrated-signal peaks sit
    on the QRS; every accepted QRS is refined to the raw-signal maximum
    within ``refine_s``.
    """
    x = np.asarray(ecg.samples, dtype=float)
    rate = ecg.sample_rate_hz
    n = len(x)
    if n / rate < cfg.min_duration_s:
        raise TooShortError(f"ECG lasts {n / rate:.1f} s, need {cfg.min_duration_s:g} s")
    empty = BeatSeries.empty(rate, n, "ecg", ecg.start_time_s)
    if np.ptp(x) == 0:
        return empty
    filt = bandpass_array(x, rate, cfg.band)
    slope = _five_point_derivative(filt, rate)
    mwi = moving_average(slope * slope, cfg.integration_s, rate)
    refractory = max(int(round(cfg.refractory_s * rate)), 1)
    cand, _ = find_peaks(mwi, distance=refractory)
    if cand.size == 0 or mwi.max() <= 0:
        return empty
    half = max(int(round(cfg.search_s * rate)), 1)
    lo = np.clip(cand - half, 0, n)
    hi = np.clip(cand + half + 1, 0, n)
    filt_peak = np.array([np.abs(filt[a:b]).max() for a, b in zip(lo, hi)])
    max_slope = np.array([np.abs(slope[a:b]).max() for a, b in zip(lo, hi)])

    learn = max(int(round(cfg.learning_s * rate)), 1)
    integ = _Level(0.25 * mwi[:learn].max(), 0.5 * mwi[:learn].mean())
    band = _Level(0.25 * np.abs(filt[:learn]).max(), 0.5 * np.abs(filt[:learn]).mean())

    qrs: list = []
    qrs_slope: list = []
    rr_recent: list = []
    rr_regular: list = []
    rr_avg2 = None
    t_wave = int(round(cfg.t_wave_s * rate))
    last_searched = -1

    def accept(k: int, searchback: bool = False) -> None:
        nonlocal rr_avg2
        c = int(cand[k])
        if qrs:
            rr = c - cand[qrs[-1]]
            rr_recent.append(rr)
            del rr_recent[:-8]
            if rr_avg2 is None or 0.92 * rr_avg2 < rr < 1.16 * rr_avg2:
                rr_regular.append(rr)
                del rr_regular[:-8]
            rr_avg2 = float(np.mean(rr_regular)) if rr_regular else float(np.mean(rr_recent))
        qrs.append(k)
        qrs_slope.append(max_slope[k])
        integ.signal(mwi[c], searchback)
        band.signal(filt_peak[k], searchback)

    for k, c in enumerate(cand):
        if qrs and rr_avg2 is not None:
            missed = 1.66 * rr_avg2
            prev = int(cand[qrs[-1]])
            if c - prev > missed:
                # search back between the last QRS and this candidate
                pool = [j for j in range(max(qrs[-1] + 1, last_searched + 1), k)
                        if cand[j] - prev >= refractory
                        and mwi[cand[j]] > integ.thr2 and filt_peak[j] > band.thr2]
                last_searched = k - 1
                if pool:
                    accept(max(pool, key=lambda j: mwi[cand[j]]), searchback=True)
        irregular = bool(rr_recent) and rr_avg2 is not None and not (
            0.92 * rr_avg2 < rr_recent[-1] < 1.16 * rr_avg2)
        scale = 0.5 if irregular else 1.0
        is_qrs = mwi[c] > scale * integ.thr1 and filt_peak[k] > scale * band.thr1
        if is_qrs and qrs:
            prev = int(cand[qrs[-1]])
            if c - prev < refractory:
                is_qrs = False
            elif c - prev < t_wave and max_slope[k] < 0.5 * qrs_slope[-1]:
                is_qrs = False
        if is_qrs:
            accept(k)
        else:
            integ.noise(mwi[c])
            band.noise(filt_peak[k])

    peaks = _refine(x, filt, cand[qrs], half, max(int(round(cfg.refine_s * rate)), 1))
    if peaks.size == 0:
        return empty
    return BeatSeries(peaks, np.ones(peaks.size, dtype=bool), rate, n, "ecg", ecg.start_time_s)


def _refine(raw, filt, marks, search, refine) -> np.ndarray:
    n = len(raw)
    out = []
    for c in np.asarray(marks, dtype=np.int64):
        a, b = max(c - search, 0), min(c + search + 1, n)
        f = a + int(np.argmax(filt[a:b]))
        a, b = max(f - refine, 0), min(f + refine + 1, n)
        out.append(a + int(np.argmax(raw[a:b])))
    return np.unique(np.asarray(out, dtype=np.int64))


def ground_truth_hr(ecg, window_len_s: float = 30.0, step_s: float = 5.0,
                    cfg: PanTompkinsConfig = PanTompkinsConfig()) -> HrSeries:
    """Windowed HR from an :class:`EcgSignal` or an already detected
    :class:`BeatSeries`, aggregated exactly like the PPG path."""
    beats = ecg if isinstance(ecg, BeatSeries) else pan_tompkins_rpeaks(ecg, cfg)
    return hr_from_beats(beats, window_len_s, step_s)
