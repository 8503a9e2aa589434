"""Systolic peak detection, interbeat-interval gating and windowed HR."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import BeatSeries, HrSeries, TooShortError
from .dsp import moving_average

log = logging.getLogger(__name__)

MIN_HR_BPM = 40.0
MAX_HR_BPM = 185.0


def _default_offsets():
    return tuple(round(0.05 * k, 2) for k in range(21))


@dataclass(frozen=True)
class PeakDetectConfig:
    ma_window_s: float = 0.75
    # multiples of the optimization window's standard deviation
    offset_candidates: tuple = field(default_factory=_default_offsets)
    opt_window_s: float = 60.0
    max_hr_bpm: float = MAX_HR_BPM
    min_hr_bpm: float = MIN_HR_BPM
    min_peaks_per_window: int = 4

    def __post_init__(self):
        cands = tuple(float(c) for c in self.offset_candidates)
        if not cands:
            raise ValueError("offset_candidates must not be empty")
        if any(c < 0 for c in cands) or list(cands) != sorted(cands):
            raise ValueError("offset_candidates must be non-negative and sorted")
        object.__setattr__(self, "offset_candidates", cands)
        if self.ma_window_s <= 0 or self.opt_window_s <= 0:
            raise ValueError("window lengths must be positive")


@dataclass(frozen=True)
class IbiGateConfig:
    run_length: int = 5
    ratio_threshold: float = 0.51

    def __post_init__(self):
        if self.run_length < 2:
            raise ValueError("run_length must be >= 2")
        if not 0 < self.ratio_threshold < 1:
            raise ValueError("ratio_threshold must lie in (0, 1)")


@dataclass(frozen=True)
class HrConfig:
    window_len_s: float = 30.0
    step_s: float = 5.0
    min_valid_ibis: int = 3


def _region_peaks(x: np.ndarray, thr: np.ndarray, drop_edges: bool = False) -> np.ndarray:
    """Index of the maximum sample in every run where ``x > thr``."""
    idx = np.flatnonzero(x > thr)
    if idx.size == 0:
        return idx
    starts = np.r_[0, np.flatnonzero(np.diff(idx) > 1) + 1]
    if drop_edges:
        ends = np.r_[starts[1:], idx.size] - 1
        keep = (idx[starts] > 0) & (idx[ends] < len(x) - 1)
        if not keep.all():
            lengths = np.diff(np.r_[starts, idx.size])
            mask = np.repeat(keep, lengths)
            idx = idx[mask]
            if idx.size == 0:
                return idx
            starts = np.r_[0, np.flatnonzero(np.diff(idx) > 1) + 1]
    vals = x[idx]
    region_max = np.maximum.reduceat(vals, starts)
    region_id = np.repeat(np.arange(starts.size), np.diff(np.r_[starts, idx.size]))
    at_max = np.flatnonzero(vals == region_max[region_id])
    _, first = np.unique(region_id[at_max], return_index=True)
    return idx[at_max[first]]


def prune_fast_beats(peaks, min_distance: float) -> np.ndarray:
    """Drop the later peak of every pair closer than ``min_distance`` samples,
    re-checking against the last kept peak."""
    peaks = np.asarray(peaks, dtype=np.int64)
    if peaks.size < 2 or np.all(np.diff(peaks) >= min_distance):
        return peaks
    kept = [int(peaks[0])]
    last = kept[0]
    for p in peaks[1:].tolist():
        if p - last >= min_distance:
            kept.append(p)
            last = p
    return np.asarray(kept, dtype=np.int64)


def _interval_score(peaks, rate, cfg: PeakDetectConfig) -> float:
    if peaks.size < cfg.min_peaks_per_window:
        return np.inf
    ibis = np.diff(peaks) / rate
    mean_hr = 60.0 / ibis.mean()
    if not cfg.min_hr_bpm <= mean_hr <= cfg.max_hr_bpm:
        return np.inf
    return float(np.var(ibis))


def _opt_windows(n: int, w: int):
    """Non-overlapping windows of ``w`` samples; a short tail joins the last one."""
    k = max(n // w, 1)
    bounds = [(i * w, (i + 1) * w) for i in range(k)]
    bounds[-1] = (bounds[-1][0], n)
    return bounds


def detect_peaks(signal, cfg: PeakDetectConfig = PeakDetectConfig()) -> BeatSeries:
    """Threshold-crossing peak detector with per-minute offset search.

    ``signal`` must already be bandpassed. For each optimization window the
    offset (a multiple of the window's standard deviation added to the
    moving average) giving the lowest interval variance is kept.
    """
    x = np.asarray(signal.samples, dtype=float)
    rate = signal.sample_rate_hz
    site = getattr(signal, "site", "other")
    if len(x) / rate < cfg.opt_window_s - 1e-9:
        raise TooShortError(
            f"signal lasts {len(x) / rate:.1f} s, peak detection needs {cfg.opt_window_s:g} s")
    min_distance = 60.0 / cfg.max_hr_bpm * rate
    ma = moving_average(x, cfg.ma_window_s, rate)
    offsets = np.empty(len(x))
    w = int(round(cfg.opt_window_s * rate))
    for a, b in _opt_windows(len(x), w):
        seg, base = x[a:b], ma[a:b]
        sd = seg.std()
        best, best_score = cfg.offset_candidates[0], np.inf
        if sd > 0:
            for c in cfg.offset_candidates:
                pk = prune_fast_beats(_region_peaks(seg, base + c * sd), min_distance)
                score = _interval_score(pk, rate, cfg)
                if score < best_score:
                    best, best_score = c, score
        offsets[a:b] = best * sd
    peaks = prune_fast_beats(_region_peaks(x, ma + offsets, drop_edges=True), min_distance)
    if peaks.size == 0:
        log.warning("no peaks found in %s channel", site)
        return BeatSeries.empty(rate, len(x), site, signal.start_time_s)
    return BeatSeries(peaks, np.ones(peaks.size, dtype=bool), rate, len(x), site,
                      signal.start_time_s)


def gate_mask(ibis, cfg: IbiGateConfig = IbiGateConfig()) -> np.ndarray:
    """Boolean validity per IBI: inside some run of ``run_length`` consecutive
    IBIs whose min/max ratio exceeds the threshold.

    Checking runs of exactly ``run_length`` is enough: every longer run that
    qualifies consists of qualifying runs of that length.
    """
    ibis = np.asarray(ibis, dtype=float)
    n, k = ibis.size, cfg.run_length
    valid = np.zeros(n, dtype=bool)
    if n < k:
        return valid
    win = sliding_window_view(ibis, k)
    mx = win.max(axis=1)
    ok = (mx > 0) & (win.min(axis=1) > cfg.ratio_threshold * mx)
    cover = np.zeros(n + 1, dtype=np.int64)
    starts = np.flatnonzero(ok)
    np.add.at(cover, starts, 1)
    np.add.at(cover, starts + k, -1)
    return np.cumsum(cover[:-1]) > 0


def gate_ibis(beats: BeatSeries, cfg: IbiGateConfig = IbiGateConfig()) -> BeatSeries:
    ibi_ok = gate_mask(np.diff(beats.peak_indices), cfg)
    peak_ok = np.zeros(len(beats), dtype=bool)
    peak_ok[:-1] |= ibi_ok
    peak_ok[1:] |= ibi_ok
    return replace(beats, valid=peak_ok, ibi_valid=ibi_ok)


def window_grid(start_time_s: float, duration_s: float, window_len_s: float = 30.0,
                step_s: float = 5.0) -> np.ndarray:
    """Window start times; every window lies fully inside the recording."""
    if duration_s < window_len_s:
        return np.zeros(0)
    n = int(np.floor((duration_s - window_len_s) / step_s + 1e-9)) + 1
    return start_time_s + step_s * np.arange(n)


def hr_from_ibis(t_start, t_end, valid, starts, window_len_s=30.0, step_s=5.0,
                 min_valid_ibis=3, min_hr=MIN_HR_BPM, max_hr=MAX_HR_BPM,
                 origin_s=0.0) -> HrSeries:
    """HR = 60 / mean(valid IBIs overlapping each window).

    The single aggregation used for PPG, fused, ICA and ECG beat series.
    Times are relative to ``origin_s``, which is added to the output
    timestamps only, so window membership does not depend on it.
    """
    t_start = np.asarray(t_start, dtype=float)
    t_end = np.asarray(t_end, dtype=float)
    valid = np.asarray(valid, dtype=bool)
    starts = np.asarray(starts, dtype=float)
    ends = starts + window_len_s
    ibi = np.where(valid, t_end - t_start, 0.0)
    cs_sum = np.r_[0.0, np.cumsum(ibi)]
    cs_cnt = np.r_[0, np.cumsum(valid)]
    lo = np.searchsorted(t_end, starts, side="right")
    hi = np.searchsorted(t_start, ends, side="left")
    hi = np.maximum(hi, lo)
    cnt = cs_cnt[hi] - cs_cnt[lo]
    total = cs_sum[hi] - cs_sum[lo]
    hr = np.full(starts.size, np.nan)
    ok = cnt >= min_valid_ibis
    hr[ok] = 60.0 * cnt[ok] / total[ok]
    hr[(hr < min_hr) | (hr > max_hr)] = np.nan
    return HrSeries(origin_s + starts + window_len_s / 2, hr, window_len_s, step_s)


def hr_from_beats(beats: BeatSeries, window_len_s: float = 30.0, step_s: float = 5.0,
                  min_valid_ibis: int = 3) -> HrSeries:
    duration = beats.n_samples / beats.sample_rate_hz
    starts = window_grid(0.0, duration, window_len_s, step_s)
    t = np.asarray(beats.peak_indices, dtype=float) / beats.sample_rate_hz
    return hr_from_ibis(t[:-1], t[1:], beats.interval_valid, starts, window_len_s, step_s,
                        min_valid_ibis, origin_s=beats.start_time_s)


def beats_pipeline(filtered, peak_cfg=PeakDetectConfig(), gate_cfg=IbiGateConfig()) -> BeatSeries:
    """Detect and gate peaks on an already bandpassed channel."""
    return gate_ibis(detect_peaks(filtered, peak_cfg), gate_cfg)
