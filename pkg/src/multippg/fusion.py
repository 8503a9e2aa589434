"""Cross-site alignment, windowed quality traces and quality-weighted fusion.

The fused waveform is

    s[t] = sum_i x_i[t] * max(delta, q_i[t])**p / sum_j max(delta, q_j[t])**p

with ``p = 6`` by default, so a channel whose beats correlate slightly better
with its template dominates the mix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .beats import IbiGateConfig, PeakDetectConfig, beats_pipeline, hr_from_beats
from .core import (AlignedSet, BeatSeries, HrSeries, LengthMismatchError, PipelineError,
                   QualityTrace, Signal, site_label)
from .dsp import BandpassSpec, bandpass

log = logging.getLogger(__name__)


class NoReferenceBeatsError(PipelineError, ValueError):
    pass


@dataclass(frozen=True)
class FusionConfig:
    align_window_ms: float = 150.0
    quality_window_s: float = 30.0
    quality_step_s: float = 30.0
    power: int = 6
    delta: float = 1e-3
    # "recording": one lag per channel; "window": one lag per quality window
    align_mode: str = "recording"
    normalize_window_s: float = 30.0
    # fused HR windows whose mean fused quality falls below this are missing
    min_quality: float = 0.7

    def __post_init__(self):
        if self.align_window_ms <= 0:
            raise ValueError("align_window_ms must be positive")
        if not 0 < self.delta < 0.1:
            raise ValueError("delta must satisfy 0 < delta << 1")
        if self.power < 1:
            raise ValueError("power must be >= 1")
        if self.quality_window_s <= 0 or self.quality_step_s <= 0:
            raise ValueError("quality windows must be positive")
        if self.align_mode not in ("recording", "window"):
            raise ValueError("align_mode must be 'recording' or 'window'")
        if not 0 <= self.min_quality <= 1:
            raise ValueError("min_quality must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class FusedSignal:
    """Fused waveform plus the normalized per-sample weight of every site."""

    samples: np.ndarray
    weights: np.ndarray
    sites: tuple
    sample_rate_hz: float
    start_time_s: float = 0.0
    # per-sample weighted quality sum(w_i * max(delta, q_i))
    quality: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.samples)

    def as_signal(self) -> Signal:
        return Signal(self.samples, self.sample_rate_hz, "fused", self.start_time_s)

    def contributors(self, window_s: float = 30.0) -> np.ndarray:
        """Mean normalized weight per site in consecutive windows,
        shape ``(n_windows, n_sites)``."""
        w = max(int(round(window_s * self.sample_rate_hz)), 1)
        n = self.weights.shape[1]
        edges = np.arange(0, n, w)
        sums = np.add.reduceat(self.weights, edges, axis=1)
        counts = np.diff(np.r_[edges, n])
        return (sums / counts).T


# -- alignment -------------------------------------------------------------

def choose_reference(scores: Mapping) -> object:
    """Site with the highest mean beat quality."""
    best, best_q = None, -np.inf
    for site, (_, r) in scores.items():
        q = float(np.mean(r)) if len(r) else -np.inf
        if q > best_q:
            best, best_q = site, q
    if best is None:
        raise NoReferenceBeatsError("no site has scored beats")
    return best


def estimate_lag(ref_peaks, peaks, rate: float, window_ms: float = 150.0):
    """Constant shift (samples) that best lands ``peaks`` on ``ref_peaks``.

    Candidates cover ``+-window_ms``. A shifted peak counts as matched when it
    is within ``window_ms / 2`` of a reference peak. The most matches win,
    then the smallest summed residual, then the smallest ``|lag|``.
    Returns ``(lag, n_matched)``.
    """
    ref = np.asarray(ref_peaks, dtype=np.int64)
    pk = np.asarray(peaks, dtype=np.int64)
    bound = int(round(window_ms / 1000.0 * rate))
    tol = window_ms / 2000.0 * rate
    if ref.size == 0 or pk.size == 0:
        return 0, 0
    best_key, best = None, (0, 0)
    for lag in sorted(range(-bound, bound + 1), key=lambda v: (abs(v), v)):
        shifted = pk + lag
        j = np.searchsorted(ref, shifted)
        left = ref[np.clip(j - 1, 0, ref.size - 1)]
        right = ref[np.clip(j, 0, ref.size - 1)]
        d = np.minimum(np.abs(shifted - left), np.abs(shifted - right))
        hit = d <= tol
        key = (-int(hit.sum()), float(d[hit].sum()), abs(lag))
        if best_key is None or key < best_key:
            best_key, best = key, (lag, int(hit.sum()))
    return best


def shift_samples(x, lag: int) -> np.ndarray:
    """``out[t] = x[t - lag]``; the uncovered edge repeats the nearest sample."""
    x = np.asarray(x, dtype=float)
    if lag == 0 or x.size == 0:
        return x.copy()
    idx = np.clip(np.arange(x.size) - lag, 0, x.size - 1)
    return x[idx]


def shift_beats(beats: BeatSeries, lag: int) -> BeatSeries:
    """Move peaks by ``lag`` samples, dropping any that leave the recording."""
    if lag == 0 or len(beats) == 0:
        return beats
    p = beats.peak_indices + lag
    inside = (p >= 0) & (p < beats.n_samples)
    ibi_valid = beats.interval_valid
    if not inside.all():
        keep_ibi = inside[:-1] & inside[1:]
        ibi_valid = ibi_valid[keep_ibi]
    return replace(beats, peak_indices=p[inside], valid=beats.valid[inside],
                   ibi_valid=ibi_valid)


def _window_bounds(n: int, rate: float, window_s: float, step_s: float):
    w = max(int(round(window_s * rate)), 1)
    step = max(int(round(step_s * rate)), 1)
    if n <= w:
        return np.array([0]), np.array([n])
    starts = np.arange(0, n - w + 1, step)
    return starts, np.minimum(starts + w, n)


def align_channels(signals: AlignedSet, beats: Mapping, cfg: FusionConfig = FusionConfig(),
                   reference=None) -> AlignedSet:
    """Shift every channel so its systolic peaks line up with the reference's.

    ``beats`` maps site to :class:`BeatSeries`. Without an explicit
    ``reference`` the channel with the most valid peaks is used; callers
    holding beat scores should pass :func:`choose_reference`'s pick.
    """
    rate = signals.sample_rate_hz
    beats = {site_label(k): v for k, v in beats.items()}
    if reference is None:
        reference = max(signals.sites, key=lambda s: int(beats[s].valid.sum()) if s in beats else -1)
    reference = site_label(reference)
    ref_beats = beats.get(reference)
    if ref_beats is None or int(ref_beats.valid.sum()) < 2:
        raise NoReferenceBeatsError(f"reference site {reference} has fewer than two valid beats")
    ref_peaks = ref_beats.peak_indices[ref_beats.valid]
    bound = int(round(cfg.align_window_ms / 1000.0 * rate))
    out, lags, diag = [], {}, {}
    for sig in signals:
        b = beats.get(sig.site)
        peaks = b.peak_indices[b.valid] if b is not None else np.zeros(0, np.int64)
        if sig.site == reference:
            out.append(sig)
            lags[sig.site] = 0.0
            diag[sig.site] = {"reference": True, "lag_samples": 0, "matched": int(peaks.size),
                              "n_peaks": int(peaks.size), "at_bound": False}
            continue
        if cfg.align_mode == "window":
            x, lag_list = _align_per_window(sig, peaks, ref_peaks, cfg)
            out.append(replace(sig, samples=x))
            lags[sig.site] = float(np.median(lag_list)) / rate if lag_list else 0.0
            diag[sig.site] = {"reference": False, "window_lags_samples": lag_list,
                              "at_bound": any(abs(v) == bound for v in lag_list)}
            continue
        lag, matched = estimate_lag(ref_peaks, peaks, rate, cfg.align_window_ms)
        at_bound = abs(lag) == bound and peaks.size > 0
        if at_bound:
            log.warning("%s: alignment lag hit the +-%g ms bound; the true delay may be larger",
                        sig.site, cfg.align_window_ms)
        out.append(replace(sig, samples=shift_samples(sig.samples, lag)))
        lags[sig.site] = lag / rate
        diag[sig.site] = {"reference": False, "lag_samples": int(lag), "matched": matched,
                          "n_peaks": int(peaks.size), "at_bound": bool(at_bound)}
    return AlignedSet(tuple(out), lags, {"reference": reference, "sites": diag})


def _align_per_window(sig, peaks, ref_peaks, cfg):
    rate = sig.sample_rate_hz
    n = len(sig)
    w = max(int(round(cfg.quality_window_s * rate)), 1)
    x = np.asarray(sig.samples, dtype=float)
    out = np.empty(n)
    lags = []
    for a in range(0, n, w):
        b = min(a + w, n)
        pk = peaks[(peaks >= a) & (peaks < b)]
        rf = ref_peaks[(ref_peaks >= a - w // 2) & (ref_peaks < b + w // 2)]
        lag, _ = estimate_lag(rf, pk, rate, cfg.align_window_ms)
        idx = np.clip(np.arange(a, b) - lag, 0, n - 1)
        out[a:b] = x[idx]
        lags.append(int(lag))
    return out, lags


# -- quality ---------------------------------------------------------------

def window_quality(scores, signal_len: int, rate: float, cfg: FusionConfig = FusionConfig()) -> QualityTrace:
    """Mean beat correlation per window, interpolated between window centers.

    ``scores`` is a list of :class:`~multippg.sqi.BeatQuality` or a
    ``(peak_indices, r)`` pair. Windows without beats get ``delta``.
    """
    if isinstance(scores, tuple) and len(scores) == 2 and isinstance(scores[0], np.ndarray):
        idx, r = scores
    else:
        idx = np.array([s.peak_index for s in scores], dtype=np.int64)
        r = np.array([s.r for s in scores], dtype=float)
    order = np.argsort(idx, kind="stable")
    idx, r = np.asarray(idx)[order], np.asarray(r, dtype=float)[order]
    starts, ends = _window_bounds(signal_len, rate, cfg.quality_window_s, cfg.quality_step_s)
    cs = np.r_[0.0, np.cumsum(r)]
    lo = np.searchsorted(idx, starts, side="left")
    hi = np.searchsorted(idx, ends, side="left")
    cnt = hi - lo
    vals = np.full(starts.size, cfg.delta)
    has = cnt > 0
    vals[has] = (cs[hi[has]] - cs[lo[has]]) / cnt[has]
    vals = np.clip(vals, cfg.delta, 1.0)
    centers = (starts + ends - 1) / 2.0
    q = np.interp(np.arange(signal_len), centers, vals)
    return QualityTrace(q, cfg.delta, centers / rate, vals)


def constant_quality(value: float, signal_len: int, cfg: FusionConfig = FusionConfig()) -> QualityTrace:
    v = float(np.clip(value, cfg.delta, 1.0))
    return QualityTrace(np.full(signal_len, v), cfg.delta, np.zeros(1), np.array([v]))


# -- fusion ----------------------------------------------------------------

def normalize_windows(x, rate: float, window_s: float = 30.0) -> np.ndarray:
    """Z-score consecutive windows independently; flat windows become zero."""
    x = np.asarray(x, dtype=float)
    w = max(int(round(window_s * rate)), 1)
    out = np.zeros_like(x)
    for a in range(0, x.size, w):
        seg = x[a:a + w]
        c = seg - seg.mean()
        sd = np.sqrt(np.mean(c * c))
        if sd > 0:
            out[a:a + w] = c / sd
    return out


def fusion_weights(traces: Sequence, cfg: FusionConfig = FusionConfig()) -> np.ndarray:
    """Normalized weights ``max(delta, q)**p / sum``, shape ``(n_sites, n)``."""
    q = np.vstack([np.asarray(getattr(t, "q", t), dtype=float) for t in traces])
    raw = np.maximum(cfg.delta, q) ** cfg.power
    return raw / raw.sum(axis=0, keepdims=True)


def fuse(signals: AlignedSet, traces, cfg: FusionConfig = FusionConfig()) -> FusedSignal:
    """Evaluate the weighted-mean equation sample by sample.

    ``traces`` is a sequence in channel order or a mapping keyed by site.
    Channels are mixed as given; amplitude normalization is the caller's
    job (see :func:`fuse_channels`).
    """
    if isinstance(traces, Mapping):
        traces = [traces[s] for s in signals.sites]
    if len(traces) != len(signals):
        raise LengthMismatchError(f"{len(signals)} channels but {len(traces)} quality traces")
    n = signals.n_samples
    for sig, tr in zip(signals, traces):
        if len(sig) != n or len(getattr(tr, "q", tr)) != n:
            raise LengthMismatchError("channels and quality traces must share one length")
    x = np.vstack([np.asarray(s.samples, dtype=float) for s in signals])
    w = fusion_weights(traces, cfg)
    q = np.maximum(cfg.delta, np.vstack([np.asarray(getattr(t, "q", t), dtype=float) for t in traces]))
    return FusedSignal((w * x).sum(axis=0), w, tuple(signals.sites), signals.sample_rate_hz,
                       signals.start_time_s, (w * q).sum(axis=0))


@dataclass
class FusionResult:
    fused: FusedSignal
    aligned: AlignedSet
    beats: dict
    traces: dict
    reference: object = None
    notes: dict = field(default_factory=dict)


def fuse_channels(filtered: AlignedSet, beats: Mapping, scores: Mapping,
                  cfg: FusionConfig = FusionConfig()) -> FusionResult:
    """Align, build quality traces, normalize and fuse bandpassed channels.

    ``beats`` and ``scores`` map site to the gated beats and to
    ``(peak_indices, r)`` beat scores; a site without scores (no clean
    template) gets quality ``delta`` everywhere.
    """
    rate, n = filtered.sample_rate_hz, filtered.n_samples
    scored = {s: v for s, v in scores.items() if v is not None and len(v[1])}
    try:
        reference = choose_reference(scored)
    except NoReferenceBeatsError:
        reference = None
    if len(filtered) > 1:
        aligned = align_channels(filtered, beats, cfg, reference)
        reference = aligned.diagnostics["reference"]
    else:
        aligned = filtered
    traces, shifted = {}, {}
    for sig in aligned:
        lag = int(round(aligned.lags_s.get(sig.site, 0.0) * rate))
        b = beats.get(sig.site)
        shifted[sig.site] = shift_beats(b, lag) if b is not None else None
        sc = scored.get(sig.site)
        if sc is None:
            traces[sig.site] = constant_quality(cfg.delta, n, cfg)
            continue
        idx, r = sc
        idx = np.asarray(idx) + lag
        inside = (idx >= 0) & (idx < n)
        traces[sig.site] = window_quality((idx[inside], np.asarray(r)[inside]), n, rate, cfg)
    normalized = AlignedSet(tuple(replace(s, samples=normalize_windows(s.samples, rate, cfg.normalize_window_s))
                                  for s in aligned), aligned.lags_s, aligned.diagnostics)
    fused = fuse(normalized, traces, cfg)
    return FusionResult(fused, aligned, shifted, traces, reference)


def fused_hr(fused: FusedSignal, peak_cfg: PeakDetectConfig = PeakDetectConfig(),
             gate_cfg: IbiGateConfig = IbiGateConfig(), window_len_s: float = 30.0,
             step_s: float = 5.0, bandpass_spec: Optional[BandpassSpec] = BandpassSpec(),
             min_quality: float = 0.0) -> HrSeries:
    """Run detect, gate and windowed HR on the fused waveform.

    Windows whose mean fused quality is below ``min_quality`` are flagged
    missing: when every site is poor the fused waveform is still poor.
    """
    sig = fused.as_signal()
    if bandpass_spec is not None:
        sig = bandpass(sig, bandpass_spec)
    beats = beats_pipeline(sig, peak_cfg, gate_cfg)
    hr = hr_from_beats(beats, window_len_s, step_s)
    if min_quality <= 0 or fused.quality is None or len(hr) == 0:
        return hr
    rate = fused.sample_rate_hz
    c = np.r_[0.0, np.cumsum(fused.quality)]
    a = np.round((hr.timestamps_s - window_len_s / 2 - fused.start_time_s) * rate).astype(np.int64)
    a = np.clip(a, 0, len(fused))
    b = np.clip(a + int(round(window_len_s * rate)), 0, len(fused))
    mean_q = (c[b] - c[a]) / np.maximum(b - a, 1)
    values = np.where(mean_q < min_quality, np.nan, hr.hr_bpm)
    return replace(hr, hr_bpm=values)
