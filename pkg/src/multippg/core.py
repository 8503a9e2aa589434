"""Shared data model: waveforms, beat series, quality traces and HR series."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np

DEFAULT_RATE_HZ = 128.0
HR_RANGE_BPM = (40.0, 185.0)
MIN_OVERLAP_S = 60.0


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class TooShortError(PipelineError, ValueError):
    pass


class ZeroVarianceError(PipelineError, ValueError):
    pass


class LengthMismatchError(PipelineError, ValueError):
    pass


class EmptySetError(PipelineError, ValueError):
    pass


class NoOverlapError(PipelineError, ValueError):
    pass


class RateMismatchError(PipelineError, ValueError):
    pass


class Site(str, Enum):
    HEAD = "head"
    STERNUM = "sternum"
    WRIST = "wrist"
    ANKLE = "ankle"

    def __str__(self) -> str:
        return self.value


SiteLabel = Union[Site, str]
KNOWN_SITES = tuple(s.value for s in Site)


def site_label(name: SiteLabel) -> SiteLabel:
    """Normalize a site name; known body sites map to ``Site``, anything
    else is kept as a free-form label (the ``Other(name)`` case)."""
    if isinstance(name, Site):
        return name
    key = str(name).strip().lower()
    if not key:
        raise ValueError("empty site label")
    try:
        return Site(key)
    except ValueError:
        return key


def _frozen(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Signal:
    """Uniformly sampled single-channel waveform."""

    samples: np.ndarray
    sample_rate_hz: float
    site: SiteLabel = "other"
    start_time_s: float = 0.0

    def __post_init__(self):
        samples = _frozen(self.samples)
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not self.sample_rate_hz > 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples contain NaN or Inf; repair them at ingestion")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))
        object.__setattr__(self, "site", site_label(self.site))
        object.__setattr__(self, "start_time_s", float(self.start_time_s))

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    @property
    def end_time_s(self) -> float:
        return self.start_time_s + self.duration_s

    @property
    def times(self) -> np.ndarray:
        return self.start_time_s + np.arange(len(self.samples)) / self.sample_rate_hz

    def with_samples(self, samples) -> "Signal":
        return replace(self, samples=samples)


@dataclass(frozen=True, eq=False)
class EcgSignal:
    """Lead I ECG channel. Same shape as :class:`Signal` but never fused."""

    samples: np.ndarray
    sample_rate_hz: float
    start_time_s: float = 0.0

    def __post_init__(self):
        samples = _frozen(self.samples)
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not self.sample_rate_hz > 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples contain NaN or Inf; repair them at ingestion")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))
        object.__setattr__(self, "start_time_s", float(self.start_time_s))

    site = "ecg"

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    @property
    def end_time_s(self) -> float:
        return self.start_time_s + self.duration_s

    def with_samples(self, samples) -> "EcgSignal":
        return replace(self, samples=samples)


@dataclass(frozen=True, eq=False)
class BeatSeries:
    """Detected peaks of one channel plus their IBI-gate validity.

    ``n_samples``, ``sample_rate_hz`` and ``start_time_s`` describe the
    recording the indices refer to, so HR windows can be laid on the same
    grid for every channel of a recording. ``ibi_valid`` is set by IBI
    gating; without it an interval counts as valid when both of its peaks
    are.
    """

    peak_indices: np.ndarray
    valid: np.ndarray
    sample_rate_hz: float
    n_samples: int
    source_site: SiteLabel = "other"
    start_time_s: float = 0.0
    no_peaks: bool = False
    ibi_valid: Optional[np.ndarray] = None

    def __post_init__(self):
        idx = _frozen(self.peak_indices, dtype=np.int64)
        valid = _frozen(self.valid, dtype=bool)
        if idx.shape != valid.shape:
            raise LengthMismatchError("peak_indices and valid differ in length")
        if self.ibi_valid is not None:
            ibi_valid = _frozen(self.ibi_valid, dtype=bool)
            if ibi_valid.size != max(idx.size - 1, 0):
                raise LengthMismatchError("ibi_valid needs one entry per interval")
            object.__setattr__(self, "ibi_valid", ibi_valid)
        if idx.size > 1 and np.any(np.diff(idx) <= 0):
            raise ValueError("peak_indices must be strictly increasing")
        object.__setattr__(self, "peak_indices", idx)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))
        object.__setattr__(self, "n_samples", int(self.n_samples))
        object.__setattr__(self, "start_time_s", float(self.start_time_s))

    def __len__(self) -> int:
        return len(self.peak_indices)

    @property
    def peak_times_s(self) -> np.ndarray:
        return self.start_time_s + self.peak_indices / self.sample_rate_hz

    @property
    def ibis_s(self) -> np.ndarray:
        return np.diff(self.peak_indices) / self.sample_rate_hz

    @property
    def interval_valid(self) -> np.ndarray:
        if self.ibi_valid is not None:
            return self.ibi_valid
        v = self.valid
        return v[:-1] & v[1:] if v.size > 1 else np.zeros(0, dtype=bool)

    @classmethod
    def empty(cls, sample_rate_hz, n_samples, source_site="other", start_time_s=0.0):
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=bool), sample_rate_hz,
                   n_samples, source_site, start_time_s, no_peaks=True)


@dataclass(frozen=True, eq=False)
class QualityTrace:
    """Per-sample fusion weight base, bounded to ``[delta, 1]``."""

    q: np.ndarray
    delta: float
    window_centers_s: np.ndarray = field(default_factory=lambda: np.zeros(0))
    window_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        q = _frozen(self.q)
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if q.size and (q.min() < self.delta - 1e-12 or q.max() > 1 + 1e-12):
            raise ValueError("quality values outside [delta, 1]")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "window_centers_s", _frozen(self.window_centers_s))
        object.__setattr__(self, "window_values", _frozen(self.window_values))

    def __len__(self) -> int:
        return len(self.q)


@dataclass(frozen=True, eq=False)
class HrSeries:
    """Windowed HR estimates; missing windows hold NaN."""

    timestamps_s: np.ndarray
    hr_bpm: np.ndarray
    window_len_s: float = 30.0
    step_s: float = 5.0

    def __post_init__(self):
        ts = _frozen(self.timestamps_s)
        hr = _frozen(self.hr_bpm)
        if ts.shape != hr.shape:
            raise LengthMismatchError("timestamps and hr values differ in length")
        if ts.size > 1:
            d = np.diff(ts)
            if np.any(d <= 0):
                raise ValueError("timestamps must be strictly increasing")
            if np.ptp(d) > 1e-6 * max(abs(d[0]), 1.0):
                raise ValueError("timestamps must have a constant step")
        ok = np.isnan(hr) | ((hr >= HR_RANGE_BPM[0]) & (hr <= HR_RANGE_BPM[1]))
        if not ok.all():
            raise ValueError(f"HR values outside {HR_RANGE_BPM} bpm must be flagged missing (NaN)")
        object.__setattr__(self, "timestamps_s", ts)
        object.__setattr__(self, "hr_bpm", hr)

    def __len__(self) -> int:
        return len(self.hr_bpm)

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.hr_bpm)


@dataclass(frozen=True, eq=False)
class BeatTemplate:
    """Z-scored reference beat (two R-R intervals) for one site.

    ``members`` lists the positions, in the segment list the template was
    built from, of the segments that were averaged.
    """

    values: np.ndarray
    site: SiteLabel = "other"
    n_contributing: int = 0
    members: tuple = ()

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 1 or v.size < 8:
            raise ValueError("a template needs at least 8 samples")
        if abs(v.mean()) > 1e-9 or abs(v.std() - 1.0) > 1e-9:
            raise ValueError("template values must be z-scored")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "site", site_label(self.site))
        object.__setattr__(self, "members", tuple(int(m) for m in self.members))

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True, eq=False)
class AlignedSet:
    """Channels sharing epoch, length and sample rate.

    ``lags_s`` holds the shift applied to each channel by alignment (zero
    before alignment); ``diagnostics`` carries per-site alignment notes.
    """

    signals: tuple
    lags_s: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "signals", tuple(self.signals))
        if not self.signals:
            raise EmptySetError("aligned set is empty")

    def __len__(self) -> int:
        return len(self.signals)

    def __iter__(self):
        return iter(self.signals)

    @property
    def sample_rate_hz(self) -> float:
        return self.signals[0].sample_rate_hz

    @property
    def start_time_s(self) -> float:
        return self.signals[0].start_time_s

    @property
    def n_samples(self) -> int:
        return len(self.signals[0])

    @property
    def sites(self) -> list:
        return [s.site for s in self.signals]

    def by_site(self, site: SiteLabel) -> Signal:
        key = site_label(site)
        for s in self.signals:
            if s.site == key:
                return s
        raise KeyError(f"no channel for site {site!r}")

    def subset(self, sites: Sequence[SiteLabel]) -> "AlignedSet":
        return AlignedSet(tuple(self.by_site(s) for s in sites))


def _overlap(signals) -> tuple[float, float]:
    start = max(s.start_time_s for s in signals)
    end = min(s.end_time_s for s in signals)
    return start, end


def validate_aligned_set(signals: Sequence, min_overlap_s: float = MIN_OVERLAP_S) -> AlignedSet:
    """Trim channels to their common time range.

    Channels must already share one sample rate (ingestion resamples).
    Start offsets are rounded to the nearest sample.
    """
    signals = list(signals.signals if isinstance(signals, AlignedSet) else signals)
    if not signals:
        raise EmptySetError("no signals given")
    rates = {s.sample_rate_hz for s in signals}
    if len(rates) != 1:
        raise RateMismatchError(f"sample rates differ: {sorted(rates)}")
    rate = rates.pop()
    start, end = _overlap(signals)
    if end - start < min_overlap_s:
        raise NoOverlapError(
            f"common time range is {max(end - start, 0.0):.3f} s, need {min_overlap_s:g} s")
    n = min(int(np.floor((s.end_time_s - start) * rate + 1e-9)) for s in signals)
    out = []
    for s in signals:
        i0 = int(round((start - s.start_time_s) * rate))
        i0 = min(max(i0, 0), len(s) - n)
        out.append(replace(s, samples=s.samples[i0:i0 + n], start_time_s=start))
    return AlignedSet(tuple(out))
