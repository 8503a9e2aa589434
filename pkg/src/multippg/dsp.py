"""Numerical primitives shared by the PPG and ECG paths."""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy import signal as ss

from .core import LengthMismatchError, PipelineError, TooShortError, ZeroVarianceError


class UnstableDesignError(PipelineError, ValueError):
    pass


@dataclass(frozen=True)
class BandpassSpec:
    low_hz: float = 0.6
    high_hz: float = 3.3
    # order of each Butterworth design; applied forward and backward
    order: int = 2

    def check(self, rate: float) -> None:
        if not 0 < self.low_hz < self.high_hz < rate / 2:
            raise UnstableDesignError(
                f"need 0 < {self.low_hz} < {self.high_hz} < Nyquist ({rate / 2:g} Hz)")
        if self.order < 1:
            raise UnstableDesignError("filter order must be >= 1")

    def warmup_samples(self, rate: float) -> int:
        """One period of the low cutoff, the slowest transient the filter has."""
        return int(np.ceil(rate / self.low_hz))


@lru_cache(maxsize=32)
def _design(spec: BandpassSpec, rate: float) -> np.ndarray:
    return ss.butter(spec.order, [spec.low_hz, spec.high_hz], btype="bandpass",
                     fs=rate, output="sos")


def bandpass_array(x, rate: float, spec: BandpassSpec = BandpassSpec()) -> np.ndarray:
    """Zero-phase Butterworth bandpass of a plain array.

    The input is odd-reflected by three warm-up lengths on both sides before
    the forward-backward pass, then trimmed back.
    """
    spec.check(rate)
    x = np.asarray(x, dtype=float)
    pad = 3 * spec.warmup_samples(rate)
    if len(x) <= pad:
        raise TooShortError(f"need more than {pad} samples for this filter, got {len(x)}")
    padded = np.concatenate([2 * x[0] - x[pad:0:-1], x, 2 * x[-1] - x[-2:-pad - 2:-1]])
    y = ss.sosfiltfilt(_design(spec, float(rate)), padded, padlen=0)
    return y[pad:pad + len(x)]


def bandpass(signal, spec: BandpassSpec = BandpassSpec()):
    """Bandpass a :class:`Signal` (or :class:`EcgSignal`); timing is unchanged."""
    return replace(signal, samples=bandpass_array(signal.samples, signal.sample_rate_hz, spec))


def _window_bounds(n: int, w: int):
    i = np.arange(n)
    lo = np.maximum(i - (w - 1) // 2, 0)
    hi = np.minimum(i + w // 2 + 1, n)
    return lo, hi


def moving_average(x, window_s: float, rate: float) -> np.ndarray:
    """Centered moving mean; windows shrink at the edges.

    A window of ``w`` samples covers ``(w - 1) // 2`` samples before and
    ``w // 2`` after the current one.
    """
    x = np.asarray(x, dtype=float)
    w = max(int(round(window_s * rate)), 1)
    lo, hi = _window_bounds(len(x), w)
    c = np.concatenate([[0.0], np.cumsum(x)])
    return (c[hi] - c[lo]) / (hi - lo)


def moving_std(x, window_s: float, rate: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    m = moving_average(x, window_s, rate)
    m2 = moving_average(x * x, window_s, rate)
    return np.sqrt(np.maximum(m2 - m * m, 0.0))


def resample_to_n(x, n: int) -> np.ndarray:
    """Linear interpolation of ``x`` onto ``n`` evenly spaced points that keep
    both endpoints."""
    x = np.asarray(x, dtype=float)
    if len(x) < 2 or n < 2:
        raise TooShortError("resampling needs at least two input and output points")
    if len(x) == n:
        return x.copy()
    pos = np.linspace(0.0, len(x) - 1, n)
    return np.interp(pos, np.arange(len(x)), x)


def resample_rate(x, rate_in: float, rate_out: float) -> np.ndarray:
    """Linear resampling onto a new uniform grid starting at the same instant."""
    x = np.asarray(x, dtype=float)
    duration = len(x) / rate_in
    n_out = int(np.floor(duration * rate_out + 1e-9))
    t_out = np.arange(n_out) / rate_out
    return np.interp(t_out, np.arange(len(x)) / rate_in, x)


def zscore(x) -> np.ndarray:
    """Standardize with the population standard deviation (divide by N)."""
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        raise TooShortError("z-score needs at least two samples")
    centered = x - x.mean()
    sd = np.sqrt(np.mean(centered * centered))
    if not sd > 1e-12 * max(1.0, np.abs(x).max()):
        raise ZeroVarianceError("constant segment")
    return centered / sd


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatchError(f"lengths differ: {a.shape} vs {b.shape}")
    r = float(np.mean(zscore(a) * zscore(b)))
    return min(1.0, max(-1.0, r))


def interp_piecewise(t, knots_t, knots_v) -> np.ndarray:
    """Piecewise-linear interpolation, constant outside the knot range."""
    return np.interp(t, knots_t, knots_v)
