"""ICA baseline: unmix the multi-site PPG matrix and keep the most
cardiac-looking component."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .core import AlignedSet, PipelineError, Signal
from .dsp import zscore

log = logging.getLogger(__name__)


class SingularWhiteningError(PipelineError, ValueError):
    pass


@dataclass(frozen=True)
class IcaConfig:
    chunk_s: float = 30.0
    tol: float = 1e-6
    max_iter: int = 500
    seed: int = 0
    band: tuple = (0.6, 3.3)
    peak_halfwidth_hz: float = 0.1


@dataclass(eq=False)
class IcaResult:
    components: np.ndarray  # (n_components, n_samples)
    mixing: np.ndarray      # (n_channels, n_components)
    chosen: int = 0
    score: float = float("nan")
    converged: bool = True
    n_iter: int = 0


def _whiten(x: np.ndarray, n_components: int, rcond: float = 1e-10):
    """Rows of ``x`` are channels. Returns (whitened, whitening, dewhitening)."""
    xc = x - x.mean(axis=1, keepdims=True)
    cov = xc @ xc.T / xc.shape[1]
    evals, evecs = linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    if evals[0] <= 0 or evals[n_components - 1] <= rcond * evals[0]:
        raise SingularWhiteningError(
            f"channel covariance is rank deficient (eigenvalues {evals.tolist()})")
    evals, evecs = evals[:n_components], evecs[:, :n_components]
    whitening = (evecs / np.sqrt(evals)).T
    dewhitening = evecs * np.sqrt(evals)
    return whitening @ xc, whitening, dewhitening


def _sym_decorrelate(w: np.ndarray) -> np.ndarray:
    s, u = linalg.eigh(w @ w.T)
    s = np.clip(s, np.finfo(float).tiny, None)
    return (u / np.sqrt(s)) @ u.T @ w


def ica_unmix(signals, n_components: int | None = None, seed: int = 0,
              tol: float = 1e-6, max_iter: int = 500) -> IcaResult:
    """Symmetric fixed-point FastICA with the log-cosh contrast.

    ``signals`` is an :class:`AlignedSet` or a ``(channels, samples)`` array.
    Initialization is a seeded Gaussian matrix. On non-convergence the last
    iterate is returned with ``converged=False``.
    """
    if isinstance(signals, AlignedSet):
        x = np.vstack([np.asarray(s.samples, dtype=float) for s in signals])
    else:
        x = np.atleast_2d(np.asarray(signals, dtype=float))
    n_ch = x.shape[0]
    if n_ch < 2:
        raise ValueError("ICA needs at least two channels")
    k = n_ch if n_components is None else int(n_components)
    if not 1 <= k <= n_ch:
        raise ValueError(f"n_components must lie in [1, {n_ch}]")
    z, whitening, dewhitening = _whiten(x, k)
    rng = np.random.default_rng(seed)
    w = _sym_decorrelate(rng.normal(size=(k, k)))
    m = z.shape[1]
    converged, it = False, 0
    for it in range(1, max_iter + 1):
        y = w @ z
        g = np.tanh(y)
        g_prime = 1.0 - g * g
        w_new = _sym_decorrelate(g @ z.T / m - g_prime.mean(axis=1)[:, None] * w)
        change = np.max(np.abs(np.abs(np.einsum("ij,ij->i", w_new, w)) - 1.0))
        w = w_new
        if change < tol:
            converged = True
            break
    if not converged:
        log.debug("FastICA did not converge in %d iterations", max_iter)
    sources = w @ z
    mixing = dewhitening @ w.T
    return IcaResult(sources, mixing, 0, float("nan"), converged, it)


def spectral_concentration(x, rate: float, band=(0.6, 3.3), halfwidth_hz: float = 0.1) -> float:
    """Power within ``halfwidth_hz`` of the dominant in-band peak over the
    total in-band power. Invariant to scaling of ``x``."""
    x = np.asarray(x, dtype=float)
    spec = np.abs(np.fft.rfft(x - x.mean())) ** 2
    f = np.fft.rfftfreq(x.size, 1.0 / rate)
    sel = (f >= band[0]) & (f <= band[1])
    total = spec[sel].sum()
    if total <= 0:
        return 0.0
    f_band, p_band = f[sel], spec[sel]
    peak = f_band[np.argmax(p_band)]
    near = np.abs(f_band - peak) <= halfwidth_hz
    return float(p_band[near].sum() / total)


def select_best_component(result: IcaResult, rate: float, band=(0.6, 3.3),
                          halfwidth_hz: float = 0.1) -> int:
    scores = [spectral_concentration(c, rate, band, halfwidth_hz) for c in result.components]
    best = int(np.argmax(scores))
    result.chosen, result.score = best, float(scores[best])
    return best


def _orient(x: np.ndarray) -> np.ndarray:
    """Flip so the waveform is positively skewed like a PPG pulse train."""
    c = x - x.mean()
    return x if np.mean(c ** 3) >= 0 else -x


def _chunks(n: int, size: int):
    k = max(n // size, 1)
    bounds = [(i * size, (i + 1) * size) for i in range(k)]
    bounds[-1] = (bounds[-1][0], n)
    return bounds


def ica_signal(signals: AlignedSet, cfg: IcaConfig = IcaConfig()) -> Signal:
    """Best component per chunk, sign-oriented, z-scored and concatenated
    into one waveform on the recording's time grid."""
    rate, n = signals.sample_rate_hz, signals.n_samples
    x = np.vstack([np.asarray(s.samples, dtype=float) for s in signals])
    out = np.zeros(n)
    size = max(int(round(cfg.chunk_s * rate)), 2)
    for i, (a, b) in enumerate(_chunks(n, size)):
        chunk = x[:, a:b]
        try:
            res = ica_unmix(chunk, seed=cfg.seed + i, tol=cfg.tol, max_iter=cfg.max_iter)
        except SingularWhiteningError:
            log.warning("chunk %d: singular channel covariance, using the channel mean", i)
            out[a:b] = chunk.mean(axis=0)
            continue
        best = select_best_component(res, rate, cfg.band, cfg.peak_halfwidth_hz)
        comp = _orient(res.components[best])
        try:
            out[a:b] = zscore(comp)
        except PipelineError:
            out[a:b] = 0.0
    return Signal(out, rate, "ica", signals.start_time_s)
