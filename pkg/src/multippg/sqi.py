"""Per-site beat templates and per-beat template correlation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .core import BeatSeries, BeatTemplate, PipelineError, ZeroVarianceError
from .dsp import resample_to_n, zscore


class NoCleanSegmentsError(PipelineError, ValueError):
    pass


@dataclass(frozen=True)
class TemplateConfig:
    n_samples: int = 40
    triangle_gate_r: float = 0.8
    target_pool: int = 500
    min_hr: float = 40.0
    max_hr: float = 185.0
    rise_fraction: float = 0.3
    # "peak": apexes on the segment's delimiting and center peaks;
    # "onset": apexes rise_fraction into each half
    triangle_anchor: str = "peak"

    def __post_init__(self):
        if self.n_samples < 8:
            raise ValueError("n_samples must be >= 8")
        if not 0 < self.triangle_gate_r < 1:
            raise ValueError("triangle_gate_r must lie in (0, 1)")
        if self.target_pool < 2:
            raise ValueError("target_pool must be >= 2")
        if not 0 < self.rise_fraction < 1:
            raise ValueError("rise_fraction must lie in (0, 1)")
        if self.triangle_anchor not in ("peak", "onset"):
            raise ValueError("triangle_anchor must be 'peak' or 'onset'")


@dataclass(frozen=True)
class BeatQuality:
    peak_index: int
    r: float


def leaning_triangle(n: int = 40, rise_fraction: float = 0.3, anchor: str = "peak") -> np.ndarray:
    """Z-scored reference of two asymmetric triangles, one per R-R interval.

    With ``anchor="peak"`` each half falls for ``1 - rise_fraction`` of its
    length and rises for the rest, so the apexes land on the first sample,
    the middle and the last sample, the way a peak-delimited PPG segment
    looks. ``anchor="onset"`` starts each half at the foot instead: it rises
    for ``rise_fraction`` and falls for the rest.
    """
    if n < 8:
        raise ValueError("n must be >= 8")
    if anchor == "peak":
        u = np.linspace(0.0, 2.0, n)
        frac = u - np.floor(u)
        frac[-1] = 1.0
        fall = 1.0 - rise_fraction
        v = np.where(frac <= fall, 1.0 - frac / fall, (frac - fall) / rise_fraction)
        v[0] = 1.0
        return zscore(v)
    if anchor == "onset":
        half = n // 2
        halves = []
        for h in (half, n - half):
            j = np.arange(h, dtype=float)
            apex = rise_fraction * half
            halves.append(np.where(j <= apex, j / apex, (h - j) / (h - apex)))
        return zscore(np.concatenate(halves))
    raise ValueError(f"unknown anchor {anchor!r}")


def _half_hr_ok(left_s, right_s, cfg: TemplateConfig):
    lo, hi = 60.0 / cfg.max_hr, 60.0 / cfg.min_hr
    return (left_s >= lo) & (left_s <= hi) & (right_s >= lo) & (right_s <= hi)


def extract_segment(signal, beats: BeatSeries, peak_ordinal: int,
                    cfg: TemplateConfig = TemplateConfig()) -> Optional[np.ndarray]:
    """Samples from the previous to the next peak, resampled and z-scored.

    Returns ``None`` when the segment is rejected: either half implies a HR
    outside ``[min_hr, max_hr]``, or the span is flat.
    """
    p = beats.peak_indices
    if not 0 < peak_ordinal < len(p) - 1:
        return None
    rate = beats.sample_rate_hz
    left = (p[peak_ordinal] - p[peak_ordinal - 1]) / rate
    right = (p[peak_ordinal + 1] - p[peak_ordinal]) / rate
    if not _half_hr_ok(left, right, cfg):
        return None
    raw = np.asarray(signal.samples[p[peak_ordinal - 1]:p[peak_ordinal + 1] + 1], dtype=float)
    try:
        return zscore(resample_to_n(raw, cfg.n_samples))
    except ZeroVarianceError:
        return None


def extract_segments(signal, beats: BeatSeries, cfg: TemplateConfig = TemplateConfig()):
    """Vectorized :func:`extract_segment` over all interior peaks.

    Returns ``(ordinals, segments)``: the interior peak ordinals whose
    segments were accepted and the ``(k, n_samples)`` z-scored segments.
    """
    p = beats.peak_indices
    n = cfg.n_samples
    if len(p) < 3:
        return np.zeros(0, dtype=np.int64), np.zeros((0, n))
    rate = beats.sample_rate_hz
    ords = np.arange(1, len(p) - 1)
    left = (p[1:-1] - p[:-2]) / rate
    right = (p[2:] - p[1:-1]) / rate
    ok = _half_hr_ok(left, right, cfg)
    ords = ords[ok]
    if ords.size == 0:
        return ords, np.zeros((0, n))
    a = p[ords - 1].astype(float)
    b = p[ords + 1].astype(float)
    pos = a[:, None] + (b - a)[:, None] * np.linspace(0.0, 1.0, n)[None, :]
    x = np.asarray(signal.samples, dtype=float)
    seg = np.interp(pos.ravel(), np.arange(len(x)), x).reshape(pos.shape)
    seg = seg - seg.mean(axis=1, keepdims=True)
    sd = np.sqrt(np.mean(seg * seg, axis=1))
    scale = np.maximum(np.abs(seg).max(axis=1), 1.0)
    live = sd > 1e-12 * scale
    return ords[live], seg[live] / sd[live, None]


def _corr_rows(z_rows: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Pearson correlation of z-scored rows with an arbitrary reference."""
    ref = ref - ref.mean()
    sd = np.sqrt(np.mean(ref * ref))
    if sd == 0:
        return np.zeros(len(z_rows))
    return z_rows @ (ref / sd) / ref.size


def build_template(segments, cfg: TemplateConfig = TemplateConfig(), site="other") -> BeatTemplate:
    """Average the segments that pass the triangle gate, then prune the pool.

    Pruning drops the segment least correlated with the current average and
    recomputes the average after every removal, until ``target_pool``
    segments remain.
    """
    z = np.asarray(segments, dtype=float)
    if z.ndim != 2 or z.shape[0] == 0:
        raise NoCleanSegmentsError("no segments to build a template from")
    if z.shape[1] != cfg.n_samples:
        raise ValueError(f"segments have {z.shape[1]} samples, expected {cfg.n_samples}")
    z = np.array([zscore(row) for row in z]) if not _is_zscored(z) else z
    tri = leaning_triangle(cfg.n_samples, cfg.rise_fraction, cfg.triangle_anchor)
    keep = np.flatnonzero(_corr_rows(z, tri) > cfg.triangle_gate_r)
    if keep.size == 0:
        raise NoCleanSegmentsError("no segment correlates with the reference triangle")
    total = z[keep].sum(axis=0)
    alive = np.ones(keep.size, dtype=bool)
    pool = z[keep]
    for _ in range(keep.size - cfg.target_pool):
        r = _corr_rows(pool, total)
        r[~alive] = np.inf
        worst = int(np.argmin(r))
        alive[worst] = False
        total = total - pool[worst]
    members = keep[alive]
    values = zscore(z[members].mean(axis=0))
    return BeatTemplate(values, site, int(members.size), tuple(members.tolist()))


def _is_zscored(z: np.ndarray) -> bool:
    return bool(np.allclose(z.mean(axis=1), 0.0, atol=1e-9)
                and np.allclose(np.sqrt(np.mean(z * z, axis=1)), 1.0, atol=1e-9))


def score_array(signal, beats: BeatSeries, template: BeatTemplate,
                cfg: TemplateConfig = TemplateConfig()):
    """``(peak_indices, r)`` for every interior peak; rejected segments get 0."""
    p = beats.peak_indices
    if len(p) < 3:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    ords, segs = extract_segments(signal, beats, cfg)
    r = np.zeros(len(p) - 2)
    if ords.size:
        r[ords - 1] = np.clip(_corr_rows(segs, np.asarray(template.values)), -1.0, 1.0)
    return p[1:-1].copy(), r


def score_beats(signal, beats: BeatSeries, template: BeatTemplate,
                cfg: TemplateConfig = TemplateConfig()) -> List[BeatQuality]:
    idx, r = score_array(signal, beats, template, cfg)
    return [BeatQuality(int(i), float(v)) for i, v in zip(idx, r)]


def site_template(signal, beats: BeatSeries, cfg: TemplateConfig = TemplateConfig()) -> BeatTemplate:
    """Template from every accepted segment of one recording channel."""
    _, segs = extract_segments(signal, beats, cfg)
    return build_template(segs, cfg, getattr(signal, "site", "other"))
