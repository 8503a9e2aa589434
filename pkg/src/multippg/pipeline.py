"""End-to-end HR estimation per method: single site, fusion or ICA."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from .beats import HrConfig, IbiGateConfig, PeakDetectConfig, beats_pipeline, hr_from_beats
from .core import AlignedSet, BeatSeries, BeatTemplate, HrSeries, Signal, site_label
from .dsp import BandpassSpec, bandpass
from .ecg import PanTompkinsConfig, ground_truth_hr
from .fusion import FusionConfig, FusionResult, fuse_channels, fused_hr
from .ica import IcaConfig, ica_signal
from .sqi import NoCleanSegmentsError, TemplateConfig, score_array, site_template

METHODS = ("single", "fusion", "ica")


@dataclass(frozen=True)
class PipelineConfig:
    bandpass: BandpassSpec = BandpassSpec()
    peaks: PeakDetectConfig = PeakDetectConfig()
    gate: IbiGateConfig = IbiGateConfig()
    hr: HrConfig = HrConfig()
    template: TemplateConfig = TemplateConfig()
    fusion: FusionConfig = FusionConfig()
    ica: IcaConfig = IcaConfig()
    ecg: PanTompkinsConfig = PanTompkinsConfig()


@dataclass
class ChannelAnalysis:
    filtered: Signal
    beats: BeatSeries
    template: Optional[BeatTemplate]
    scores: Optional[tuple]


def analyze_channel(signal: Signal, cfg: PipelineConfig = PipelineConfig()) -> ChannelAnalysis:
    filtered = bandpass(signal, cfg.bandpass)
    beats = beats_pipeline(filtered, cfg.peaks, cfg.gate)
    try:
        template = site_template(filtered, beats, cfg.template)
    except NoCleanSegmentsError:
        return ChannelAnalysis(filtered, beats, None, None)
    return ChannelAnalysis(filtered, beats, template, score_array(filtered, beats, template, cfg.template))


@dataclass
class Estimator:
    """HR estimation over one aligned recording, caching per-site analysis
    so that single-site and fusion runs share the work."""

    signals: AlignedSet
    cfg: PipelineConfig = PipelineConfig()
    _cache: dict = field(default_factory=dict, repr=False)

    def channel(self, site) -> ChannelAnalysis:
        key = site_label(site)
        if key not in self._cache:
            self._cache[key] = analyze_channel(self.signals.by_site(key), self.cfg)
        return self._cache[key]

    def _hr(self, beats: BeatSeries) -> HrSeries:
        return hr_from_beats(beats, self.cfg.hr.window_len_s, self.cfg.hr.step_s,
                             self.cfg.hr.min_valid_ibis)

    def single(self, site) -> HrSeries:
        return self._hr(self.channel(site).beats)

    def fusion_result(self, sites: Sequence) -> FusionResult:
        sites = [site_label(s) for s in sites]
        chans = {s: self.channel(s) for s in sites}
        filtered = AlignedSet(tuple(chans[s].filtered for s in sites))
        return fuse_channels(filtered, {s: c.beats for s, c in chans.items()},
                             {s: c.scores for s, c in chans.items()}, self.cfg.fusion)

    def fusion(self, sites: Sequence) -> HrSeries:
        res = self.fusion_result(sites)
        return fused_hr(res.fused, self.cfg.peaks, self.cfg.gate, self.cfg.hr.window_len_s,
                        self.cfg.hr.step_s, self.cfg.bandpass, self.cfg.fusion.min_quality)

    def ica(self, sites: Sequence) -> HrSeries:
        sites = [site_label(s) for s in sites]
        if len(sites) < 2:
            raise ValueError("the ICA baseline needs at least two sites")
        filtered = AlignedSet(tuple(self.channel(s).filtered for s in sites))
        comp = bandpass(ica_signal(filtered, self.cfg.ica), self.cfg.bandpass)
        return self._hr(beats_pipeline(comp, self.cfg.peaks, self.cfg.gate))

    def estimate(self, sites: Sequence, method: str) -> HrSeries:
        if method == "single":
            if len(sites) != 1:
                raise ValueError("method 'single' takes exactly one site")
            return self.single(sites[0])
        if method == "fusion":
            return self.fusion(sites)
        if method == "ica":
            return self.ica(sites)
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def estimate_hr(signals: AlignedSet, sites: Sequence, method: str,
                cfg: PipelineConfig = PipelineConfig()) -> HrSeries:
    return Estimator(signals, cfg).estimate(sites, method)


def reference_hr(ecg, cfg: PipelineConfig = PipelineConfig()) -> HrSeries:
    return ground_truth_hr(ecg, cfg.hr.window_len_s, cfg.hr.step_s, cfg.ecg)


def trim_ecg(ecg, aligned: AlignedSet):
    """Cut an ECG channel to the aligned set's time range."""
    i0 = int(round((aligned.start_time_s - ecg.start_time_s) * ecg.sample_rate_hz))
    if i0 < 0 or i0 + aligned.n_samples > len(ecg):
        raise ValueError("ECG does not cover the PPG time range")
    return replace(ecg, samples=ecg.samples[i0:i0 + aligned.n_samples],
                   start_time_s=aligned.start_time_s)

