"""File formats: recording CSV, HR CSV, beat CSV, key-value config files and
template records. All text is UTF-8 with LF line endings.

Recording CSV::

    time_s,site_1:head,site_2:wrist,ecg
    0.000000,0.12,0.33,0.01
    ...

One row per sample. Empty cells or ``nan`` mark missing samples; gaps up to
0.25 s are interpolated, longer gaps reject the file.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import logging
import os
import tempfile
import warnings
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .beats import HrConfig, IbiGateConfig, PeakDetectConfig
from .core import (DEFAULT_RATE_HZ, BeatSeries, BeatTemplate, EcgSignal, HrSeries, PipelineError,
                   Signal, site_label)
from .dsp import BandpassSpec, resample_rate
from .ecg import PanTompkinsConfig
from .fusion import FusionConfig
from .ica import IcaConfig
from .pipeline import PipelineConfig
from .sqi import TemplateConfig
from .synth import NoiseEvent, SitePulse, SynthScenario

log = logging.getLogger(__name__)

MAX_GAP_S = 0.25
RATE_JITTER = 0.01


class ParseError(PipelineError, ValueError):
    def __init__(self, message: str, line: Optional[int] = None, col: Optional[int] = None):
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {col})" if col is not None else ")")
        super().__init__(message + where)
        self.line, self.col = line, col


class RateInferenceError(ParseError):
    pass


class ConfigError(PipelineError, ValueError):
    pass


class IngestWarning(UserWarning):
    pass


# -- atomic output ---------------------------------------------------------

def atomic_write_text(path, text: str) -> Path:
    """Write through a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(v: float) -> str:
    return "" if np.isnan(v) else format(float(v), ".9g")


# -- recordings ------------------------------------------------------------

@dataclass
class Recording:
    signals: list
    ecg: Optional[EcgSignal] = None
    path: Optional[Path] = None
    warnings: list = field(default_factory=list)


def recording_csv(signals, ecg: Optional[EcgSignal] = None) -> str:
    """Serialize channels that share rate, start and length."""
    signals = list(signals)
    rate, start, n = signals[0].sample_rate_hz, signals[0].start_time_s, len(signals[0])
    for s in signals[1:] + ([ecg] if ecg is not None else []):
        if s.sample_rate_hz != rate or len(s) != n or s.start_time_s != start:
            raise ValueError("channels must share sample rate, start time and length")
    header = ["time_s"] + [f"site_{i + 1}:{s.site}" for i, s in enumerate(signals)]
    cols = [np.asarray(s.samples) for s in signals]
    if ecg is not None:
        header.append("ecg")
        cols.append(np.asarray(ecg.samples))
    t = start + np.arange(n) / rate
    lines = [",".join(header)]
    data = np.column_stack(cols)
    for ti, row in zip(t.tolist(), data.tolist()):
        lines.append(f"{ti:.6f}," + ",".join(format(v, ".9g") for v in row))
    return "\n".join(lines) + "\n"


def write_recording(path, signals, ecg: Optional[EcgSignal] = None) -> Path:
    return atomic_write_text(path, recording_csv(signals, ecg))


def _parse_header(header: list):
    if not header or header[0].strip() != "time_s":
        raise ParseError("first column must be 'time_s'", 1, 1)
    sites, ecg_col = [], None
    for j, name in enumerate(header[1:], start=1):
        name = name.strip()
        if name == "ecg":
            if ecg_col is not None:
                raise ParseError("more than one ecg column", 1, j + 1)
            ecg_col = j
            continue
        key, sep, label = name.partition(":")
        if not sep or not key.startswith("site_") or not label:
            raise ParseError(f"bad column name {name!r}, expected 'site_<n>:<label>'", 1, j + 1)
        sites.append((j, site_label(label)))
    labels = [str(s) for _, s in sites]
    if len(set(labels)) != len(labels):
        raise ParseError("duplicate site labels in header", 1)
    if not sites and ecg_col is None:
        raise ParseError("no data columns", 1)
    return sites, ecg_col


def _repair_gaps(x: np.ndarray, rate: float, name: str, notes: list) -> np.ndarray:
    bad = ~np.isfinite(x)
    if not bad.any():
        return x
    idx = np.flatnonzero(bad)
    runs = np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1)
    for run in runs:
        if run.size / rate > MAX_GAP_S:
            raise ParseError(f"{name}: gap of {run.size / rate:.3f} s exceeds {MAX_GAP_S} s",
                             int(run[0]) + 2)
        if run[0] == 0 or run[-1] == x.size - 1:
            raise ParseError(f"{name}: missing samples at the recording edge", int(run[0]) + 2)
    good = np.flatnonzero(~bad)
    out = x.copy()
    out[bad] = np.interp(idx, good, x[good])
    msg = f"{name}: interpolated {len(runs)} gap(s), {idx.size} sample(s)"
    notes.append(msg)
    warnings.warn(msg, IngestWarning, stacklevel=3)
    return out


def load_recording(path, target_rate_hz: Optional[float] = DEFAULT_RATE_HZ) -> Recording:
    """Parse a recording CSV into site signals and an optional ECG channel.

    Channels at a rate other than ``target_rate_hz`` are linearly resampled;
    pass ``None`` to keep the file's rate.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"recording not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", 1) from None
        sites, ecg_col = _parse_header(header)
        width = len(header)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ParseError(f"expected {width} fields, got {len(row)}", lineno)
            vals = []
            for j, cell in enumerate(row):
                cell = cell.strip()
                if cell == "" or cell.lower() == "nan":
                    if j == 0:
                        raise ParseError("missing timestamp", lineno, 1)
                    vals.append(np.nan)
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ParseError(f"not a number: {cell!r}", lineno, j + 1) from None
            rows.append(vals)
    if len(rows) < 2:
        raise ParseError("need at least two samples")
    data = np.asarray(rows, dtype=float)
    t = data[:, 0]
    if not np.all(np.isfinite(t)):
        raise ParseError("non-finite timestamp", int(np.flatnonzero(~np.isfinite(t))[0]) + 2, 1)
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise ParseError("timestamps are not strictly increasing", int(np.flatnonzero(dt <= 0)[0]) + 3, 1)
    # the full span is robust to timestamp rounding in the file
    step = float(t[-1] - t[0]) / (t.size - 1)
    worst = np.abs(dt - step).max()
    if worst > RATE_JITTER * step:
        k = int(np.argmax(np.abs(dt - step)))
        raise RateInferenceError(
            f"sample spacing jitters by {100 * worst / step:.2f}% (limit {100 * RATE_JITTER:g}%)", k + 3, 1)
    rate = round(1.0 / step, 3)
    start = float(t[0])
    notes: list = []

    def column(j, name):
        x = _repair_gaps(data[:, j], rate, name, notes)
        if target_rate_hz is not None and abs(rate - target_rate_hz) > 1e-9:
            x = resample_rate(x, rate, target_rate_hz)
        return x

    out_rate = rate if target_rate_hz is None else float(target_rate_hz)
    if target_rate_hz is not None and abs(rate - target_rate_hz) > 1e-9:
        notes.append(f"resampled from {rate:g} Hz to {target_rate_hz:g} Hz")
    signals = [Signal(column(j, str(site)), out_rate, site, start) for j, site in sites]
    ecg = EcgSignal(column(ecg_col, "ecg"), out_rate, start) if ecg_col is not None else None
    for note in notes:
        log.info("%s: %s", path.name, note)
    return Recording(signals, ecg, path, notes)


# -- HR and beat series ------------------------------------------------------

def hr_csv(hr: HrSeries) -> str:
    lines = ["time_s,hr_bpm"]
    for t, v in zip(hr.timestamps_s.tolist(), hr.hr_bpm.tolist()):
        lines.append(f"{t:.3f},{_fmt(v)}")
    return "\n".join(lines) + "\n"


def write_hr(path, hr: HrSeries) -> Path:
    return atomic_write_text(path, hr_csv(hr))


def read_hr(path, window_len_s: float = 30.0, step_s: float = 5.0) -> HrSeries:
    ts, hr = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["time_s", "hr_bpm"]:
            raise ParseError("expected header 'time_s,hr_bpm'", 1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise ParseError("expected 2 fields", lineno)
            try:
                ts.append(float(row[0]))
                hr.append(float(row[1]) if row[1].strip() else np.nan)
            except ValueError:
                raise ParseError("not a number", lineno) from None
    return HrSeries(np.array(ts), np.array(hr), window_len_s, step_s)


def beats_csv(series: dict) -> str:
    lines = ["source,index,time_s"]
    for name, b in series.items():
        for i, t in zip(b.peak_indices.tolist(), b.peak_times_s.tolist()):
            lines.append(f"{name},{i},{t:.6f}")
    return "\n".join(lines) + "\n"


def write_beats(path, series: dict) -> Path:
    return atomic_write_text(path, beats_csv(series))


# -- key-value config files ------------------------------------------------

_SECTIONS = {
    "bandpass": ("bandpass", BandpassSpec),
    "peaks": ("peaks", PeakDetectConfig),
    "gate": ("gate", IbiGateConfig),
    "hr": ("hr", HrConfig),
    "template": ("template", TemplateConfig),
    "fusion": ("fusion", FusionConfig),
    "ica": ("ica", IcaConfig),
    "ecg": ("ecg", PanTompkinsConfig),
}


def _parse_value(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "yes", "1", "on"):
                return True
            if raw.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(v) for v in raw.replace(";", ",").split(",") if v.strip())
        if default is None:
            return None if raw.lower() in ("", "none") else float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from None


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(format(x, "g") for x in v)
    if isinstance(v, float):
        return format(v, "g")
    return str(v)


def _apply(obj, items: dict, where: str):
    names = {f.name: f for f in fields(obj)}
    changes = {}
    for key, raw in items.items():
        if key not in names:
            raise ConfigError(f"[{where}] unknown key {key!r}; expected one of {sorted(names)}")
        default = getattr(obj, key)
        if is_dataclass(default):
            raise ConfigError(f"[{where}] {key} is set through its own section")
        changes[key] = _parse_value(raw, default, f"[{where}] {key}")
    try:
        return dataclasses.replace(obj, **changes)
    except ValueError as exc:
        raise ConfigError(f"[{where}] {exc}") from None


def parse_pipeline_config(text: str) -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    cfg = PipelineConfig()
    ecg_band = None
    for section in parser.sections():
        if section == "ecg.band":
            ecg_band = dict(parser[section])
            continue
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]; expected one of {sorted(_SECTIONS)}")
        attr, _ = _SECTIONS[section]
        cfg = dataclasses.replace(cfg, **{attr: _apply(getattr(cfg, attr), dict(parser[section]), section)})
    if ecg_band:
        band = _apply(cfg.ecg.band, ecg_band, "ecg.band")
        cfg = dataclasses.replace(cfg, ecg=dataclasses.replace(cfg.ecg, band=band))
    return cfg


def load_pipeline_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config not found: {path}")
    return parse_pipeline_config(path.read_text(encoding="utf-8"))


def pipeline_config_text(cfg: PipelineConfig = PipelineConfig()) -> str:
    """Every setting with its current value, in the format read back by
    :func:`parse_pipeline_config`."""
    out = []
    for section, (attr, _) in _SECTIONS.items():
        obj = getattr(cfg, attr)
        out.append(f"[{section}]")
        nested = []
        for f in fields(obj):
            v = getattr(obj, f.name)
            if is_dataclass(v):
                nested.append((f.name, v))
                continue
            out.append(f"{f.name} = {_format_value(v)}")
        out.append("")
        for name, v in nested:
            out.append(f"[{section}.{name}]")
            out.extend(f"{g.name} = {_format_value(getattr(v, g.name))}" for g in fields(v))
            out.append("")
    return "\n".join(out)


# -- scenario files ----------------------------------------------------------

def _profile_text(profile) -> str:
    return ", ".join(f"{t:g}:{v:g}" for t, v in profile)


def _parse_profile(raw: str):
    try:
        pts = []
        for item in raw.split(","):
            if item.strip():
                t, v = item.split(":")
                pts.append((float(t), float(v)))
        return tuple(pts)
    except ValueError:
        raise ConfigError(f"hr_profile: expected 'time:bpm, ...', got {raw!r}") from None


def scenario_text(sc: SynthScenario) -> str:
    out = ["[scenario]",
           f"duration_s = {sc.duration_s:g}",
           f"rate_hz = {sc.rate_hz:g}",
           f"seed = {sc.seed}",
           f"hrv_ms = {sc.hrv_ms:g}",
           f"resp_rate_hz = {sc.resp_rate_hz:g}",
           f"resp_amp = {sc.resp_amp:g}",
           f"ecg_snr_db = {_format_value(sc.ecg_snr_db) if sc.ecg_snr_db is not None else 'none'}",
           f"hr_profile = {_profile_text(sc.hr_profile)}", ""]
    for s in sc.sites:
        out.append(f"[site:{s.site}]")
        for f in fields(s):
            if f.name == "site":
                continue
            v = getattr(s, f.name)
            out.append(f"{f.name} = {'none' if v is None else _format_value(v)}")
        out.append("")
    for i, ev in enumerate(sc.noise_events, start=1):
        out += [f"[noise:{i}]", f"site = {ev.site}", f"start_s = {ev.start_s:g}",
                f"end_s = {ev.end_s:g}", f"kind = {ev.kind}", f"snr_db = {ev.snr_db:g}", ""]
    return "\n".join(out)


def parse_scenario(text: str) -> SynthScenario:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    if "scenario" not in parser:
        raise ConfigError("missing [scenario] section")
    head = dict(parser["scenario"])
    sc = SynthScenario(duration_s=1.0)
    if "hr_profile" in head:
        sc = dataclasses.replace(sc, hr_profile=_parse_profile(head.pop("hr_profile")))
    if "duration_s" not in head:
        raise ConfigError("[scenario] duration_s is required")
    base = {k: v for k, v in head.items()}
    if "ecg_snr_db" in base:
        raw = base.pop("ecg_snr_db").strip().lower()
        sc = dataclasses.replace(sc, ecg_snr_db=None if raw in ("", "none") else
                                 _parse_value(raw, 0.0, "[scenario] ecg_snr_db"))
    sc = _apply(sc, base, "scenario")
    sites, events = [], []
    for section in parser.sections():
        if section.startswith("site:"):
            items = dict(parser[section])
            pulse = SitePulse(section.split(":", 1)[1].strip())
            snr = items.pop("noise_snr_db", None)
            pulse = _apply(pulse, items, section)
            if snr is not None and snr.strip().lower() not in ("", "none"):
                pulse = dataclasses.replace(pulse, noise_snr_db=_parse_value(snr, 0.0, section))
            sites.append(pulse)
        elif section.startswith("noise:"):
            events.append(_apply(NoiseEvent("", 0.0, 0.0), dict(parser[section]), section))
        elif section != "scenario":
            raise ConfigError(f"unknown section [{section}]")
    if sites:
        sc = dataclasses.replace(sc, sites=tuple(sites))
    return dataclasses.replace(sc, noise_events=tuple(events))


def load_scenario(path) -> SynthScenario:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scenario not found: {path}")
    return parse_scenario(path.read_text(encoding="utf-8"))


# -- template records --------------------------------------------------------

def template_text(t: BeatTemplate) -> str:
    vals = ", ".join(format(v, ".17g") for v in np.asarray(t.values).tolist())
    return (f"[template]\nsite = {t.site}\nn = {len(t)}\n"
            f"n_contributing = {t.n_contributing}\nvalues = {vals}\n")


def parse_template(text: str) -> BeatTemplate:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
        sec = parser["template"]
        values = np.array([float(v) for v in sec["values"].split(",")])
        n = int(sec["n"])
        site = sec["site"]
        contributing = int(sec.get("n_contributing", "0"))
    except (configparser.Error, KeyError, ValueError) as exc:
        raise ConfigError(f"bad template record: {exc}") from None
    if values.size != n:
        raise ConfigError(f"template declares n = {n} but holds {values.size} values")
    return BeatTemplate(values, site, contributing)
