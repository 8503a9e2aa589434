"""Evaluation harness: per-window HR errors, error tables across recordings
and pooled percentile curves."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .core import HrSeries, PipelineError, site_label, validate_aligned_set
from .pipeline import METHODS, Estimator, PipelineConfig, reference_hr, trim_ecg

log = logging.getLogger(__name__)

PERCENTILES = np.arange(101)
TRUTH_SOURCES = ("ecg", "generator")


class GridMismatchError(PipelineError, ValueError):
    pass


class WindowErrors(NamedTuple):
    timestamps_s: np.ndarray
    abs_err_bpm: np.ndarray


def _grid_key(t: np.ndarray) -> np.ndarray:
    # millisecond keys so float noise in timestamps does not break matching
    return np.round(np.asarray(t, dtype=float) * 1000.0).astype(np.int64)


def hr_error(est: HrSeries, truth: HrSeries) -> WindowErrors:
    """Absolute error on the windows both series estimate.

    Windows are matched by timestamp; a window missing from either side is
    left out. Series on different grids raise :class:`GridMismatchError`.
    """
    if est.window_len_s != truth.window_len_s or est.step_s != truth.step_s:
        raise GridMismatchError(
            f"window {est.window_len_s:g}/{est.step_s:g} s vs {truth.window_len_s:g}/{truth.step_s:g} s")
    ke, kt = _grid_key(est.timestamps_s), _grid_key(truth.timestamps_s)
    if ke.size and kt.size:
        step = int(round(est.step_s * 1000))
        if step > 0 and (ke[0] - kt[0]) % step != 0:
            raise GridMismatchError("window timestamps are offset from each other")
    common, ie, it = np.intersect1d(ke, kt, assume_unique=True, return_indices=True)
    if ke.size and kt.size and common.size == 0:
        raise GridMismatchError("series share no windows")
    a, b = est.hr_bpm[ie], truth.hr_bpm[it]
    ok = np.isfinite(a) & np.isfinite(b)
    return WindowErrors(est.timestamps_s[ie][ok], np.abs(a[ok] - b[ok]))


@dataclass(frozen=True)
class EvalConfiguration:
    name: str
    sites: tuple
    method: str

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        object.__setattr__(self, "sites", tuple(site_label(s) for s in self.sites))
        if not self.sites:
            raise ValueError("a configuration needs at least one site")
        if self.method == "single" and len(self.sites) != 1:
            raise ValueError("method 'single' takes exactly one site")


ALL_SITES = ("head", "sternum", "wrist", "ankle")

DEFAULT_CONFIGURATIONS = (
    EvalConfiguration("head", ("head",), "single"),
    EvalConfiguration("sternum", ("sternum",), "single"),
    EvalConfiguration("wrist", ("wrist",), "single"),
    EvalConfiguration("ankle", ("ankle",), "single"),
    EvalConfiguration("fusion-all", ALL_SITES, "fusion"),
    EvalConfiguration("ica-all", ALL_SITES, "ica"),
)


@dataclass
class Cell:
    """Outcome of one configuration on one recording."""

    recording: str
    configuration: str
    errors: Optional[np.ndarray] = None
    failure: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.failure is None and self.errors is not None and self.errors.size > 0

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors)) if self.ok else float("nan")

    @property
    def median(self) -> float:
        return float(np.median(self.errors)) if self.ok else float("nan")


@dataclass
class ReportRow:
    name: str
    sites: tuple
    method: str
    n_recordings: int
    n_failed: int
    n_windows: int
    mean_abs_err_bpm: float
    std_of_mean: float
    median_abs_err_bpm: float
    std_of_median: float


@dataclass
class PercentileCurve:
    name: str
    percentiles: np.ndarray
    values: np.ndarray


@dataclass
class ErrorReport:
    rows: list
    curves: list
    cells: list = field(default_factory=list)
    recordings: list = field(default_factory=list)

    def row(self, name: str) -> ReportRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def curve(self, name: str) -> PercentileCurve:
        for c in self.curves:
            if c.name == name:
                return c
        raise KeyError(name)

    def pooled(self, name: str) -> np.ndarray:
        parts = [c.errors for c in self.cells if c.configuration == name and c.ok]
        return np.concatenate(parts) if parts else np.empty(0)

    @property
    def failed_cells(self) -> list:
        return [c for c in self.cells if c.failure is not None]


def percentile_curve(name: str, errors) -> PercentileCurve:
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        return PercentileCurve(name, PERCENTILES.copy(), np.full(PERCENTILES.size, np.nan))
    return PercentileCurve(name, PERCENTILES.copy(), np.percentile(errors, PERCENTILES))


def _std(x: np.ndarray) -> float:
    # population std across recordings, defined for a single recording too
    return float(np.std(x)) if x.size else float("nan")


def _recording_name(rec, i: int) -> str:
    if isinstance(rec, (str, os.PathLike)):
        return Path(rec).name
    path = getattr(rec, "path", None)
    return Path(path).name if path else f"recording_{i + 1}"


def _truth_from_sidecar(path: Path) -> HrSeries:
    from .io import read_hr
    side = path.with_name(path.stem + "_truth_hr.csv")
    if not side.is_file():
        raise FileNotFoundError(f"generator truth not found: {side}")
    return read_hr(side)


def evaluate_recording(rec, configurations: Sequence[EvalConfiguration],
                       cfg: PipelineConfig = PipelineConfig(), truth: str = "ecg",
                       name: str = "recording") -> list:
    """Run every configuration on one recording; failures become cells
    carrying the error message rather than exceptions."""
    from .io import load_recording

    def failed(msg):
        return [Cell(name, c.name, failure=msg) for c in configurations]

    try:
        path = None
        if isinstance(rec, (str, os.PathLike)):
            path = Path(rec)
            rec = load_recording(path)
        aligned = validate_aligned_set(rec.signals)
        if truth == "ecg":
            if rec.ecg is None:
                return failed("recording has no ECG channel")
            truth_hr = reference_hr(trim_ecg(rec.ecg, aligned), cfg)
        else:
            truth_hr = getattr(rec, "truth_hr", None)
            if truth_hr is None:
                src = path or getattr(rec, "path", None)
                if src is None:
                    return failed("no generator truth available")
                truth_hr = _truth_from_sidecar(Path(src))
    except (PipelineError, OSError, ValueError) as exc:
        log.warning("%s: %s", name, exc)
        return failed(f"{type(exc).__name__}: {exc}")

    est = Estimator(aligned, cfg)
    present = set(str(s) for s in aligned.sites)
    cells = []
    for conf in configurations:
        missing = [str(s) for s in conf.sites if str(s) not in present]
        if missing:
            cells.append(Cell(name, conf.name, failure=f"missing site(s): {', '.join(missing)}"))
            continue
        try:
            hr = est.estimate(list(conf.sites), conf.method)
            cells.append(Cell(name, conf.name, hr_error(hr, truth_hr).abs_err_bpm))
        except (PipelineError, ValueError) as exc:
            log.warning("%s / %s: %s", name, conf.name, exc)
            cells.append(Cell(name, conf.name, failure=f"{type(exc).__name__}: {exc}"))
    return cells


def _evaluate_star(args):
    return evaluate_recording(*args)


def build_report(recordings: Sequence, configurations: Sequence[EvalConfiguration] = DEFAULT_CONFIGURATIONS,
                 cfg: PipelineConfig = PipelineConfig(), truth: str = "ecg",
                 jobs: int = 1) -> ErrorReport:
    """Evaluate each recording, then reduce to the error table and pooled
    percentile curves.

    ``recordings`` holds CSV paths or in-memory recordings (anything with
    ``signals`` and ``ecg`` attributes, plus ``truth_hr`` for generator
    truth). Per recording the mean and median window error are taken; rows
    report their mean and population standard deviation across the
    recordings that succeeded. Recordings are processed in parallel when
    ``jobs > 1``; results are reduced in input order.
    """
    if truth not in TRUTH_SOURCES:
        raise ValueError(f"truth must be one of {TRUTH_SOURCES}")
    recordings = list(recordings)
    if not recordings:
        raise ValueError("no recordings to evaluate")
    names = [_recording_name(r, i) for i, r in enumerate(recordings)]
    tasks = [(r, tuple(configurations), cfg, truth, n) for r, n in zip(recordings, names)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            per_rec = list(pool.map(_evaluate_star, tasks))
    else:
        per_rec = [_evaluate_star(t) for t in tasks]
    cells = [c for rec_cells in per_rec for c in rec_cells]

    rows, curves = [], []
    for conf in configurations:
        mine = [c for c in cells if c.configuration == conf.name]
        good = [c for c in mine if c.ok]
        means = np.array([c.mean for c in good])
        medians = np.array([c.median for c in good])
        pooled = np.concatenate([c.errors for c in good]) if good else np.empty(0)
        rows.append(ReportRow(
            conf.name, conf.sites, conf.method, len(mine), len(mine) - len(good), int(pooled.size),
            float(means.mean()) if means.size else float("nan"), _std(means),
            float(medians.mean()) if medians.size else float("nan"), _std(medians)))
        curves.append(percentile_curve(conf.name, pooled))
    return ErrorReport(rows, curves, cells, names)


# -- output ---------------------------------------------------------------

def _num(v: float, fmt: str = ".6f") -> str:
    return "" if not np.isfinite(v) else format(v, fmt)


def report_csv(report: ErrorReport) -> str:
    lines = ["configuration,sites,method,n_recordings,n_failed,n_windows,"
             "mean_abs_err_bpm,std_of_mean,median_abs_err_bpm,std_of_median,status"]
    for r in report.rows:
        status = "ok" if r.n_failed == 0 else ("failed" if r.n_failed == r.n_recordings else "partial")
        lines.append(",".join([
            r.name, "+".join(str(s) for s in r.sites), r.method, str(r.n_recordings), str(r.n_failed),
            str(r.n_windows), _num(r.mean_abs_err_bpm), _num(r.std_of_mean),
            _num(r.median_abs_err_bpm), _num(r.std_of_median), status]))
    return "\n".join(lines) + "\n"


def cells_csv(report: ErrorReport) -> str:
    lines = ["recording,configuration,n_windows,mean_abs_err_bpm,median_abs_err_bpm,status"]
    for c in report.cells:
        status = "ok" if c.ok else "failed: " + (c.failure or "no windows").replace(",", ";").replace("\n", " ")
        n = 0 if c.errors is None else c.errors.size
        lines.append(f"{c.recording},{c.configuration},{n},{_num(c.mean)},{_num(c.median)},{status}")
    return "\n".join(lines) + "\n"


def curves_csv(report: ErrorReport) -> str:
    lines = ["percentile," + ",".join(c.name for c in report.curves)]
    for i, p in enumerate(PERCENTILES):
        lines.append(f"{p}," + ",".join(_num(c.values[i]) for c in report.curves))
    return "\n".join(lines) + "\n"


def _svg(fig) -> str:
    import io as _io
    buf = _io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()


def plot_curves(curves: Sequence[PercentileCurve], title: str = "HR error percentiles") -> str:
    """SVG text of the given percentile curves on shared axes. Output is
    reproducible byte for byte."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "multippg", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for c in curves:
            ax.plot(c.percentiles, c.values, label=c.name)
        ax.set_xlabel("percentile of windows")
        ax.set_ylabel("absolute HR error (bpm)")
        ax.set_title(title)
        ax.set_xlim(0, 100)
        ax.set_ylim(bottom=0)
        ax.grid(alpha=0.3)
        ax.legend(loc="upper left")
        fig.tight_layout()
        text = _svg(fig)
        plt.close(fig)
    return text


def write_report(report: ErrorReport, out_dir) -> list:
    """Write the table, per-recording cells, curves and one plot per curve
    plus a combined plot. Returns the written paths."""
    from .io import atomic_write_text
    out_dir = Path(out_dir)
    paths = [
        atomic_write_text(out_dir / "report.csv", report_csv(report)),
        atomic_write_text(out_dir / "cells.csv", cells_csv(report)),
        atomic_write_text(out_dir / "percentiles.csv", curves_csv(report)),
        atomic_write_text(out_dir / "percentiles.svg", plot_curves(report.curves)),
    ]
    for c in report.curves:
        paths.append(atomic_write_text(out_dir / f"percentiles_{c.name}.svg",
                                       plot_curves([c], f"HR error percentiles: {c.name}")))
    return paths
