"""Command-line interface.

Exit codes: 0 success, 1 internal error, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .core import PipelineError, site_label, validate_aligned_set
from .evaluation import DEFAULT_CONFIGURATIONS, TRUTH_SOURCES, build_report, write_report
from .io import (atomic_write_text, load_pipeline_config, load_recording, load_scenario,
                 pipeline_config_text, scenario_text, template_text, write_beats, write_hr,
                 write_recording)
from .pipeline import METHODS, Estimator, PipelineConfig
from .synth import burst_scenario, clean_scenario, generate

log = logging.getLogger("multippg")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad arguments or input files; maps to exit code 2."""


class Run:
    """Collects inputs and outputs of one command for its manifest."""

    def __init__(self, command: str, argv, config=None, seed=None):
        self.command, self.argv = command, list(argv)
        self.config = str(config) if config else None
        self.seed = seed
        self.inputs: list = []
        self.outputs: list = []
        self.t0 = time.perf_counter()

    def write_manifest(self, path: Path) -> Path:
        manifest = {
            "command": self.command,
            "argv": self.argv,
            "config": self.config,
            "inputs": [str(p) for p in self.inputs],
            "seed": self.seed,
            "version": __version__,
            "outputs": [str(p) for p in self.outputs],
            "wall_time_s": round(time.perf_counter() - self.t0, 3),
        }
        return atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _manifest_for(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


def _config(path) -> PipelineConfig:
    return load_pipeline_config(path) if path else PipelineConfig()


def _parse_sites(raw: str) -> list:
    sites = [s.strip() for s in raw.split(",") if s.strip()]
    if not sites:
        raise UsageError("--sites is empty")
    return [site_label(s) for s in sites]


def _check_sites(sites, available) -> None:
    names = [str(s) for s in available]
    unknown = [str(s) for s in sites if str(s) not in names]
    if unknown:
        raise UsageError(f"unknown site(s): {', '.join(unknown)}; valid labels: {', '.join(names)}")


def _write_synth(rec, out_dir: Path, name: str, run: Run) -> Path:
    csv_path = write_recording(out_dir / f"{name}.csv", rec.signals, rec.ecg)
    run.outputs += [
        csv_path,
        write_hr(out_dir / f"{name}_truth_hr.csv", rec.truth_hr),
        write_beats(out_dir / f"{name}_truth_beats.csv", rec.truth_beats),
    ]
    return csv_path


def cmd_synth(args, argv) -> int:
    run = Run("synth", argv)
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    run.seed = scenario.seed
    run.inputs.append(args.scenario)
    out = Path(args.out)
    name = args.name or Path(args.scenario).stem
    _write_synth(generate(scenario), out, name, run)
    run.write_manifest(out / f"{name}.manifest.json")
    return EXIT_OK


def cmd_suite(args, argv) -> int:
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    run = Run("suite", argv, seed=args.seed)
    out = Path(args.out)
    listing = []
    for i in range(args.count):
        seed = args.seed + i
        if args.clean:
            sc = clean_scenario(seed, args.duration)
        else:
            sc = burst_scenario(seed, args.duration, snr_db=args.snr_db)
        name = f"rec_{i:03d}"
        run.outputs.append(atomic_write_text(out / f"{name}.ini", scenario_text(sc)))
        listing.append(_write_synth(generate(sc), out, name, run).name)
    run.outputs.append(atomic_write_text(out / "recordings.txt", "\n".join(listing) + "\n"))
    run.write_manifest(out / "manifest.json")
    return EXIT_OK


def cmd_hr(args, argv) -> int:
    run = Run("hr", argv, args.config)
    cfg = _config(args.config)
    sites = _parse_sites(args.sites)
    rec = load_recording(args.recording)
    _check_sites(sites, [s.site for s in rec.signals])
    aligned = validate_aligned_set(rec.signals).subset(sites)
    if args.method == "single" and len(sites) != 1:
        raise UsageError("--method single takes exactly one site")
    if args.method == "ica" and len(sites) < 2:
        raise UsageError("--method ica needs at least two sites")
    est = Estimator(aligned, cfg)
    hr = est.estimate(sites, args.method)
    run.inputs.append(args.recording)
    out = Path(args.out)
    run.outputs.append(write_hr(out, hr))
    if args.beats:
        series = {str(s): est.channel(s).beats for s in sites}
        run.outputs.append(write_beats(args.beats, series))
    run.write_manifest(_manifest_for(out))
    return EXIT_OK


def cmd_template(args, argv) -> int:
    run = Run("template", argv, args.config)
    cfg = _config(args.config)
    site = site_label(args.site)
    rec = load_recording(args.recording)
    _check_sites([site], [s.site for s in rec.signals])
    est = Estimator(validate_aligned_set(rec.signals), cfg)
    chan = est.channel(site)
    if chan.template is None:
        raise UsageError(f"no clean beats at site {site}; cannot build a template")
    run.inputs.append(args.recording)
    out = Path(args.out)
    run.outputs.append(atomic_write_text(out, template_text(chan.template)))
    if args.beats:
        run.outputs.append(write_beats(args.beats, {str(site): chan.beats}))
    run.write_manifest(_manifest_for(out))
    return EXIT_OK


def _expand_inputs(inputs) -> list:
    """Recording paths; a ``.txt`` argument lists one path per line,
    relative to its own directory."""
    paths = []
    for item in inputs:
        p = Path(item)
        if p.suffix == ".txt":
            if not p.is_file():
                raise UsageError(f"recording list not found: {p}")
            for line in p.read_text(encoding="utf-8").splitlines():
                line = line.strip()
                if line and not line.startswith("#"):
                    paths.append(p.parent / line)
        else:
            paths.append(p)
    return paths


def cmd_eval(args, argv) -> int:
    run = Run("eval", argv, args.config)
    cfg = _config(args.config)
    paths = _expand_inputs(args.recordings)
    if not paths:
        raise UsageError("no recordings to evaluate")
    jobs = args.jobs or os.cpu_count() or 1
    report = build_report(paths, DEFAULT_CONFIGURATIONS, cfg, truth=args.truth, jobs=jobs)
    run.inputs += paths
    out = Path(args.out)
    run.outputs += write_report(report, out)
    run.write_manifest(out / "manifest.json")
    failed = report.failed_cells
    if failed:
        bad = sorted({c.recording for c in failed})
        print(f"warning: {len(failed)} failed cell(s) in {', '.join(bad)}; see cells.csv",
              file=sys.stderr)
        if all(r.n_failed == r.n_recordings for r in report.rows):
            return EXIT_USAGE
    return EXIT_OK


def cmd_config(args, argv) -> int:
    text = pipeline_config_text(_config(args.config))
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multippg", description="Quality-weighted multi-site PPG heart-rate estimation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more log output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a scenario file to a recording CSV plus truth")
    p.add_argument("scenario", help="scenario file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--name", help="base name of the outputs (default: scenario file stem)")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("suite", help="generate the multi-site motion-burst evaluation suite")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=10, help="number of recordings (default: 10)")
    p.add_argument("--duration", type=float, default=1200.0, help="seconds per recording (default: 1200)")
    p.add_argument("--seed", type=int, default=0, help="seed of the first recording (default: 0)")
    p.add_argument("--snr-db", type=float, default=-5.0, help="burst SNR in dB (default: -5)")
    p.add_argument("--clean", action="store_true", help="noise-free recordings instead")
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("hr", help="estimate windowed heart rate from a recording")
    p.add_argument("recording", help="recording CSV")
    p.add_argument("--sites", required=True, help="comma-separated site labels")
    p.add_argument("--method", choices=METHODS, default="fusion")
    p.add_argument("--config", help="pipeline config file")
    p.add_argument("--out", required=True, help="HR CSV to write")
    p.add_argument("--beats", help="also write the detected beats of each site")
    p.set_defaults(func=cmd_hr)

    p = sub.add_parser("template", help="build the beat template of one site")
    p.add_argument("recording", help="recording CSV")
    p.add_argument("--site", required=True, help="site label")
    p.add_argument("--config", help="pipeline config file")
    p.add_argument("--out", required=True, help="template record to write")
    p.add_argument("--beats", help="also write the site's detected beats")
    p.set_defaults(func=cmd_template)

    p = sub.add_parser("eval", help="error table and percentile curves over recordings")
    p.add_argument("recordings", nargs="*", help="recording CSVs or .txt lists of them")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="pipeline config file")
    p.add_argument("--truth", choices=TRUTH_SOURCES, default="ecg",
                   help="reference HR: ECG channel or generator truth files (default: ecg)")
    p.add_argument("--jobs", type=int, default=None, help="parallel workers (default: all cores)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("config", help="print the pipeline config with every default")
    p.add_argument("--config", help="start from this config file")
    p.add_argument("--out", help="write to a file instead of stdout")
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, PipelineError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
