import json

import numpy as np
import pytest

from multippg.cli import main
from multippg.io import parse_template, read_hr, scenario_text
from multippg.synth import burst_scenario, clean_scenario


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "clean.ini"
    path.write_text(scenario_text(clean_scenario(3, duration_s=120.0)))
    return path


def synth(scenario, out, *extra):
    assert main(["synth", str(scenario), "--out", str(out), *extra]) == 0
    return out / f"{scenario.stem}.csv"


def test_synth_hr_template_eval_flow(tmp_path, scenario_file):
    rec = synth(scenario_file, tmp_path / "data")
    for suffix in ("_truth_hr.csv", "_truth_beats.csv", ".manifest.json"):
        assert (tmp_path / "data" / f"clean{suffix}").is_file()

    hr_path = tmp_path / "hr.csv"
    assert main(["hr", str(rec), "--sites", "head,sternum,wrist,ankle", "--method", "fusion",
                 "--out", str(hr_path), "--beats", str(tmp_path / "beats.csv")]) == 0
    hr = read_hr(hr_path)
    truth = read_hr(tmp_path / "data" / "clean_truth_hr.csv")
    shared = np.intersect1d(np.round(hr.timestamps_s, 3), np.round(truth.timestamps_s, 3))
    assert shared.size > 10
    assert (tmp_path / "beats.csv").read_text().startswith("source,index,time_s\n")

    tpl = tmp_path / "wrist.tpl"
    assert main(["template", str(rec), "--site", "wrist", "--out", str(tpl)]) == 0
    assert parse_template(tpl.read_text()).values.size == 40

    out = tmp_path / "eval"
    assert main(["eval", str(rec), "--out", str(out), "--truth", "generator", "--jobs", "1"]) == 0
    lines = (out / "report.csv").read_text().splitlines()
    assert len(lines) == 7
    for name in ("cells.csv", "percentiles.csv", "percentiles.svg", "manifest.json"):
        assert (out / name).is_file()


def test_manifest_contents(tmp_path, scenario_file):
    synth(scenario_file, tmp_path, "--seed", "11")
    m = json.loads((tmp_path / "clean.manifest.json").read_text())
    assert set(m) == {"command", "argv", "config", "inputs", "seed", "version", "outputs", "wall_time_s"}
    assert m["command"] == "synth" and m["seed"] == 11
    assert m["wall_time_s"] > 0
    assert len(m["outputs"]) == 3


def test_same_seed_byte_identical(tmp_path, scenario_file):
    a = synth(scenario_file, tmp_path / "a")
    b = synth(scenario_file, tmp_path / "b")
    assert a.read_bytes() == b.read_bytes()
    for d in ("a", "b"):
        assert main(["hr", str(tmp_path / d / "clean.csv"), "--sites", "wrist", "--method", "single",
                     "--out", str(tmp_path / d / "hr.csv")]) == 0
    assert (tmp_path / "a" / "hr.csv").read_bytes() == (tmp_path / "b" / "hr.csv").read_bytes()


def test_different_seed_differs(tmp_path, scenario_file):
    a = synth(scenario_file, tmp_path / "a")
    b = synth(scenario_file, tmp_path / "b", "--seed", "99")
    assert a.read_bytes() != b.read_bytes()


def test_unknown_site(tmp_path, scenario_file, capsys):
    rec = synth(scenario_file, tmp_path)
    code = main(["hr", str(rec), "--sites", "forehead", "--method", "single", "--out", str(tmp_path / "x.csv")])
    assert code == 2
    err = capsys.readouterr().err
    assert "forehead" in err
    for label in ("head", "sternum", "wrist", "ankle"):
        assert label in err


def test_missing_scenario(tmp_path, capsys):
    missing = tmp_path / "nope.ini"
    assert main(["synth", str(missing), "--out", str(tmp_path)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_bad_method_arity(tmp_path, scenario_file):
    rec = synth(scenario_file, tmp_path)
    assert main(["hr", str(rec), "--sites", "head,wrist", "--method", "single", "--out", str(tmp_path / "x")]) == 2
    assert main(["hr", str(rec), "--sites", "head", "--method", "ica", "--out", str(tmp_path / "x")]) == 2


def test_eval_empty(tmp_path):
    assert main(["eval", "--out", str(tmp_path / "e")]) == 2
    listing = tmp_path / "list.txt"
    listing.write_text("# nothing\n")
    assert main(["eval", str(listing), "--out", str(tmp_path / "e")]) == 2


def test_eval_one_corrupt_recording(tmp_path, capsys):
    assert main(["suite", "--out", str(tmp_path), "--count", "2", "--duration", "120", "--clean"]) == 0
    (tmp_path / "rec_001.csv").write_text("time_s,site_1:head\n0,1\n0.5,x\n")
    out = tmp_path / "eval"
    code = main(["eval", str(tmp_path / "recordings.txt"), "--out", str(out), "--truth", "generator",
                 "--jobs", "1"])
    assert code == 0
    assert "rec_001.csv" in capsys.readouterr().err
    assert "partial" in (out / "report.csv").read_text()


def test_eval_all_failed(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("garbage\n")
    assert main(["eval", str(bad), "--out", str(tmp_path / "e"), "--jobs", "1"]) == 2


def test_suite_listing(tmp_path):
    assert main(["suite", "--out", str(tmp_path), "--count", "2", "--duration", "60"]) == 0
    assert (tmp_path / "recordings.txt").read_text().split() == ["rec_000.csv", "rec_001.csv"]
    assert (tmp_path / "rec_001.ini").read_text() == scenario_text(burst_scenario(1, 60.0))


def test_config_roundtrip(tmp_path, capsys):
    assert main(["config"]) == 0
    text = capsys.readouterr().out
    assert "[fusion]" in text
    cfg = tmp_path / "p.ini"
    cfg.write_text(text)
    assert main(["config", "--config", str(cfg), "--out", str(tmp_path / "q.ini")]) == 0
    assert (tmp_path / "q.ini").read_text() == text


def test_bad_config_value(tmp_path, scenario_file):
    cfg = tmp_path / "p.ini"
    cfg.write_text("[bandpass]\norder = -3\n")
    rec = synth(scenario_file, tmp_path)
    assert main(["hr", str(rec), "--sites", "wrist", "--method", "single", "--config", str(cfg),
                 "--out", str(tmp_path / "x.csv")]) == 2


def test_usage_error_exit_code():
    assert main(["hr"]) == 2
    assert main([]) == 2
