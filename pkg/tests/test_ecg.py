import numpy as np
import pytest

from multippg.core import BeatSeries, EcgSignal, TooShortError
from multippg.ecg import ground_truth_hr, pan_tompkins_rpeaks
from multippg.synth import SitePulse, SynthScenario, generate

RATE = 128.0


def synth_ecg(profile, duration_s=120.0, snr_db=None, seed=0, hrv_ms=0.0):
    sc = SynthScenario(duration_s=duration_s, hr_profile=profile, sites=(SitePulse("head"),),
                       seed=seed, ecg_snr_db=snr_db, hrv_ms=hrv_ms)
    rec = generate(sc)
    return rec.ecg, rec.truth_beats["ecg"]


def match(detected, truth, tol):
    """Sensitivity and positive predictivity with a +-tol sample window."""
    d = np.abs(np.asarray(detected)[:, None] - np.asarray(truth)[None, :])
    tp_det = (d.min(axis=1) <= tol).sum() if d.size else 0
    tp_truth = (d.min(axis=0) <= tol).sum() if d.size else 0
    return tp_truth / len(truth), tp_det / max(len(detected), 1)


def test_60_bpm_clean():
    ecg, truth = synth_ecg(((0.0, 60.0),))
    beats = pan_tompkins_rpeaks(ecg)
    assert len(beats) >= 118
    se, ppv = match(beats.peak_indices, truth.peak_indices, round(0.05 * RATE))
    assert ppv == 1.0 and se == 1.0


def test_rr_intervals_within_one_sample():
    ecg, truth = synth_ecg(((0.0, 72.0),), hrv_ms=25.0, seed=3)
    beats = pan_tompkins_rpeaks(ecg)
    assert len(beats) == len(truth)
    assert np.abs(beats.peak_indices - truth.peak_indices).max() <= 1
    assert np.abs(np.diff(beats.peak_indices) - np.diff(truth.peak_indices)).max() <= 1


@pytest.mark.parametrize("bpm", [50, 90, 130, 180])
def test_noisy_10_db(bpm):
    ecg, truth = synth_ecg(((0.0, float(bpm)),), snr_db=10.0, seed=bpm)
    beats = pan_tompkins_rpeaks(ecg)
    se, ppv = match(beats.peak_indices, truth.peak_indices, round(0.05 * RATE))
    assert se >= 0.95 and ppv >= 0.95


def test_flat_line_empty():
    beats = pan_tompkins_rpeaks(EcgSignal(np.zeros(int(20 * RATE)), RATE))
    assert len(beats) == 0


def test_too_short():
    with pytest.raises(TooShortError):
        pan_tompkins_rpeaks(EcgSignal(np.zeros(int(5 * RATE)), RATE))


def test_constant_rr_80_bpm():
    rate = 1000.0
    peaks = np.arange(0, 120_000, 750)
    hr = ground_truth_hr(BeatSeries(peaks, np.ones(peaks.size, bool), rate, 120_000))
    np.testing.assert_allclose(hr.hr_bpm, 80.0)


def test_empty_series_all_missing():
    hr = ground_truth_hr(BeatSeries.empty(RATE, int(120 * RATE)))
    assert len(hr) > 0 and hr.missing.all()


def test_tracks_sweep():
    ecg, _ = synth_ecg(((0.0, 60.0), (300.0, 120.0)), duration_s=300.0)
    hr = ground_truth_hr(ecg)
    expected = 60.0 + 60.0 * hr.timestamps_s / 300.0
    assert not hr.missing.any()
    assert np.abs(hr.hr_bpm - expected).max() < 2.0


def test_same_aggregation_as_ppg():
    from multippg import beats as beats_mod
    from multippg import ecg as ecg_mod
    assert ecg_mod.hr_from_beats is beats_mod.hr_from_beats
