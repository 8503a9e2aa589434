import numpy as np
import pytest

from multippg.core import Signal
from multippg.dsp import bandpass
from multippg.synth import SitePulse, SynthScenario, generate

RATE = 128.0

# filled by test_acceptance, printed after the run
ACCEPTANCE = {}


def pulse_signal(bpm=60.0, duration_s=120.0, rate=RATE, site="head", lag_ms=0.0, noise=0.0,
                 seed=0, hrv_ms=0.0):
    """Bandpassed synthetic PPG at constant HR plus the generator's beat truth."""
    sc = SynthScenario(duration_s=duration_s, rate_hz=rate, hr_profile=((0.0, bpm),),
                       sites=(SitePulse(site, lag_ms=lag_ms),), seed=seed, hrv_ms=hrv_ms,
                       resp_amp=0.0)
    rec = generate(sc)
    x = np.asarray(rec.signals[0].samples)
    if noise:
        x = x + np.random.default_rng(seed).normal(0.0, noise, x.size)
    sig = Signal(x, rate, site)
    return bandpass(sig), rec.truth_beats[str(sig.site)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
