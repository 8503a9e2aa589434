import numpy as np
import pytest
from scipy import signal as ss

from multippg.core import AlignedSet, Signal
from multippg.ica import (IcaConfig, IcaResult, SingularWhiteningError, ica_signal, ica_unmix,
                          select_best_component, spectral_concentration)

RATE = 128.0


def best_match(components, sources):
    """|r| of every true source with its best-matching component."""
    r = np.abs(np.corrcoef(np.vstack([sources, components]))[:len(sources), len(sources):])
    return r.max(axis=1)


def sources_4(n=int(60 * RATE), seed=0):
    r = np.random.default_rng(seed)
    t = np.arange(n) / RATE
    return np.vstack([
        np.sin(2 * np.pi * 1.1 * t),
        ss.square(2 * np.pi * 0.37 * t),
        ss.sawtooth(2 * np.pi * 2.3 * t),
        r.laplace(size=n),
    ])


def test_two_sinusoids():
    t = np.arange(int(60 * RATE)) / RATE
    s = np.vstack([np.sin(2 * np.pi * 0.9 * t), np.sin(2 * np.pi * 1.3 * t)])
    x = np.array([[1.0, 0.5], [0.5, 1.0]]) @ s
    res = ica_unmix(x, seed=0)
    assert np.all(best_match(res.components, s) > 0.95)


def test_four_sources():
    s = sources_4()
    a = np.random.default_rng(7).uniform(0.2, 1.0, (4, 4)) + np.eye(4)
    res = ica_unmix(a @ s, seed=3)
    assert res.converged
    assert np.all(best_match(res.components, s) > 0.95)
    # mixing matrix reconstructs the centered channels
    xc = a @ s - (a @ s).mean(axis=1, keepdims=True)
    np.testing.assert_allclose(res.mixing @ res.components, xc, atol=1e-8)


def test_components_decorrelated():
    s = sources_4(seed=2)
    res = ica_unmix(np.random.default_rng(1).normal(size=(4, 4)) @ s, seed=0)
    r = np.corrcoef(res.components)
    assert np.abs(r[~np.eye(4, dtype=bool)]).max() < 0.05


def test_duplicate_channels_singular():
    x = np.random.default_rng(0).normal(size=1000)
    with pytest.raises(SingularWhiteningError):
        ica_unmix(np.vstack([x, x]))


def test_independent_inputs_recovered():
    s = sources_4()
    res = ica_unmix(s, seed=5)
    assert np.all(best_match(res.components, s) > 0.99)


def test_matches_sklearn():
    from sklearn.decomposition import FastICA
    s = sources_4(seed=4)
    x = np.random.default_rng(9).uniform(0.1, 1.0, (4, 4)) @ s
    ours = ica_unmix(x, seed=0).components
    ref = FastICA(n_components=4, algorithm="parallel", fun="logcosh", whiten="unit-variance",
                  random_state=0, tol=1e-6, max_iter=500).fit_transform(x.T).T
    assert np.all(best_match(ours, ref) > 0.99)


def test_channel_order_invariance():
    s = sources_4(seed=6)
    x = np.random.default_rng(2).uniform(0.1, 1.0, (4, 4)) @ s
    a = ica_unmix(x, seed=0).components
    b = ica_unmix(x[[2, 0, 3, 1]], seed=0).components
    assert np.all(best_match(a, b) > 0.99)


def test_deterministic_seed():
    x = np.random.default_rng(2).normal(size=(3, 3)) @ sources_4()[:3]
    np.testing.assert_array_equal(ica_unmix(x, seed=4).components, ica_unmix(x, seed=4).components)


def test_non_convergence_flagged():
    x = np.random.default_rng(0).normal(size=(3, 2000))
    res = ica_unmix(x, seed=0, max_iter=2)
    assert not res.converged and res.n_iter == 2


def cardiac_and_noise(n=int(60 * RATE)):
    r = np.random.default_rng(11)
    t = np.arange(n) / RATE
    pulse = np.sin(2 * np.pi * 1.2 * t) ** 15
    return np.vstack([r.normal(size=n), pulse, r.normal(size=n)])


def test_select_cardiac_component():
    res = IcaResult(cardiac_and_noise(), np.eye(3))
    assert select_best_component(res, RATE) == 1
    assert res.chosen == 1 and 0 < res.score <= 1


def test_select_single_and_all_noise():
    one = IcaResult(cardiac_and_noise()[:1], np.eye(1))
    assert select_best_component(one, RATE) == 0
    noise = IcaResult(np.random.default_rng(0).normal(size=(3, 4000)), np.eye(3))
    k = select_best_component(noise, RATE)
    assert 0 <= k < 3 and np.isfinite(noise.score)


def test_selection_scale_invariant():
    comps = cardiac_and_noise()
    assert spectral_concentration(5.0 * comps[1], RATE) == pytest.approx(
        spectral_concentration(comps[1], RATE))
    scaled = IcaResult(comps * np.array([[100.0], [0.01], [7.0]]), np.eye(3))
    assert select_best_component(scaled, RATE) == 1


def test_ica_signal_on_grid():
    s = sources_4(int(100 * RATE))
    x = np.random.default_rng(3).uniform(0.1, 1.0, (4, 4)) @ s
    aligned = AlignedSet(tuple(Signal(row, RATE, site, 2.0)
                               for row, site in zip(x, ["head", "sternum", "wrist", "ankle"])))
    out = ica_signal(aligned, IcaConfig(chunk_s=30.0))
    assert len(out) == aligned.n_samples and out.start_time_s == 2.0 and out.site == "ica"
    assert np.isfinite(out.samples).all()
