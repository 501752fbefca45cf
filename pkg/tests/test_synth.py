import math

import numpy as np
import pytest

from fbdkit.model import ChannelSet, InterferogramSet
from fbdkit.seqcore import Sequence, energy
from fbdkit.synth import (EXPERIMENTS, ExperimentSpec, band_limited_noise,
                          make_experiment, recovery_score)


def test_experiment_one_first_channel_onsets():
    ex = make_experiment(ExperimentSpec("I"))
    g = np.asarray(ex.truth.data)
    assert g.shape == (20, 31)
    assert list(np.flatnonzero(g[0])) == [6, 10]
    assert ex.data.span == 401 and ex.source.samples.size == 401


def test_experiment_one_moveouts():
    g = np.asarray(make_experiment(ExperimentSpec("I")).truth.data)
    for i in range(20):
        t_lin = math.floor(6 + 0.5 * i + 0.5)
        t_hyp = math.floor(math.sqrt(100 + (1.4 * i) ** 2) + 0.5)
        expect = np.zeros(31)
        expect[t_lin] += 1
        expect[t_hyp] += 1
        np.testing.assert_array_equal(g[i], expect)


@pytest.mark.parametrize("name", EXPERIMENTS)
def test_every_response_has_energy_and_fits(name):
    ex = make_experiment(ExperimentSpec(name))
    assert np.all(np.sum(np.asarray(ex.truth.data) ** 2, axis=1) > 0)
    assert ex.truth.span == ex.spec.tau + 1


@pytest.mark.parametrize("name", ["I", "II", "IV", "layered"])
def test_data_is_the_complete_convolution(name):
    ex = make_experiment(ExperimentSpec(name, seed=3))
    s, T, tau = ex.source.samples, ex.spec.T, ex.spec.tau
    assert np.all(s[T - tau + 1:] == 0)
    for k in range(ex.truth.nr):
        # np.convolve is an independent reference for s * g_k on {0..T}
        full = np.convolve(s, ex.truth[k].samples)
        np.testing.assert_allclose(ex.data[k].samples, full[:T + 1], atol=1e-12)
        assert np.all(np.abs(full[T + 1:]) < 1e-12)


def test_deterministic_under_seed():
    a = make_experiment(ExperimentSpec("layered", seed=4))
    b = make_experiment(ExperimentSpec("layered", seed=4))
    c = make_experiment(ExperimentSpec("layered", seed=5))
    np.testing.assert_array_equal(a.data.data, b.data.data)
    assert not np.array_equal(a.data.data, c.data.data)


def test_interferogram_only_experiments():
    for name in ("III", "V", "V-front"):
        ex = make_experiment(ExperimentSpec(name))
        assert ex.data is None and ex.source is None


def test_experiment_four_is_a_translation():
    ex = make_experiment(ExperimentSpec("IV"))
    g = np.asarray(ex.truth.data)
    first = np.array([np.flatnonzero(row)[0] for row in g])
    for i in range(g.shape[0]):
        np.testing.assert_array_equal(np.roll(g[0], first[i] - first[0]), g[i])
    gij = ex.truth_gij
    for (i, j) in [(0, 5), (3, 17), (8, 8)]:
        # g_i (x) g_j is the autocorrelation of g_0 moved by the onset difference
        shift = first[j] - first[i]
        np.testing.assert_allclose(gij.row(i, j), np.roll(gij.row(0, 0), shift), atol=1e-12)


def test_experiment_five_front_variant_is_reversed():
    late = np.asarray(make_experiment(ExperimentSpec("V")).truth.data)
    front = np.asarray(make_experiment(ExperimentSpec("V-front")).truth.data)
    np.testing.assert_array_equal(late, front[:, ::-1])
    t = np.arange(31)
    centroid = lambda g: np.sum(t * g ** 2, axis=1) / np.sum(g ** 2, axis=1)
    assert np.all(centroid(front) < centroid(late))


def test_layered_defaults():
    ex = make_experiment(ExperimentSpec("layered"))
    assert ex.spec.T == 20 * ex.spec.tau
    g = np.asarray(ex.truth.data)
    # the direct arrival comes first and is the strongest
    for row in g:
        nz = np.flatnonzero(row)
        assert row[nz[0]] == 1.0
        assert np.max(np.abs(row[nz[1:]])) < 1.0


def test_band_limited_noise_spectrum():
    rng = np.random.default_rng(0)
    x = band_limited_noise(8192, rng, 120.0, (5.0, 60.0))
    assert np.std(x) == pytest.approx(1.0)
    P = np.abs(np.fft.rfft(x)) ** 2
    f = np.fft.rfftfreq(x.size, 1 / 120.0)
    assert P[f < 2].mean() < 1e-3 * P[(f > 20) & (f < 40)].mean()
    y = band_limited_noise(8192, np.random.default_rng(0), 240.0, (5.0, 60.0))
    P = np.abs(np.fft.rfft(y)) ** 2
    f = np.fft.rfftfreq(y.size, 1 / 240.0)
    assert P[f > 100].mean() < 1e-3 * P[(f > 20) & (f < 40)].mean()


def test_noise_reaches_requested_snr():
    ex = make_experiment(ExperimentSpec("I", snr_db=1.0))
    sig = sum(energy(ex.clean_data[k]) for k in range(20))
    noise = float(np.sum((np.asarray(ex.data.data) - np.asarray(ex.clean_data.data)) ** 2))
    assert 10 * math.log10(sig / noise) == pytest.approx(1.0, abs=1e-9)


def test_arrivals_outside_support_raise():
    with pytest.raises(ValueError):
        make_experiment(ExperimentSpec("I", tau=12, T=100))


@pytest.mark.parametrize("kwargs", [dict(nr=1), dict(tau=40, T=40), dict(experiment="VI")])
def test_invalid_specs(kwargs):
    with pytest.raises(ValueError):
        ExperimentSpec(**kwargs)


# ---------------------------------------------------------------------------
# recovery_score

def _score_oracle(est, truth):
    # try every shift by hand on zero-padded rows
    a = est / np.linalg.norm(est, axis=1, keepdims=True)
    b = truth / np.linalg.norm(truth, axis=1, keepdims=True)
    n = a.shape[1]
    best = 0.0
    for k in range(-n + 1, n):
        tot = 0.0
        for i in range(a.shape[0]):
            for t in range(n):
                if 0 <= t + k < n:
                    tot += a[i, t] * b[i, t + k]
        best = max(best, abs(tot) / a.shape[0])
    return best


def test_score_matches_oracle():
    rng = np.random.default_rng(2)
    for _ in range(5):
        a, b = rng.standard_normal((2, 4, 9))
        assert recovery_score(ChannelSet(a), ChannelSet(b)) == pytest.approx(
            _score_oracle(a, b), abs=1e-12)


def test_score_invariances():
    truth = make_experiment(ExperimentSpec("I")).truth
    g = np.asarray(truth.data)
    assert recovery_score(truth, truth) == pytest.approx(1.0)
    assert recovery_score(ChannelSet(-3.7 * g), truth) == pytest.approx(1.0)
    shifted = ChannelSet(np.pad(g, ((0, 0), (4, 0))), origin=-9)
    assert recovery_score(shifted, truth) == pytest.approx(1.0)
    rows = [Sequence(2, r) for r in g]
    assert recovery_score(rows, truth) == pytest.approx(1.0)
    gij = make_experiment(ExperimentSpec("I")).truth_gij
    assert recovery_score(InterferogramSet(gij.nr, gij.maxlag, 2 * np.asarray(gij.entries)),
                          gij) == pytest.approx(1.0)


def test_score_single_shift_is_global():
    g = np.asarray(make_experiment(ExperimentSpec("II")).truth.data)
    moved = g.copy()
    moved[::2] = np.roll(g[::2], 3, axis=1)
    assert recovery_score(ChannelSet(moved), ChannelSet(g)) == pytest.approx(0.5)


def test_score_random_null():
    rng = np.random.default_rng(9)
    truth = make_experiment(ExperimentSpec("V-front")).truth
    scores = [recovery_score(ChannelSet(rng.standard_normal((20, 31))), truth)
              for _ in range(10)]
    assert max(scores) < 0.2


def test_score_errors():
    g = ChannelSet(np.ones((3, 4)))
    with pytest.raises(ValueError):
        recovery_score(ChannelSet(np.ones((2, 4))), g)
    z = np.ones((3, 4))
    z[1] = 0
    with pytest.raises(ValueError):
        recovery_score(ChannelSet(z), g)
