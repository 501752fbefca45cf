import math

import numpy as np
import pytest

from fbdkit.seqcore import (FFT_THRESHOLD, Sequence, add_noise, convolve, convolve_direct,
                            cumulative_energy, delta, energy, reverse, xcorr)


def brute_conv(a, b):
    out = {}
    for i, x in zip(a.times, a.samples):
        for j, y in zip(b.times, b.samples):
            out[i + j] = out.get(i + j, 0.0) + x * y
    lo, hi = min(out), max(out)
    return Sequence(lo, [out.get(t, 0.0) for t in range(lo, hi + 1)])


def brute_xcorr(a, b, maxlag):
    return [sum(a[s] * b[s + t] for s in a.times) for t in range(-maxlag, maxlag + 1)]


def rand_seq(rng, n, lo=-5, hi=6):
    return Sequence(int(rng.integers(lo, hi)), rng.standard_normal(n))


class TestSequence:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Sequence(0, [1.0, np.nan])
        with pytest.raises(ValueError):
            Sequence(0, [np.inf])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            Sequence(0, [])

    def test_samples_read_only(self):
        a = Sequence(0, [1.0, 2.0])
        with pytest.raises(ValueError):
            a.samples[0] = 3.0

    def test_indexing_outside_support_is_zero(self):
        a = Sequence(-1, [1.0, 2.0, 3.0])
        assert a[-1] == 1.0 and a[1] == 3.0
        assert a[-2] == 0.0 and a[2] == 0.0
        assert a.end == 1

    def test_window(self):
        a = Sequence(2, [1.0, 2.0])
        w = a.window(0, 4)
        assert w.origin == 0
        np.testing.assert_array_equal(w.samples, [0, 0, 1, 2, 0])
        np.testing.assert_array_equal(a.window(3, 3).samples, [2.0])


class TestConvolve:
    def test_identity(self):
        out = convolve(Sequence(0, [1.0]), Sequence(0, [3.0, 4.0, 5.0]))
        assert out.origin == 0
        np.testing.assert_array_equal(out.samples, [3, 4, 5])

    def test_hand_product(self):
        out = convolve(Sequence(0, [1.0, 2.0]), Sequence(0, [1.0, 1.0]))
        np.testing.assert_array_equal(out.samples, [1, 3, 2])

    def test_delta_shift(self):
        out = convolve(delta(2), Sequence(0, [7.0]))
        assert out.origin == 2
        np.testing.assert_array_equal(out.samples, [7.0])

    def test_support_bookkeeping(self):
        rng = np.random.default_rng(0)
        a, b = rand_seq(rng, 5), rand_seq(rng, 3)
        out = convolve(a, b)
        assert out.origin == a.origin + b.origin
        assert len(out) == len(a) + len(b) - 1

    def test_commutative_associative(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            a, b, c = (rand_seq(rng, int(rng.integers(1, 20))) for _ in range(3))
            scale = np.linalg.norm(a.samples) * np.linalg.norm(b.samples)
            assert convolve(a, b).allclose(convolve(b, a), rtol=0, atol=1e-12 * scale)
            scale *= np.linalg.norm(c.samples)
            assert convolve(convolve(a, b), c).allclose(convolve(a, convolve(b, c)),
                                                        rtol=0, atol=1e-12 * scale)

    @pytest.mark.parametrize("n", [3, FFT_THRESHOLD + 1, 300])
    def test_matches_brute_force(self, n):
        rng = np.random.default_rng(n)
        a, b = rand_seq(rng, n), rand_seq(rng, n + 7)
        ref = brute_conv(a, b)
        out = convolve(a, b)
        assert out.origin == ref.origin
        err = np.max(np.abs(out.samples - ref.samples)) / np.max(np.abs(ref.samples))
        assert err < 1e-10


class TestXcorr:
    def test_delta_autocorr(self):
        out = xcorr(Sequence(0, [1.0, 0, 0]), Sequence(0, [1.0, 0, 0]), 2)
        assert out.origin == -2
        np.testing.assert_array_equal(out.samples, [0, 0, 1, 0, 0])

    def test_hand_autocorr(self):
        a = Sequence(0, [1.0, 2.0])
        out = xcorr(a, a, 1)
        assert out.origin == -1
        np.testing.assert_array_equal(out.samples, [2, 5, 2])

    def test_swap_symmetry(self):
        rng = np.random.default_rng(2)
        a, b = rand_seq(rng, 9), rand_seq(rng, 6)
        ab, ba = xcorr(a, b, 12), xcorr(b, a, 12)
        np.testing.assert_allclose(ab.samples, ba.samples[::-1], atol=1e-12)

    def test_convention_and_oracle(self):
        rng = np.random.default_rng(3)
        for n in (4, 80):
            a, b = rand_seq(rng, n), rand_seq(rng, n)
            np.testing.assert_allclose(xcorr(a, b, 10).samples, brute_xcorr(a, b, 10),
                                       atol=1e-10 * n)

    def test_natural_support_origin(self):
        # a (x) b lives on origin(b) - origin(a) - len(a) + 1 onward
        rng = np.random.default_rng(4)
        a, b = rand_seq(rng, 4), rand_seq(rng, 3)
        full = convolve(reverse(a), b)
        assert full.origin == b.origin - a.origin - len(a) + 1

    def test_autocorr_symmetric_peak(self):
        rng = np.random.default_rng(5)
        a = rand_seq(rng, 30)
        c = xcorr(a, a, 29).samples
        np.testing.assert_allclose(c, c[::-1], atol=1e-12)
        assert np.argmax(c) == 29

    def test_negative_maxlag(self):
        with pytest.raises(ValueError):
            xcorr(delta(), delta(), -1)


class TestEnergy:
    def test_values(self):
        assert energy(Sequence(0, [3.0, 4.0])) == 25.0
        assert energy(Sequence(0, [0.0, 0.0])) == 0.0

    def test_homogeneity(self):
        a = Sequence(0, np.random.default_rng(6).standard_normal(10))
        assert math.isclose(energy(a.scaled(3.0)), 9.0 * energy(a), rel_tol=1e-13)

    @pytest.mark.parametrize("x,expected", [([1, 0, 0], [1, 1, 1]), ([0, 0, 1], [0, 0, 1]),
                                            ([1, 1], [0.5, 1.0])])
    def test_cumulative(self, x, expected):
        np.testing.assert_allclose(cumulative_energy(Sequence(0, x)).samples, expected)

    def test_cumulative_monotone_ends_at_one(self):
        c = cumulative_energy(Sequence(0, np.random.default_rng(7).standard_normal(101))).samples
        assert np.all(np.diff(c) >= 0)
        assert c[-1] == 1.0

    def test_cumulative_zero(self):
        with pytest.raises(ValueError):
            cumulative_energy(Sequence(0, [0.0]))


class TestNoise:
    def test_inf_is_identity(self):
        a = Sequence(0, [1.0, 2.0])
        assert add_noise(a, math.inf, 0) is a

    @pytest.mark.parametrize("snr", [1.0, -3.0, 20.0])
    def test_exact_snr(self, snr):
        a = Sequence(0, np.random.default_rng(8).standard_normal(200))
        b = add_noise(a, snr, 11)
        noise = b.samples - a.samples
        ratio = energy(a) / float(noise @ noise)
        assert math.isclose(ratio, 10 ** (snr / 10), rel_tol=1e-12)

    def test_deterministic(self):
        a = Sequence(0, np.arange(1.0, 6.0))
        np.testing.assert_array_equal(add_noise(a, 1.0, 5).samples, add_noise(a, 1.0, 5).samples)

    def test_zero_energy(self):
        with pytest.raises(ValueError):
            add_noise(Sequence(0, [0.0]), 1.0, 0)


def test_direct_matches_numpy():
    a, b = Sequence(0, [1.0, -2.0, 3.0]), Sequence(-1, [0.5, 4.0])
    out = convolve_direct(a, b)
    assert out.origin == -1
    np.testing.assert_array_equal(out.samples, np.convolve(a.samples, b.samples))
