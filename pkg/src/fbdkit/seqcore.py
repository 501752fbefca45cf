"""Discrete-time sequence arithmetic with explicit time/lag origins.

A :class:`Sequence` is a finite block of real samples whose first sample sits
at integer index ``origin``.  Convolution and cross-correlation keep track of
the support exactly, so signals living on ``{0..T}``, ``{0..tau}``,
``{-T..T}`` or ``{-tau..tau}`` can be mixed without off-by-one bookkeeping.

Cross-correlation follows ``(a (x) b)(t) = sum_s a(s) b(s + t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

__all__ = [
    "FFT_THRESHOLD",
    "Sequence",
    "convolve",
    "convolve_direct",
    "xcorr",
    "energy",
    "cumulative_energy",
    "add_noise",
    "reverse",
    "delta",
]

#: Operand length above which convolution switches to the FFT path.
FFT_THRESHOLD = 64


@dataclass(frozen=True, eq=False)
class Sequence:
    """Finite real sequence; ``samples[n]`` is the value at ``origin + n``."""

    origin: int
    samples: np.ndarray

    def __post_init__(self):
        arr = np.array(self.samples, dtype=float, copy=True).reshape(-1)
        if arr.size < 1:
            raise ValueError("a Sequence needs at least one sample")
        if not np.all(np.isfinite(arr)):
            raise ValueError("Sequence samples must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "origin", int(self.origin))

    def __len__(self):
        return self.samples.size

    @property
    def end(self) -> int:
        """Index of the last stored sample (inclusive)."""
        return self.origin + self.samples.size - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.origin, self.end + 1)

    def __getitem__(self, t: int) -> float:
        """Value at time/lag ``t``; zero outside the stored support."""
        n = t - self.origin
        if 0 <= n < self.samples.size:
            return float(self.samples[n])
        return 0.0

    def window(self, lo: int, hi: int) -> "Sequence":
        """Restrict or zero-pad to the index range ``{lo..hi}``."""
        if hi < lo:
            raise ValueError("empty window")
        out = np.zeros(hi - lo + 1)
        a = max(lo, self.origin)
        b = min(hi, self.end)
        if a <= b:
            out[a - lo:b - lo + 1] = self.samples[a - self.origin:b - self.origin + 1]
        return Sequence(lo, out)

    def scaled(self, c: float) -> "Sequence":
        return Sequence(self.origin, c * self.samples)

    def shifted(self, k: int) -> "Sequence":
        return Sequence(self.origin + k, self.samples)

    def allclose(self, other: "Sequence", rtol=1e-12, atol=1e-12) -> bool:
        lo = min(self.origin, other.origin)
        hi = max(self.end, other.end)
        return np.allclose(self.window(lo, hi).samples,
                           other.window(lo, hi).samples, rtol=rtol, atol=atol)

    def __repr__(self):
        return f"Sequence(origin={self.origin}, samples={self.samples.tolist()!r})"


def delta(t: int = 0, amplitude: float = 1.0) -> Sequence:
    """Kronecker delta at index ``t``."""
    return Sequence(t, [amplitude])


def reverse(a: Sequence) -> Sequence:
    """Time reversal ``b(t) = a(-t)``."""
    return Sequence(-a.end, a.samples[::-1])


def convolve_direct(a: Sequence, b: Sequence) -> Sequence:
    """Full linear convolution by the direct sum (no FFT)."""
    return Sequence(a.origin + b.origin, np.convolve(a.samples, b.samples))


def convolve(a: Sequence, b: Sequence) -> Sequence:
    """Full linear convolution ``(a * b)(t) = sum_s a(s) b(t - s)``."""
    if min(len(a), len(b)) > FFT_THRESHOLD:
        out = fftconvolve(a.samples, b.samples)
        return Sequence(a.origin + b.origin, out)
    return convolve_direct(a, b)


def xcorr(a: Sequence, b: Sequence, maxlag: int) -> Sequence:
    """Cross-correlation ``sum_s a(s) b(s + t)`` on lags ``{-maxlag..maxlag}``."""
    if maxlag < 0:
        raise ValueError("maxlag must be nonnegative")
    return convolve(reverse(a), b).window(-maxlag, maxlag)


def energy(a: Sequence) -> float:
    return float(np.dot(a.samples, a.samples))


def cumulative_energy(a: Sequence) -> Sequence:
    """Running sum of squares normalized by the total energy."""
    total = energy(a)
    if total <= 0.0:
        raise ValueError("cumulative energy of a zero-energy sequence")
    c = np.cumsum(a.samples ** 2) / total
    c[-1] = 1.0
    return Sequence(a.origin, c)


def add_noise(a: Sequence, snr_db: float, seed: int) -> Sequence:
    """Add white Gaussian noise at an exact realized SNR.

    The realized noise vector is rescaled so that
    ``10 log10(energy(a) / energy(noise)) == snr_db``.  ``snr_db = inf``
    returns ``a`` unchanged.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return a
    ea = energy(a)
    if ea <= 0.0:
        raise ValueError("cannot set an SNR relative to a zero-energy signal")
    noise = np.random.default_rng(seed).standard_normal(len(a))
    noise *= math.sqrt(ea / (10.0 ** (snr_db / 10.0)) / np.dot(noise, noise))
    return Sequence(a.origin, a.samples + noise)
