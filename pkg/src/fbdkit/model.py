"""Containers for channel sets, interferogram sets and source autocorrelations."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import irfft, next_fast_len, rfft

from .seqcore import Sequence

__all__ = [
    "ChannelSet",
    "InterferogramSet",
    "SourceAutocorr",
    "SolveReport",
    "DegenerateChannelError",
    "pair_list",
    "build_interferograms",
    "max_normalize_interferograms",
    "batched_xcorr",
]


class DegenerateChannelError(ValueError):
    """Raised when data cannot be normalized (zero reference energy)."""


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite samples")
    out.setflags(write=False)
    return out


class ChannelSet:
    """``nr`` equal-length signals sharing one time origin (0 by default).

    Row ``i`` of :attr:`data` is channel ``i`` (0-based).
    """

    def __init__(self, data, origin: int = 0):
        data = _frozen(np.atleast_2d(data))
        if data.ndim != 2 or data.shape[1] < 1:
            raise ValueError("ChannelSet data must be a (nr, span) array")
        self.data = data
        self.origin = int(origin)

    @classmethod
    def from_sequences(cls, seqs) -> "ChannelSet":
        seqs = list(seqs)
        origins = {s.origin for s in seqs}
        lengths = {len(s) for s in seqs}
        if len(origins) != 1 or len(lengths) != 1:
            raise ValueError("channel sequences must share origin and length")
        return cls(np.stack([s.samples for s in seqs]), origin=origins.pop())

    @property
    def nr(self) -> int:
        return self.data.shape[0]

    @property
    def span(self) -> int:
        return self.data.shape[1]

    @property
    def signals(self) -> list[Sequence]:
        return [Sequence(self.origin, row) for row in self.data]

    def __getitem__(self, i: int) -> Sequence:
        return Sequence(self.origin, self.data[i])

    def __len__(self):
        return self.nr

    def scaled(self, c: float) -> "ChannelSet":
        return ChannelSet(c * self.data, self.origin)

    def __repr__(self):
        return f"ChannelSet(nr={self.nr}, span={self.span}, origin={self.origin})"


def pair_list(nr: int) -> list[tuple[int, int]]:
    """Upper-triangular pairs ``(i, j)``, ``i <= j``, in storage order."""
    return [(i, j) for i in range(nr) for j in range(i, nr)]


class InterferogramSet:
    """Cross-correlations ``x_ij`` for ``0 <= i <= j < nr`` on ``{-maxlag..maxlag}``.

    Only the upper triangle is stored; ``get(i, j)`` with ``i > j`` returns the
    time-reversed entry ``x_ji(-t)``.
    """

    def __init__(self, nr: int, maxlag: int, entries):
        entries = _frozen(np.atleast_2d(entries))
        npairs = nr * (nr + 1) // 2
        if entries.shape != (npairs, 2 * maxlag + 1):
            raise ValueError(
                f"expected entries of shape {(npairs, 2 * maxlag + 1)}, got {entries.shape}")
        self.nr = int(nr)
        self.maxlag = int(maxlag)
        self.entries = entries

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return pair_list(self.nr)

    def index(self, i: int, j: int) -> int:
        if not (0 <= i <= j < self.nr):
            raise IndexError(f"pair ({i}, {j}) not stored")
        return i * self.nr - i * (i - 1) // 2 + (j - i)

    def row(self, i: int, j: int) -> np.ndarray:
        """Samples of ``x_ij`` on ``{-maxlag..maxlag}`` for any ordered pair."""
        if i <= j:
            return self.entries[self.index(i, j)]
        return self.entries[self.index(j, i)][::-1]

    def get(self, i: int, j: int) -> Sequence:
        return Sequence(-self.maxlag, self.row(i, j))

    def diagonal_indices(self) -> np.ndarray:
        return np.array([self.index(k, k) for k in range(self.nr)])

    def scaled(self, c: float) -> "InterferogramSet":
        return InterferogramSet(self.nr, self.maxlag, c * self.entries)

    def as_sequences(self) -> list[Sequence]:
        return [Sequence(-self.maxlag, e) for e in self.entries]

    def __repr__(self):
        return f"InterferogramSet(nr={self.nr}, maxlag={self.maxlag})"


class SourceAutocorr:
    """Symmetric sequence on ``{-maxlag..maxlag}``, stored one-sided.

    ``onesided[t]`` holds the value at lags ``+t`` and ``-t``.
    """

    def __init__(self, onesided):
        self.onesided = _frozen(np.asarray(onesided).reshape(-1))
        if self.onesided.size < 1:
            raise ValueError("empty autocorrelation")

    @classmethod
    def from_full(cls, seq: Sequence) -> "SourceAutocorr":
        """Build from a full sequence, averaging ``s(t)`` and ``s(-t)``."""
        m = max(-seq.origin, seq.end)
        w = seq.window(-m, m).samples
        return cls(0.5 * (w[m:] + w[m::-1]))

    @classmethod
    def white(cls, maxlag: int) -> "SourceAutocorr":
        h = np.zeros(maxlag + 1)
        h[0] = 1.0
        return cls(h)

    @property
    def maxlag(self) -> int:
        return self.onesided.size - 1

    @property
    def full(self) -> np.ndarray:
        return np.concatenate([self.onesided[:0:-1], self.onesided])

    @property
    def sequence(self) -> Sequence:
        return Sequence(-self.maxlag, self.full)

    def __getitem__(self, t: int) -> float:
        t = abs(t)
        return float(self.onesided[t]) if t <= self.maxlag else 0.0

    def check_bounded(self) -> bool:
        """Advisory check ``s_a(t) <= s_a(0)``; warns when violated."""
        ok = bool(np.all(self.onesided[1:] <= self.onesided[0]))
        if not ok:
            warnings.warn("source autocorrelation exceeds its zero-lag value",
                          RuntimeWarning, stacklevel=2)
        return ok


@dataclass
class SolveReport:
    """Per-stage solver trace.

    ``history`` has one record per outer iteration:
    ``(leg, first_block_objective, second_block_objective)``.
    History objectives are absolute, on the stage's normalized data;
    ``final_misfit`` is relative to the energy of the fitted data.
    """

    stage: str
    seed: int | None = None
    history: list[tuple[int, float, float]] = field(default_factory=list)
    deltas: list[float] = field(default_factory=list)
    legs: list[float] = field(default_factory=list)
    leg_iterations: list[int] = field(default_factory=list)
    inner_iterations: int = 0
    converged: list[bool] = field(default_factory=list)
    final_misfit: float = float("nan")
    wall_time: float = 0.0
    notes: list[str] = field(default_factory=list)
    _t0: float = field(default_factory=time.perf_counter, repr=False)

    def stop_clock(self):
        self.wall_time = time.perf_counter() - self._t0

    @property
    def objectives(self) -> list[float]:
        return [rec[2] for rec in self.history]

    def to_dict(self) -> dict:
        def num(x):
            x = float(x)
            return "inf" if x == float("inf") else x
        return {
            "stage": self.stage,
            "seed": self.seed,
            "legs": [num(a) for a in self.legs],
            "leg_iterations": list(self.leg_iterations),
            "converged": list(self.converged),
            "inner_iterations": self.inner_iterations,
            "final_misfit": num(self.final_misfit),
            "wall_time": self.wall_time,
            "history": [[leg, num(w1), num(w2)] for leg, w1, w2 in self.history],
            "deltas": [num(d) for d in self.deltas],
            "notes": list(self.notes),
        }


def batched_xcorr(a: np.ndarray, b: np.ndarray, maxlag: int) -> np.ndarray:
    """Row-wise ``sum_s a[r, s] b[r, s + t]`` for ``t`` in ``{-maxlag..maxlag}``.

    Both operands are (rows, n) arrays on a common origin.
    """
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    n = max(a.shape[1], b.shape[1])
    nfft = next_fast_len(n + maxlag + 1, real=True)
    spec = np.conj(rfft(a, nfft, axis=1)) * rfft(b, nfft, axis=1)
    c = irfft(spec, nfft, axis=1)
    idx = np.arange(-maxlag, maxlag + 1) % nfft
    return c[:, idx]


def build_interferograms(d: ChannelSet, maxlag: int) -> InterferogramSet:
    """All pairwise cross-correlations ``d_i (x) d_j`` for ``i <= j``."""
    if maxlag < 0 or maxlag > d.span - 1:
        raise ValueError(f"maxlag must lie in [0, {d.span - 1}]")
    pairs = pair_list(d.nr)
    ii = np.array([p[0] for p in pairs])
    jj = np.array([p[1] for p in pairs])
    entries = batched_xcorr(d.data[ii], d.data[jj], maxlag)
    return InterferogramSet(d.nr, maxlag, entries)


def max_normalize_interferograms(d: InterferogramSet) -> InterferogramSet:
    """Divide every entry by ``x_11(0)`` (first channel, zero lag)."""
    ref = d.row(0, 0)[d.maxlag]
    if ref == 0.0:
        raise DegenerateChannelError("x_11(0) = 0: first channel carries no energy")
    return d.scaled(1.0 / ref)
