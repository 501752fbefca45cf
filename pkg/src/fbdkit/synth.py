"""Synthetic experiments (five idealized set-ups plus a layered scenario) and scoring.

Experiment ids:

``"I"``       two spikes per channel, linear and hyperbolic moveout
``"II"``      a single arrival with linear moveout
``"III"``     two-spike responses with later onsets, interferograms only (no source, no data)
``"IV"``      one two-spike response translated in time per channel
``"V"``       dense random responses whose energy builds up late (not front-loaded)
``"V-front"`` the same responses reversed in time, so they are front-loaded
``"layered"`` source at depth under the spread: a hyperbolic direct arrival plus
              three weaker reflections, band-limited source, ``T = 20 tau`` by default

Every source is Gaussian noise that is switched off during the last ``tau``
samples of the record, so the recorded outputs contain the complete
convolution ``s * g_i`` on ``{0..T}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal

from .model import ChannelSet, InterferogramSet, batched_xcorr, build_interferograms
from .seqcore import Sequence, add_noise

__all__ = [
    "EXPERIMENTS",
    "ExperimentSpec",
    "Experiment",
    "make_experiment",
    "truth_interferograms",
    "recovery_score",
    "band_limited_noise",
]

EXPERIMENTS = ("I", "II", "III", "IV", "V", "V-front", "layered")

# (lin_onset, hyp_onset, lin_slope, hyp_slope).  Experiment III starts later
# and moves out more slowly so that the responses leave room before the first
# arrival, which is what makes phase retrieval without focusing ambiguous.
_ARRIVALS = {"I": (6.0, 10.0, 0.5, 1.4), "III": (14.0, 18.0, 0.4, 0.8)}


@dataclass(frozen=True)
class ExperimentSpec:
    experiment: str = "I"
    nr: int = 20
    tau: int = 30
    T: int | None = None
    seed: int = 0
    snr_db: float = math.inf
    lin_onset: float | None = None
    hyp_onset: float | None = None
    lin_slope: float | None = None
    hyp_slope: float | None = None
    amplitudes: tuple = (1.0, 1.0)
    translation_gap: int = 6
    source_kind: str | None = None
    # with 120 samples per second the 60 Hz band edge sits at Nyquist, so the
    # source only lacks the lowest frequencies
    sample_rate: float = 120.0
    band: tuple = (5.0, 60.0)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        # arrivals left as None take the per-experiment defaults
        defaults = _ARRIVALS.get(self.experiment, _ARRIVALS["I"])
        for name, value in zip(("lin_onset", "hyp_onset", "lin_slope", "hyp_slope"), defaults):
            if getattr(self, name) is None:
                object.__setattr__(self, name, value)
        if self.T is None:
            object.__setattr__(self, "T", 20 * self.tau if self.experiment == "layered" else 400)
        if self.nr < 2:
            raise ValueError("experiments need nr >= 2")
        if not 0 < self.tau < self.T:
            raise ValueError("need 0 < tau < T")

    @property
    def source(self) -> str:
        if self.source_kind is not None:
            return self.source_kind
        return "band-limited" if self.experiment == "layered" else "gaussian-white"


@dataclass
class Experiment:
    spec: ExperimentSpec
    truth: ChannelSet
    source: Sequence | None = None
    data: ChannelSet | None = None
    clean_data: ChannelSet | None = None
    info: dict = field(default_factory=dict)

    @property
    def truth_gij(self) -> InterferogramSet:
        return truth_interferograms(self.truth)


def truth_interferograms(g: ChannelSet) -> InterferogramSet:
    """Exact ``g_i (x) g_j`` on lags ``{-tau..tau}`` (tau = span - 1)."""
    return build_interferograms(g, g.span - 1)


def _nearest(x) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=float) + 0.5).astype(int)


def _check_support(times, tau):
    times = np.asarray(times)
    if times.min() < 0 or times.max() > tau:
        raise ValueError(f"arrival times {times.min()}..{times.max()} exceed {{0..{tau}}}")


def _spikes(nr, tau, arrivals, amplitudes):
    g = np.zeros((nr, tau + 1))
    for times, amp in zip(arrivals, amplitudes):
        _check_support(times, tau)
        g[np.arange(nr), times] += amp
    return g


def band_limited_noise(n: int, rng, sample_rate: float, band: tuple) -> np.ndarray:
    """Gaussian noise through a zero-phase 4th-order Butterworth band-pass.

    An upper edge at or above Nyquist degenerates to a high-pass.
    """
    nyq = 0.5 * sample_rate
    lo, hi = band
    pad = 256
    x = rng.standard_normal(n + 2 * pad)
    if hi >= nyq:
        sos = signal.butter(4, lo, btype="highpass", fs=sample_rate, output="sos")
    else:
        sos = signal.butter(4, [lo, hi], btype="bandpass", fs=sample_rate, output="sos")
    y = signal.sosfiltfilt(sos, x)[pad:pad + n]
    return y / np.std(y)


def _responses(spec: ExperimentSpec, rng) -> tuple[np.ndarray, dict]:
    nr, tau = spec.nr, spec.tau
    i = np.arange(nr)
    ex = spec.experiment
    if ex in ("I", "III"):
        t_lin = _nearest(spec.lin_onset + spec.lin_slope * i)
        t_hyp = _nearest(np.sqrt(spec.hyp_onset ** 2 + (spec.hyp_slope * i) ** 2))
        return _spikes(nr, tau, [t_lin, t_hyp], spec.amplitudes), {"t_lin": t_lin, "t_hyp": t_hyp}
    if ex == "II":
        t_lin = _nearest(spec.lin_onset + spec.lin_slope * i)
        return _spikes(nr, tau, [t_lin], spec.amplitudes[:1]), {"t_lin": t_lin}
    if ex == "IV":
        t0 = _nearest(spec.lin_onset + spec.lin_slope * i)
        t1 = t0 + spec.translation_gap
        return _spikes(nr, tau, [t0, t1], spec.amplitudes), {"t0": t0, "t1": t1}
    if ex in ("V", "V-front"):
        t = np.arange(tau + 1)
        decay = np.exp(-t / (tau / 6.0))
        g = rng.standard_normal((nr, tau + 1)) * decay
        g[:, 0] = 1.0 + 0.5 * rng.random(nr)
        if ex == "V":
            g = g[:, ::-1].copy()
        return g, {}
    # layered: a source at depth below the middle of the spread, so the
    # direct arrival and the reflections share an apex channel
    apex = 0.5 * (nr - 1)
    x = i - apex
    direct = _nearest(np.sqrt(3.0 ** 2 + (0.6 * x) ** 2))
    arrivals = [direct]
    amps = [1.0]
    n_ref = 3
    t0s = np.sort(rng.uniform(8.0, 0.6 * tau, n_ref))
    for t0 in t0s:
        p = rng.uniform(0.6, 1.0)
        arrivals.append(np.minimum(_nearest(np.sqrt(t0 ** 2 + (p * x) ** 2)), tau))
        amps.append(rng.choice([-1.0, 1.0]) * rng.uniform(0.2, 0.5))
    return _spikes(nr, tau, arrivals, amps), {"t0s": t0s, "amplitudes": amps}


def make_experiment(spec: ExperimentSpec) -> Experiment:
    """Deterministic truth, source and channel outputs for ``spec``."""
    rng = np.random.default_rng(spec.seed)
    g, info = _responses(spec, rng)
    if np.any(np.sum(g ** 2, axis=1) == 0):
        raise ValueError("a generated response has zero energy")
    truth = ChannelSet(g)
    if spec.experiment in ("III", "V", "V-front"):
        return Experiment(spec, truth, info=info)

    n_on = spec.T - spec.tau + 1
    if spec.source == "band-limited":
        s_on = band_limited_noise(n_on, rng, spec.sample_rate, spec.band)
    else:
        s_on = rng.standard_normal(n_on)
    s = np.zeros(spec.T + 1)
    s[:n_on] = s_on
    source = Sequence(0, s)
    full = np.stack([np.convolve(s_on, gi) for gi in g])
    clean = ChannelSet(full[:, :spec.T + 1])
    data = clean
    if math.isfinite(spec.snr_db):
        seeds = np.random.SeedSequence(spec.seed).spawn(spec.nr)
        noisy = [add_noise(clean[k], spec.snr_db, int(ss.generate_state(1)[0]))
                 for k, ss in enumerate(seeds)]
        data = ChannelSet.from_sequences(noisy)
    return Experiment(spec, truth, source, data, clean, info)


def _rows(x) -> tuple[np.ndarray, int]:
    if isinstance(x, ChannelSet):
        return np.asarray(x.data), x.origin
    if isinstance(x, InterferogramSet):
        return np.asarray(x.entries), -x.maxlag
    seqs = list(x)
    lo = min(s.origin for s in seqs)
    hi = max(s.end for s in seqs)
    return np.stack([s.window(lo, hi).samples for s in seqs]), lo


def recovery_score(est, truth) -> float:
    """Mean normalized correlation after the best global shift and sign.

    One integer time shift and one sign are shared by all rows.  The score is
    invariant to global scaling, sign and translation of ``est``.  Accepts
    ChannelSets, InterferogramSets or equal-count lists of Sequences.
    """
    a, oa = _rows(est)
    b, ob = _rows(truth)
    if a.shape[0] != b.shape[0]:
        raise ValueError("est and truth have different channel counts")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("recovery_score needs nonzero-energy rows")
    lo = min(oa, ob)
    hi = max(oa + a.shape[1], ob + b.shape[1]) - 1
    A = np.zeros((a.shape[0], hi - lo + 1))
    B = np.zeros_like(A)
    A[:, oa - lo:oa - lo + a.shape[1]] = a / na[:, None]
    B[:, ob - lo:ob - lo + b.shape[1]] = b / nb[:, None]
    c = batched_xcorr(A, B, hi - lo).mean(axis=0)
    return float(np.max(np.abs(c)))


def with_experiment(spec: ExperimentSpec, **changes) -> ExperimentSpec:
    return replace(spec, **changes)
