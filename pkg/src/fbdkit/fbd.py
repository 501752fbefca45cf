"""Stage solvers for focused blind deconvolution and the end-to-end pipeline.

Stages
------
``lsbd``  least-squares blind deconvolution of the raw outputs, unit-energy source
``ibd``   fit of the interferograms by ``s_a * g_ij``
``fibd``  ``ibd`` plus the zero-lag focusing penalty on the autocorrelations
          ``g_kk``, solved along a decreasing schedule of weights
``lspr``  phase retrieval: fit ``g_k (x) g_l`` to the interferometric responses
``fpr``   phase retrieval with a front-loading penalty on one channel, then
          ``lspr`` from its result

Weights of ``inf`` in a schedule are solved as hard constraints
(``g_kk(t) = 0`` or ``g_f(t) = 0`` for ``t != 0``).

The stopping rule compares absolute objectives on normalized data: the
interferograms are divided by ``d_11(0)`` and the raw outputs by the norm of
the first channel.  ``SolveReport.history`` holds those objectives, while
``final_misfit`` is the misfit divided by the energy of the data the stage
fits.  Channel indices are 0-based.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .altmin import (AltMinConfig, SolverDivergence, alternate, conv_matrix,
                     levenberg_marquardt, solve_normal, windowed_adjoint,
                     windowed_forward, windowed_gram)
from .model import (ChannelSet, InterferogramSet, SolveReport, SourceAutocorr,
                    batched_xcorr, build_interferograms, max_normalize_interferograms,
                    pair_list)
from .seqcore import Sequence

logger = logging.getLogger(__name__)

__all__ = [
    "INF",
    "HomotopySchedule",
    "FbdResult",
    "NormalizationError",
    "focusing_weights",
    "lsbd",
    "lsbd_misfit",
    "ibd",
    "fibd",
    "ibd_misfit",
    "lspr",
    "fpr",
    "lspr_misfit",
    "fbd_pipeline",
    "suggest_front_channel",
    "LSBD_CONFIG",
]

INF = math.inf


class NormalizationError(ValueError):
    """Interferometric data were not max-normalized (``d_11(0) != 1``)."""


class HomotopySchedule(tuple):
    """Nonincreasing tuple of nonnegative weights; ``inf`` is allowed."""

    def __new__(cls, weights=(INF, 0.0)):
        vals = []
        for w in weights:
            if isinstance(w, str):
                w = w.strip().lower()
                w = INF if w in ("inf", "infinity", "∞") else float(w)
            vals.append(float(w))
        if not vals:
            raise ValueError("empty homotopy schedule")
        if any(v < 0 or math.isnan(v) for v in vals):
            raise ValueError("schedule weights must be nonnegative")
        if any(b > a for a, b in zip(vals, vals[1:])):
            raise ValueError("schedule weights must be nonincreasing")
        return super().__new__(cls, vals)

    @classmethod
    def parse(cls, text: str) -> "HomotopySchedule":
        return cls([tok for tok in text.split(",") if tok.strip()])


@dataclass
class FbdResult:
    g: ChannelSet
    s: Sequence | None = None
    s_a: SourceAutocorr | None = None
    gij: InterferogramSet | None = None
    reports: dict = field(default_factory=dict)

    @property
    def final_misfit(self) -> float:
        rep = self.reports.get("lsbd")
        return rep.final_misfit if rep is not None else float("nan")


def focusing_weights(tau: int, one_sided: bool = False) -> Sequence:
    """Weights ``t^2`` on ``{-tau..tau}``, or on ``{0..tau}`` when ``one_sided``."""
    if one_sided:
        t = np.arange(0, tau + 1)
        return Sequence(0, t.astype(float) ** 2)
    t = np.arange(-tau, tau + 1)
    return Sequence(-tau, t.astype(float) ** 2)


def _rng(seed):
    return np.random.default_rng(seed)


LSBD_CONFIG = AltMinConfig(epsilon=1e-10, max_outer_iters=5000)


def _quartic(r0, p1, p2):
    """Coefficients of ``||r0 - eta p1 - eta^2 p2||^2`` in powers of eta."""
    return [float(np.sum(r0 * r0)), -2.0 * float(np.sum(r0 * p1)),
            float(np.sum(p1 * p1)) - 2.0 * float(np.sum(r0 * p2)),
            2.0 * float(np.sum(p1 * p2)), float(np.sum(p2 * p2))]


# ---------------------------------------------------------------------------
# LSBD

class _LsbdProblem:
    """Blocks: source ``s`` on {0..T} (unit energy), responses ``g`` on {0..tau}.

    Works on the data divided by the first channel's norm, the LSBD analogue
    of max-normalizing the interferograms; ``g`` is in those units.
    """

    def __init__(self, d: np.ndarray, tau: int):
        d = np.asarray(d, dtype=float)
        self.norm = float(np.linalg.norm(d[0]))
        if self.norm == 0.0:
            self.norm = float(np.linalg.norm(d))
        if self.norm == 0.0:
            raise ValueError("lsbd: all-zero data")
        self.d = d / self.norm
        self.T = d.shape[1] - 1
        self.tau = tau
        self.scale = float(np.sum(self.d ** 2))

    def predict(self, state):
        s, g = state
        return windowed_forward(g, s[None, :], 0, 0, 0, self.T + 1)

    def objective(self, state):
        r = self.d - self.predict(state)
        return float(np.sum(r ** 2))

    def relative_misfit(self, state):
        return self.objective(state) / self.scale

    def line_poly(self, state, step):
        (s, g), (ds, dg) = state, step
        n = self.T + 1

        def fwd(gg, ss):
            return windowed_forward(gg, ss[None, :], 0, 0, 0, n)
        return _quartic(self.d - fwd(g, s), fwd(dg, s) + fwd(g, ds), fwd(dg, ds))

    def source_update(self, g, s=None):
        """Least-squares source for fixed ``g``, refined from ``s`` if given.

        The normal matrix is nearly singular along the ambiguity directions,
        so the update is solved for the correction driven by the current
        residual; rounding then scales with the step, not with ``s``.
        """
        n = self.T + 1
        if s is None:
            s = np.zeros(n)
        r = self.d - windowed_forward(g, s[None, :], 0, 0, 0, n)
        A = windowed_gram(g, 0, 0, n, 0, n)
        return s + solve_normal(A, windowed_adjoint(g, r, 0, 0, n, 0))

    def project(self, state):
        s, g = state
        c = float(np.linalg.norm(s))
        if c == 0.0:
            raise SolverDivergence("lsbd: source collapsed to zero")
        return s / c, g * c

    def update_first(self, state):
        s, g = state
        return self.project((self.source_update(g, s), g))

    def update_second(self, state):
        s, g = state
        S = conv_matrix(s, 0, 0, self.tau + 1, 0, self.T + 1)
        r = self.d - g @ S.T
        return s, g + solve_normal(S.T @ S, S.T @ r.T).T


def lsbd_misfit(d: ChannelSet, s: Sequence, g: ChannelSet) -> float:
    """Relative misfit ``sum_k ||d_k - (s * g_k)||^2 / sum_k ||d_k||^2`` on {0..T}."""
    prob = _LsbdProblem(np.asarray(d.data), g.span - 1)
    return prob.relative_misfit((s.window(0, d.span - 1).samples,
                                 np.asarray(g.data) / prob.norm))


def _lsbd_core(d: ChannelSet, tau: int, config: AltMinConfig, s0, g0, report):
    """Run LSBD from ``(s0, g0)`` (``g0`` in data units); returns unit ``s`` and ``g``."""
    prob = _LsbdProblem(np.asarray(d.data), tau)
    state = prob.project((np.asarray(s0, float), np.asarray(g0, float) / prob.norm))
    state, report = alternate(prob, state, config, report)
    s, g = prob.project(state)
    report.final_misfit = prob.relative_misfit((s, g))
    return s, g * prob.norm


def _lsbd_source(d: ChannelSet, g: np.ndarray):
    """Least-squares source for fixed responses, rescaled to unit energy."""
    prob = _LsbdProblem(np.asarray(d.data), g.shape[1] - 1)
    s, gn = prob.project((prob.source_update(g / prob.norm), g / prob.norm))
    return s, gn * prob.norm, prob.relative_misfit((s, gn))


def _check_lsbd_dims(d: ChannelSet, tau: int):
    T = d.span - 1
    if not tau < T:
        raise ValueError(f"impulse responses (tau={tau}) must be briefer than the outputs (T={T})")
    if T < 5 * tau:
        warnings.warn(f"T={T} < 5*tau={5 * tau}: outputs barely longer than the responses",
                      RuntimeWarning, stacklevel=3)


def lsbd(d: ChannelSet, tau: int, config: AltMinConfig | None = None,
         init_seed: int = 0, init: tuple | None = None) -> FbdResult:
    """Least-squares blind deconvolution by alternating minimization.

    Parameters
    ----------
    d : ChannelSet
        Channel outputs on ``{0..T}``.
    tau : int
        Last sample index of the responses.
    init : (Sequence or array, ChannelSet or array), optional
        Starting point; the source is rescaled to unit energy.  When
        omitted, ``s`` is Gaussian and ``g`` uniform on [0, 1), both drawn
        from ``init_seed``.
    config : AltMinConfig, optional
        Defaults to :data:`LSBD_CONFIG`.  Convergence toward the (large) set
        of exact solutions is slow, so the default tolerance is tighter than
        for the interferometric stages.

    Returns
    -------
    FbdResult
        ``g`` on ``{0..tau}``, unit-energy ``s`` on ``{0..T}`` and the report
        under ``reports["lsbd"]``.
    """
    config = config or LSBD_CONFIG
    _check_lsbd_dims(d, tau)
    if not np.any(d.data):
        raise ValueError("lsbd: all-zero data")
    T = d.span - 1
    if init is None:
        rng = _rng(init_seed)
        s0 = rng.standard_normal(T + 1)
        g0 = rng.random((d.nr, tau + 1))
    else:
        s0, g0 = init
        s0 = s0.window(0, T).samples if isinstance(s0, Sequence) else np.asarray(s0, float)
        g0 = np.asarray(g0.data if isinstance(g0, ChannelSet) else g0, float)
    report = SolveReport(stage="lsbd", seed=init_seed)
    report.legs.append(0.0)
    s, g = _lsbd_core(d, tau, config, s0, g0, report)
    report.stop_clock()
    gs = ChannelSet(g)
    s_seq = Sequence(0, s)
    sa = batched_xcorr(s[None, :], s[None, :], T)[0]
    return FbdResult(g=gs, s=s_seq, s_a=SourceAutocorr(sa[T:] / sa[T]),
                     gij=build_interferograms(gs, tau), reports={"lsbd": report})


# ---------------------------------------------------------------------------
# IBD / FIBD

class _InterferometricProblem:
    """Blocks: one-sided ``s_a`` (zero lag pinned to 1), pair responses ``G``.

    ``G`` rows follow the upper-triangular pair order, lags ``{-tau..tau}``.
    The objective is the unnormalized ``W`` on the (max-normalized) data.
    """

    def __init__(self, dij: InterferogramSet, tau: int, alpha: float = 0.0,
                 psd_projection: bool = False):
        self.D = np.asarray(dij.entries)
        self.Td = Td = dij.maxlag
        self.tau = tau
        self.alpha = alpha
        self.diag = dij.diagonal_indices()
        self.offdiag = np.setdiff1d(np.arange(self.D.shape[0]), self.diag)
        self.scale = float(np.sum(self.D ** 2))
        self.psd = psd_projection
        self.w = np.arange(-tau, tau + 1, dtype=float) ** 2
        # S[t, j] = s_a(t - lag_j); index into [s_a_full, 0]
        t = np.arange(-Td, Td + 1)[:, None]
        lag = np.arange(-tau, tau + 1)[None, :]
        idx = t - lag + Td
        self._sidx = np.where((idx >= 0) & (idx <= 2 * Td), idx, 2 * Td + 1)

    def full_sa(self, h):
        return np.concatenate([h[:0:-1], h])

    def source_matrix(self, h):
        return np.append(self.full_sa(h), 0.0)[self._sidx]

    def predict(self, state):
        h, G = state
        return G @ self.source_matrix(h).T

    def misfit(self, state):
        return float(np.sum((self.D - self.predict(state)) ** 2))

    def relative_misfit(self, state):
        return self.misfit(state) / self.scale

    def penalty(self, G):
        if self.alpha == 0.0 or math.isinf(self.alpha):
            return 0.0
        return self.alpha * float(np.sum(self.w * G[self.diag] ** 2))

    def objective(self, state):
        return self.misfit(state) + self.penalty(state[1])

    def line_poly(self, state, step):
        (h, G), (dh, dG) = state, step
        # dh vanishes at lag 0, so source_matrix(dh) is linear in dh
        S, dS = self.source_matrix(h), self.source_matrix(dh)
        c = _quartic(self.D - G @ S.T, dG @ S.T + G @ dS.T, dG @ dS.T)
        if 0.0 < self.alpha < INF:
            gd, dd = G[self.diag], dG[self.diag]
            c[0] += self.alpha * float(np.sum(self.w * gd * gd))
            c[1] += 2.0 * self.alpha * float(np.sum(self.w * gd * dd))
            c[2] += self.alpha * float(np.sum(self.w * dd * dd))
        return c

    def source_forward(self, G, x):
        """``sum_j G[p, j] x(t - lag_j)`` on ``{-T..T}``; ``x`` is a full sequence on ``{-T..T}``."""
        return G @ np.append(x, 0.0)[self._sidx].T

    def source_adjoint(self, G, Y):
        """Transpose of :meth:`source_forward` in ``x`` applied to ``Y``."""
        Td, tau = self.Td, self.tau
        n = 2 * Td + 1
        # b(u) = sum_p sum_a G[p, a] Y[p, u + a - tau]
        Q = G.T @ Y
        b = np.zeros(n)
        for a in range(2 * tau + 1):
            sh = a - tau
            if sh >= 0:
                b[:n - sh] += Q[a, sh:]
            else:
                b[-sh:] += Q[a, :n + sh]
        return b

    def update_first(self, state):
        _, G = state
        Td, tau = self.Td, self.tau
        n = 2 * Td + 1
        A = windowed_gram(G, -tau, -Td, n, -Td, n)
        b = self.source_adjoint(G, self.D)
        c = Td
        pos = slice(c + 1, None)
        neg = slice(c - 1, None, -1)
        Ar = A[pos, pos] + A[pos, neg] + A[neg, pos] + A[neg, neg]
        rhs = (b[pos] - A[pos, c]) + (b[neg] - A[neg, c])
        h = np.empty(Td + 1)
        h[0] = 1.0
        h[1:] = solve_normal(Ar, rhs)
        if self.psd:
            h = _project_psd_autocorr(h)
        return h, G

    def update_second(self, state):
        h, _ = state
        tau = self.tau
        S = self.source_matrix(h)
        StS = S.T @ S
        StD = S.T @ self.D.T
        G = np.empty((self.D.shape[0], 2 * tau + 1))
        G[self.offdiag] = solve_normal(StS, StD[:, self.offdiag]).T
        if math.isinf(self.alpha):
            col = S[:, tau]
            G[self.diag] = 0.0
            G[self.diag, tau] = StD[tau, self.diag] / (col @ col)
        elif self.alpha > 0.0:
            G[self.diag] = solve_normal(StS + self.alpha * np.diag(self.w),
                                        StD[:, self.diag]).T
        else:
            G[self.diag] = solve_normal(StS, StD[:, self.diag]).T
        return h, G


def _project_psd_autocorr(h: np.ndarray) -> np.ndarray:
    """Clip negative eigenvalues of Toeplitz(s_a), re-average diagonals, re-pin s_a(0)."""
    from scipy.linalg import toeplitz
    M = toeplitz(h)
    vals, vecs = np.linalg.eigh(M)
    if vals.min() >= 0:
        return h
    P = (vecs * np.maximum(vals, 0.0)) @ vecs.T
    n = h.size
    out = np.array([np.mean(np.diagonal(P, k)) for k in range(n)])
    if out[0] <= 0:
        return h
    return out / out[0]


def ibd_misfit(dij: InterferogramSet, s_a: SourceAutocorr, gij: InterferogramSet) -> float:
    """Normalized ``sum ||d_ij - s_a * g_ij||^2 / sum ||d_ij||^2`` over ``{-T..T}``."""
    prob = _InterferometricProblem(dij, gij.maxlag)
    h = Sequence(-s_a.maxlag, s_a.full).window(0, dij.maxlag).samples
    return prob.relative_misfit((h, np.asarray(gij.entries)))


def _check_normalized(dij: InterferogramSet):
    ref = dij.row(0, 0)[dij.maxlag]
    if abs(ref - 1.0) > 1e-12:
        raise NormalizationError(
            f"interferograms must be max-normalized (d_11(0) = {ref!r}); "
            "use max_normalize_interferograms")


def _fibd_init(dij: InterferogramSet, tau: int, seed):
    rng = _rng(seed)
    npairs = dij.entries.shape[0]
    G = rng.random((npairs, 2 * tau + 1))
    diag = dij.diagonal_indices()
    zero_lag = G[diag, tau].copy()
    G[diag] = 0.0
    G[diag, tau] = zero_lag
    h = np.zeros(dij.maxlag + 1)
    h[0] = 1.0
    return h, G


def fibd(dij: InterferogramSet, tau: int, alphas=(INF, 0.0),
         config: AltMinConfig | None = None, init_seed: int = 0,
         init: tuple | None = None):
    """Focused interferometric blind deconvolution.

    Minimizes ``V + alpha * sum_k sum_t t^2 g_kk(t)^2`` for each ``alpha`` of
    the schedule in turn, warm-starting every leg from the previous one.

    Returns
    -------
    (SourceAutocorr, InterferogramSet, SolveReport)
        ``s_a`` on ``{-T..T}`` with ``s_a(0) = 1`` and the responses on
        ``{-tau..tau}``.
    """
    config = config or AltMinConfig()
    alphas = HomotopySchedule(alphas)
    _check_normalized(dij)
    if not 0 <= tau <= dij.maxlag:
        raise ValueError("tau must lie in [0, maxlag]")
    report = SolveReport(stage="fibd" if any(a > 0 for a in alphas) else "ibd",
                         seed=init_seed)
    if init is None:
        state = _fibd_init(dij, tau, init_seed)
    else:
        sa0, g0 = init
        state = (Sequence(-sa0.maxlag, sa0.full).window(0, dij.maxlag).samples.copy(),
                 np.array(g0.entries, dtype=float))
    for leg, alpha in enumerate(alphas):
        prob = _InterferometricProblem(dij, tau, alpha, config.psd_projection)
        report.legs.append(alpha)
        if math.isinf(alpha):
            # start the hard-constraint leg from a feasible point
            G = state[1].copy()
            G[prob.diag, :tau] = 0.0
            G[prob.diag, tau + 1:] = 0.0
            state = (state[0], G)
        state, report = alternate(prob, state, config, report, leg=leg)
    h, G = state
    report.final_misfit = _InterferometricProblem(dij, tau).relative_misfit(state)
    report.stop_clock()
    return SourceAutocorr(h), InterferogramSet(dij.nr, tau, G), report


def ibd(dij: InterferogramSet, tau: int, config: AltMinConfig | None = None,
        init_seed: int = 0):
    """Interferometric blind deconvolution (no focusing term)."""
    return fibd(dij, tau, (0.0,), config, init_seed)


# ---------------------------------------------------------------------------
# LSPR / FPR

class _PhaseRetrievalProblem:
    """Fit ``g_k (x) g_l`` to target rows for an ordered pair list.

    Optional front-loading rows ``sqrt(beta) * t * g_f(t)`` and a mask of
    free coefficients (``g_f(t != 0)`` fixed to zero for ``beta = inf``).
    """

    def __init__(self, nr: int, tau: int, pairs, targets, front=None, beta=0.0):
        self.nr, self.tau = nr, tau
        self.L = tau + 1
        self.k = np.array([p[0] for p in pairs])
        self.l = np.array([p[1] for p in pairs])
        self.Y = np.asarray(targets, dtype=float)
        self.scale = float(np.sum(self.Y ** 2))
        self.front = front
        self.beta = beta
        free = np.ones((nr, self.L), dtype=bool)
        if front is not None and math.isinf(beta):
            free[front, 1:] = False
        self.free = free.ravel()
        self.use_reg = front is not None and 0.0 < beta < INF
        self._template()

    def _template(self):
        L, tau = self.L, self.tau
        t, s = np.meshgrid(np.arange(-tau, tau + 1), np.arange(L), indexing="ij")
        u = s + t
        ok = (u >= 0) & (u < L)
        self.tt, self.ss, self.uu = t[ok], s[ok], u[ok]

    def embed(self, x):
        g = np.zeros(self.nr * self.L)
        g[self.free] = x
        return g.reshape(self.nr, self.L)

    def residual(self, x):
        g = self.embed(x)
        model = batched_xcorr(g[self.k], g[self.l], self.tau)
        r = (model - self.Y).ravel()
        if self.use_reg:
            t = np.arange(1, self.L)
            r = np.concatenate([r, math.sqrt(self.beta) * t * g[self.front, 1:]])
        return r

    def jacobian(self, x):
        g = self.embed(x)
        L, n2 = self.L, 2 * self.tau + 1
        npairs = self.k.size
        base = (np.arange(npairs) * n2)[:, None]
        rows = base + (self.tt + self.tau)[None, :]
        cols_k = (self.k * L)[:, None] + self.ss[None, :]
        vals_k = g[self.l][:, self.uu]
        cols_l = (self.l * L)[:, None] + self.uu[None, :]
        vals_l = g[self.k][:, self.ss]
        R = [rows.ravel(), rows.ravel()]
        C = [cols_k.ravel(), cols_l.ravel()]
        V = [vals_k.ravel(), vals_l.ravel()]
        nrows = npairs * n2
        if self.use_reg:
            t = np.arange(1, L)
            R.append(nrows + t - 1)
            C.append(self.front * L + t)
            V.append(math.sqrt(self.beta) * t.astype(float))
            nrows += L - 1
        J = sp.coo_matrix((np.concatenate(V), (np.concatenate(R), np.concatenate(C))),
                          shape=(nrows, self.nr * L)).tocsc()
        return J[:, np.flatnonzero(self.free)]

    def misfit(self, g):
        model = batched_xcorr(g[self.k], g[self.l], self.tau)
        return float(np.sum((model - self.Y) ** 2)) / self.scale


def _pr_targets(gij: InterferogramSet, pairs):
    return np.stack([gij.row(k, l) for k, l in pairs])


def lspr_misfit(gij: InterferogramSet, g: ChannelSet) -> float:
    """Normalized ``sum_{k<=l} ||g_kl - g_k (x) g_l||^2 / sum ||g_kl||^2``."""
    pairs = pair_list(gij.nr)
    prob = _PhaseRetrievalProblem(gij.nr, g.span - 1, pairs, _pr_targets(gij, pairs))
    return prob.misfit(np.asarray(g.data))


def _lspr_core(gij, g0, config, report, leg):
    pairs = pair_list(gij.nr)
    prob = _PhaseRetrievalProblem(gij.nr, gij.maxlag, pairs, _pr_targets(gij, pairs))
    x, _ = levenberg_marquardt(prob.residual, prob.jacobian, g0.ravel(), 1.0,
                               config.epsilon, config.max_outer_iters, report, leg)
    g = prob.embed(x)
    report.final_misfit = prob.misfit(g)
    return g


def lspr(gij: InterferogramSet, config: AltMinConfig | None = None,
         init_seed: int = 0, init: ChannelSet | None = None):
    """Least-squares phase retrieval of ``g_i`` on ``{0..tau}`` from ``g_ij``.

    Returns ``(ChannelSet, SolveReport)``.
    """
    config = config or AltMinConfig()
    tau = gij.maxlag
    if init is None:
        g0 = _rng(init_seed).random((gij.nr, tau + 1))
    else:
        g0 = np.array(init.data, dtype=float)
    report = SolveReport(stage="lspr", seed=init_seed)
    report.legs.append(0.0)
    g = _lspr_core(gij, g0, config, report, 0)
    report.stop_clock()
    return ChannelSet(g), report


def fpr(gij: InterferogramSet, front_channel: int, betas=(INF, 0.0),
        config: AltMinConfig | None = None, init_seed: int = 0,
        refine: bool = True):
    """Focused phase retrieval.

    Stage 1 fits only the pairs ``(k, f)`` plus ``beta * sum_t t^2 g_f(t)^2``
    along the schedule; stage 2 (``refine``) runs :func:`lspr` from the
    stage-1 responses.  Returns ``(ChannelSet, SolveReport)``; the report's
    last leg (weight ``nan``) is the refinement.
    """
    config = config or AltMinConfig()
    betas = HomotopySchedule(betas)
    nr, tau = gij.nr, gij.maxlag
    f = int(front_channel)
    if not 0 <= f < nr:
        raise ValueError(f"front_channel {front_channel} outside [0, {nr})")
    rng = _rng(init_seed)
    g = rng.random((nr, tau + 1))
    g[f, 1:] = 0.0
    pairs = [(k, f) for k in range(nr)]
    Y = _pr_targets(gij, pairs)
    report = SolveReport(stage="fpr", seed=init_seed)
    for leg, beta in enumerate(betas):
        prob = _PhaseRetrievalProblem(nr, tau, pairs, Y, front=f, beta=beta)
        if math.isinf(beta):
            g[f, 1:] = 0.0
        report.legs.append(beta)
        x, _ = levenberg_marquardt(prob.residual, prob.jacobian, g.ravel()[prob.free],
                                   1.0, config.epsilon, config.max_outer_iters,
                                   report, leg)
        g = prob.embed(x)
        report.final_misfit = prob.misfit(g)
    if refine:
        report.legs.append(float("nan"))
        g = _lspr_core(gij, g, config, report, len(betas))
    report.stop_clock()
    return ChannelSet(g), report


def suggest_front_channel(gij: InterferogramSet) -> int:
    """Heuristic pick of the most front-loaded channel.

    A channel that fires before the others has cross-correlations
    ``g_i (x) g_j`` concentrated at nonnegative lags; the channel with the
    largest share of such energy is returned.
    """
    m = gij.maxlag
    best, best_ratio = 0, -1.0
    for i in range(gij.nr):
        late = total = 0.0
        for j in range(gij.nr):
            if j == i:
                continue
            r = gij.row(i, j)
            late += float(np.sum(r[m:] ** 2))
            total += float(np.sum(r ** 2))
        ratio = late / total if total > 0 else 0.0
        if ratio > best_ratio:
            best, best_ratio = i, ratio
    return best


# ---------------------------------------------------------------------------
# pipeline

def fbd_pipeline(d: ChannelSet, tau: int, front_channel: int | None = None,
                 alphas=(INF, 0.0), betas=(INF, 0.0),
                 config: AltMinConfig | None = None, seed: int = 0,
                 finalize: bool = True) -> FbdResult:
    """Interferograms -> max-normalize -> FIBD -> FPR -> optional LSBD refinement.

    ``front_channel=None`` uses :func:`suggest_front_channel` on the FIBD
    output.  The final LSBD refinement starts from the FPR responses and
    the source obtained from them by one least-squares source update.
    """
    config = config or AltMinConfig()
    _check_lsbd_dims(d, tau)
    s_fibd, s_fpr, s_lsbd = (int(x) for x in np.random.SeedSequence(seed).generate_state(3))
    dij = max_normalize_interferograms(build_interferograms(d, d.span - 1))
    sa, gij, rep_fibd = fibd(dij, tau, alphas, config, s_fibd)
    f = suggest_front_channel(gij) if front_channel is None else int(front_channel)
    g, rep_fpr = fpr(gij, f, betas, config, s_fpr)
    reports = {"fibd": rep_fibd, "fpr": rep_fpr}
    s0, gd, misfit0 = _lsbd_source(d, np.asarray(g.data))
    rep_lsbd = SolveReport(stage="lsbd", seed=s_lsbd)
    if finalize:
        rep_lsbd.legs.append(0.0)
        s, gd = _lsbd_core(d, tau, config, s0, gd, rep_lsbd)
    else:
        s = s0
        rep_lsbd.final_misfit = misfit0
    rep_lsbd.stop_clock()
    reports["lsbd"] = rep_lsbd
    return FbdResult(g=ChannelSet(gd), s=Sequence(0, s), s_a=sa, gij=gij, reports=reports)
