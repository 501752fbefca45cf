"""Alternating minimization engine and the linear least-squares kernels it uses.

The block updates of every solver in :mod:`fbdkit.fbd` are linear
least-squares problems whose operators are truncated convolutions.  They are
small enough (a few hundred unknowns) that the normal equations are assembled
exactly and factorized; :func:`windowed_gram` builds the Gram matrix of a
stack of truncated convolution operators in O(n K) from diagonal partial sums.
:func:`solve_linear_ls` is the matrix-free alternative (CGLS) for operators
given only as forward/adjoint callables.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.fft import irfft, next_fast_len, rfft

from .model import SolveReport

logger = logging.getLogger(__name__)

__all__ = [
    "AltMinConfig",
    "BlockProblem",
    "SolverDivergence",
    "AdjointMismatchError",
    "alternate",
    "solve_linear_ls",
    "adjoint_test",
    "conv_matrix",
    "windowed_gram",
    "windowed_adjoint",
    "windowed_forward",
    "solve_normal",
    "levenberg_marquardt",
]


class SolverDivergence(RuntimeError):
    """The objective increased beyond tolerance during a monotone descent."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class AdjointMismatchError(ValueError):
    """Forward and adjoint callables are not a consistent transpose pair."""


@dataclass
class AltMinConfig:
    """Stopping and inner-solver settings shared by all stages.

    ``epsilon`` is the absolute tolerance on the per-cycle decrease of a
    stage objective (evaluated on max-normalized data).
    """

    epsilon: float = 1e-8
    max_outer_iters: int = 2000
    inner_tol: float = 1e-12
    inner_max_iters: int = 1000
    seed: int = 0
    psd_projection: bool = False
    extrapolate: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_outer_iters < 1 or self.inner_max_iters < 1:
            raise ValueError("iteration caps must be >= 1")


class BlockProblem(Protocol):
    def update_first(self, state): ...

    def update_second(self, state): ...

    def objective(self, state) -> float: ...

    # optional:
    #   project(state) -> state   restore constraints after an extrapolated
    #                              step without changing the objective
    #   line_poly(state, step) -> (c0, .., c4)   objective(state + eta * step)
    #                              as a quartic in eta (bilinear models)


ETA_MAX = 64.0


def _best_eta(coeffs, eta_max: float = ETA_MAX) -> float:
    """Minimizer of the quartic ``sum_k c_k eta^k`` on ``[0, eta_max]``."""
    c = np.asarray(coeffs, dtype=float)
    cands = [0.0, eta_max]
    deriv = np.trim_zeros(np.array([4 * c[4], 3 * c[3], 2 * c[2], c[1]]), "f")
    if deriv.size > 1:
        for r in np.roots(deriv):
            if abs(r.imag) <= 1e-12 * max(1.0, abs(r.real)) and 0 < r.real < eta_max:
                cands.append(float(r.real))
    vals = [np.polyval(c[::-1], e) for e in cands]
    return cands[int(np.argmin(vals))]


def _extrapolate(problem, old, new, w_new: float, eta: float):
    """Step along ``new - old``; returns ``(state, objective, eta_used)``."""
    step = tuple(b - a for a, b in zip(old, new))
    line_poly = getattr(problem, "line_poly", None)
    if line_poly is not None:
        eta = _best_eta(line_poly(new, step))
        if eta == 0.0:
            return new, w_new, 0.0
    trial = tuple(b + eta * d for b, d in zip(new, step))
    project = getattr(problem, "project", None)
    if project is not None:
        trial = project(trial)
    wt = problem.objective(trial)
    if wt < w_new:
        return trial, wt, eta
    return new, w_new, 0.0


DIVERGENCE_RTOL = 1e-8


def _check_monotone(prev: float, cur: float, what: str, report: SolveReport):
    if math.isfinite(prev) and cur > prev + DIVERGENCE_RTOL * max(abs(cur), 1e-300) + 1e-15:
        report.stop_clock()
        msg = (f"{report.stage}: objective increased in {what} update "
               f"({prev:.6e} -> {cur:.6e})")
        report.notes.append(msg)
        raise SolverDivergence(msg, report)


def alternate(problem: BlockProblem, state, config: AltMinConfig,
              report: SolveReport | None = None, leg: int = 0):
    """Two-block alternating minimization with the max-decrease stopping rule.

    Each cycle updates the first block, records ``W1``, updates the second
    block, records ``W2``, and stops once
    ``max(W1_prev - W1, W2_prev - W2) <= epsilon`` or the cycle cap is hit.

    With ``config.extrapolate`` each cycle ends with a step along the change
    the cycle made.  Its length comes from an exact line search when the
    problem provides ``line_poly`` and from a growing trial length otherwise.
    The step is kept only if it lowers the objective, so the recorded
    trajectory stays monotone.  States are tuples of arrays.
    """
    if report is None:
        report = SolveReport(stage="altmin", seed=config.seed)
    w1 = w2 = math.inf
    last = math.inf
    dw = math.inf
    it = 0
    eta = 1.0
    while dw > config.epsilon and it < config.max_outer_iters:
        start = state
        state = problem.update_first(state)
        w1p, w1 = w1, problem.objective(state)
        _check_monotone(last, w1, "first-block", report)
        state = problem.update_second(state)
        w2p, w2 = w2, problem.objective(state)
        _check_monotone(w1, w2, "second-block", report)
        dw = max(w1p - w1, w2p - w2)
        if config.extrapolate and it > 0:
            state, w2, used = _extrapolate(problem, start, state, w2, eta)
            eta = min(eta * 1.5, ETA_MAX) if used > 0 else max(eta / 2.0, 1.0)
        last = w2
        it += 1
        report.history.append((leg, w1, w2))
        report.deltas.append(dw)
    report.leg_iterations.append(it)
    report.converged.append(bool(dw <= config.epsilon))
    report.final_misfit = w2
    logger.debug("%s leg %d: %d cycles, W=%.3e", report.stage, leg, it, w2)
    return state, report


# ---------------------------------------------------------------------------
# truncated convolution operators

def conv_matrix(kernel, k_lo: int, in_lo: int, in_len: int,
                out_lo: int, out_len: int) -> np.ndarray:
    """Dense matrix of ``x -> (kernel * x)`` restricted to an output window.

    ``x`` lives on ``{in_lo..in_lo+in_len-1}``, ``kernel`` starts at ``k_lo``
    and the output is sampled on ``{out_lo..out_lo+out_len-1}``.
    """
    kernel = np.asarray(kernel, dtype=float)
    t = np.arange(out_lo, out_lo + out_len)[:, None]
    u = np.arange(in_lo, in_lo + in_len)[None, :]
    idx = t - u - k_lo
    valid = (idx >= 0) & (idx < kernel.size)
    return np.where(valid, kernel[np.clip(idx, 0, kernel.size - 1)], 0.0)


def windowed_gram(kernels, k_lo: int, in_lo: int, in_len: int,
                  out_lo: int, out_len: int) -> np.ndarray:
    """``sum_k C_k^T C_k`` for the truncated convolution operators of ``kernels``.

    Entry ``(u, v)`` equals ``sum_t sum_k ker_k(t-u) ker_k(t-v)`` over the
    output window; it is a partial sum along one diagonal of
    ``M = kernels^T kernels``.
    """
    ker = np.atleast_2d(np.asarray(kernels, dtype=float))
    K = ker.shape[1]
    M = ker.T @ ker
    # D[e + K - 1, a] = M[a, a + e]
    offs = np.arange(-(K - 1), K)
    a = np.arange(K)
    b = a[None, :] + offs[:, None]
    D = np.where((b >= 0) & (b < K), M[a[None, :], np.clip(b, 0, K - 1)], 0.0)
    CS = np.concatenate([np.zeros((2 * K - 1, 1)), np.cumsum(D, axis=1)], axis=1)

    u = np.arange(in_lo, in_lo + in_len)
    lo = np.clip(out_lo - u - k_lo, 0, K)
    hi = np.clip(out_lo + out_len - 1 - u - k_lo, -1, K - 1)
    # vals[u, e] = sum_{a=lo(u)}^{hi(u)} M[a, a+e]
    vals = CS[:, hi + 1].T - CS[:, lo].T
    vals[hi < lo] = 0.0
    A = np.zeros((in_len, in_len))
    ui = np.arange(in_len)[:, None]
    vi = ui - offs[None, :]
    ok = (vi >= 0) & (vi < in_len)
    A[np.broadcast_to(ui, vi.shape)[ok], vi[ok]] = vals[ok]
    return A


def _fft_corr_rows(ker, y, nfft):
    return irfft(np.conj(rfft(ker, nfft, axis=1)) * rfft(y, nfft, axis=1), nfft, axis=1)


def windowed_adjoint(kernels, data, k_lo: int, in_lo: int, in_len: int,
                     out_lo: int, sum_rows: bool = True) -> np.ndarray:
    """``C_k^T y_k`` for each row (summed over rows by default).

    ``(C^T y)(u) = sum_t y(t) ker(t - u)`` with ``y`` on the output window
    starting at ``out_lo``.
    """
    ker = np.atleast_2d(np.asarray(kernels, dtype=float))
    y = np.atleast_2d(np.asarray(data, dtype=float))
    K = ker.shape[1]
    n = y.shape[1]
    nfft = next_fast_len(n + K + in_len, real=True)
    # c[s] = sum_m ker[m] y[m + s] ; value at u is c[u + k_lo - out_lo]
    c = _fft_corr_rows(ker, y, nfft)
    idx = (np.arange(in_lo, in_lo + in_len) + k_lo - out_lo) % nfft
    out = c[:, idx]
    return out.sum(axis=0) if sum_rows else out


def windowed_forward(kernels, x, k_lo: int, in_lo: int,
                     out_lo: int, out_len: int) -> np.ndarray:
    """Row-wise truncated convolution ``(ker_k * x_k)`` on the output window.

    ``kernels`` and ``x`` broadcast against each other row-wise.
    """
    ker = np.atleast_2d(np.asarray(kernels, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    K, n = ker.shape[1], x.shape[1]
    nfft = next_fast_len(K + n - 1, real=True)
    full = irfft(rfft(ker, nfft, axis=1) * rfft(x, nfft, axis=1), nfft, axis=1)
    start = k_lo + in_lo
    t = np.arange(out_lo, out_lo + out_len) - start
    valid = (t >= 0) & (t < K + n - 1)
    out = np.zeros((full.shape[0], out_len))
    out[:, valid] = full[:, t[valid]]
    return out


def solve_normal(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve the symmetric normal equations ``A x = b`` (Cholesky, lstsq fallback)."""
    try:
        cf = sla.cho_factor(A, check_finite=False)
        x = sla.cho_solve(cf, b, check_finite=False)
        if np.all(np.isfinite(x)):
            return x
    except sla.LinAlgError:
        pass
    return sla.lstsq(A, b, check_finite=False)[0]


# ---------------------------------------------------------------------------
# matrix-free least squares

def adjoint_test(apply_forward, apply_adjoint, n: int, m: int | None = None,
                 rtol: float = 1e-10, seed: int = 0) -> float:
    """Randomized dot-product test; returns the relative mismatch.

    Raises :class:`AdjointMismatchError` when it exceeds ``rtol``.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    ax = np.asarray(apply_forward(x), dtype=float)
    if m is not None and ax.size != m:
        raise AdjointMismatchError("forward output has the wrong size")
    y = rng.standard_normal(ax.size)
    aty = np.asarray(apply_adjoint(y), dtype=float)
    if aty.size != n:
        raise AdjointMismatchError("adjoint output has the wrong size")
    lhs = float(np.dot(ax, y))
    rhs = float(np.dot(x, aty))
    scale = np.linalg.norm(ax) * np.linalg.norm(y) + np.linalg.norm(x) * np.linalg.norm(aty)
    mismatch = abs(lhs - rhs) / max(scale, 1e-300)
    if mismatch > rtol:
        raise AdjointMismatchError(f"adjoint test failed: relative mismatch {mismatch:.3e}")
    return mismatch


def solve_linear_ls(apply_forward: Callable, apply_adjoint: Callable, rhs,
                    tol: float = 1e-10, max_iters: int = 1000, x0=None,
                    check_adjoint: bool = True) -> np.ndarray:
    """Least-squares solution of ``A x ~ rhs`` by CGLS.

    Stops when ``||A^T r|| <= tol * ||A^T rhs||``.
    """
    rhs = np.asarray(rhs, dtype=float)
    n = np.asarray(apply_adjoint(rhs)).size
    if check_adjoint:
        adjoint_test(apply_forward, apply_adjoint, n, rhs.size)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = rhs - apply_forward(x)
    s = apply_adjoint(r)
    p = s.copy()
    gamma = float(s @ s)
    ref = np.linalg.norm(apply_adjoint(rhs))
    if ref == 0.0:
        return x
    for _ in range(max_iters):
        if math.sqrt(gamma) <= tol * ref:
            break
        q = apply_forward(p)
        qq = float(q @ q)
        if qq == 0.0:
            break
        alpha = gamma / qq
        x += alpha * p
        r -= alpha * q
        s = apply_adjoint(r)
        gamma_new = float(s @ s)
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
    return x


# ---------------------------------------------------------------------------
# nonlinear least squares

def levenberg_marquardt(residual: Callable, jacobian: Callable, x0,
                        scale: float = 1.0, epsilon: float = 1e-8, max_iters: int = 2000,
                        report: SolveReport | None = None, leg: int = 0,
                        lam0: float = 1e-3):
    """Minimize ``||residual(x)||^2 / scale`` with damped Gauss-Newton steps.

    ``jacobian(x)`` returns the (sparse or dense) Jacobian of ``residual``.
    Stops once an accepted step lowers the normalized objective by at most
    ``epsilon``.  The objective is nonincreasing by construction.
    """
    x = np.array(x0, dtype=float)
    r = residual(x)
    f = float(r @ r) / scale
    lam = lam0
    it = 0
    accepted = 0
    converged = False
    while it < max_iters:
        it += 1
        J = jacobian(x)
        if sp.issparse(J):
            H = (J.T @ J).toarray()
            g = J.T @ r
        else:
            H = J.T @ J
            g = J.T @ r
        dH = np.diag(H).copy()
        floor = 1e-12 * max(dH.max(initial=0.0), 1e-300)
        dH = np.maximum(dH, floor)
        improved = False
        while lam < 1e16:
            step = solve_normal(H + lam * np.diag(dH), -g)
            x_new = x + step
            r_new = residual(x_new)
            f_new = float(r_new @ r_new) / scale
            if f_new <= f:
                improved = True
                break
            lam *= 4.0
        if not improved:
            converged = True
            break
        decrease = f - f_new
        x, r, f = x_new, r_new, f_new
        lam = max(lam / 3.0, 1e-12)
        accepted += 1
        if report is not None:
            report.history.append((leg, f, f))
            report.deltas.append(decrease)
        if decrease <= epsilon:
            converged = True
            break
    if report is not None:
        report.leg_iterations.append(it)
        report.converged.append(converged)
        report.inner_iterations += accepted
        report.final_misfit = f
    return x, f
