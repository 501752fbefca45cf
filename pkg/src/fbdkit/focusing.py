"""Focusing functionals on autocorrelations.

The second moment ``J(a) = sum_t t^2 a(t)`` of an autocorrelation measures how
far its energy sits from zero lag.  For nonnegative ``f`` blurred by a
nonnegative, unit-sum ``phi`` the blurred signal ``g = f * phi`` always has
``J(g (x) g) >= J(f (x) f)`` even though ``sum g == sum f``: the focusing
functional sees the spreading that an l1 norm cannot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .seqcore import Sequence, convolve_direct, reverse

__all__ = [
    "FocusReport",
    "second_moment_functional",
    "focus_report",
    "autocorrelation",
    "appendix_check",
]


@dataclass(frozen=True)
class FocusReport:
    J: float
    l1: float
    by_lag: Sequence


def second_moment_functional(a: Sequence) -> float:
    """``sum_t t^2 a(t)`` over the stored support."""
    t = a.times.astype(float)
    return float(np.sum(t * t * a.samples))


def focus_report(a: Sequence) -> FocusReport:
    t = a.times.astype(float)
    terms = t * t * a.samples
    return FocusReport(J=float(terms.sum()), l1=float(np.abs(a.samples).sum()),
                       by_lag=Sequence(a.origin, terms))


def autocorrelation(a: Sequence) -> Sequence:
    """Full autocorrelation ``sum_s a(s) a(s + t)`` by the direct sum."""
    return convolve_direct(reverse(a), a)


def appendix_check(f: Sequence, phi: Sequence):
    """Compare the focusing functional of ``f`` and of ``g = f * phi``.

    ``f`` and ``phi`` must be nonnegative and not identically zero; ``phi``
    is rescaled to unit sum.  Returns ``(J_F, J_G, l1_f, l1_g)`` where
    ``J_F = J(f (x) f)`` and ``J_G = J(g (x) g)``.
    """
    if np.any(f.samples < 0) or np.any(phi.samples < 0):
        raise ValueError("appendix_check needs nonnegative f and phi")
    if not np.any(f.samples > 0):
        raise ValueError("f is identically zero")
    total = float(phi.samples.sum())
    if total <= 0.0:
        raise ValueError("phi sums to zero")
    if total != 1.0:
        # divide rather than scale by 1/total so a one-sample phi becomes exactly 1
        phi = Sequence(phi.origin, phi.samples / total)
    g = convolve_direct(f, phi)
    j_f = second_moment_functional(autocorrelation(f))
    j_g = second_moment_functional(autocorrelation(g))
    return j_f, j_g, float(f.samples.sum()), float(g.samples.sum())
