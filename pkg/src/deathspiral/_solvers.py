"""Small scalar solvers: golden-section minimization and bisection."""
from __future__ import annotations

import math

INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section_min(f, lo, hi, xtol=1e-10, ftol=0.0, max_iter=500):
    """Minimize a unimodal ``f`` on [lo, hi]; endpoints are candidates too.

    Returns ``(x, f(x))``.
    """
    f_lo, f_hi = f(lo), f(hi)
    a, b = lo, hi
    c = b - INVPHI * (b - a)
    d = a + INVPHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= xtol or (ftol > 0 and abs(fc - fd) <= ftol and b - a <= 1e3 * xtol):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INVPHI * (b - a)
            fd = f(d)
    best = min((f_lo, lo), (f_hi, hi), (fc, c), (fd, d))
    return best[1], best[0]


def bisect_predicate(pred, lo, hi, rtol=1e-6, atol=0.0, max_iter=200):
    """Locate the switch point of a monotone boolean predicate.

    Requires ``pred(lo) != pred(hi)``; returns the final ``(lo, hi)`` bracket
    with ``pred(lo) == pred_lo`` preserved.
    """
    p_lo = pred(lo)
    for _ in range(max_iter):
        if hi - lo <= max(rtol * max(abs(lo), abs(hi)), atol):
            break
        mid = 0.5 * (lo + hi)
        if pred(mid) == p_lo:
            lo = mid
        else:
            hi = mid
    return lo, hi


def bisect_root(f, lo, hi, xtol=1e-12, max_iter=300):
    """Sign-change bisection; ``f(lo)`` and ``f(hi)`` must differ in sign."""
    f_lo = f(lo)
    f_hi = f(hi)
    if f_lo == 0:
        return lo
    if f_hi == 0:
        return hi
    if (f_lo > 0) == (f_hi > 0):
        raise ValueError("root is not bracketed")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= xtol or mid in (lo, hi):
            break
        fm = f(mid)
        if fm == 0:
            return mid
        if (fm > 0) == (f_lo > 0):
            lo, f_lo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)
