"""Hot kernels: exact maximization and root finding of the expected energy margin.

The expected margin of a price group is

    m(pi) = sum_j w_j (pi - lam_j) (max(0, a_j - b pi) - R r_j)

which is a piecewise quadratic in ``pi`` with breakpoints at ``a_j / b``.  A
:class:`TermTable` stores the breakpoints of each price group sorted, together
with suffix sums of the active-term coefficients, so every piece's quadratic is
available in O(1).  A flat tariff is one group over all (scenario, period)
terms; a dynamic tariff has one group per period.

Each kernel has a numba implementation (scalar loops) and a numpy
implementation (broadcast over the capacity grid).  Set the environment
variable ``DEATHSPIRAL_DISABLE_NUMBA=1`` to force the numpy path, or call
:func:`set_backend` at runtime.
"""
from __future__ import annotations

import os
from typing import NamedTuple

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    HAVE_NUMBA = False

_DISABLED = os.environ.get("DEATHSPIRAL_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

KAPPA_FLOOR = -1.0 + 1e-9
MAX_BISECT = 200


class TermTable(NamedTuple):
    bp: np.ndarray  # (P, K) sorted breakpoints a/b
    W: np.ndarray  # (P, K+1) suffix sums of w
    Sa: np.ndarray  # suffix sums of w*a
    Sl: np.ndarray  # suffix sums of w*lam
    Sal: np.ndarray  # suffix sums of w*a*lam
    Saa: np.ndarray  # suffix sums of w*a*a
    Wr: np.ndarray  # (P,) sum of w*r
    Wrl: np.ndarray  # (P,) sum of w*r*lam
    b: float


def build_table(w, a, lam, r, b) -> TermTable:
    """Sort each group's terms by breakpoint and precompute suffix sums.

    All inputs are (P, K) arrays except the scalar slope ``b``.
    """
    w, a, lam, r = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (w, a, lam, r))
    bp = a / b
    order = np.argsort(bp, axis=1, kind="stable")
    take = lambda x: np.take_along_axis(x, order, axis=1)  # noqa: E731
    ws, as_, ls = take(w), take(a), take(lam)

    def suffix(x):
        out = np.zeros((x.shape[0], x.shape[1] + 1))
        out[:, :-1] = np.cumsum(x[:, ::-1], axis=1)[:, ::-1]
        return out

    return TermTable(
        bp=np.ascontiguousarray(take(bp)),
        W=suffix(ws),
        Sa=suffix(ws * as_),
        Sl=suffix(ws * ls),
        Sal=suffix(ws * as_ * ls),
        Saa=suffix(ws * as_ * as_),
        Wr=(w * r).sum(axis=1),
        Wrl=(w * r * lam).sum(axis=1),
        b=float(b),
    )


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _edges(tab):
    P = tab.bp.shape[0]
    inf = np.full((P, 1), np.inf)
    return np.concatenate([-inf, tab.bp], axis=1), np.concatenate([tab.bp, inf], axis=1)


def _margin_coeffs(tab, R):
    Rg = R[:, None, None]
    c2 = np.broadcast_to(-tab.b * tab.W, (R.size,) + tab.W.shape)
    c1 = tab.Sa + tab.b * tab.Sl - Rg * tab.Wr[None, :, None]
    c0 = -tab.Sal + Rg * tab.Wrl[None, :, None]
    return c2, c1, c0


def _ramsey_coeffs(tab, R, kappa):
    Rg = R[:, None, None]
    kg = kappa[:, None, None]
    c2 = -0.5 * tab.b * tab.W * (1.0 + kg)
    c1 = kg * (tab.Sa - Rg * tab.Wr[None, :, None]) + tab.b * tab.Sl
    c0 = -tab.Sal + Rg * tab.Wrl[None, :, None] + (1.0 - kg) * tab.Saa / (2.0 * tab.b)
    return c2, c1, c0


def _np_piece_argmax(c2, c1, c0, L, H):
    """Maximize each piece's quadratic on [L, H]; return best (price, value) per group."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        vert = np.where(c2 < 0, -c1 / (2.0 * np.where(c2 < 0, c2, -1.0)), 0.0)
        v = np.where(c2 < 0, np.clip(vert, L, H), np.where(c1 <= 0, L, H))
        val = (c2 * v + c1) * v + c0
    bad = (L > H) | ~np.isfinite(val) | ~np.isfinite(v)
    val = np.where(bad, -np.inf, val)
    k = np.argmax(val, axis=-1)
    price = np.take_along_axis(v, k[..., None], axis=-1)[..., 0]
    best = np.take_along_axis(val, k[..., None], axis=-1)[..., 0]
    return price, best


def _np_max_margin(tab, R, floor):
    lo, hi = _edges(tab)
    c2, c1, c0 = _margin_coeffs(tab, R)
    L = np.broadcast_to(np.maximum(lo, floor), c1.shape)
    H = np.broadcast_to(hi, c1.shape)
    return _np_piece_argmax(c2, c1, c0, L, H)


def _np_margin_at(tab, R, price):
    # piece index = number of breakpoints strictly below the price
    k = (tab.bp[None, :, :] < price[..., None]).sum(axis=-1)
    c2, c1, c0 = _margin_coeffs(tab, R)
    g = lambda c: np.take_along_axis(np.broadcast_to(c, c1.shape), k[..., None], axis=-1)[..., 0]  # noqa: E731
    c2k, c1k, c0k = g(c2), g(c1), g(c0)
    return (c2k * price + c1k) * price + c0k


def _quad_roots(c2, c1, cc):
    """Both real roots of c2 x^2 + c1 x + cc (nan where absent), numerically stable."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        disc = c1 * c1 - 4.0 * c2 * cc
        sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
        q = -0.5 * (c1 + np.copysign(sq, c1))
        quad = c2 != 0
        r1 = np.where(quad, q / c2, np.where(c1 != 0, -cc / c1, np.nan))
        r2 = np.where(quad, np.where(q != 0, cc / q, r1), np.nan)
    return r1, r2


def _np_smallest_root(tab, R, target):
    """Smallest price >= 0 where the (single-group) margin equals ``target``.

    Falls back to the largest negative root when the margin already exceeds the
    target at zero price and never returns to it.  NaN marks no root.
    """
    lo, hi = _edges(tab)
    c2, c1, c0 = _margin_coeffs(tab, R)
    cc = c0 - target[:, None, None]
    r1, r2 = _quad_roots(c2, c1, cc)
    L = np.maximum(lo, 0.0)
    H = hi
    slack = 1e-12 * (1.0 + np.abs(np.where(np.isfinite(H), H, L)))
    best = np.full(c1.shape, np.inf)
    for root in (r1, r2):
        ok = (root >= L - slack) & (root <= H + slack) & (L <= H)
        best = np.where(ok, np.minimum(best, np.clip(root, L, H)), best)
    out = best.min(axis=-1)[:, 0]
    # negative extension on the all-active first piece
    g0 = _np_margin_at(tab, R, np.zeros((R.size, 1)))[:, 0] - target
    a1, a2 = r1[:, 0, 0], r2[:, 0, 0]
    neg = np.where(np.isfinite(a1) & (a1 < 0), a1, -np.inf)
    neg = np.maximum(neg, np.where(np.isfinite(a2) & (a2 < 0), a2, -np.inf))
    use_neg = ~np.isfinite(out) & (g0 > 0) & np.isfinite(neg)
    out = np.where(use_neg, neg, out)
    return np.where(np.isfinite(out), out, np.nan)


def _np_ramsey_argmax(tab, R, kappa):
    lo, hi = _edges(tab)
    c2, c1, c0 = _ramsey_coeffs(tab, R, kappa)
    neg = (kappa < 0)[:, None, None]
    L = np.where(neg, lo, np.maximum(lo, 0.0))
    H = np.broadcast_to(hi, c1.shape).copy()
    L = np.broadcast_to(L, c1.shape).copy()
    # below marginal cost only the all-active first piece is admissible
    first_only = np.broadcast_to(neg, c1.shape) & (np.arange(c1.shape[-1]) > 0)
    L[first_only] = np.inf
    return _np_piece_argmax(c2, c1, c0, L, H)[0]


def _np_ramsey_dynamic(tab, R, target, atol):
    G = R.size
    total = lambda price: _np_margin_at(tab, R, price).sum(axis=1) - target  # noqa: E731
    p_hi = _np_ramsey_argmax(tab, R, np.ones(G))
    f_hi = total(p_hi)
    p_lo = _np_ramsey_argmax(tab, R, np.zeros(G))
    f_lo = total(p_lo)
    k_lo = np.zeros(G)
    k_hi = np.ones(G)
    # over-recovery at marginal cost: move below it
    over = f_lo > atol
    k_hi = np.where(over, 0.0, k_hi)
    p_hi = np.where(over[:, None], p_lo, p_hi)
    f_hi = np.where(over, f_lo, f_hi)
    if over.any():
        kf = np.full(G, KAPPA_FLOOR)
        pf = _np_ramsey_argmax(tab, R, kf)
        ff = total(pf)
        k_lo = np.where(over, KAPPA_FLOOR, k_lo)
        p_lo = np.where(over[:, None], pf, p_lo)
        f_lo = np.where(over, ff, f_lo)
    infeasible = f_hi < -atol
    done = (np.abs(f_hi) <= atol) | infeasible
    exact_lo = np.abs(f_lo) <= atol
    p_hi = np.where(exact_lo[:, None], p_lo, p_hi)
    f_hi = np.where(exact_lo, f_lo, f_hi)
    done |= exact_lo
    for _ in range(MAX_BISECT):
        if done.all():
            break
        k_mid = 0.5 * (k_lo + k_hi)
        p_mid = _np_ramsey_argmax(tab, R, k_mid)
        f_mid = total(p_mid)
        up = f_mid >= 0
        act = ~done
        k_hi = np.where(act & up, k_mid, k_hi)
        p_hi = np.where((act & up)[:, None], p_mid, p_hi)
        f_hi = np.where(act & up, f_mid, f_hi)
        k_lo = np.where(act & ~up, k_mid, k_lo)
        p_lo = np.where((act & ~up)[:, None], p_mid, p_lo)
        f_lo = np.where(act & ~up, f_mid, f_lo)
        done |= (np.abs(f_hi) <= atol) | (k_hi - k_lo <= 1e-16)
    # the multiplier path can jump across pieces: finish on the price segment
    jump = ~infeasible & (np.abs(f_hi) > atol)
    if jump.any():
        a_, b_ = p_lo.copy(), p_hi.copy()
        for _ in range(MAX_BISECT):
            mid = 0.5 * (a_ + b_)
            fm = total(mid)
            up = fm >= 0
            b_ = np.where((jump & up)[:, None], mid, b_)
            a_ = np.where((jump & ~up)[:, None], mid, a_)
            if np.all(np.abs(total(b_))[jump] <= atol):
                break
        p_hi = np.where(jump[:, None], b_, p_hi)
    return np.where(infeasible[:, None], np.nan, p_hi)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _lp_best(c2, c1, c0, L, H):
    if L > H:
        return np.nan, -np.inf
    if c2 < 0.0:
        v = -c1 / (2.0 * c2)
        if v < L:
            v = L
        elif v > H:
            v = H
    elif c1 <= 0.0:
        v = L
    else:
        v = H
    val = (c2 * v + c1) * v + c0
    if not (np.isfinite(v) and np.isfinite(val)):
        return np.nan, -np.inf
    return v, val


def _lp_margin_one(bp, W, Sa, Sl, Sal, Wr, Wrl, b, p, R, x):
    K = bp.shape[1]
    k = 0
    while k < K and bp[p, k] < x:
        k += 1
    c2 = -b * W[p, k]
    c1 = Sa[p, k] + b * Sl[p, k] - R * Wr[p]
    c0 = -Sal[p, k] + R * Wrl[p]
    return (c2 * x + c1) * x + c0


def _lp_group_max(bp, W, Sa, Sl, Sal, Wr, Wrl, b, p, R, floor):
    K = bp.shape[1]
    best_v = np.nan
    best = -np.inf
    for k in range(K + 1):
        lo = -np.inf if k == 0 else bp[p, k - 1]
        hi = np.inf if k == K else bp[p, k]
        L = lo if lo > floor else floor
        c2 = -b * W[p, k]
        c1 = Sa[p, k] + b * Sl[p, k] - R * Wr[p]
        c0 = -Sal[p, k] + R * Wrl[p]
        v, val = _lp_best(c2, c1, c0, L, hi)
        if val > best:
            best = val
            best_v = v
    return best_v, best


def _lp_max_margin(bp, W, Sa, Sl, Sal, Wr, Wrl, b, R, floor):
    G = R.shape[0]
    P = bp.shape[0]
    price = np.empty((G, P))
    value = np.empty((G, P))
    for g in range(G):
        for p in range(P):
            v, val = _lp_group_max(bp, W, Sa, Sl, Sal, Wr, Wrl, b, p, R[g], floor)
            price[g, p] = v
            value[g, p] = val
    return price, value


def _lp_roots(c2, c1, cc):
    if c2 == 0.0:
        if c1 == 0.0:
            return np.nan, np.nan
        x = -cc / c1
        return x, x
    disc = c1 * c1 - 4.0 * c2 * cc
    if disc < 0.0:
        return np.nan, np.nan
    sq = np.sqrt(disc)
    q = -0.5 * (c1 + (sq if c1 >= 0.0 else -sq))
    r1 = q / c2
    r2 = cc / q if q != 0.0 else r1
    return r1, r2


def _lp_smallest_root(bp, W, Sa, Sl, Sal, Wr, Wrl, b, R, target):
    G = R.shape[0]
    K = bp.shape[1]
    out = np.empty(G)
    for g in range(G):
        Rg = R[g]
        t = target[g]
        best = np.inf
        for k in range(K + 1):
            lo = -np.inf if k == 0 else bp[0, k - 1]
            hi = np.inf if k == K else bp[0, k]
            L = lo if lo > 0.0 else 0.0
            if L > hi:
                continue
            c2 = -b * W[0, k]
            c1 = Sa[0, k] + b * Sl[0, k] - Rg * Wr[0]
            cc = -Sal[0, k] + Rg * Wrl[0] - t
            r1, r2 = _lp_roots(c2, c1, cc)
            slack = 1e-12 * (1.0 + abs(hi if np.isfinite(hi) else L))
            for x in (r1, r2):
                if x >= L - slack and x <= hi + slack:
                    y = min(max(x, L), hi)
                    if y < best:
                        best = y
            if np.isfinite(best):
                break
        if not np.isfinite(best):
            g0 = _lp_margin_one(bp, W, Sa, Sl, Sal, Wr, Wrl, b, 0, Rg, 0.0) - t
            if g0 > 0.0:
                c2 = -b * W[0, 0]
                c1 = Sa[0, 0] + b * Sl[0, 0] - Rg * Wr[0]
                cc = -Sal[0, 0] + Rg * Wrl[0] - t
                r1, r2 = _lp_roots(c2, c1, cc)
                neg = -np.inf
                if np.isfinite(r1) and r1 < 0.0 and r1 > neg:
                    neg = r1
                if np.isfinite(r2) and r2 < 0.0 and r2 > neg:
                    neg = r2
                best = neg
        out[g] = best if np.isfinite(best) else np.nan
    return out


def _lp_ramsey_group(bp, W, Sa, Sl, Sal, Saa, Wr, Wrl, b, p, R, kappa):
    K = bp.shape[1]
    best_v = np.nan
    best = -np.inf
    last = 0 if kappa < 0.0 else K
    for k in range(last + 1):
        lo = -np.inf if k == 0 else bp[p, k - 1]
        hi = np.inf if k == K else bp[p, k]
        L = lo if (kappa < 0.0 or lo > 0.0) else 0.0
        c2 = -0.5 * b * W[p, k] * (1.0 + kappa)
        c1 = kappa * (Sa[p, k] - R * Wr[p]) + b * Sl[p, k]
        c0 = -Sal[p, k] + R * Wrl[p] + (1.0 - kappa) * Saa[p, k] / (2.0 * b)
        v, val = _lp_best(c2, c1, c0, L, hi)
        if val > best:
            best = val
            best_v = v
    return best_v


def _lp_ramsey_prices(bp, W, Sa, Sl, Sal, Saa, Wr, Wrl, b, R, kappa, out):
    P = bp.shape[0]
    f = 0.0
    for p in range(P):
        out[p] = _lp_ramsey_group(bp, W, Sa, Sl, Sal, Saa, Wr, Wrl, b, p, R, kappa)
        f += _lp_margin_one(bp, W, Sa, Sl, Sal, Wr, Wrl, b, p, R, out[p])
    return f


def _lp_total(bp, W, Sa, Sl, Sal, Wr, Wrl, b, R, x):
    f = 0.0
    for p in range(bp.shape[0]):
        f += _lp_margin_one(bp, W, Sa, Sl, Sal, Wr, Wrl, b, p, R, x[p])
    return f


def _lp_ramsey_dynamic(bp, W, Sa, Sl, Sal, Saa, Wr, Wrl, b, R, target, atol):
    G = R.shape[0]
    P = bp.shape[0]
    out = np.empty((G, P))
    p_lo = np.empty(P)
    p_hi = np.empty(P)
    p_mid = np.empty(P)
    for g in range(G):
        Rg = R[g]
        t = target[g]
        f_hi = _lp_ramsey_prices(bp, W, Sa, Sl, Sal, Saa, Wr, Wrl, b, Rg, 1.0, p_hi) - t
        if f_hi < -atol:
            out[g, :] = np.nan
            continue
        f_lo = _lp_ramsey_prices(bp, W, Sa, Sl, Sal, Saa, Wr, Wrl, b, Rg, 0.0, p_lo) - t
        k_lo = 0.0
        k_hi = 1.0
        if abs(f_lo) <= atol:
            out[g, :] = p_lo
            continue
        if f_lo > 0.0:
            p_hi[:] = p_lo
            f_hi = f_lo
            k_hi = 0.0
            k_lo = KAPPA_FLOOR
            f_lo = _lp_ramsey_prices(bp, W, Sa, Sl, Sal, Saa, Wr, Wrl, b, Rg, k_lo, p_lo) - t
        it = 0
        while abs(f_hi) > atol and k_hi - k_lo > 1e-16 and it < MAX_BISECT:
            k_mid = 0.5 * (k_lo + k_hi)
            f_mid = _lp_ramsey_prices(bp, W, Sa, Sl, Sal, Saa, Wr, Wrl, b, Rg, k_mid, p_mid) - t
            if f_mid >= 0.0:
                k_hi = k_mid
                f_hi = f_mid
                p_hi[:] = p_mid
            else:
                k_lo = k_mid
                f_lo = f_mid
                p_lo[:] = p_mid
            it += 1
        if abs(f_hi) > atol:
            # multiplier path jumped across pieces: bisect along the price segment
            for _ in range(MAX_BISECT):
                for p in range(P):
                    p_mid[p] = 0.5 * (p_lo[p] + p_hi[p])
                f_mid = _lp_total(bp, W, Sa, Sl, Sal, Wr, Wrl, b, Rg, p_mid) - t
                if f_mid >= 0.0:
                    p_hi[:] = p_mid
                    f_hi = f_mid
                else:
                    p_lo[:] = p_mid
                if abs(f_hi) <= atol:
                    break
        out[g, :] = p_hi
    return out


def _lp_margin_at(bp, W, Sa, Sl, Sal, Wr, Wrl, b, R, price):
    G, P = price.shape
    out = np.empty((G, P))
    for g in range(G):
        for p in range(P):
            out[g, p] = _lp_margin_one(bp, W, Sa, Sl, Sal, Wr, Wrl, b, p, R[g], price[g, p])
    return out


if HAVE_NUMBA:
    _jit = numba.njit(cache=True)
    _lp_best = _jit(_lp_best)
    _lp_margin_one = _jit(_lp_margin_one)
    _lp_group_max = _jit(_lp_group_max)
    _lp_max_margin = _jit(_lp_max_margin)
    _lp_roots = _jit(_lp_roots)
    _lp_smallest_root = _jit(_lp_smallest_root)
    _lp_ramsey_group = _jit(_lp_ramsey_group)
    _lp_ramsey_prices = _jit(_lp_ramsey_prices)
    _lp_total = _jit(_lp_total)
    _lp_ramsey_dynamic = _jit(_lp_ramsey_dynamic)
    _lp_margin_at = _jit(_lp_margin_at)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

_backend = "numba" if HAVE_NUMBA and not _DISABLED else "numpy"


def backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _backend = name


def _parts(tab):
    return tab.bp, tab.W, tab.Sa, tab.Sl, tab.Sal


def max_margin(tab: TermTable, R, floor: float = 0.0):
    """Per-group maximizing price and maximum margin over prices >= floor."""
    R = np.ascontiguousarray(np.atleast_1d(R), dtype=float)
    if _backend == "numba":
        return _lp_max_margin(*_parts(tab), tab.Wr, tab.Wrl, tab.b, R, float(floor))
    return _np_max_margin(tab, R, floor)


def margin_at(tab: TermTable, R, price):
    """Per-group margin at the given (G, P) prices."""
    R = np.ascontiguousarray(np.atleast_1d(R), dtype=float)
    price = np.ascontiguousarray(np.atleast_2d(price), dtype=float)
    if _backend == "numba":
        return _lp_margin_at(*_parts(tab), tab.Wr, tab.Wrl, tab.b, R, price)
    return _np_margin_at(tab, R, price)


def smallest_root(tab: TermTable, R, target):
    """Smallest nonnegative single-group price with margin equal to ``target``."""
    R = np.ascontiguousarray(np.atleast_1d(R), dtype=float)
    target = np.ascontiguousarray(np.broadcast_to(target, R.shape), dtype=float)
    if _backend == "numba":
        return _lp_smallest_root(*_parts(tab), tab.Wr, tab.Wrl, tab.b, R, target)
    return _np_smallest_root(tab, R, target)


def ramsey_dynamic(tab: TermTable, R, target, atol: float):
    """Ramsey per-group prices whose total margin equals ``target`` (NaN rows if infeasible)."""
    R = np.ascontiguousarray(np.atleast_1d(R), dtype=float)
    target = np.ascontiguousarray(np.broadcast_to(target, R.shape), dtype=float)
    if _backend == "numba":
        return _lp_ramsey_dynamic(*_parts(tab), tab.Saa, tab.Wr, tab.Wrl, tab.b, R, target, float(atol))
    return _np_ramsey_dynamic(tab, R, target, float(atol))
