"""Independent reference computations used only by the tests.

Plain loops and dense grids; deliberately share no code with the package
kernels beyond the model containers.
"""
import math
import warnings

import numpy as np
from scipy import optimize


def margin_loop(model, prices, R):
    """E[(pi - lambda)(max(0, a - b pi) - R r)] by explicit loops."""
    prices = np.broadcast_to(np.asarray(prices, dtype=float), (model.periods_per_cycle,))
    total = 0.0
    for s in model.scenarios:
        acc = 0.0
        for n in range(model.periods_per_cycle):
            d = max(0.0, s.demand_intercept[n] - model.demand_slope * prices[n])
            acc += (prices[n] - s.wholesale_price[n]) * (d - R * s.solar_unit_output[n])
        total += s.probability * acc
    return total


def cs_loop(model, prices, A, R):
    total = 0.0
    for s in model.scenarios:
        acc = 0.0
        for n in range(model.periods_per_cycle):
            d = max(0.0, s.demand_intercept[n] - model.demand_slope * prices[n])
            acc += d * d / (2 * model.demand_slope) + prices[n] * R * s.solar_unit_output[n]
        total += s.probability * acc
    return total - model.num_consumers * A


def price_ceiling(model):
    return float(model.intercept.max() / model.demand_slope) * 1.2 + float(model.wholesale.max())


def flat_grid_margins(model, R, n=20001):
    grid = np.linspace(0.0, price_ceiling(model), n)
    vals = np.array([margin_loop(model, p, R) for p in grid])
    return grid, vals


def flat_smallest_root_scan(model, R, target, n=20001):
    """Bracket the first upward crossing of margin = target on a grid, then brentq."""
    grid, vals = flat_grid_margins(model, R, n)
    g = vals - target
    if g[0] >= 0:
        return 0.0 if g[0] == 0 else None
    hit = np.flatnonzero(g >= 0)
    if not hit.size:
        return None
    k = hit[0]
    return optimize.brentq(lambda p: margin_loop(model, p, R) - target, grid[k - 1], grid[k], xtol=1e-14)


def ramsey_dynamic_slsqp(model, theta, R, A=0.0, x0=None):
    """Maximize cs subject to break-even with SLSQP from several starts."""
    N = model.periods_per_cycle
    target = theta - model.num_consumers * A
    cons = {"type": "eq", "fun": lambda x: margin_loop(model, x, R) - target}
    hi = price_ceiling(model)
    starts = [np.full(N, v) for v in np.linspace(0.2, 0.8, 4) * hi]
    if x0 is not None:
        starts.insert(0, np.asarray(x0, dtype=float))
    best = None
    for s in starts:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = optimize.minimize(lambda x: -cs_loop(model, x, A, R), s, method="SLSQP",
                                    constraints=[cons], bounds=[(0, hi)] * N,
                                    options={"ftol": 1e-13, "maxiter": 500})
        if res.success and abs(cons["fun"](res.x)) < 1e-7 * max(1.0, abs(theta)):
            if best is None or -res.fun > -best.fun:
                best = res
    return best


def bass_closed_form(p, q, t):
    e = math.exp(-(p + q) * t)
    return (1 - e) / (1 + (q / p) * e)
