"""Static analysis of the adoption map.

Everything here works on the market potential function p(R): the potential
of the tariff a policy would set at installed capacity R.  Sign changes of
p(R) - R locate equilibria, the critical level R# bounds the capacities at
which a break-even tariff exists, and bisections over theta or the
connection charge locate the spiral thresholds.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from ._solvers import bisect_predicate, bisect_root
from .adoption import AdoptionModel, potential_from_prices
from .errors import (
    AssumptionWarning,
    EmptyFeasibleRegion,
    NoBracket,
    NoFeasibleRegion,
    NoStabilizingCharge,
)
from .market import MarketModel, max_margin_value, theta_sharp
from .tariff import BREAKEVEN_RTOL, TariffPolicy, policy_prices

DEFAULT_GRID = 512
REFINE_RTOL = 1e-6


@dataclass
class PotentialCurve:
    grid: np.ndarray
    values: np.ndarray  # NaN where infeasible
    feasible: np.ndarray
    market_size: float
    critical_level: float | None = None

    def gap(self) -> np.ndarray:
        return self.values - self.grid

    def to_csv(self, header_lines=()) -> str:
        lines = [f"# {h}" for h in header_lines]
        lines.append("grid_kW,potential_kW,feasible")
        for R, p, ok in zip(self.grid, self.values, self.feasible):
            pv = repr(float(p)) if ok else ""
            lines.append(f"{float(R)!r},{pv},{int(bool(ok))}")
        return "\n".join(lines) + "\n"


@dataclass
class Equilibrium:
    capacity: float
    stable: bool
    basin_left_edge: float | None = None
    tangent: bool = False


@dataclass
class EquilibriumReport:
    equilibria: list = field(default_factory=list)
    critical_level: float = 0.0
    death_spiral_predicted_from: tuple | None = None

    @property
    def stable(self) -> list:
        return [e for e in self.equilibria if e.stable]

    def to_dict(self) -> dict:
        return {
            "equilibria": [asdict(e) for e in self.equilibria],
            "critical_level": self.critical_level,
            "death_spiral_predicted_from": (
                None if self.death_spiral_predicted_from is None else list(self.death_spiral_predicted_from)
            ),
        }


def _feasible_target(model, theta, A):
    return theta - model.num_consumers * A


def critical_adoption_level(connection_charge: float, theta: float, flat: bool,
                            model: MarketModel, capacity_max: float) -> float:
    """Largest capacity in [0, capacity_max] at which a break-even tariff exists.

    Feasibility means the maximum energy margin plus M*A covers theta.  The
    maximum margin is convex in capacity, so the feasible set is an interval
    starting at zero whenever it is nonempty.
    """
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    atol = BREAKEVEN_RTOL * max(theta, 1.0)
    target = _feasible_target(model, theta, connection_charge)

    def feasible(R):
        return bool(max_margin_value(model, R, flat)[0] >= target - atol)

    if not feasible(0.0):
        raise NoFeasibleRegion(f"theta={theta!r} cannot be recovered even at zero capacity")
    if feasible(capacity_max):
        return float(capacity_max)
    lo, _ = bisect_predicate(feasible, 0.0, float(capacity_max), rtol=1e-13, atol=1e-13 * capacity_max)
    return lo


def policy_critical_level(policy: TariffPolicy, theta: float, model: MarketModel,
                          am: AdoptionModel) -> float | None:
    """R# for the policy's class, ``market_size`` if never binding, None if nowhere feasible."""
    if not policy.has_critical_level:
        return am.market_size
    try:
        return critical_adoption_level(policy.connection_charge, theta, policy.flat, model, am.market_size)
    except NoFeasibleRegion:
        return None


def potential_values(policy: TariffPolicy, theta: float, xi: float, capacity,
                     model: MarketModel, am: AdoptionModel) -> np.ndarray:
    """p(R) for an array of capacities; NaN where the policy is infeasible."""
    prices = policy_prices(policy, model, theta, capacity)
    return potential_from_prices(am, model, prices, xi)


def potential_curve(policy: TariffPolicy, theta: float, xi: float, grid,
                    model: MarketModel, am: AdoptionModel) -> PotentialCurve:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1:
        raise ValueError("grid must be a nonempty 1-D array")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if grid[0] < 0 or grid[-1] > am.market_size * (1 + 1e-12):
        raise ValueError("grid must lie inside [0, market_size]")
    values = potential_values(policy, theta, xi, grid, model, am)
    feasible = ~np.isnan(values)
    return PotentialCurve(grid, values, feasible, am.market_size,
                          policy_critical_level(policy, theta, model, am))


def _refine(gap_fn, lo, hi, scale):
    if gap_fn is None:
        return None
    try:
        return bisect_root(gap_fn, lo, hi, xtol=REFINE_RTOL * scale)
    except ValueError:
        return None


def classify_equilibria(curve: PotentialCurve, gap_fn=None) -> EquilibriumReport:
    """Locate and classify sign changes of p(R) - R on the feasible grid.

    A crossing from above (gap + to -) is stable, from below unstable.  A zero
    touching without a sign change is flagged ``tangent``; its stability
    follows the right-hand side.  ``gap_fn``, if given, refines each crossing
    by bisection.
    """
    idx = np.flatnonzero(curve.feasible)
    if idx.size < 2:
        raise EmptyFeasibleRegion("potential curve has fewer than two feasible points")
    R = curve.grid[idx]
    d = curve.values[idx] - R
    scale = max(curve.market_size, 1.0)
    ztol = 1e-12 * scale
    sgn = np.where(np.abs(d) <= ztol, 0, np.sign(d)).astype(int)

    eqs: list[Equilibrium] = []
    last_unstable = float(R[0])
    i = 0
    n = R.size
    while i < n:
        if sgn[i] == 0:
            j = i
            while j + 1 < n and sgn[j + 1] == 0:
                j += 1
            left = sgn[i - 1] if i > 0 else 0
            right = sgn[j + 1] if j + 1 < n else 0
            stable = right <= 0
            tangent = left != 0 and left == right
            eqs.append(Equilibrium(float(R[i]), bool(stable), last_unstable if stable else None, tangent))
            if not stable:
                last_unstable = float(R[i])
            i = j + 1
            continue
        if i + 1 < n and sgn[i + 1] != 0 and sgn[i] != sgn[i + 1]:
            x0, x1, d0, d1 = R[i], R[i + 1], d[i], d[i + 1]
            x = float(x0 - d0 * (x1 - x0) / (d1 - d0))
            x = _refine(gap_fn, float(x0), float(x1), scale) or x
            stable = sgn[i] > 0
            eqs.append(Equilibrium(x, bool(stable), last_unstable if stable else None))
            if not stable:
                last_unstable = x
        i += 1

    crit = curve.critical_level if curve.critical_level is not None else float(R[-1])
    spiral_from = None
    truncated = crit < curve.market_size * (1 - 1e-12)
    if truncated and d[-1] > ztol:
        # positive gap on the left neighborhood of R#: start of the final positive run
        start = float(R[0])
        for e in eqs:
            if e.capacity < crit and not e.stable:
                start = e.capacity
            elif e.capacity < crit and e.stable:
                start = float(crit)
        stable_after = [e for e in eqs if e.stable and e.capacity >= start]
        if not stable_after:
            spiral_from = (start, float(crit))
    return EquilibriumReport(eqs, float(crit), spiral_from)


@dataclass
class SpiralVerdict:
    spiral: bool
    exact: bool  # sampled p monotone on the reachable range
    critical_level: float | None
    blocked_at: float | None = None  # first capacity >= R0 with p(R) <= R
    gap_at_critical: float | None = None

    def __bool__(self):
        return self.spiral


def predict_death_spiral(policy: TariffPolicy, theta: float, xi: float, R0: float,
                         model: MarketModel, am: AdoptionModel, n_grid: int = DEFAULT_GRID) -> SpiralVerdict:
    """Decide from p whether the trajectory from ``R0`` runs into R#.

    Spiral iff p(R) > R on the whole sampled range [R0, R#]: nothing stops the
    capacity from climbing past the critical level.  The verdict is exact when
    the sampled p is nondecreasing; otherwise it is only sufficient.
    """
    if not 0 <= R0 <= am.market_size:
        raise ValueError("R0 must lie in [0, market_size]")
    crit = policy_critical_level(policy, theta, model, am)
    if crit is None or R0 > crit:
        return SpiralVerdict(True, True, crit)
    if crit >= am.market_size:
        return SpiralVerdict(False, True, crit)
    grid = np.linspace(R0, crit, n_grid)
    p = potential_values(policy, theta, xi, grid, model, am)
    if np.isnan(p).any():
        # roundoff at the feasibility boundary: drop the unsolved tail points
        ok = ~np.isnan(p)
        grid, p = grid[ok], p[ok]
    d = p - grid
    monotone = bool(np.all(np.diff(p) >= -1e-12 * am.market_size))
    blocked = np.flatnonzero(d <= 0)
    if blocked.size:
        return SpiralVerdict(False, monotone, crit, float(grid[blocked[0]]), float(d[-1]))
    return SpiralVerdict(True, monotone, crit, None, float(d[-1]))


def reachable_equilibrium(policy: TariffPolicy, theta: float, xi: float, R0: float,
                          model: MarketModel, am: AdoptionModel, n_grid: int = DEFAULT_GRID) -> float | None:
    """Stable capacity the trajectory from ``R0`` settles at; None if it spirals."""
    verdict = predict_death_spiral(policy, theta, xi, R0, model, am, n_grid)
    if verdict.spiral:
        return None
    top = verdict.critical_level if verdict.critical_level is not None else am.market_size
    if verdict.blocked_at is None:
        # fully feasible class: march the sampled curve up to the first non-positive gap
        grid = np.linspace(R0, top, n_grid)
        d = potential_values(policy, theta, xi, grid, model, am) - grid
        hit = np.flatnonzero(d <= 0)
        if not hit.size:
            return float(top)
        k = hit[0]
    else:
        grid = np.linspace(R0, top, n_grid)
        k = int(np.searchsorted(grid, verdict.blocked_at))
        d = None
    if k == 0:
        return float(R0)

    def gap(R):
        return float(potential_values(policy, theta, xi, [R], model, am)[0] - R)

    return bisect_root(gap, float(grid[k - 1]), float(grid[k]), xtol=REFINE_RTOL * am.market_size * 1e-3)


def _theta_hi(flat: bool, model: MarketModel) -> float:
    return float(max_margin_value(model, 0.0, flat)[0])


def theta_dagger(flat: bool, xi: float, model: MarketModel, am: AdoptionModel,
                 theta_range: tuple | None = None, n_grid: int = DEFAULT_GRID) -> float:
    """Retailer cost above which the linear Ramsey policy spirals from R=0."""
    policy = TariffPolicy.ramsey_flat() if flat else TariffPolicy.ramsey_dynamic()
    lo, hi = theta_range if theta_range is not None else (0.0, _theta_hi(flat, model))

    def spirals(theta):
        return predict_death_spiral(policy, theta, xi, 0.0, model, am, n_grid).spiral

    s_lo, s_hi = spirals(lo), spirals(hi)
    if s_lo == s_hi:
        raise NoBracket(f"death-spiral verdict is {s_lo} at both theta={lo!r} and theta={hi!r}")
    if s_lo:
        raise NoBracket("spiral at the low end of the theta range but not the high end")
    a, b = bisect_predicate(spirals, lo, hi, rtol=1e-6)
    return 0.5 * (a + b)


def critical_connection_charge(theta: float, capacity_max: float, flat: bool, model: MarketModel) -> float:
    """Connection charge under which every capacity in [0, capacity_max] stays feasible."""
    ts = theta_sharp(model, capacity_max, flat)
    return max(0.0, (theta - ts) / model.num_consumers)


@dataclass
class LimitingCharge:
    connection_charge: float
    capacity: float | None


def limiting_connection_charge(theta: float, xi: float, flat: bool, model: MarketModel,
                               am: AdoptionModel, n_grid: int = DEFAULT_GRID) -> LimitingCharge:
    """Smallest fixed connection charge for which adoption from R=0 does not spiral.

    Returns the charge and the stable capacity reached just above it.
    """
    dyn = not flat

    def stable(A):
        return not predict_death_spiral(TariffPolicy.fixed_a(A, dyn), theta, xi, 0.0, model, am, n_grid).spiral

    if stable(0.0):
        A = 0.0
    else:
        # the critical charge keeps every capacity feasible, so it always stabilizes
        hi = critical_connection_charge(theta, am.market_size, flat, model)
        if hi <= 0 or not stable(hi):
            hi = theta / model.num_consumers
        if not stable(hi):
            raise NoStabilizingCharge(f"A={hi!r} still spirals")
        _, A = bisect_predicate(stable, 0.0, hi, rtol=1e-6)
    A_eval = A * (1 + 1e-6)
    R = reachable_equilibrium(TariffPolicy.fixed_a(A_eval, dyn), theta, xi, 0.0, model, am, n_grid)
    return LimitingCharge(A, R)


@dataclass
class LimitingCapacity:
    capacity: float
    theta: float
    assumptions_hold: bool
    notes: list = field(default_factory=list)


def _potential_at_critical(theta, xi, flat, model, am):
    crit = critical_adoption_level(0.0, theta, flat, model, am.market_size)
    policy = TariffPolicy.ramsey_flat() if flat else TariffPolicy.ramsey_dynamic()
    p = float(potential_values(policy, theta, xi, [crit], model, am)[0])
    return crit, p


def limiting_capacity(xi: float, flat: bool, model: MarketModel, am: AdoptionModel,
                      theta_range: tuple | None = None, n_check: int = 16) -> LimitingCapacity:
    """Capacity where the potential at the critical level meets the critical level.

    Bisects h(theta) = p(R#(theta)) - R#(theta), which increases in theta, and
    samples both monotonicity assumptions behind the characterization.
    Violations emit :class:`AssumptionWarning` and clear ``assumptions_hold``.
    """
    lo, hi = theta_range if theta_range is not None else (0.0, _theta_hi(flat, model))

    def h(theta):
        crit, p = _potential_at_critical(theta, xi, flat, model, am)
        return p - crit

    h_lo, h_hi = h(lo), h(hi)
    if h_lo > 0 or h_hi < 0:
        raise NoBracket(f"h changes no sign on [{lo!r}, {hi!r}] (h={h_lo!r}, {h_hi!r})")
    a, b = bisect_predicate(lambda t: h(t) >= 0, lo, hi, rtol=1e-6)
    theta_o = b
    crit_o, p_o = _potential_at_critical(theta_o, xi, flat, model, am)

    notes = []
    thetas = np.linspace(lo, hi, n_check)
    p_crit = np.array([_potential_at_critical(t, xi, flat, model, am)[1] for t in thetas])
    if np.any(np.diff(p_crit) < -1e-9 * am.market_size):
        notes.append("p(R#(theta)) is not increasing in theta on the sampled range")
    policy = TariffPolicy.ramsey_flat() if flat else TariffPolicy.ramsey_dynamic()
    grid = np.linspace(0.0, crit_o, 64)
    p_grid = potential_values(policy, theta_o, xi, grid, model, am)
    if np.nanmax(p_grid) > p_o + 1e-9 * am.market_size:
        notes.append("p(R#(theta)) is below p(R) for some R <= R#(theta)")
    for n in notes:
        warnings.warn(n, AssumptionWarning, stacklevel=2)
    return LimitingCapacity(crit_o, theta_o, not notes, notes)


def compute_thresholds(model: MarketModel, am: AdoptionModel, theta: float, xi: float,
                       flat: bool = True, n_grid: int = DEFAULT_GRID) -> dict:
    """All threshold quantities in one pass, each with a status flag."""
    out = {}

    def record(name, fn):
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                value = fn()
            status = "assumption-warning" if any(issubclass(w.category, AssumptionWarning) for w in caught) else "exact"
        except NoBracket:
            value, status = None, "bracket-failed"
        except (NoFeasibleRegion, NoStabilizingCharge) as err:
            value, status = None, type(err).__name__
        out[name] = {"value": value, "status": status}
        return value

    ts = record("theta_sharp", lambda: theta_sharp(model, am.market_size, flat))
    record("A_sharp", lambda: max(0.0, (theta - ts) / model.num_consumers))
    record("theta_dagger", lambda: theta_dagger(flat, xi, model, am, n_grid=n_grid))
    lim = {}

    def dagger():
        lim["res"] = limiting_connection_charge(theta, xi, flat, model, am, n_grid)
        return lim["res"].connection_charge

    record("A_dagger", dagger)
    record("R_dagger", lambda: lim["res"].capacity if "res" in lim else None)
    if "res" not in lim:
        out["R_dagger"]["status"] = out["A_dagger"]["status"]
    cap = {}

    def limit():
        cap["res"] = limiting_capacity(xi, flat, model, am)
        if not cap["res"].assumptions_hold:
            warnings.warn("; ".join(cap["res"].notes), AssumptionWarning)
        return cap["res"].capacity

    record("R_limit", limit)
    record("theta_limit", lambda: cap["res"].theta if "res" in cap else None)
    if "res" not in cap:
        out["theta_limit"]["status"] = out["R_limit"]["status"]
    else:
        out["theta_limit"]["status"] = out["R_limit"]["status"]
    return out


def report_json(curve: PotentialCurve, report: EquilibriumReport, meta: dict) -> str:
    payload = {"metadata": meta, **report.to_dict(),
               "feasible_points": int(curve.feasible.sum()), "grid_points": int(curve.grid.size)}
    return json.dumps(payload, indent=2, sort_keys=True)


def solar_retail_premium(model: MarketModel, theta: float, connection_charge: float = 0.0) -> float:
    """E[(pi - lambda)' r0] at zero capacity under the break-even flat price.

    Positive means a kWh of rooftop output is worth more at retail than at
    wholesale; the flat-policy potential is then increasing in capacity.
    """
    price = policy_prices(TariffPolicy.fixed_a(connection_charge), model, theta, [0.0])[0]
    return float(model.probs @ ((price - model.wholesale) * model.solar).sum(axis=1))
