"""Scenario-based market environment: demand, surpluses, margins, calibration."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import optimize

from . import _kernels
from ._solvers import golden_section_min
from .errors import DimensionError, NoSolution

PROB_TOL = 1e-12


@dataclass(frozen=True)
class Scenario:
    probability: float
    demand_intercept: np.ndarray
    wholesale_price: np.ndarray
    solar_unit_output: np.ndarray

    def __post_init__(self):
        for name in ("demand_intercept", "wholesale_price", "solar_unit_output"):
            arr = np.array(getattr(self, name), dtype=float).ravel()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.demand_intercept.size
        if n < 1 or self.wholesale_price.size != n or self.solar_unit_output.size != n:
            raise DimensionError("scenario vectors must share one length N >= 1")
        if not (0.0 < self.probability <= 1.0):
            raise ValueError(f"scenario probability must lie in (0, 1], got {self.probability}")
        if np.any(self.solar_unit_output < 0) or np.any(self.demand_intercept < 0):
            raise ValueError("demand intercepts and solar output must be nonnegative")

    @property
    def periods(self) -> int:
        return self.demand_intercept.size


@dataclass(frozen=True)
class MarketModel:
    """Aggregate linear-demand market over a finite scenario set.

    ``demand_slope`` is the aggregate b in D = a - b*pi (kWh per $/kWh),
    ``num_consumers`` is M, and one billing cycle has ``periods_per_cycle``
    consumption periods.
    """

    scenarios: tuple
    demand_slope: float
    num_consumers: float
    periods_per_cycle: int
    cycles_per_year: float = 365.0

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        if not self.scenarios:
            raise ValueError("at least one scenario is required")
        if not self.demand_slope > 0:
            raise ValueError("demand_slope must be positive")
        if not self.num_consumers >= 1:
            raise ValueError("num_consumers must be >= 1")
        if not self.cycles_per_year > 0:
            raise ValueError("cycles_per_year must be positive")
        for s in self.scenarios:
            if s.periods != self.periods_per_cycle:
                raise DimensionError(
                    f"scenario has {s.periods} periods, model expects {self.periods_per_cycle}"
                )
        total = sum(s.probability for s in self.scenarios)
        if abs(total - 1.0) > PROB_TOL:
            raise ValueError(f"scenario probabilities sum to {total!r}, not 1")

    # stacked views, shape (S,) or (S, N)
    @cached_property
    def probs(self) -> np.ndarray:
        return np.array([s.probability for s in self.scenarios])

    @cached_property
    def intercept(self) -> np.ndarray:
        return np.stack([s.demand_intercept for s in self.scenarios])

    @cached_property
    def wholesale(self) -> np.ndarray:
        return np.stack([s.wholesale_price for s in self.scenarios])

    @cached_property
    def solar(self) -> np.ndarray:
        return np.stack([s.solar_unit_output for s in self.scenarios])

    @cached_property
    def mean_wholesale(self) -> np.ndarray:
        return self.probs @ self.wholesale

    @cached_property
    def mean_solar(self) -> np.ndarray:
        return self.probs @ self.solar

    @cached_property
    def flat_table(self) -> _kernels.TermTable:
        w = np.broadcast_to(self.probs[:, None], self.intercept.shape)
        flat = lambda x: x.reshape(1, -1)  # noqa: E731
        return _kernels.build_table(flat(w), flat(self.intercept), flat(self.wholesale),
                                    flat(self.solar), self.demand_slope)

    @cached_property
    def dynamic_table(self) -> _kernels.TermTable:
        w = np.broadcast_to(self.probs[:, None], self.intercept.shape)
        return _kernels.build_table(w.T, self.intercept.T, self.wholesale.T, self.solar.T,
                                    self.demand_slope)

    def table(self, flat: bool) -> _kernels.TermTable:
        return self.flat_table if flat else self.dynamic_table

    def with_slope_and_intercepts(self, slope: float, intercepts: np.ndarray) -> "MarketModel":
        scen = tuple(
            Scenario(s.probability, intercepts[i], s.wholesale_price, s.solar_unit_output)
            for i, s in enumerate(self.scenarios)
        )
        return MarketModel(scen, slope, self.num_consumers, self.periods_per_cycle, self.cycles_per_year)


class TariffClass(str, Enum):
    FLAT = "Flat"
    LINEAR = "Linear"
    TWO_PART = "TwoPart"


@dataclass(frozen=True)
class Tariff:
    """Connection charge A ($/day per consumer) plus volumetric prices pi ($/kWh)."""

    connection_charge: float
    volumetric_price: np.ndarray
    class_tag: TariffClass = TariffClass.TWO_PART

    def __post_init__(self):
        pi = np.array(self.volumetric_price, dtype=float).ravel()
        pi.setflags(write=False)
        object.__setattr__(self, "volumetric_price", pi)
        object.__setattr__(self, "class_tag", TariffClass(self.class_tag))
        if not np.all(np.isfinite(pi)):
            raise ValueError("volumetric prices must be finite")
        if self.class_tag is TariffClass.FLAT and np.ptp(pi) != 0.0:
            raise ValueError("flat tariff requires identical volumetric prices")
        if self.class_tag in (TariffClass.FLAT, TariffClass.LINEAR) and self.connection_charge != 0:
            raise ValueError(f"{self.class_tag.value} tariff cannot carry a connection charge")

    @classmethod
    def flat(cls, price: float, periods: int, connection_charge: float = 0.0) -> "Tariff":
        tag = TariffClass.FLAT if connection_charge == 0 else TariffClass.TWO_PART
        return cls(connection_charge, np.full(periods, float(price)), tag)

    @property
    def is_flat(self) -> bool:
        return bool(np.ptp(self.volumetric_price) == 0.0)

    def price_summary(self) -> float:
        """Mean volumetric price (equals the price itself for flat tariffs)."""
        return float(np.mean(self.volumetric_price))


def _check(model: MarketModel, tariff: Tariff) -> np.ndarray:
    pi = tariff.volumetric_price
    if pi.size != model.periods_per_cycle:
        raise DimensionError(
            f"tariff has {pi.size} prices, model has {model.periods_per_cycle} periods"
        )
    return pi


def demand(model: MarketModel, tariff: Tariff, scenario: Scenario) -> np.ndarray:
    pi = _check(model, tariff)
    if scenario.periods != pi.size:
        raise DimensionError("scenario length differs from tariff length")
    return np.maximum(0.0, scenario.demand_intercept - model.demand_slope * pi)


def _demand_matrix(model: MarketModel, pi: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, model.intercept - model.demand_slope * pi)


def expected_consumer_surplus(model: MarketModel, tariff: Tariff, capacity: float) -> float:
    """Expected aggregate consumer surplus in $ per billing cycle.

    Gross surplus of linear demand, D^2 / 2b per period, plus the net-metering
    credit at the retail price, minus the total connection charge.
    """
    if capacity < 0:
        raise ValueError("capacity must be nonnegative")
    pi = _check(model, tariff)
    D = _demand_matrix(model, pi)
    gross = (D * D).sum(axis=1) / (2.0 * model.demand_slope)
    credit = capacity * (model.solar @ pi)
    return float(model.probs @ (gross + credit) - model.num_consumers * tariff.connection_charge)


def expected_retail_surplus(model: MarketModel, tariff: Tariff, theta: float, capacity: float) -> float:
    if theta < 0 or capacity < 0:
        raise ValueError("theta and capacity must be nonnegative")
    pi = _check(model, tariff)
    net = _demand_matrix(model, pi) - capacity * model.solar
    margin = ((pi - model.wholesale) * net).sum(axis=1)
    return float(model.probs @ margin + model.num_consumers * tariff.connection_charge - theta)


def expected_utility(model: MarketModel, tariff: Tariff) -> float:
    """E[U] for the quadratic utility u(q) = (a q - q^2/2) / b at the induced demand."""
    pi = _check(model, tariff)
    D = _demand_matrix(model, pi)
    U = (model.intercept * D - 0.5 * D * D).sum(axis=1) / model.demand_slope
    return float(model.probs @ U)


def energy_margin(model: MarketModel, price, capacity: float) -> float:
    """Expected (pi - lambda)' (D - R r0) for a volumetric price vector."""
    pi = np.broadcast_to(np.asarray(price, dtype=float), (model.periods_per_cycle,))
    net = _demand_matrix(model, pi) - capacity * model.solar
    return float(model.probs @ ((pi - model.wholesale) * net).sum(axis=1))


def max_retail_margin(model: MarketModel, capacity: float, flat: bool) -> tuple[Tariff, float]:
    """Maximize the expected energy margin over nonnegative volumetric prices.

    Returns the maximizing zero-connection-charge tariff and the margin.  The
    objective is piecewise quadratic in each price with kinks where demand
    hits zero; every piece is maximized in closed form.
    """
    if capacity < 0:
        raise ValueError("capacity must be nonnegative")
    price, value = _kernels.max_margin(model.table(flat), [capacity])
    N = model.periods_per_cycle
    if flat:
        tariff = Tariff.flat(price[0, 0], N)
    else:
        tariff = Tariff(0.0, price[0], TariffClass.LINEAR)
    return tariff, float(value[0].sum())


def max_margin_value(model: MarketModel, capacity, flat: bool) -> np.ndarray:
    """Vectorized maximum margin over an array of capacities."""
    _, value = _kernels.max_margin(model.table(flat), np.atleast_1d(capacity))
    return value.sum(axis=1)


def theta_sharp(model: MarketModel, capacity_max: float, flat: bool) -> float:
    """Smallest, over capacities in [0, capacity_max], of the maximum energy margin.

    The maximum margin is convex in capacity (a pointwise max of affine maps),
    so a golden-section search suffices.
    """
    if capacity_max < 0:
        raise ValueError("capacity_max must be nonnegative")
    f = lambda R: float(max_margin_value(model, R, flat)[0])  # noqa: E731
    if capacity_max == 0:
        return f(0.0)
    scale = max(abs(f(0.0)), 1.0)
    _, fmin = golden_section_min(f, 0.0, capacity_max, xtol=1e-12 * capacity_max, ftol=1e-12 * scale)
    return fmin


@dataclass(frozen=True)
class ReferenceAnchors:
    """Headline tariff/cost anchors used to reconstruct a demand model.

    ``demand_shape`` gives the relative per-period intercept profile (scaled to
    mean one); ``scenario_scales`` multiplies the intercept per scenario.
    Wholesale and solar profiles are per-scenario lists; a single profile is
    shared by all scenarios.  If no wholesale profile is given, a flat price
    of half the reference volumetric price is used.
    """

    connection_charge: float
    volumetric_price: float
    theta: float
    consumer_surplus: float
    num_consumers: float
    periods_per_cycle: int
    cycles_per_year: float = 365.0
    wholesale_profile: Sequence | None = None
    solar_profile: Sequence | None = None
    demand_shape: Sequence | None = None
    scenario_probabilities: Sequence = (1.0,)
    scenario_scales: Sequence | None = None

    def profiles(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        N = int(self.periods_per_cycle)
        probs = np.asarray(self.scenario_probabilities, dtype=float)
        S = probs.size

        def per_scenario(x, default):
            if x is None:
                arr = np.full((S, N), default)
            else:
                arr = np.asarray(x, dtype=float)
                if arr.ndim == 1:
                    arr = np.broadcast_to(arr, (S, arr.size))
            if arr.shape != (S, N):
                raise DimensionError(f"profile shape {arr.shape} does not match ({S}, {N})")
            return np.array(arr)

        lam = per_scenario(self.wholesale_profile, 0.5 * self.volumetric_price)
        solar = per_scenario(self.solar_profile, 0.0)
        shape = np.ones(N) if self.demand_shape is None else np.asarray(self.demand_shape, dtype=float)
        if shape.shape != (N,):
            raise DimensionError("demand_shape must have one entry per period")
        shape = shape / shape.mean()
        scales = np.ones(S) if self.scenario_scales is None else np.asarray(self.scenario_scales, dtype=float)
        return probs, lam, solar, shape, scales


def calibrate_reference(anchors: ReferenceAnchors) -> MarketModel:
    """Solve for the demand slope and mean intercept matching the anchors.

    The reference tariff must break even at zero installed capacity and yield
    the anchored consumer surplus.  Solved as a 2x2 root problem in
    (log intercept, log slope), which keeps both positive.
    """
    probs, lam, solar, shape, scales = anchors.profiles()
    N = int(anchors.periods_per_cycle)
    pi = np.full(N, float(anchors.volumetric_price))
    base = scales[:, None] * shape[None, :]
    M = float(anchors.num_consumers)

    def build(abar, b):
        scen = tuple(Scenario(p, abar * base[i], lam[i], solar[i]) for i, p in enumerate(probs))
        return MarketModel(scen, b, M, N, anchors.cycles_per_year)

    tariff = Tariff.flat(anchors.volumetric_price, N, anchors.connection_charge)
    cs_scale = max(abs(anchors.consumer_surplus), 1.0)
    th_scale = max(abs(anchors.theta), 1.0)

    def residual(z):
        abar, b = np.exp(z)
        m = build(abar, b)
        return np.array([
            expected_retail_surplus(m, tariff, anchors.theta, 0.0) / th_scale,
            (expected_consumer_surplus(m, tariff, 0.0) - anchors.consumer_surplus) / cs_scale,
        ])

    markup = float(probs @ ((pi - lam) * base).sum(axis=1))
    markup_slope = float(probs @ ((pi - lam) * pi).sum(axis=1))
    if abs(markup) < 1e-14 and abs(markup_slope) < 1e-14:
        raise NoSolution("zero retail markup: break-even condition does not pin the demand model")
    need = anchors.theta - M * anchors.connection_charge
    # single-period guess: margin x*D = need, D^2/(2b) = cs
    x = float(np.mean(pi - lam)) or 1e-3
    D0 = abs(need / x) if need != 0 else 1.0
    b0 = D0 * D0 / (2.0 * cs_scale) / N if cs_scale > 0 else 1.0
    a0 = (D0 / N + b0 * anchors.volumetric_price)
    z0 = np.log([max(a0, 1e-12), max(b0, 1e-12)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sol = optimize.root(residual, z0, method="hybr", options={"xtol": 1e-14})
    if not sol.success or np.max(np.abs(residual(sol.x))) > 1e-8:
        sol = optimize.root(residual, z0, method="lm", options={"xtol": 1e-15, "ftol": 1e-15})
    res = residual(sol.x)
    if not np.all(np.isfinite(res)) or np.max(np.abs(res)) > 1e-8:
        raise NoSolution(f"calibration did not converge (residuals {res.tolist()})")
    abar, b = np.exp(sol.x)
    if not (b > 0 and math.isfinite(b)):
        raise NoSolution("calibrated demand slope is not positive")
    return build(abar, b)


__all__ = [
    "Scenario",
    "MarketModel",
    "Tariff",
    "TariffClass",
    "ReferenceAnchors",
    "demand",
    "expected_consumer_surplus",
    "expected_retail_surplus",
    "expected_utility",
    "energy_margin",
    "max_retail_margin",
    "max_margin_value",
    "theta_sharp",
    "calibrate_reference",
]
