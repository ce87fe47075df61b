"""Bass S-curve, payback time and market potential."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .market import MarketModel, Tariff


@dataclass(frozen=True)
class AdoptionModel:
    """Bass adoption parameters and the payback-to-potential map.

    Defaults p=0.01/yr, q=0.4/yr stand in for a medium adoption rate.
    ``step_years`` is the length of one rate-setting period.
    """

    market_size: float
    bass_p: float = 0.01
    bass_q: float = 0.4
    potential_decay: float = 0.3
    step_years: float = 1.0

    def __post_init__(self):
        if not self.bass_p > 0:
            raise ValueError("bass_p must be positive")
        if not self.bass_q >= 0:
            raise ValueError("bass_q must be nonnegative")
        if not self.market_size > 0:
            raise ValueError("market_size must be positive")
        if not self.potential_decay > 0:
            raise ValueError("potential_decay must be positive")
        if not self.step_years > 0:
            raise ValueError("step_years must be positive")


def bass_eta(am: AdoptionModel, t):
    """Cumulative adopted fraction after ``t`` years."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("time must be nonnegative")
    s = am.bass_p + am.bass_q
    e = np.exp(-s * t)
    out = -np.expm1(-s * t) / (1.0 + (am.bass_q / am.bass_p) * e)
    return float(out) if out.ndim == 0 else out


def bass_eta_inv(am: AdoptionModel, x):
    """Time at which the cumulative fraction reaches ``x`` in [0, 1)."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x >= 1):
        raise DomainError("adopted fraction must lie in [0, 1)")
    s = am.bass_p + am.bass_q
    ratio = am.bass_q / am.bass_p
    # -ln((1-x)/(1+ratio*x)) written with log1p for accuracy near x=0
    out = (np.log1p(ratio * x) - np.log1p(-x)) / s
    return float(out) if out.ndim == 0 else out


def annual_credit(model: MarketModel, prices) -> np.ndarray:
    """Yearly net-metering credit per kW, cycles_per_year * E[pi' r0]; prices (..., N)."""
    return model.cycles_per_year * (np.asarray(prices, dtype=float) @ model.mean_solar)


def payback_years(model: MarketModel, tariff: Tariff, xi: float) -> float:
    if xi < 0:
        raise ValueError("xi must be nonnegative")
    if xi == 0:
        return 0.0
    credit = float(annual_credit(model, tariff.volumetric_price))
    return xi / credit if credit > 0 else math.inf


def potential_from_prices(am: AdoptionModel, model: MarketModel, prices, xi: float) -> np.ndarray:
    """Market potential for each row of volumetric prices (NaN rows propagate)."""
    credit = annual_credit(model, prices)
    if xi == 0:
        t = np.where(np.isnan(credit), np.nan, 0.0)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(credit > 0, xi / np.where(credit > 0, credit, 1.0), np.inf)
        t = np.where(np.isnan(credit), np.nan, t)
    return am.market_size * np.exp(-am.potential_decay * t)


def market_potential(am: AdoptionModel, model: MarketModel, tariff: Tariff, xi: float) -> float:
    t = payback_years(model, tariff, xi)
    if math.isinf(t):
        return 0.0
    return am.market_size * math.exp(-am.potential_decay * t)
