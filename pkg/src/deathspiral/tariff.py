"""Break-even tariff policies: Ramsey flat, Ramsey dynamic, Ramsey two-part, fixed A."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _kernels
from .errors import Infeasible, NegativeConnectionChargeWarning
from .market import MarketModel, Tariff, TariffClass, energy_margin, max_margin_value

# internal break-even target; the public guarantee is 1e-9 * max(theta, 1)
BREAKEVEN_RTOL = 1e-10


class PolicyKind(str, Enum):
    RAMSEY_FLAT = "RamseyFlat"
    RAMSEY_LINEAR_DYNAMIC = "RamseyLinearDynamic"
    RAMSEY_TWO_PART = "RamseyTwoPart"
    TWO_PART_FIXED_A = "TwoPartFixedA"


@dataclass(frozen=True)
class TariffPolicy:
    kind: PolicyKind
    fixed_connection_charge: float = 0.0
    dynamic_prices: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.kind is PolicyKind.TWO_PART_FIXED_A and self.fixed_connection_charge < 0:
            raise ValueError("fixed connection charge must be nonnegative")
        if self.kind is PolicyKind.RAMSEY_LINEAR_DYNAMIC:
            object.__setattr__(self, "dynamic_prices", True)
        elif self.kind is PolicyKind.RAMSEY_FLAT:
            object.__setattr__(self, "dynamic_prices", False)

    @classmethod
    def ramsey_flat(cls):
        return cls(PolicyKind.RAMSEY_FLAT)

    @classmethod
    def ramsey_dynamic(cls):
        return cls(PolicyKind.RAMSEY_LINEAR_DYNAMIC, dynamic_prices=True)

    @classmethod
    def ramsey_two_part(cls):
        return cls(PolicyKind.RAMSEY_TWO_PART)

    @classmethod
    def fixed_a(cls, connection_charge: float, dynamic: bool = False):
        return cls(PolicyKind.TWO_PART_FIXED_A, float(connection_charge), dynamic)

    @property
    def connection_charge(self) -> float:
        """Fixed connection charge carried by the policy (0 for linear Ramsey)."""
        return self.fixed_connection_charge if self.kind is PolicyKind.TWO_PART_FIXED_A else 0.0

    @property
    def flat(self) -> bool:
        return not self.dynamic_prices

    @property
    def has_critical_level(self) -> bool:
        """Whether break-even can fail (every policy except Ramsey two-part)."""
        return self.kind is not PolicyKind.RAMSEY_TWO_PART

    def label(self) -> str:
        if self.kind is PolicyKind.TWO_PART_FIXED_A:
            mode = "dynamic" if self.dynamic_prices else "flat"
            return f"{self.kind.value}(A={self.fixed_connection_charge!r},{mode})"
        return self.kind.value


def _atol(theta: float) -> float:
    return BREAKEVEN_RTOL * max(theta, 1.0)


def _linear_tag(fixed_A: float, flat: bool) -> TariffClass:
    if fixed_A != 0:
        return TariffClass.TWO_PART
    return TariffClass.FLAT if flat else TariffClass.LINEAR


def flat_prices(model: MarketModel, theta: float, capacity, fixed_A: float = 0.0) -> np.ndarray:
    """Vectorized smallest break-even flat price over capacities; NaN where infeasible."""
    R = np.atleast_1d(np.asarray(capacity, dtype=float))
    target = theta - model.num_consumers * fixed_A
    tab = model.flat_table
    price = _kernels.smallest_root(tab, R, np.full(R.shape, target))
    missing = np.isnan(price)
    if missing.any():
        # within tolerance of the maximum margin: the vertex breaks even
        arg, val = _kernels.max_margin(tab, R[missing])
        ok = val[:, 0] >= target - _atol(theta)
        fill = np.where(ok, arg[:, 0], np.nan)
        price = price.copy()
        price[missing] = fill
    return price


def dynamic_prices(model: MarketModel, theta: float, capacity, fixed_A: float = 0.0) -> np.ndarray:
    """Vectorized Ramsey per-period prices over capacities, shape (G, N); NaN rows where infeasible."""
    R = np.atleast_1d(np.asarray(capacity, dtype=float))
    target = theta - model.num_consumers * fixed_A
    return _kernels.ramsey_dynamic(model.dynamic_table, R, np.full(R.shape, target), _atol(theta))


def _infeasible(model, theta, capacity, fixed_A, flat):
    best = float(max_margin_value(model, capacity, flat)[0])
    short = theta - model.num_consumers * fixed_A - best
    return Infeasible(
        f"no break-even {'flat' if flat else 'dynamic'} price at R={capacity!r}: "
        f"max margin {best!r} + M*A falls short of theta by {short!r}",
        shortfall=short,
    )


def ramsey_flat(model: MarketModel, theta: float, capacity: float, fixed_A: float = 0.0) -> Tariff:
    """Flat break-even tariff with the lowest volumetric price.

    Consumer surplus decreases in the flat price, so the smallest root of the
    break-even condition is the Ramsey choice.
    """
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    price = flat_prices(model, theta, capacity, fixed_A)[0]
    if np.isnan(price):
        raise _infeasible(model, theta, capacity, fixed_A, True)
    N = model.periods_per_cycle
    return Tariff(fixed_A, np.full(N, price), _linear_tag(fixed_A, True))


def ramsey_linear_dynamic(model: MarketModel, theta: float, capacity: float, fixed_A: float = 0.0) -> Tariff:
    """Per-period break-even prices maximizing consumer surplus.

    The stationarity condition is separable across periods given the Ramsey
    number k in [0, 1]: each period maximizes margin + (1 - k) * surplus.
    k = 0 is marginal-cost pricing and k = 1 the revenue-maximizing price;
    k is bisected until the retailer breaks even, taking the low-price branch.
    """
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    price = dynamic_prices(model, theta, capacity, fixed_A)[0]
    if np.isnan(price).any():
        raise _infeasible(model, theta, capacity, fixed_A, False)
    return Tariff(fixed_A, price, _linear_tag(fixed_A, False))


def ramsey_two_part(model: MarketModel, theta: float, capacity: float) -> Tariff:
    """Marginal-cost volumetric price with the connection charge absorbing the rest."""
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    pi = model.mean_wholesale.copy()
    A = (theta - energy_margin(model, pi, capacity)) / model.num_consumers
    if A < 0:
        warnings.warn(f"Ramsey two-part connection charge is negative ({A!r})",
                      NegativeConnectionChargeWarning, stacklevel=2)
    return Tariff(A, pi, TariffClass.TWO_PART)


def apply_policy(policy: TariffPolicy, model: MarketModel, theta: float, capacity: float) -> Tariff:
    kind = policy.kind
    if kind is PolicyKind.RAMSEY_FLAT:
        return ramsey_flat(model, theta, capacity)
    if kind is PolicyKind.RAMSEY_LINEAR_DYNAMIC:
        return ramsey_linear_dynamic(model, theta, capacity)
    if kind is PolicyKind.RAMSEY_TWO_PART:
        return ramsey_two_part(model, theta, capacity)
    solver = ramsey_linear_dynamic if policy.dynamic_prices else ramsey_flat
    return solver(model, theta, capacity, policy.fixed_connection_charge)


def policy_prices(policy: TariffPolicy, model: MarketModel, theta: float, capacity) -> np.ndarray:
    """Volumetric prices the policy sets at each capacity, shape (G, N); NaN rows when infeasible."""
    R = np.atleast_1d(np.asarray(capacity, dtype=float))
    N = model.periods_per_cycle
    if policy.kind is PolicyKind.RAMSEY_TWO_PART:
        return np.broadcast_to(model.mean_wholesale, (R.size, N)).copy()
    A = policy.connection_charge
    if policy.flat:
        p = flat_prices(model, theta, R, A)
        return np.repeat(p[:, None], N, axis=1)
    return dynamic_prices(model, theta, R, A)
