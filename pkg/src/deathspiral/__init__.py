"""Retail tariffs, rooftop solar adoption and the utility death spiral."""
from .adoption import AdoptionModel, bass_eta, bass_eta_inv, market_potential, payback_years
from .analysis import (
    classify_equilibria,
    compute_thresholds,
    critical_adoption_level,
    critical_connection_charge,
    limiting_capacity,
    limiting_connection_charge,
    potential_curve,
    predict_death_spiral,
    theta_dagger,
)
from .dynamics import ExogenousInput, SystemState, simulate, step
from .errors import (
    AssumptionWarning,
    DeathSpiralError,
    EmptyFeasibleRegion,
    Infeasible,
    NegativeConnectionChargeWarning,
    NoBracket,
    NoFeasibleRegion,
    NoSolution,
    NoStabilizingCharge,
)
from .longrun import LongRunScenario, cumulative_social_welfare, run_longrun, sweep_connection_charge
from .market import (
    MarketModel,
    ReferenceAnchors,
    Scenario,
    Tariff,
    TariffClass,
    calibrate_reference,
    expected_consumer_surplus,
    expected_retail_surplus,
    max_retail_margin,
    theta_sharp,
)
from .tariff import TariffPolicy, apply_policy, ramsey_flat, ramsey_linear_dynamic, ramsey_two_part

__version__ = "0.1.0"
