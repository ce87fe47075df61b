"""Multi-year scenarios: cost drift, connection-charge sweeps, surplus accounting."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .adoption import AdoptionModel
from .dynamics import ExogenousInput, Outcome, simulate
from .market import MarketModel, Tariff, expected_consumer_surplus
from .tariff import TariffPolicy


def compounding_path(start: float, rate: float, years: int) -> np.ndarray:
    """start * (1 + rate)**k for k = 0..years-1."""
    return start * (1.0 + rate) ** np.arange(years)


@dataclass
class LongRunScenario:
    years: int
    theta_path: np.ndarray
    xi_path: np.ndarray
    policy: TariffPolicy
    R0: float = 0.0

    def __post_init__(self):
        self.theta_path = np.asarray(self.theta_path, dtype=float)
        self.xi_path = np.asarray(self.xi_path, dtype=float)
        if self.years < 1:
            raise ValueError("years must be >= 1")
        if self.theta_path.shape != (self.years,) or self.xi_path.shape != (self.years,):
            raise ValueError("theta_path and xi_path must both have length `years`")
        if np.any(self.theta_path < 0) or np.any(self.xi_path < 0):
            raise ValueError("cost paths must be nonnegative")
        if self.R0 < 0:
            raise ValueError("R0 must be nonnegative")

    @classmethod
    def constant(cls, years, theta, xi, policy, R0=0.0):
        return cls(years, np.full(years, float(theta)), np.full(years, float(xi)), policy, R0)

    def inputs(self) -> list:
        return [ExogenousInput(float(t), float(x)) for t, x in zip(self.theta_path, self.xi_path)]


@dataclass
class YearRecord:
    year: int
    capacity: float  # end of year
    new_capacity: float
    tariff: Tariff  # set at the start of the year
    consumer_surplus: float  # $/year
    installation_cost: float  # new_capacity * xi of that year


@dataclass
class LongRunResult:
    records: list = field(default_factory=list)
    outcome: Outcome | None = None


def run_longrun(scn: LongRunScenario, model: MarketModel, am: AdoptionModel) -> LongRunResult:
    """Year-by-year adoption under the scenario's cost paths.

    Year k uses the tariff set from the capacity at its start and ends at the
    capacity reached after one period; its surplus is evaluated at that tariff
    and the end-of-year capacity.  A death spiral truncates the records.
    """
    traj = simulate(scn.R0, scn.policy, scn.inputs(), scn.years, None, model, am,
                    stop_on_convergence=False)
    states = traj.states
    out = LongRunResult(outcome=traj.outcome)
    # states[k+1] holds the tariff of year k and the capacity at its end
    for k in range(len(states) - 1):
        prev, cur = states[k], states[k + 1]
        dR = cur.capacity - prev.capacity
        cs = expected_consumer_surplus(model, cur.tariff, cur.capacity) * model.cycles_per_year
        out.records.append(YearRecord(k, cur.capacity, dR, cur.tariff, cs, dR * float(scn.xi_path[k])))
    return out


def cumulative_social_welfare(records) -> float:
    """Total consumer surplus minus PV purchases, each increment at its purchase-year price."""
    if not records:
        raise ValueError("records must be nonempty")
    return float(sum(r.consumer_surplus for r in records) - sum(r.installation_cost for r in records))


@dataclass
class SweepRow:
    connection_charge: float
    year: int
    capacity: float
    consumer_surplus: float
    cum_cs: float
    cum_sw: float
    outcome: str


def sweep_connection_charge(A_grid, years: int, theta, xi, model: MarketModel, am: AdoptionModel,
                            R0: float = 0.0, dynamic: bool = False) -> list:
    """Long runs under TwoPartFixedA for each charge; ``theta``/``xi`` are scalars or yearly paths."""
    A_grid = [float(a) for a in A_grid]
    if not A_grid:
        raise ValueError("A_grid must be nonempty")
    if any(b < a for a, b in zip(A_grid, A_grid[1:])):
        raise ValueError("A_grid must be ascending")
    th = np.broadcast_to(np.asarray(theta, dtype=float), (years,))
    xs = np.broadcast_to(np.asarray(xi, dtype=float), (years,))
    rows = []
    for A in A_grid:
        scn = LongRunScenario(years, th, xs, TariffPolicy.fixed_a(A, dynamic), R0)
        res = run_longrun(scn, model, am)
        cum_cs = cum_cost = 0.0
        last = len(res.records) - 1
        for k, r in enumerate(res.records):
            cum_cs += r.consumer_surplus
            cum_cost += r.installation_cost
            rows.append(SweepRow(A, r.year, r.capacity, r.consumer_surplus, cum_cs, cum_cs - cum_cost,
                                 str(res.outcome) if k == last else ""))
        if not res.records:
            rows.append(SweepRow(A, 0, R0, float("nan"), 0.0, 0.0, str(res.outcome)))
    return rows


SWEEP_COLUMNS = ("A", "year", "capacity_kW", "cs_dollars", "cum_cs", "cum_sw", "outcome")


def sweep_csv(rows, header_lines=()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([repr(r.connection_charge), r.year, repr(r.capacity), repr(r.consumer_surplus),
                    repr(r.cum_cs), repr(r.cum_sw), r.outcome])
    return buf.getvalue()


def records_csv(result: LongRunResult, xi_path, header_lines=()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["year", "xi", "connection_charge", "price_summary", "capacity_kW", "new_capacity_kW",
                "cs_dollars", "installation_cost", "outcome"])
    last = len(result.records) - 1
    for k, r in enumerate(result.records):
        w.writerow([r.year, repr(float(xi_path[r.year])), repr(float(r.tariff.connection_charge)),
                    repr(r.tariff.price_summary()), repr(r.capacity), repr(r.new_capacity),
                    repr(r.consumer_surplus), repr(r.installation_cost),
                    str(result.outcome) if k == last else ""])
    if not result.records:
        w.writerow(["", "", "", "", "", "", "", "", str(result.outcome)])
    return buf.getvalue()


def sweep_manifest(A_grid, years, theta, xi, am: AdoptionModel, extra: dict | None = None) -> str:
    meta = {
        "A_grid": [float(a) for a in A_grid],
        "years": int(years),
        "theta": np.asarray(theta, dtype=float).tolist(),
        "xi": np.asarray(xi, dtype=float).tolist(),
        "adoption_model": {
            "market_size": am.market_size, "bass_p": am.bass_p, "bass_q": am.bass_q,
            "potential_decay": am.potential_decay, "step_years": am.step_years,
        },
    }
    if extra:
        meta.update(extra)
    return json.dumps(meta, indent=2, sort_keys=True)
