"""Closed-loop state evolution: tariff update, then one period along the new S-curve."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .adoption import AdoptionModel, bass_eta, bass_eta_inv, market_potential
from .errors import Infeasible
from .market import MarketModel, Tariff
from .tariff import TariffPolicy, apply_policy

ETA_CLAMP = 1e-12
CONVERGENCE_RUN = 3


@dataclass(frozen=True)
class SystemState:
    tariff: Tariff | None  # None only for a spiral at the initial capacity
    capacity: float


@dataclass(frozen=True)
class ExogenousInput:
    theta: float
    xi: float

    def __post_init__(self):
        if self.theta < 0 or self.xi < 0:
            raise ValueError("theta and xi must be nonnegative")


class OutcomeKind(str, Enum):
    CONVERGED = "Converged"
    DEATH_SPIRAL = "DeathSpiral"
    MAX_STEPS = "MaxStepsReached"


@dataclass(frozen=True)
class Outcome:
    kind: OutcomeKind
    capacity: float | None = None  # R* when converged
    step: int | None = None  # k0 for a death spiral

    def __str__(self) -> str:
        if self.kind is OutcomeKind.CONVERGED:
            return f"Converged({self.capacity!r})"
        if self.kind is OutcomeKind.DEATH_SPIRAL:
            return f"DeathSpiral({self.step})"
        return self.kind.value

    @property
    def spiral(self) -> bool:
        return self.kind is OutcomeKind.DEATH_SPIRAL


@dataclass
class Trajectory:
    states: list = field(default_factory=list)
    inputs: list = field(default_factory=list)
    outcome: Outcome | None = None

    @property
    def capacities(self) -> list:
        return [s.capacity for s in self.states]

    def to_csv(self, header_lines: Sequence[str] = ()) -> str:
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "theta", "xi", "connection_charge", "price_summary", "capacity_kW", "outcome"])
        last = len(self.states) - 1
        for k, st in enumerate(self.states):
            chi = self.inputs[min(k, len(self.inputs) - 1)]
            A = "" if st.tariff is None else repr(float(st.tariff.connection_charge))
            pi = "" if st.tariff is None else repr(st.tariff.price_summary())
            w.writerow([k, repr(chi.theta), repr(chi.xi), A, pi, repr(float(st.capacity)),
                        str(self.outcome) if k == last else ""])
        return buf.getvalue()


class DeathSpiralSignal:
    """Terminal marker returned by :func:`step` when no break-even tariff exists."""

    def __init__(self, error: Infeasible):
        self.error = error

    def __repr__(self):
        return f"DeathSpiralSignal({self.error})"


def advance_capacity(am: AdoptionModel, capacity: float, potential: float) -> float:
    """Capacity after one period on the S-curve with the given market potential."""
    if potential < capacity:
        return capacity
    if potential <= 0:
        return 0.0
    x = min(capacity / potential, 1.0 - ETA_CLAMP)
    return potential * bass_eta(am, bass_eta_inv(am, x) + am.step_years)


def step(state: SystemState, policy: TariffPolicy, chi: ExogenousInput,
         model: MarketModel, am: AdoptionModel):
    """One rate-setting period; returns the next state or a :class:`DeathSpiralSignal`."""
    try:
        tariff = apply_policy(policy, model, chi.theta, state.capacity)
    except Infeasible as err:
        return DeathSpiralSignal(err)
    P = market_potential(am, model, tariff, chi.xi)
    R = advance_capacity(am, state.capacity, P)
    return SystemState(tariff, min(R, am.market_size))


def simulate(R0: float, policy: TariffPolicy, chi_sequence: Sequence[ExogenousInput],
             max_steps: int, convergence_tol: float | None, model: MarketModel, am: AdoptionModel,
             stop_on_convergence: bool = True) -> Trajectory:
    """Iterate :func:`step` from ``R0``.

    ``chi_sequence[k]`` drives step k; the last entry repeats.  Convergence
    needs three consecutive moves below ``convergence_tol`` (default
    1e-9 * market size).
    """
    if not 0 <= R0 <= am.market_size:
        raise ValueError("R0 must lie in [0, market_size]")
    if not chi_sequence:
        raise ValueError("chi_sequence must be nonempty")
    tol = 1e-9 * am.market_size if convergence_tol is None else convergence_tol
    chis = list(chi_sequence)
    chi_at = lambda k: chis[min(k, len(chis) - 1)]  # noqa: E731
    traj = Trajectory(inputs=[chi_at(0)])
    try:
        T0 = apply_policy(policy, model, chi_at(0).theta, R0)
    except Infeasible:
        traj.states.append(SystemState(None, R0))
        traj.outcome = Outcome(OutcomeKind.DEATH_SPIRAL, step=0)
        return traj
    state = SystemState(T0, R0)
    traj.states.append(state)
    quiet = 0
    for k in range(max_steps):
        nxt = step(state, policy, chi_at(k), model, am)
        if isinstance(nxt, DeathSpiralSignal):
            traj.outcome = Outcome(OutcomeKind.DEATH_SPIRAL, step=k)
            return traj
        quiet = quiet + 1 if abs(nxt.capacity - state.capacity) < tol else 0
        state = nxt
        traj.states.append(state)
        traj.inputs.append(chi_at(k + 1))
        if stop_on_convergence and quiet >= CONVERGENCE_RUN:
            traj.outcome = Outcome(OutcomeKind.CONVERGED, capacity=state.capacity)
            return traj
    if quiet >= CONVERGENCE_RUN:
        traj.outcome = Outcome(OutcomeKind.CONVERGED, capacity=state.capacity)
    else:
        traj.outcome = Outcome(OutcomeKind.MAX_STEPS)
    return traj
