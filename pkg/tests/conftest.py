import numpy as np
import pytest

from deathspiral.adoption import AdoptionModel
from deathspiral.market import MarketModel, Scenario, max_margin_value


def toy_model(M=1.0):
    return MarketModel((Scenario(1.0, [10.0], [1.0], [1.0]),), 1.0, M, 1, cycles_per_year=1.0)


@pytest.fixture
def toy():
    return toy_model()


@pytest.fixture
def toy_am():
    return AdoptionModel(9.0)


def random_market(rng, S=None, N=None, M=None):
    """Small random market; intercepts, wholesale prices and solar output all positive."""
    S = S or int(rng.integers(1, 4))
    N = N or int(rng.integers(1, 4))
    M = M if M is not None else float(rng.integers(1, 6))
    probs = rng.dirichlet(np.ones(S))
    probs[-1] = 1.0 - probs[:-1].sum()
    scen = tuple(
        Scenario(float(p), rng.uniform(6, 14, N), rng.uniform(0.5, 2.0, N), rng.uniform(0.2, 1.2, N))
        for p in probs
    )
    return MarketModel(scen, float(rng.uniform(0.5, 1.5)), M, N, cycles_per_year=1.0)


def random_setup(rng):
    """(model, adoption model, theta, xi) with theta inside the feasible range at R=0."""
    model = random_market(rng)
    cap = 0.8 * float(np.min(model.intercept.sum(axis=1) / model.solar.sum(axis=1)))
    am = AdoptionModel(cap, bass_p=0.03, bass_q=0.4)
    top = float(max_margin_value(model, 0.0, True)[0])
    theta = top * float(rng.uniform(0.2, 0.95))
    credit = float(model.mean_wholesale @ model.mean_solar)
    xi = credit * float(rng.uniform(0.5, 12.0))
    return model, am, theta, xi


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
