import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deathspiral.errors import DimensionError, NoSolution
from deathspiral.market import (
    MarketModel,
    ReferenceAnchors,
    Scenario,
    Tariff,
    TariffClass,
    calibrate_reference,
    demand,
    expected_consumer_surplus,
    expected_retail_surplus,
    expected_utility,
    max_margin_value,
    max_retail_margin,
    theta_sharp,
)
from conftest import random_market
from oracles import cs_loop, margin_loop


def test_retail_surplus_toy(toy):
    t = Tariff.flat(2.0, 1)
    assert expected_retail_surplus(toy, t, 2.0, 0.0) == pytest.approx(6.0)


def test_demand_clamps_at_zero(toy):
    t = Tariff.flat(12.0, 1)
    assert demand(toy, t, toy.scenarios[0])[0] == 0.0


def test_max_margin_toy_vertex(toy):
    tariff, value = max_retail_margin(toy, 0.0, flat=True)
    assert tariff.volumetric_price[0] == pytest.approx(5.5)
    assert value == pytest.approx(20.25)


def test_max_margin_toy_with_capacity(toy):
    # margin (p-1)(10-p-R), vertex (11-R)/2, value ((9-R)/2)^2
    for R in (1.0, 4.0, 6.5):
        _, value = max_retail_margin(toy, R, flat=True)
        assert value == pytest.approx(((9 - R) / 2) ** 2, rel=1e-12)


def test_theta_sharp_toy(toy):
    assert theta_sharp(toy, 4.0, flat=True) == pytest.approx(6.25, abs=1e-9)
    assert theta_sharp(toy, 0.0, flat=True) == pytest.approx(20.25)


def test_dynamic_margin_at_least_flat():
    rng = np.random.default_rng(11)
    for _ in range(20):
        m = random_market(rng)
        R = rng.uniform(0, 3, 5)
        assert np.all(max_margin_value(m, R, False) >= max_margin_value(m, R, True) - 1e-12)


def test_max_margin_is_convex_in_capacity():
    rng = np.random.default_rng(5)
    m = random_market(rng, S=3, N=3)
    R = np.linspace(0, 5, 101)
    v = max_margin_value(m, R, True)
    assert np.all(np.diff(v, 2) >= -1e-9)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), R=st.floats(0, 5), A=st.floats(0, 3))
def test_consumer_surplus_matches_utility_minus_payments(seed, R, A):
    rng = np.random.default_rng(seed)
    m = random_market(rng)
    prices = rng.uniform(0, 8, m.periods_per_cycle)
    t = Tariff(A, prices, TariffClass.TWO_PART)
    D = np.maximum(0, m.intercept - m.demand_slope * prices)
    paid = m.probs @ ((D - R * m.solar) @ prices)
    via_utility = expected_utility(m, t) - paid - m.num_consumers * A
    cs = expected_consumer_surplus(m, t, R)
    assert cs == pytest.approx(via_utility, rel=1e-10, abs=1e-10)
    assert cs == pytest.approx(cs_loop(m, prices, A, R), rel=1e-12, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), R=st.floats(0, 5), theta=st.floats(0, 50))
def test_retail_surplus_matches_loop(seed, R, theta):
    rng = np.random.default_rng(seed)
    m = random_market(rng)
    prices = rng.uniform(0, 8, m.periods_per_cycle)
    t = Tariff(0.3, prices, TariffClass.TWO_PART)
    expect = margin_loop(m, prices, R) + m.num_consumers * 0.3 - theta
    assert expected_retail_surplus(m, t, theta, R) == pytest.approx(expect, rel=1e-12, abs=1e-9)


def test_scenario_validation():
    with pytest.raises(DimensionError):
        Scenario(1.0, [1, 2], [1], [1, 2])
    with pytest.raises(ValueError):
        Scenario(0.0, [1], [1], [1])
    s = Scenario(1.0, [1.0], [1.0], [1.0])
    with pytest.raises(ValueError):
        s.demand_intercept[0] = 5.0


def test_model_validation():
    s = Scenario(0.5, [1.0], [1.0], [1.0])
    with pytest.raises(ValueError):
        MarketModel((s,), 1.0, 1, 1)  # probabilities sum to 0.5
    with pytest.raises(DimensionError):
        MarketModel((Scenario(1.0, [1.0], [1.0], [1.0]),), 1.0, 1, 2)
    with pytest.raises(ValueError):
        MarketModel((Scenario(1.0, [1.0], [1.0], [1.0]),), 0.0, 1, 1)


def test_tariff_class_rules():
    with pytest.raises(ValueError):
        Tariff(0.0, [1.0, 2.0], TariffClass.FLAT)
    with pytest.raises(ValueError):
        Tariff(0.5, [1.0], TariffClass.LINEAR)
    with pytest.raises(DimensionError):
        expected_consumer_surplus(MarketModel((Scenario(1.0, [1.0], [1.0], [1.0]),), 1.0, 1, 1),
                                  Tariff.flat(1.0, 2), 0.0)


def _anchors(**kw):
    base = dict(connection_charge=0.5, volumetric_price=0.2, theta=1000.0, consumer_surplus=2000.0,
                num_consumers=100, periods_per_cycle=3)
    base.update(kw)
    return ReferenceAnchors(**base)


def test_calibration_reproduces_anchors():
    anc = _anchors(solar_profile=[0.0, 1.0, 0.5], demand_shape=[1.0, 2.0, 1.5])
    m = calibrate_reference(anc)
    t = Tariff.flat(0.2, 3, 0.5)
    assert expected_retail_surplus(m, t, 1000.0, 0.0) == pytest.approx(0.0, abs=1e-6)
    assert expected_consumer_surplus(m, t, 0.0) == pytest.approx(2000.0, rel=1e-9)
    assert np.allclose(m.mean_wholesale, 0.1)


def test_calibration_single_period_closed_form():
    # one period, lambda = pi/2: D*(pi/2) = theta - M A and D^2/(2b) - M A = cs
    anc = _anchors(periods_per_cycle=1)
    m = calibrate_reference(anc)
    D = (1000.0 - 50.0) / 0.1
    b = D * D / (2 * (2000.0 + 50.0))
    assert m.demand_slope == pytest.approx(b, rel=1e-9)
    assert m.intercept[0, 0] == pytest.approx(D + b * 0.2, rel=1e-9)


def test_calibration_zero_markup_fails():
    with pytest.raises(NoSolution):
        calibrate_reference(_anchors(wholesale_profile=[0.2, 0.2, 0.2]))


def test_reference_profile_shape_errors():
    with pytest.raises(DimensionError):
        _anchors(solar_profile=[1.0, 2.0]).profiles()


def test_flat_tariff_helper():
    assert Tariff.flat(0.3, 4).class_tag is TariffClass.FLAT
    assert Tariff.flat(0.3, 4, 0.1).class_tag is TariffClass.TWO_PART
    assert math.isclose(Tariff(0.0, [1.0, 3.0], TariffClass.LINEAR).price_summary(), 2.0)
