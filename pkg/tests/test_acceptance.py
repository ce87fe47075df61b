"""One test per acceptance criterion; each prints a PASS/FAIL line."""
import subprocess
import sys
import time
import warnings

import numpy as np
import pytest

from deathspiral import analysis as an
from deathspiral.adoption import bass_eta, bass_eta_inv
from deathspiral.dynamics import ExogenousInput, OutcomeKind, simulate
from deathspiral.errors import Infeasible, NegativeConnectionChargeWarning
from deathspiral.io import bundled
from deathspiral.longrun import compounding_path, sweep_connection_charge
from deathspiral.market import expected_retail_surplus, max_margin_value, theta_sharp
from deathspiral.tariff import TariffPolicy, apply_policy, ramsey_flat, ramsey_two_part
from conftest import ACCEPTANCE_LINES, random_setup, toy_model
from deathspiral.adoption import AdoptionModel


def verdict(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


@pytest.fixture(scope="module")
def coned():
    return bundled("coned_2015")


def _policy(rng):
    k = int(rng.integers(0, 4))
    if k == 0:
        return TariffPolicy.ramsey_flat()
    if k == 1:
        return TariffPolicy.ramsey_dynamic()
    if k == 2:
        return TariffPolicy.ramsey_two_part()
    return TariffPolicy.fixed_a(float(rng.uniform(0, 1)), dynamic=bool(rng.integers(0, 2)))


def test_c1_break_even_exactness(coned):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst, returned, draws = 0.0, 0, 1000
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NegativeConnectionChargeWarning)
        for i in range(draws):
            if i % 10 == 0:
                model, am = coned.model, coned.adoption
                theta = coned.defaults["theta"] * float(rng.uniform(0.5, 1.2))
            else:
                model, am, theta, _ = random_setup(rng)
            R = float(rng.uniform(0, 1)) * am.market_size
            pol = _policy(rng)
            try:
                t = apply_policy(pol, model, theta, R)
            except Infeasible:
                continue
            returned += 1
            worst = max(worst, abs(expected_retail_surplus(model, t, theta, R)) / max(theta, 1.0))
    dt = time.perf_counter() - t0
    verdict(1, worst <= 1e-9 and dt < 10,
            f"max |rs|/max(theta,1) = {worst:.2e} over {returned} returned tariffs ({draws} draws), {dt:.1f}s")


def test_c2_prediction_matches_simulation():
    rng = np.random.default_rng(102)
    policies = [TariffPolicy.ramsey_flat(), TariffPolicy.ramsey_dynamic()]
    t0 = time.perf_counter()
    agree = total = spirals = 0
    while total < 100:
        model, am, theta, xi = random_setup(rng)
        pol = policies[total % 2]
        v = an.predict_death_spiral(pol, theta, xi, 0.0, model, am)
        if not v.exact:
            continue
        tr = simulate(0.0, pol, [ExogenousInput(theta, xi)], 5000, None, model, am)
        total += 1
        spirals += v.spiral
        agree += v.spiral == (tr.outcome.kind is OutcomeKind.DEATH_SPIRAL)
    dt = time.perf_counter() - t0
    verdict(2, agree == 100 and dt < 60, f"{agree}/100 verdicts match simulation ({spirals} spirals), {dt:.1f}s")


def test_c3_two_part_converges_to_potential_at_zero(coned):
    rng = np.random.default_rng(103)
    t0 = time.perf_counter()
    pol = TariffPolicy.ramsey_two_part()
    worst_gap = worst_price = 0.0
    cases = [(coned.model, coned.adoption, coned.defaults["theta"], coned.defaults["xi"])]
    cases += [random_setup(rng) for _ in range(3)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NegativeConnectionChargeWarning)
        for model, am, theta, xi in cases:
            p0 = float(an.potential_values(pol, theta, xi, [0.0], model, am)[0])
            ref = apply_policy(pol, model, theta, 0.0).volumetric_price
            for R0 in rng.uniform(0, p0, 20):
                tr = simulate(float(R0), pol, [ExogenousInput(theta, xi)], 2000, None, model, am)
                worst_gap = max(worst_gap, abs(tr.outcome.capacity - p0) / am.market_size
                                if tr.outcome.kind is OutcomeKind.CONVERGED else np.inf)
                for s in tr.states:
                    worst_price = max(worst_price, float(np.max(np.abs(s.tariff.volumetric_price - ref))))
    dt = time.perf_counter() - t0
    verdict(3, worst_gap <= 1e-4 and worst_price <= 1e-12 and dt < 10,
            f"max |R* - p(0)|/R_MS = {worst_gap:.1e}, max price drift = {worst_price:.1e}, "
            f"{len(cases)} calibrations x 20 starts, {dt:.1f}s")


def test_c4_critical_charge_never_infeasible():
    rng = np.random.default_rng(104)
    t0 = time.perf_counter()
    failures = runs = 0
    for _ in range(50):
        model, am, theta, xi = random_setup(rng)
        A = an.critical_connection_charge(theta, am.market_size, True, model)
        pol = TariffPolicy.fixed_a(A)
        for R0 in np.linspace(0, am.market_size, 32):
            tr = simulate(float(R0), pol, [ExogenousInput(theta, xi)], 1000, None, model, am)
            runs += 1
            failures += tr.outcome.kind is OutcomeKind.DEATH_SPIRAL
    dt = time.perf_counter() - t0
    verdict(4, failures == 0 and dt < 60, f"{failures} infeasible trajectories out of {runs}, {dt:.1f}s")


def test_c5_monotonicity_in_theta():
    rng = np.random.default_rng(105)
    t0 = time.perf_counter()
    violations = checks = 0
    pol = TariffPolicy.ramsey_flat()
    for _ in range(20):
        model, am, theta, xi = random_setup(rng)
        top = float(max_margin_value(model, 0.0, True)[0])
        thetas = np.linspace(0.0, top, 32)
        crit = np.array([an.critical_adoption_level(0.0, t, True, model, am.market_size) for t in thetas])
        violations += int(np.sum(np.diff(crit) > 0))
        R = np.linspace(0, am.market_size, 32)
        P = np.array([an.potential_values(pol, t, xi, R, model, am) for t in thetas])
        d = np.diff(P, axis=0)
        ok = ~np.isnan(d)
        violations += int(np.sum(d[ok] < 0))
        checks += crit.size - 1 + int(ok.sum())
    dt = time.perf_counter() - t0
    verdict(5, violations == 0 and dt < 30, f"{violations} violations in {checks} comparisons, {dt:.1f}s")


def test_c6_toy_closed_forms():
    t0 = time.perf_counter()
    toy = toy_model()
    root = ramsey_flat(toy, 2.0, 0.0).volumetric_price[0]
    crit = an.critical_adoption_level(0.0, 2.0, True, toy, 9.0)
    ts = theta_sharp(toy, 4.0, True)
    e = (abs(root - (11 - np.sqrt(73)) / 2), abs(crit - (9 - 2 * np.sqrt(2))), abs(ts - 6.25))
    dt = time.perf_counter() - t0
    verdict(6, e[0] <= 1e-9 and e[1] <= 1e-6 and e[2] <= 1e-6 and dt < 1,
            f"errors root {e[0]:.1e}, R# {e[1]:.1e}, theta# {e[2]:.1e}, {dt * 1e3:.0f}ms")


def test_c7_bass_roundtrip():
    am = AdoptionModel(1.0)
    x = np.arange(1, 1000) / 1000.0
    err = float(np.max(np.abs(bass_eta(am, bass_eta_inv(am, x)) - x)))
    verdict(7, err <= 1e-12 and bass_eta(am, 0.0) == 0.0, f"max roundtrip error {err:.1e}, eta(0) = {bass_eta(am, 0.0)}")


def test_c8_ordering_chain():
    rng = np.random.default_rng(108)
    violations = defined = 0
    for _ in range(50):
        model, am, theta, xi = random_setup(rng)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                lc = an.limiting_connection_charge(theta, xi, True, model, am)
                lim = an.limiting_capacity(xi, True, model, am)
        except an.NoBracket:
            continue
        if lc.capacity is None:
            continue
        defined += 1
        A_sharp = an.critical_connection_charge(theta, am.market_size, True, model)
        violations += (lc.connection_charge > A_sharp) + (lc.capacity > lim.capacity)
    verdict(8, violations == 0 and defined > 0, f"{violations} violations on {defined} calibrations with all four defined")


def test_c9_coned_directional(coned):
    t0 = time.perf_counter()
    model, am = coned.model, coned.adoption
    theta, xi, A_ce = coned.defaults["theta"], coned.defaults["xi"], coned.defaults["connection_charge"]
    notes, ok = [], True

    # (a) flat potential under marginal-cost two-part pricing, stalled adoption
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NegativeConnectionChargeWarning)
        curve = an.potential_curve(TariffPolicy.ramsey_two_part(), theta, xi,
                                   np.linspace(0, am.market_size, 64), model, am)
        tr = simulate(0.0, TariffPolicy.ramsey_two_part(), [ExogenousInput(theta, xi)], 500, None, model, am)
    flat_curve = bool(np.all(curve.values == curve.values[0]))
    eq = tr.outcome.capacity
    a_ok = flat_curve and eq is not None and eq < 0.02 * am.market_size
    notes.append(f"(a) constant={flat_curve} R*={eq:.3g} kW")
    ok &= a_ok

    # (b) +10% retailer cost: flat Ramsey spirals, a small connection charge stabilizes
    th = 1.1 * theta
    pred = an.predict_death_spiral(TariffPolicy.ramsey_flat(), th, xi, 0.0, model, am).spiral
    sim = simulate(0.0, TariffPolicy.ramsey_flat(), [ExogenousInput(th, xi)], 500, None, model, am)
    lc = an.limiting_connection_charge(th, xi, True, model, am)
    stable = True
    for A in (lc.connection_charge * (1 + 1e-6), 0.5 * (lc.connection_charge + A_ce), A_ce, 1.0, 2.0):
        s = simulate(0.0, TariffPolicy.fixed_a(A), [ExogenousInput(th, xi)], 500, None, model, am)
        stable &= s.outcome.kind is not OutcomeKind.DEATH_SPIRAL
    b_ok = pred and sim.outcome.spiral and stable and lc.connection_charge < A_ce
    notes.append(f"(b) spiral={pred}/{sim.outcome} A_dagger={lc.connection_charge:.3f} stable_above={stable}")
    ok &= b_ok

    # (c) sweep: final-year capacity nonincreasing in the connection charge
    A_ramsey = ramsey_two_part(model, theta, 0.0).connection_charge
    grid = np.linspace(0.0, A_ramsey, 12)
    mono = True
    for th_path, xi_path in ((theta, xi), (compounding_path(theta, 0.02, 20), compounding_path(xi, -0.05, 20))):
        last = {}
        for r in sweep_connection_charge(grid, 20, th_path, xi_path, model, am):
            last[r.connection_charge] = r
        caps = [r.capacity for r in last.values() if not r.outcome.startswith("DeathSpiral")]
        mono &= len(caps) >= 2 and all(b <= a for a, b in zip(caps, caps[1:]))
    notes.append(f"(c) nonincreasing={mono}")
    ok &= mono
    dt = time.perf_counter() - t0
    verdict(9, ok and dt < 300, "; ".join(notes) + f", {dt:.1f}s")


def test_c10_cli_determinism(tmp_path):
    base = [sys.executable, "-m", "deathspiral.cli"]
    cmds = {
        "potential": ["potential", "--bundled", "coned_2015", "--grid", "0:2e6:64", "--summary", "{d}/s.json"],
        "simulate": ["simulate", "--bundled", "coned_2015", "--theta", "6.633e6", "--steps", "60"],
        "longrun": ["longrun", "--bundled", "coned_2015"],
        "thresholds": ["thresholds", "--bundled", "toy"],
        "sweep": ["sweep", "--bundled", "coned_2015", "--A-max", "2.5", "--points", "4", "--manifest", "{d}/m.json"],
        "calibrate": ["calibrate", "--bundled", "coned_2015"],
    }
    differing = []
    for name, args in cmds.items():
        outs = []
        for k in range(2):
            d = tmp_path / f"{name}{k}"
            d.mkdir()
            res = subprocess.run(base + [a.format(d=d) for a in args], capture_output=True, check=True)
            side = b"".join(p.read_bytes() for p in sorted(d.iterdir()))
            outs.append(res.stdout + side)
        if outs[0] != outs[1] or not outs[0]:
            differing.append(name)
    verdict(10, not differing, f"{len(cmds) - len(differing)}/{len(cmds)} commands byte-identical across runs")
