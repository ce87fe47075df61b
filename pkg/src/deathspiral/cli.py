"""Command-line entry point.

Every command reads one calibration document (``--config`` path or
``--bundled`` name); flags override the document's ``defaults`` section.
Exit codes: 0 success, 1 numerical failure, 2 invalid input.
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import analysis, longrun
from .dynamics import ExogenousInput, simulate
from .errors import DeathSpiralError
from .io import Calibration, ConfigError, bundled, load_calibration, market_section
from .tariff import TariffPolicy

POLICIES = ("ramsey-flat", "ramsey-dynamic", "ramsey-two-part", "fixed-a")


class UsageError(ValueError):
    pass


def _calibration(args) -> Calibration:
    if args.config and args.bundled:
        raise UsageError("give either --config or --bundled, not both")
    if args.config:
        return load_calibration(args.config)
    return bundled(args.bundled or "toy")


def _default(args, cal, name, fallback=None):
    v = getattr(args, name, None)
    if v is not None:
        return v
    if name in cal.defaults:
        return cal.defaults[name]
    if fallback is not None:
        return fallback
    raise UsageError(f"--{name.replace('_', '-')} not given and defaults.{name} missing from the calibration")


def _policy(args, cal) -> TariffPolicy:
    name = args.policy
    if name == "ramsey-flat":
        return TariffPolicy.ramsey_flat()
    if name == "ramsey-dynamic":
        return TariffPolicy.ramsey_dynamic()
    if name == "ramsey-two-part":
        return TariffPolicy.ramsey_two_part()
    A = _default(args, cal, "connection_charge")
    if A < 0:
        raise UsageError("--connection-charge must be nonnegative")
    return TariffPolicy.fixed_a(A, args.dynamic)


def parse_grid(spec: str, market_size: float) -> np.ndarray:
    """``start:stop:count`` with ``max`` allowed for stop."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise UsageError(f"grid must look like start:stop:count, got {spec!r}")
    try:
        start = float(parts[0])
        stop = market_size if parts[1] == "max" else float(parts[1])
        count = int(parts[2])
    except ValueError:
        raise UsageError(f"cannot parse grid {spec!r}") from None
    if count < 2 or not 0 <= start < stop <= market_size:
        raise UsageError("grid needs 0 <= start < stop <= market_size and count >= 2")
    return np.linspace(start, stop, count)


def _emit(text: str, path):
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def cmd_potential(args, cal):
    policy = _policy(args, cal)
    theta, xi = _default(args, cal, "theta"), _default(args, cal, "xi")
    grid = parse_grid(args.grid, cal.adoption.market_size)
    curve = analysis.potential_curve(policy, theta, xi, grid, cal.model, cal.adoption)
    head = cal.header() + [f"policy={policy.label()} theta={theta!r} xi={xi!r}"]
    _emit(curve.to_csv(head), args.output)
    if args.summary:
        try:
            def gap(R):
                return float(analysis.potential_values(policy, theta, xi, [R], cal.model, cal.adoption)[0] - R)

            rep = analysis.classify_equilibria(curve, gap).to_dict()
        except DeathSpiralError as err:
            rep = {"error": str(err)}
        meta = {**cal.metadata(), "policy": policy.label(), "theta": theta, "xi": xi}
        Path(args.summary).write_text(_dumps({"metadata": meta, **rep}))


def _paths(args, cal, n):
    theta, xi = _default(args, cal, "theta"), _default(args, cal, "xi")
    tg = _default(args, cal, "theta_growth", 0.0)
    xg = _default(args, cal, "xi_growth", 0.0)
    return longrun.compounding_path(theta, tg, n), longrun.compounding_path(xi, xg, n), tg, xg


def cmd_simulate(args, cal):
    policy = _policy(args, cal)
    steps = args.steps
    th, xs, tg, xg = _paths(args, cal, max(steps, 1))
    chis = [ExogenousInput(float(t), float(x)) for t, x in zip(th, xs)]
    traj = simulate(args.R0, policy, chis, steps, args.tol, cal.model, cal.adoption)
    head = cal.header() + [f"policy={policy.label()} R0={args.R0!r} steps={steps} "
                           f"theta_growth={tg!r} xi_growth={xg!r}"]
    _emit(traj.to_csv(head), args.output)


def cmd_longrun(args, cal):
    policy = _policy(args, cal)
    years = int(_default(args, cal, "years"))
    th, xs, tg, xg = _paths(args, cal, years)
    res = longrun.run_longrun(longrun.LongRunScenario(years, th, xs, policy, args.R0), cal.model, cal.adoption)
    sw = longrun.cumulative_social_welfare(res.records) if res.records else 0.0
    head = cal.header() + [f"policy={policy.label()} R0={args.R0!r} years={years} "
                           f"theta_growth={tg!r} xi_growth={xg!r} cumulative_sw={sw!r}"]
    _emit(longrun.records_csv(res, xs, head), args.output)


def cmd_thresholds(args, cal):
    theta, xi = _default(args, cal, "theta"), _default(args, cal, "xi")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        vals = analysis.compute_thresholds(cal.model, cal.adoption, theta, xi, flat=not args.dynamic)
    meta = {**cal.metadata(), "theta": theta, "xi": xi, "prices": "dynamic" if args.dynamic else "flat"}
    _emit(_dumps({"metadata": meta, "thresholds": vals}), args.output)


def cmd_sweep(args, cal):
    years = int(_default(args, cal, "years"))
    if args.points < 1 or args.A_max < args.A_min or args.A_min < 0:
        raise UsageError("sweep needs 0 <= A_min <= A_max and points >= 1")
    grid = np.linspace(args.A_min, args.A_max, args.points)
    th, xs, tg, xg = _paths(args, cal, years)
    rows = longrun.sweep_connection_charge(grid, years, th, xs, cal.model, cal.adoption,
                                           R0=args.R0, dynamic=args.dynamic)
    head = cal.header() + [f"years={years} theta_growth={tg!r} xi_growth={xg!r}"]
    _emit(longrun.sweep_csv(rows, head), args.output)
    if args.manifest:
        extra = {**cal.metadata(), "theta_growth": tg, "xi_growth": xg, "R0": args.R0,
                 "prices": "dynamic" if args.dynamic else "flat"}
        Path(args.manifest).write_text(longrun.sweep_manifest(grid, years, th, xs, cal.adoption, extra) + "\n")


def cmd_calibrate(args, cal):
    am = cal.adoption
    doc = {
        "schema_version": 1,
        "name": f"{cal.name}-calibrated",
        "source_sha256": cal.digest,
        "market": market_section(cal.model),
        "adoption": {"market_size": am.market_size, "bass_p": am.bass_p, "bass_q": am.bass_q,
                     "potential_decay": am.potential_decay, "step_years": am.step_years},
        "defaults": cal.defaults,
    }
    _emit(_dumps(doc), args.output)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="deathspiral", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, policy=True):
        p.add_argument("--config", help="calibration JSON file")
        p.add_argument("--bundled", choices=("toy", "coned_2015"), help="use a shipped calibration")
        p.add_argument("--theta", type=float, help="retailer fixed cost per cycle")
        p.add_argument("--xi", type=float, help="PV installation cost per kW")
        p.add_argument("--dynamic", action="store_true", help="per-period instead of flat prices")
        p.add_argument("-o", "--output", help="write the main output here instead of stdout")
        if policy:
            p.add_argument("--policy", choices=POLICIES, default="ramsey-flat")
            p.add_argument("--connection-charge", dest="connection_charge", type=float,
                           help="connection charge for --policy fixed-a")

    def growth(p):
        p.add_argument("--theta-growth", dest="theta_growth", type=float, help="yearly growth rate of theta")
        p.add_argument("--xi-growth", dest="xi_growth", type=float, help="yearly growth rate of xi")
        p.add_argument("--R0", type=float, default=0.0, help="initial installed capacity (kW)")

    p = sub.add_parser("potential", help="market potential curve and equilibria")
    common(p)
    p.add_argument("--grid", default="0:max:512", help="start:stop:count, stop may be 'max'")
    p.add_argument("--summary", help="write the equilibrium report (JSON) here")
    p.set_defaults(func=cmd_potential)

    p = sub.add_parser("simulate", help="closed-loop trajectory")
    common(p)
    growth(p)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--tol", type=float, default=None, help="convergence tolerance (kW)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("longrun", help="multi-year run with surplus accounting")
    common(p)
    growth(p)
    p.add_argument("--years", type=int)
    p.set_defaults(func=cmd_longrun)

    p = sub.add_parser("thresholds", help="critical costs, charges and capacities")
    common(p, policy=False)
    p.set_defaults(func=cmd_thresholds)

    p = sub.add_parser("sweep", help="long runs across fixed connection charges")
    common(p, policy=False)
    growth(p)
    p.add_argument("--years", type=int)
    p.add_argument("--A-min", dest="A_min", type=float, default=0.0)
    p.add_argument("--A-max", dest="A_max", type=float, required=True)
    p.add_argument("--points", type=int, default=11)
    p.add_argument("--manifest", help="write the sweep manifest (JSON) here")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("calibrate", help="resolve anchors into an explicit market section")
    common(p, policy=False)
    p.set_defaults(func=cmd_calibrate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cal = _calibration(args)
        args.func(args, cal)
    except (ConfigError, UsageError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except DeathSpiralError as err:
        print(f"numerical failure: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
