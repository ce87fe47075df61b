"""Calibration documents: JSON loading, validation with line numbers, hashing."""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .adoption import AdoptionModel
from .market import MarketModel, ReferenceAnchors, Scenario, calibrate_reference

SCHEMA_VERSION = 1

MARKET_FIELDS = {"demand_slope": float, "num_consumers": float, "periods_per_cycle": int}
ADOPTION_FIELDS = {"market_size": float}
ADOPTION_OPTIONAL = {"bass_p": float, "bass_q": float, "potential_decay": float, "step_years": float}
ANCHOR_FIELDS = {
    "connection_charge": float, "volumetric_price": float, "theta": float,
    "consumer_surplus": float, "num_consumers": float, "periods_per_cycle": int,
}
ANCHOR_OPTIONAL = ("cycles_per_year", "wholesale_profile", "solar_profile", "demand_shape",
                   "scenario_probabilities", "scenario_scales")


class ConfigError(ValueError):
    """Invalid calibration document; ``path`` names the offending field."""

    def __init__(self, path: str, message: str, line: int | None = None):
        self.path, self.line = path, line
        where = f" (line {line})" if line else ""
        super().__init__(f"{path}{where}: {message}")


def _locate(text: str, path: str) -> int | None:
    """Best-effort line number of the last key in a dotted path."""
    pos = 0
    line = None
    for part in path.split("."):
        if part.isdigit():
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(part)).search(text, pos)
        if not m:
            return line
        pos = m.start()
        line = text.count("\n", 0, pos) + 1
    return line


@dataclass
class Calibration:
    model: MarketModel
    adoption: AdoptionModel
    defaults: dict = field(default_factory=dict)
    name: str = ""
    digest: str = ""

    def header(self) -> list:
        am = self.adoption
        return [
            f"calibration={self.name} sha256={self.digest}",
            f"adoption market_size={am.market_size!r} bass_p={am.bass_p!r} bass_q={am.bass_q!r} "
            f"potential_decay={am.potential_decay!r} step_years={am.step_years!r}",
        ]

    def metadata(self) -> dict:
        am = self.adoption
        return {
            "calibration": self.name,
            "calibration_sha256": self.digest,
            "adoption_model": {"market_size": am.market_size, "bass_p": am.bass_p, "bass_q": am.bass_q,
                               "potential_decay": am.potential_decay, "step_years": am.step_years},
        }


def canonical_digest(doc: dict) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


class _Reader:
    def __init__(self, text):
        self.text = text

    def fail(self, path, msg):
        raise ConfigError(path, msg, _locate(self.text, path))

    def section(self, doc, key):
        sec = doc.get(key)
        if not isinstance(sec, dict):
            self.fail(key, "missing section" if sec is None else "must be an object")
        return sec

    def number(self, sec, prefix, key, kind=float, required=True):
        path = f"{prefix}.{key}"
        if key not in sec:
            if required:
                self.fail(path, "required field missing")
            return None
        v = sec[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(path, f"expected a number, got {type(v).__name__}")
        if kind is int:
            if float(v) != int(v):
                self.fail(path, "expected an integer")
            return int(v)
        return float(v)

    def vector(self, v, path):
        if not isinstance(v, list) or not v:
            self.fail(path, "expected a nonempty list of numbers")
        if isinstance(v[0], list):
            return [self.vector(row, f"{path}.{i}") for i, row in enumerate(v)]
        for i, x in enumerate(v):
            if isinstance(x, bool) or not isinstance(x, (int, float)):
                self.fail(f"{path}.{i}", "expected a number")
        return [float(x) for x in v]

    def build(self, what, path, fn):
        try:
            return fn()
        except (ValueError, TypeError) as err:
            self.fail(path, str(err))


def _market(r: _Reader, sec: dict) -> MarketModel:
    vals = {k: r.number(sec, "market", k, t) for k, t in MARKET_FIELDS.items()}
    cpy = r.number(sec, "market", "cycles_per_year", required=False)
    raw = sec.get("scenarios")
    if not isinstance(raw, list) or not raw:
        r.fail("market.scenarios", "expected a nonempty list of scenarios")
    scen = []
    for i, s in enumerate(raw):
        p = f"market.scenarios.{i}"
        if not isinstance(s, dict):
            r.fail(p, "expected an object")
        prob = r.number(s, p, "probability")
        vecs = {}
        for k in ("demand_intercept", "wholesale_price", "solar_unit_output"):
            if k not in s:
                r.fail(f"{p}.{k}", "required field missing")
            vecs[k] = r.vector(s[k], f"{p}.{k}")
        scen.append(r.build("scenario", p, lambda: Scenario(prob, **vecs)))
    kw = {} if cpy is None else {"cycles_per_year": cpy}
    return r.build("market", "market", lambda: MarketModel(tuple(scen), vals["demand_slope"],
                                                             vals["num_consumers"], vals["periods_per_cycle"], **kw))


def _anchors(r: _Reader, sec: dict) -> MarketModel:
    vals = {k: r.number(sec, "anchors", k, t) for k, t in ANCHOR_FIELDS.items()}
    for k in ANCHOR_OPTIONAL:
        if k in sec:
            vals[k] = (r.number(sec, "anchors", k) if k == "cycles_per_year"
                       else r.vector(sec[k], f"anchors.{k}"))
    anchors = r.build("anchors", "anchors", lambda: ReferenceAnchors(**vals))
    return r.build("anchors", "anchors", lambda: calibrate_reference(anchors))


def parse_calibration(text: str, name: str = "<string>") -> Calibration:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError("<document>", err.msg, err.lineno) from None
    r = _Reader(text)
    if not isinstance(doc, dict):
        r.fail("<document>", "top level must be an object")
    if "schema_version" not in doc:
        r.fail("schema_version", "required field missing")
    if doc["schema_version"] != SCHEMA_VERSION:
        r.fail("schema_version", f"unsupported version {doc['schema_version']!r}")
    if "market" in doc:
        model = _market(r, r.section(doc, "market"))
    elif "anchors" in doc:
        model = _anchors(r, r.section(doc, "anchors"))
    else:
        r.fail("market", "missing section (give either market or anchors)")
    ad = r.section(doc, "adoption")
    kw = {k: r.number(ad, "adoption", k) for k in ADOPTION_FIELDS}
    for k in ADOPTION_OPTIONAL:
        v = r.number(ad, "adoption", k, required=False)
        if v is not None:
            kw[k] = v
    am = r.build("adoption", "adoption", lambda: AdoptionModel(**kw))
    defaults = doc.get("defaults", {})
    if not isinstance(defaults, dict):
        r.fail("defaults", "must be an object")
    for k in defaults:
        r.number(defaults, "defaults", k)
    return Calibration(model, am, dict(defaults), doc.get("name", name), canonical_digest(doc))


def load_calibration(path) -> Calibration:
    p = Path(path)
    return parse_calibration(p.read_text(), p.stem)


def bundled(name: str) -> Calibration:
    """Load a calibration shipped with the package (``coned_2015`` or ``toy``)."""
    text = resources.files("deathspiral.data").joinpath(f"{name}.json").read_text()
    return parse_calibration(text, name)


def market_section(model: MarketModel) -> dict:
    return {
        "demand_slope": model.demand_slope,
        "num_consumers": model.num_consumers,
        "periods_per_cycle": model.periods_per_cycle,
        "cycles_per_year": model.cycles_per_year,
        "scenarios": [
            {"probability": s.probability, "demand_intercept": s.demand_intercept.tolist(),
             "wholesale_price": s.wholesale_price.tolist(), "solar_unit_output": s.solar_unit_output.tolist()}
            for s in model.scenarios
        ],
    }
