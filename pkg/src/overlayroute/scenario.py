"""YAML scenario files: network, simulation settings and controller."""
from __future__ import annotations

import hashlib
import inspect
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import yaml

from .controllers import REGISTRY
from .engine import SimConfig
from .network import FlowSpec, Link, NetworkSpec, Node, make_distribution

_DIST = {
    "oneOf": [
        {"type": "object", "additionalProperties": False, "required": ["kind", "value"],
         "properties": {"kind": {"const": "deterministic"}, "value": {"type": "integer", "minimum": 0}}},
        {"type": "object", "additionalProperties": False, "required": ["kind", "n", "p"],
         "properties": {"kind": {"const": "bernoulli"}, "n": {"type": "integer", "minimum": 0},
                        "p": {"type": "number", "minimum": 0, "maximum": 1}}},
    ]
}
_STEP = {"type": "object", "additionalProperties": False,
         "properties": {k: {"type": "number"} for k in ("scale", "power", "log_power", "loglog_power", "offset")}}
_NUMS = {"type": "array", "items": {"type": "number"}}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["network"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "network": {
            "type": "object",
            "additionalProperties": False,
            "required": ["buffer_cap", "nodes", "links", "flows"],
            "properties": {
                "buffer_cap": {"type": "integer", "minimum": 1},
                "nodes": {"type": "array", "items": {
                    "type": "object", "additionalProperties": False, "required": ["id", "role"],
                    "properties": {"id": {"type": ["string", "integer"]}, "role": {"enum": ["overlay", "underlay"]}}}},
                "links": {"type": "array", "items": {
                    "type": "object", "additionalProperties": False, "required": ["id", "tail", "head", "capacity"],
                    "properties": {"id": {"type": "string"}, "tail": {"type": ["string", "integer"]},
                                   "head": {"type": ["string", "integer"]}, "capacity": _DIST}}},
                "flows": {"type": "array", "items": {
                    "type": "object", "additionalProperties": False,
                    "required": ["id", "source", "destination", "arrivals", "route"],
                    "properties": {"id": {"type": "string"}, "source": {"type": ["string", "integer"]},
                                   "destination": {"type": ["string", "integer"]}, "arrivals": _DIST,
                                   "route": {"type": "array", "items": {"type": "string"}, "minItems": 1}}}},
                "sharing": {"type": "array", "items": {
                    "type": "object", "additionalProperties": False, "required": ["link", "flow", "mu"],
                    "properties": {"link": {"type": "string"}, "flow": {"type": "string"},
                                   "mu": {"type": "number"}}}},
                "routing": {"type": "array", "items": {
                    "type": "object", "additionalProperties": False, "required": ["flow", "link", "next", "p"],
                    "properties": {"flow": {"type": "string"}, "link": {"type": "string"},
                                   "next": {"type": "string"}, "p": {"type": "number"}}}},
                "injection_caps": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 0}},
            },
        },
        "sim": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "horizon": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "underlay_policy": {"enum": ["static-split", "longest-queue-first"]},
                "stride": {"type": "integer", "minimum": 1},
                "warmup": {"type": ["integer", "null"], "minimum": 0},
            },
        },
        "controller": {
            "type": "object",
            "additionalProperties": False,
            "required": ["id"],
            "properties": {
                "id": {"enum": sorted(REGISTRY)},
                "total_budget": {"type": "number", "exclusiveMinimum": 0},
                "price_cap": {"type": "number", "exclusiveMinimum": 0},
                "initial_price": {"type": "number", "minimum": 0},
                "prices": {"oneOf": [{"type": "number", "minimum": 0}, _NUMS]},
                "initial_budgets": _NUMS,
                "epsilon0": {"type": "number", "minimum": 0, "maximum": 1},
                "epsilon_tau": {"type": "number"},
                "smoothing": {"type": ["number", "null"], "exclusiveMinimum": 0, "maximum": 1},
                "budget_floor": {"type": "number", "minimum": 0},
                "least_price": {"type": "boolean"},
                "random_ties": {"type": "boolean"},
                "weights": {"type": "object", "additionalProperties": {"type": "number", "minimum": 0}},
                "schedules": {"type": "object", "additionalProperties": False,
                              "properties": {"preset": {"enum": ["default", "harmonic"]},
                                             "alpha": _STEP, "beta": _STEP, "gamma": _STEP}},
            },
        },
    },
}


class ScenarioError(ValueError):
    pass


def build_spec(net: dict) -> NetworkSpec:
    nodes = tuple(Node(str(n["id"]), n["role"]) for n in net["nodes"])
    links = tuple(Link(l["id"], str(l["tail"]), str(l["head"]), make_distribution(l["capacity"]))
                  for l in net["links"])
    flows = tuple(FlowSpec(f["id"], str(f["source"]), str(f["destination"]), make_distribution(f["arrivals"]),
                           tuple(f["route"])) for f in net["flows"])
    sharing = {(s["link"], s["flow"]): float(s["mu"]) for s in net.get("sharing", [])}
    # a link used by a single flow gives it the whole capacity unless stated
    users: dict[str, list[str]] = {}
    for f in flows:
        for lid in set(f.route):
            users.setdefault(lid, []).append(f.id)
    for lid, fids in users.items():
        if len(fids) == 1 and (lid, fids[0]) not in sharing:
            sharing[(lid, fids[0])] = 1.0
    routing = {(r["flow"], r["link"], r["next"]): float(r["p"]) for r in net.get("routing", [])}
    return NetworkSpec(nodes, links, flows, sharing, routing, int(net["buffer_cap"]),
                       dict(net.get("injection_caps", {})))


def _check_controller_keys(ctl: dict) -> None:
    cls = REGISTRY[ctl["id"]]
    accepted = set(inspect.signature(cls.__init__).parameters) - {"self"}
    extra = set(ctl) - accepted - {"id"}
    if extra:
        raise ScenarioError(f"controller {ctl['id']!r} does not accept {sorted(extra)}; "
                            f"accepted keys: {sorted(accepted)}")


@dataclass
class Scenario:
    name: str
    spec: NetworkSpec
    sim: dict
    controller: dict
    text: str

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    def sim_config(self, **overrides) -> SimConfig:
        kw = {"horizon": 100_000, **self.sim, "controller": self.controller.get("id", "random-split")}
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return SimConfig(**kw)

    def controller_config(self, **overrides) -> dict:
        return {**self.controller, **overrides}


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{name}: not valid YAML: {exc}") from exc
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"{name}: schema violation at {where}: {exc.message}") from exc
    ctl = dict(data.get("controller") or {"id": "random-split"})
    _check_controller_keys(ctl)
    return Scenario(data.get("name", name), build_spec(data["network"]), dict(data.get("sim") or {}), ctl, text)


BUNDLED = ("fig2", "fig5", "toy-parallel", "infeasible-b")


def bundled_scenario(name: str) -> Scenario:
    if name not in BUNDLED:
        raise ScenarioError(f"no bundled scenario {name!r}; available: {', '.join(BUNDLED)}")
    text = resources.files("overlayroute.scenarios").joinpath(f"{name}.yaml").read_text()
    return parse_scenario(text, name)


def load_scenario(path_or_name: str) -> Scenario:
    """Load a scenario file, or a bundled scenario by name."""
    p = Path(path_or_name)
    if p.is_file():
        return parse_scenario(p.read_text(), p.stem)
    if path_or_name in BUNDLED:
        return bundled_scenario(path_or_name)
    raise ScenarioError(f"{path_or_name}: no such file or bundled scenario")
