from __future__ import annotations

import pytest

from overlayroute.network import Bernoulli, Deterministic, FlowSpec, Link, NetworkSpec, Node

_RESULTS: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def acceptance():
    """Record one line per acceptance criterion for the terminal summary."""

    def record(number: int, name: str, ok: bool, detail: str = "") -> bool:
        _RESULTS[number] = (name, bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        name, ok, detail = _RESULTS[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {name}: {detail}")


def single_queue_spec(arrivals=Bernoulli(1, 0.5), capacity=Deterministic(1), buffer_cap=10,
                      egress=Deterministic(1)) -> NetworkSpec:
    """s -> u -> d with one flow; the ingress link is the only queue of interest."""
    nodes = (Node("s", "overlay"), Node("d", "overlay"), Node("u", "underlay"))
    links = (Link("in", "s", "u", capacity), Link("out", "u", "d", egress))
    flows = (FlowSpec("f", "s", "d", arrivals, ("in", "out")),)
    return NetworkSpec(nodes, links, flows, {("in", "f"): 1.0, ("out", "f"): 1.0},
                       {("f", "in", "out"): 1.0}, buffer_cap)


def two_flow_shared_spec(mu=(0.5, 0.5), capacity=Deterministic(1), buffer_cap=50) -> NetworkSpec:
    """Two flows whose first underlay hop is one shared link u -> v."""
    nodes = (Node("s1", "overlay"), Node("s2", "overlay"), Node("d1", "overlay"), Node("d2", "overlay"),
             Node("u", "underlay"), Node("v", "underlay"))
    det1 = Deterministic(1)
    links = (Link("a1", "s1", "u", det1), Link("a2", "s2", "u", det1), Link("uv", "u", "v", capacity),
             Link("v1", "v", "d1", det1), Link("v2", "v", "d2", det1))
    flows = (FlowSpec("f1", "s1", "d1", det1, ("a1", "uv", "v1")),
             FlowSpec("f2", "s2", "d2", det1, ("a2", "uv", "v2")))
    sharing = {("a1", "f1"): 1.0, ("a2", "f2"): 1.0, ("uv", "f1"): mu[0], ("uv", "f2"): mu[1],
               ("v1", "f1"): 1.0, ("v2", "f2"): 1.0}
    routing = {("f1", "a1", "uv"): 1.0, ("f1", "uv", "v1"): 1.0, ("f2", "a2", "uv"): 1.0, ("f2", "uv", "v2"): 1.0}
    return NetworkSpec(nodes, links, flows, sharing, routing, buffer_cap)


def parallel_spec(p_a=0.5, p_b=0.5, arrivals=Bernoulli(1, 0.5), buffer_cap=20) -> NetworkSpec:
    """One flow, two parallel two-hop tunnels through underlay nodes a and b."""
    det1 = Deterministic(1)
    nodes = (Node("s", "overlay"), Node("d", "overlay"), Node("a", "underlay"), Node("b", "underlay"))
    links = (Link("in_a", "s", "a", Bernoulli(1, p_a)), Link("in_b", "s", "b", Bernoulli(1, p_b)),
             Link("out_a", "a", "d", det1), Link("out_b", "b", "d", det1))
    route = ("in_a", "in_b", "out_a", "out_b")
    flows = (FlowSpec("f", "s", "d", arrivals, route),)
    sharing = {(l, "f"): 1.0 for l in route}
    routing = {("f", "in_a", "out_a"): 1.0, ("f", "in_b", "out_b"): 1.0}
    return NetworkSpec(nodes, links, flows, sharing, routing, buffer_cap, {"in_a": 1, "in_b": 1})
