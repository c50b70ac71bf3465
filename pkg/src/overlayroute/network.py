"""Network model and one-slot underlay dynamics.

Links carry one FIFO buffer per flow. Each slot a link's random capacity is
split among its flows (static ratios or longest-queue-first), served packets
follow the flow's randomized routing matrix, and buffers are truncated at the
common cap ``C`` by dropping the newest packets.
"""
from __future__ import annotations

import bisect
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

UNDERLAY_POLICIES = ("static-split", "longest-queue-first")


@dataclass(frozen=True)
class Deterministic:
    value: int

    def __post_init__(self):
        if not isinstance(self.value, int) or self.value < 0:
            raise ValueError(f"deterministic value must be a non-negative int, got {self.value!r}")

    @property
    def mean(self) -> float:
        return float(self.value)

    @property
    def max(self) -> int:
        return self.value

    def pmf(self) -> list[float]:
        return [0.0] * self.value + [1.0]

    def sample(self, rng) -> int:
        return self.value


@dataclass(frozen=True)
class Bernoulli:
    """Sum of ``n`` independent Bernoulli(p) trials per slot."""

    n: int
    p: float

    def __post_init__(self):
        if not isinstance(self.n, int) or self.n < 0:
            raise ValueError(f"bernoulli n must be a non-negative int, got {self.n!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"bernoulli p must lie in [0, 1], got {self.p!r}")

    @property
    def mean(self) -> float:
        return self.n * self.p

    @property
    def max(self) -> int:
        return self.n if self.p > 0 else 0

    def pmf(self) -> list[float]:
        return [math.comb(self.n, k) * self.p**k * (1 - self.p) ** (self.n - k) for k in range(self.n + 1)]

    def sample(self, rng) -> int:
        p = self.p
        k = 0
        for _ in range(self.n):
            if rng.random() < p:
                k += 1
        return k


def make_distribution(desc: Mapping) -> Deterministic | Bernoulli:
    kind = desc["kind"]
    if kind == "deterministic":
        return Deterministic(int(desc["value"]))
    if kind == "bernoulli":
        return Bernoulli(int(desc["n"]), float(desc["p"]))
    raise ValueError(f"unknown distribution kind {kind!r}")


def describe_distribution(dist) -> dict:
    if isinstance(dist, Deterministic):
        return {"kind": "deterministic", "value": dist.value}
    return {"kind": "bernoulli", "n": dist.n, "p": dist.p}


@dataclass(frozen=True)
class Node:
    id: str
    role: str  # "overlay" | "underlay"


@dataclass(frozen=True)
class Link:
    id: str
    tail: str
    head: str
    capacity: Deterministic | Bernoulli


@dataclass(frozen=True)
class FlowSpec:
    id: str
    source: str
    destination: str
    arrivals: Deterministic | Bernoulli
    route: tuple[str, ...]


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    nodes: tuple[Node, ...]
    links: tuple[Link, ...]
    flows: tuple[FlowSpec, ...]
    sharing: Mapping[tuple[str, str], float]
    routing: Mapping[tuple[str, str, str], float]
    buffer_cap: int
    injection_caps: Mapping[str, int] = field(default_factory=dict)

    @cached_property
    def layout(self) -> "Layout":
        return Layout(self)

    def with_arrivals(self, arrivals: Mapping[str, Deterministic | Bernoulli]) -> "NetworkSpec":
        flows = tuple(
            FlowSpec(f.id, f.source, f.destination, arrivals.get(f.id, f.arrivals), f.route)
            for f in self.flows
        )
        return NetworkSpec(self.nodes, self.links, flows, self.sharing, self.routing,
                           self.buffer_cap, self.injection_caps)


class Layout:
    """Integer-indexed view of a ``NetworkSpec`` used by the hot loops.

    Queue ids (``qid``) enumerate the (link, flow) pairs with the link on the
    flow's route; tunnels enumerate (flow, ingress link) pairs.
    """

    def __init__(self, spec: NetworkSpec):
        self.link_ids = [l.id for l in spec.links]
        self.flow_ids = [f.id for f in spec.flows]
        self.link_index = {lid: i for i, lid in enumerate(self.link_ids)}
        self.flow_index = {fid: i for i, fid in enumerate(self.flow_ids)}
        links = {l.id: l for l in spec.links}

        self.qid = {}
        self.q_link: list[int] = []
        self.q_flow: list[int] = []
        self.flow_qids: list[list[int]] = []
        self.flow_links: list[list[int]] = []
        for fi, flow in enumerate(spec.flows):
            lidx = sorted(self.link_index[lid] for lid in set(flow.route))
            qids = []
            for li in lidx:
                q = len(self.q_link)
                self.qid[(li, fi)] = q
                self.q_link.append(li)
                self.q_flow.append(fi)
                qids.append(q)
            self.flow_qids.append(qids)
            self.flow_links.append(lidx)
        self.n_queues = len(self.q_link)
        self.n_links = len(self.link_ids)
        self.n_flows = len(self.flow_ids)

        self.link_members: list[list[int]] = [[] for _ in range(self.n_links)]
        self.link_mu: list[list[float]] = [[] for _ in range(self.n_links)]
        for q in range(self.n_queues):
            li, fi = self.q_link[q], self.q_flow[q]
            self.link_members[li].append(q)
            self.link_mu[li].append(float(spec.sharing.get((self.link_ids[li], self.flow_ids[fi]), 0.0)))
        self.link_mu_cum = []
        for mus in self.link_mu:
            acc, cum = 0.0, []
            for m in mus:
                acc += m
                cum.append(acc)
            self.link_mu_cum.append(cum)

        # routing: None for terminal queues (delivery), else (targets, cumulative probs)
        self.q_route: list[tuple[list[int], list[float]] | None] = []
        for q in range(self.n_queues):
            li, fi = self.q_link[q], self.q_flow[q]
            flow = spec.flows[fi]
            link = links[self.link_ids[li]]
            if link.head == flow.destination:
                self.q_route.append(None)
                continue
            targets, cum, acc = [], [], 0.0
            for nli in self.flow_links[fi]:
                p = spec.routing.get((flow.id, link.id, self.link_ids[nli]), 0.0)
                if p > 0:
                    acc += p
                    targets.append(self.qid[(nli, fi)])
                    cum.append(acc)
            self.q_route.append((targets, cum))

        self.tunnels: list[tuple[int, int]] = []
        self.tunnel_qid: list[int] = []
        self.flow_tunnels: list[list[int]] = []
        self.tunnel_cap: list[int] = []
        for fi, flow in enumerate(spec.flows):
            ts = []
            for li in self.flow_links[fi]:
                link = links[self.link_ids[li]]
                if link.tail == flow.source:
                    t = len(self.tunnels)
                    self.tunnels.append((fi, li))
                    self.tunnel_qid.append(self.qid[(li, fi)])
                    cap = spec.injection_caps.get(link.id)
                    if cap is None:
                        cap = math.ceil(link.capacity.mean - 1e-12)
                    self.tunnel_cap.append(int(cap))
                    ts.append(t)
            self.flow_tunnels.append(ts)
        self.n_tunnels = len(self.tunnels)
        self.tunnel_names = [f"{self.flow_ids[fi]}:{self.link_ids[li]}" for fi, li in self.tunnels]
        # links carrying at least one flow, in index order
        self.active_links = [li for li in range(self.n_links) if self.link_members[li]]
        # hot-loop tables: per active link (index, sole queue or -1, members,
        # cumulative shares); per queue the next queue, -1 to deliver, -2 to draw
        self.service_plan = [(li, self.link_members[li][0] if len(self.link_members[li]) == 1 else -1,
                              self.link_members[li], self.link_mu_cum[li]) for li in self.active_links]
        self.q_next = [-1 if r is None else (r[0][0] if len(r[0]) == 1 else -2) for r in self.q_route]
        self.capacity = [links[lid].capacity for lid in self.link_ids]
        self.arrivals = [f.arrivals for f in spec.flows]


@dataclass
class Violation:
    code: str
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> set[str]:
        return {v.code for v in self.violations}

    def __str__(self):
        if self.ok:
            return "PASS"
        return "FAIL\n" + "\n".join(f"  [{v.code}] {v.message}" for v in self.violations)


def validate(spec: NetworkSpec, tol: float = 1e-12) -> ValidationReport:
    """Check the modelling assumptions; never raises."""
    out: list[Violation] = []

    def bad(code, msg):
        out.append(Violation(code, msg))

    roles = {}
    for n in spec.nodes:
        if n.id in roles:
            bad("duplicate-node", f"node {n.id} declared twice")
        if n.role not in ("overlay", "underlay"):
            bad("node-role", f"node {n.id} has unknown role {n.role!r}")
        roles[n.id] = n.role
    links = {}
    for l in spec.links:
        if l.id in links:
            bad("duplicate-link", f"link {l.id} declared twice")
        links[l.id] = l
        for end in (l.tail, l.head):
            if end not in roles:
                bad("unknown-node", f"link {l.id} references unknown node {end}")
        if roles.get(l.tail) == "overlay" and roles.get(l.head) == "overlay":
            bad("overlay-adjacency", f"link {l.id} joins two overlay nodes")
    if spec.buffer_cap < 1:
        bad("buffer-cap", f"buffer cap must be >= 1, got {spec.buffer_cap}")

    flows = {}
    sources = {}
    for f in spec.flows:
        if f.id in flows:
            bad("duplicate-flow", f"flow {f.id} declared twice")
        flows[f.id] = f
        for end, what in ((f.source, "source"), (f.destination, "destination")):
            if roles.get(end) != "overlay":
                bad("endpoint-role", f"flow {f.id} {what} {end} is not an overlay node")
        if f.source in sources:
            bad("shared-source", f"flows {sources[f.source]} and {f.id} share source node {f.source}")
        sources.setdefault(f.source, f.id)
        unknown = [lid for lid in f.route if lid not in links]
        if unknown:
            bad("unknown-link", f"flow {f.id} route references unknown links {unknown}")
            continue
        if not any(links[lid].tail == f.source for lid in f.route):
            bad("no-ingress", f"flow {f.id} has no ingress link out of {f.source}")
        for lid in f.route:
            l = links[lid]
            if l.tail != f.source and roles.get(l.tail) == "overlay":
                bad("weak-connectivity", f"flow {f.id} re-enters the underlay from overlay node {l.tail} on {lid}")
            if l.head != f.destination and roles.get(l.head) == "overlay":
                bad("weak-connectivity", f"flow {f.id} leaves the underlay at {l.head} on {lid}")

    for (lid, fid), mu in spec.sharing.items():
        if lid not in links or fid not in flows:
            bad("unknown-ref", f"sharing entry ({lid}, {fid}) references unknown ids")
        elif mu > 0 and lid not in flows[fid].route:
            bad("ratio-off-route", f"mu[{lid},{fid}] = {mu} but {lid} is not on the route of {fid}")
        if not 0.0 <= mu <= 1.0:
            bad("ratio-range", f"mu[{lid},{fid}] = {mu} outside [0, 1]")
    used = {lid for f in flows.values() for lid in f.route if lid in links}
    for lid in sorted(used):
        total = sum(spec.sharing.get((lid, fid), 0.0) for fid in flows)
        if abs(total - 1.0) > tol:
            bad("ratio-sum", f"sharing ratios on link {lid} sum to {total!r}, expected 1")

    for (fid, lid, nid), p in spec.routing.items():
        if fid not in flows or lid not in links or nid not in links:
            bad("unknown-ref", f"routing entry ({fid}, {lid}, {nid}) references unknown ids")
            continue
        if not 0.0 <= p <= 1.0:
            bad("routing-range", f"P[{fid}]({lid},{nid}) = {p} outside [0, 1]")
        if p > 0 and (lid not in flows[fid].route or nid not in flows[fid].route):
            bad("routing-off-route", f"P[{fid}]({lid},{nid}) > 0 uses a link outside the route")
        if p > 0 and links[lid].head != links[nid].tail:
            bad("routing-adjacency", f"P[{fid}]({lid},{nid}) > 0 but {lid} does not end where {nid} starts")
    for f in flows.values():
        if any(lid not in links for lid in f.route):
            continue
        succ = {}
        for lid in set(f.route):
            if links[lid].head == f.destination:
                continue
            row = {nid: p for (ff, l, nid), p in spec.routing.items() if ff == f.id and l == lid and p > 0}
            total = sum(row.values())
            if abs(total - 1.0) > tol:
                bad("routing-sum", f"routing row P[{f.id}]({lid},.) sums to {total!r}, expected 1")
            succ[lid] = set(row)
        # every route link must be able to reach a terminal link
        reach = {lid for lid in set(f.route) if links[lid].head == f.destination}
        changed = True
        while changed:
            changed = False
            for lid, nxt in succ.items():
                if lid not in reach and nxt & reach:
                    reach.add(lid)
                    changed = True
        stuck = sorted(set(f.route) - reach)
        if stuck:
            bad("no-delivery-path", f"flow {f.id}: links {stuck} cannot reach destination {f.destination}")

    for lid, cap in spec.injection_caps.items():
        if lid not in links:
            bad("unknown-ref", f"injection cap on unknown link {lid}")
        elif cap < 0:
            bad("injection-cap", f"injection cap on {lid} is negative")
    return ValidationReport(out)


def sample_capacities(spec: NetworkSpec, rng) -> dict[str, int]:
    return {l.id: l.capacity.sample(rng) for l in spec.links}


def sample_arrivals(spec: NetworkSpec, rng) -> dict[str, int]:
    return {f.id: f.arrivals.sample(rng) for f in spec.flows}


# packet metadata: (slot the packet entered the network, tunnel index or -1 while at the source)
Packet = tuple


class QueueState:
    """Per-(link, flow) FIFO buffers plus one source buffer per flow.

    The source buffer holds packets that arrived but have not been injected
    (excess over the per-slot ingress caps, or packets withheld by a policy).
    """

    __slots__ = ("layout", "queues", "backlog")

    def __init__(self, layout: Layout):
        self.layout = layout
        self.queues = [deque() for _ in range(layout.n_queues)]
        self.backlog = [deque() for _ in range(layout.n_flows)]

    def copy(self) -> "QueueState":
        new = QueueState.__new__(QueueState)
        new.layout = self.layout
        new.queues = [deque(q) for q in self.queues]
        new.backlog = [deque(b) for b in self.backlog]
        return new

    def q(self, link_id: str, flow_id: str) -> int:
        lay = self.layout
        key = (lay.link_index[link_id], lay.flow_index[flow_id])
        qid = lay.qid.get(key)
        return 0 if qid is None else len(self.queues[qid])

    def lengths(self) -> list[int]:
        return [len(q) for q in self.queues]

    def link_totals(self) -> list[int]:
        tot = [0] * self.layout.n_links
        for qid, q in enumerate(self.queues):
            tot[self.layout.q_link[qid]] += len(q)
        return tot

    def flow_vector(self, flow: int) -> tuple[int, ...]:
        return tuple(len(self.queues[q]) for q in self.layout.flow_qids[flow])

    def total(self) -> int:
        return sum(len(q) for q in self.queues)


@dataclass
class SlotRecord:
    """What happened in one slot, per flow unless stated."""

    served: list[int]  # per queue id
    routed_in: list[int]  # per queue id: packets appended from upstream or injection
    injected: list[int]  # per flow
    delivered: list[int]  # per flow
    dropped: list[int]  # per flow, link buffers and source buffer
    delivered_by_tunnel: list[int]
    sojourns: list[tuple[int, int]]  # (flow, slots in network) per delivered packet


def _shares_static(cap, cum, rng):
    shares = [0] * len(cum)
    last = len(cum) - 1
    for _ in range(cap):
        i = bisect.bisect_right(cum, rng.random())
        # cumulative sums may fall a hair short of 1
        shares[i if i <= last else last] += 1
    return shares


def _shares_lqf(cap, members, queues):
    remaining = [len(queues[q]) for q in members]
    shares = [0] * len(members)
    for _ in range(cap):
        best = max(range(len(members)), key=lambda i: (remaining[i], -i))
        if remaining[best] == 0:
            break
        remaining[best] -= 1
        shares[best] += 1
    return shares


def admit_arrivals(state: QueueState, arrivals: Sequence[int], t: int) -> None:
    """Append external arrivals to the source buffers (in place)."""
    for f, n in enumerate(arrivals):
        if n:
            b = state.backlog[f]
            for _ in range(n):
                b.append((t, -1))


def serve_and_route(state: QueueState, capacities: Sequence[int], spec: NetworkSpec, rng,
                    underlay_policy: str = "static-split", injections: Sequence[int] | None = None,
                    t: int = 0, inplace: bool = False) -> tuple[QueueState, SlotRecord]:
    """Advance the buffers by one slot.

    ``capacities`` is indexed by link, ``injections`` by tunnel (packets moved
    from the source buffer onto the tunnel's ingress link). Service is drawn
    from the start-of-slot contents; routed and injected packets join their
    next buffer at the end of the slot, after which buffers are truncated.
    """
    if underlay_policy not in UNDERLAY_POLICIES:
        raise ValueError(f"unknown underlay policy {underlay_policy!r}")
    lay = spec.layout
    if not inplace:
        state = state.copy()
    queues = state.queues
    nq = lay.n_queues
    nf = lay.n_flows
    served = [0] * nq
    routed_in = [0] * nq
    delivered = [0] * nf
    dropped = [0] * nf
    injected = [0] * nf
    by_tunnel = [0] * lay.n_tunnels
    sojourns = []
    pending = []
    static = underlay_policy == "static-split"
    q_next, q_route, q_flow = lay.q_next, lay.q_route, lay.q_flow
    for li, solo, members, cum in lay.service_plan:
        cap = capacities[li]
        if cap <= 0:
            continue
        if solo >= 0:
            work = ((solo, cap),)
        elif static:
            work = zip(members, _shares_static(cap, cum, rng))
        else:
            work = zip(members, _shares_lqf(cap, members, queues))
        for qid, n in work:
            q = queues[qid]
            if not q or not n:
                continue
            m = len(q)
            if m < n:
                n = m
            served[qid] = n
            nxt = q_next[qid]
            if nxt >= 0:
                if n == 1:
                    pending.append((nxt, q.popleft()))
                else:
                    pending.extend([(nxt, q.popleft()) for _ in range(n)])
            elif nxt == -1:
                f = q_flow[qid]
                delivered[f] += n
                for _ in range(n):
                    born, tun = q.popleft()
                    by_tunnel[tun] += 1
                    sojourns.append((f, t - born))
            else:
                targets, cum_r = q_route[qid]
                last = len(targets) - 1
                rand = rng.random
                for _ in range(n):
                    i = bisect.bisect_right(cum_r, rand())
                    pending.append((targets[i if i <= last else last], q.popleft()))
    touched = []
    for qid, pkt in pending:
        queues[qid].append(pkt)
        if not routed_in[qid]:
            touched.append(qid)
        routed_in[qid] += 1
    if injections is not None:
        backlog = state.backlog
        for tun, n in enumerate(injections):
            if n:
                f = lay.tunnels[tun][0]
                src = backlog[f]
                if n > len(src):
                    raise ValueError(f"tunnel {lay.tunnel_names[tun]} injects {n} packets but only {len(src)} are waiting")
                qid = lay.tunnel_qid[tun]
                dst = queues[qid]
                take = src.popleft
                for _ in range(n):
                    dst.append((take()[0], tun))
                if not routed_in[qid]:
                    touched.append(qid)
                routed_in[qid] += n
                injected[f] += n
    cap_c = spec.buffer_cap
    for qid in touched:
        q = queues[qid]
        extra = len(q) - cap_c
        if extra > 0:
            for _ in range(extra):
                q.pop()
            dropped[q_flow[qid]] += extra
    for f, b in enumerate(state.backlog):
        extra = len(b) - cap_c
        if extra > 0:
            for _ in range(extra):
                b.pop()
            dropped[f] += extra
    return state, SlotRecord(served, routed_in, injected, delivered, dropped, by_tunnel, sojourns)
