"""Overlay controllers behind one decide/observe interface.

Every controller returns, each slot, the number of packets to move from each
flow's source buffer onto each of its ingress links (one entry per tunnel).
What a controller may look at is fixed by its ``scope``:

* ``"flow-queues"``: source occupancy plus the flow's own per-link queues
  (POC and the stand-alone Q-learning router);
* ``"endpoint"``: source occupancy only, plus whatever the controller counts
  itself from its own injections and delivery reports (POC-T, BP, OBP and the
  split baselines).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .budget import BudgetTuner
from .network import NetworkSpec, SlotRecord
from .pricing import PriceController
from .qlearning import QRouter, QTable
from .schedules import Step, StepSchedule


@dataclass(slots=True)
class Observation:
    t: int
    available: list[int]  # per flow: packets waiting at the source
    flow_queues: list[tuple[int, ...]] | None = None  # per flow, own link queues
    link_totals: list[int] | None = None  # per link index, all flows


class Controller:
    id = ""
    scope = "endpoint"

    def reset(self, spec: NetworkSpec, rng) -> None:
        self.spec = spec
        self.layout = spec.layout
        self.rng = rng

    def decide(self, obs: Observation) -> list[int]:
        raise NotImplementedError

    def observe(self, record: SlotRecord) -> None:
        pass

    # priced entities, for logging; None when the controller has no prices
    price_names: list[str] | None = None

    @property
    def prices(self) -> list[float] | None:
        return None

    @property
    def budgets(self) -> list[float] | None:
        return None

    def snapshot(self) -> dict:
        return {"controller": self.id}


class _InFlight:
    """Packets injected on each tunnel and not yet delivered."""

    def __init__(self, n):
        self.count = [0] * n

    def update(self, injections, delivered_by_tunnel):
        c = self.count
        for i, (a, d) in enumerate(zip(injections, delivered_by_tunnel)):
            v = c[i] + a - d
            if v < 0:
                raise RuntimeError(f"virtual queue of tunnel {i} went negative ({v}); delivery bookkeeping is broken")
            c[i] = v


class QLearningController(Controller):
    """Per-flow RVI Q-learning against a fixed price vector (no price or
    budget adaptation)."""

    id = "qlearning"
    scope = "flow-queues"

    def __init__(self, prices: float | Sequence[float] = 1.0, schedules: StepSchedule | None = None,
                 epsilon0: float = 0.2, epsilon_tau: float = 1e4, warm_start: dict[str, str] | None = None,
                 random_ties: bool = False):
        self._init_prices = prices
        self.random_ties = random_ties
        self.warm_start = warm_start or {}
        self.schedules = schedules or StepSchedule.default()
        self.epsilon0 = epsilon0
        self.epsilon_tau = epsilon_tau

    def reset(self, spec, rng):
        super().reset(spec, rng)
        lay = self.layout
        self.links = lay.active_links
        self.price_names = [lay.link_ids[li] for li in self.links]
        pos = {li: i for i, li in enumerate(self.links)}
        self.flow_pos = [[pos[li] for li in lay.flow_links[f]] for f in range(lay.n_flows)]
        # None marks a flow whose links are exactly the priced links, in order
        self.flow_pos = [None if fp == list(range(len(self.links))) else fp for fp in self.flow_pos]
        self._all_links = self.links == list(range(lay.n_links))
        self.routers = [
            QRouter([lay.tunnel_cap[t] for t in lay.flow_tunnels[f]], spec.buffer_cap,
                    alpha=self.schedules.alpha, epsilon0=self.epsilon0, epsilon_tau=self.epsilon_tau,
                    random_ties=self.random_ties)
            for f in range(lay.n_flows)
        ]
        for fid, text in self.warm_start.items():
            r = self.routers[lay.flow_index[fid]]
            r.table = QTable.from_csv(text, r.table.caps, spec.buffer_cap)
        self._prev: list[tuple | None] = [None] * lay.n_flows
        self._make_prices()

    def _make_prices(self):
        p = self._init_prices
        n = len(self.links)
        vals = [float(p)] * n if isinstance(p, (int, float)) else [float(v) for v in p]
        if len(vals) != n:
            raise ValueError(f"expected {n} prices, got {len(vals)}")
        self._prices = vals

    @property
    def prices(self):
        return self._prices

    def _learn(self, obs):
        C = self.spec.buffer_cap
        states = []
        prices = self.prices
        for f, router in enumerate(self.routers):
            a = obs.available[f]
            s = (a if a < C else C,) + obs.flow_queues[f]
            states.append(s)
            prev = self._prev[f]
            if prev is not None:
                fp = self.flow_pos[f]
                router.learn(prev[0], prev[1], s, prices if fp is None else [prices[i] for i in fp])
        return states

    def _act(self, obs, states):
        lay = self.layout
        inj = [0] * lay.n_tunnels
        for f, router in enumerate(self.routers):
            s = states[f]
            idx = router.act(s, obs.t, self.rng)
            self._prev[f] = (s, idx)
            for tun, u in zip(lay.flow_tunnels[f], router.table.actions(s)[idx]):
                inj[tun] = u
        return inj

    def decide(self, obs):
        return self._act(obs, self._learn(obs))

    def snapshot(self):
        lay = self.layout
        return {
            "controller": self.id,
            "price_names": self.price_names,
            "prices": list(self.prices),
            "budgets": None if self.budgets is None else list(self.budgets),
            "qtables": {lay.flow_ids[f]: r.table.to_csv() for f, r in enumerate(self.routers)},
        }


class POC(QLearningController):
    """Three coupled layers advanced once per slot: action values (alpha),
    link prices (beta), budget split (gamma), then the routing action."""

    id = "poc"

    def __init__(self, total_budget: float, schedules: StepSchedule | None = None,
                 price_cap: float = 100.0, initial_price: float = 1.0,
                 epsilon0: float = 0.2, epsilon_tau: float = 1e4,
                 smoothing: float | None = None, budget_floor: float = 1e-6,
                 initial_budgets: Sequence[float] | None = None, warm_start: dict[str, str] | None = None,
                 random_ties: bool = False):
        super().__init__(initial_price, schedules, epsilon0, epsilon_tau, warm_start, random_ties)
        self.total_budget = total_budget
        self.price_cap = price_cap
        self.initial_price = initial_price
        self.smoothing = smoothing
        self.budget_floor = budget_floor
        self.initial_budgets = initial_budgets

    def _make_prices(self):
        n = len(self.links)
        self.pricer = PriceController(n, self.price_cap, self.schedules.beta, self.initial_price, self.smoothing)
        self.tuner = BudgetTuner(n, self.total_budget, self.schedules.gamma, self.budget_floor,
                                 self.initial_budgets)
        self._budgets_fixed = self.schedules.gamma.scale == 0.0

    @property
    def prices(self):
        return self.pricer.prices

    @property
    def budgets(self):
        return self.tuner.budgets

    def decide(self, obs):
        states = self._learn(obs)
        old = self.pricer.prices
        totals = obs.link_totals
        if not self._all_links:
            totals = [totals[li] for li in self.links]
        self.pricer.step(totals, self.tuner.budgets, obs.t)
        if not self._budgets_fixed:
            self.tuner.step(old, obs.t)
        return self._act(obs, states)


class _TunnelSplit(Controller):
    """Work-conserving packet-by-packet tunnel assignment, respecting caps."""

    def reset(self, spec, rng):
        super().reset(spec, rng)
        self.inflight = _InFlight(self.layout.n_tunnels)
        self._last = [0] * self.layout.n_tunnels

    def observe(self, record):
        self.inflight.update(self._last, record.delivered_by_tunnel)

    def decide(self, obs):
        lay = self.layout
        inj = [0] * lay.n_tunnels
        for f, tuns in enumerate(lay.flow_tunnels):
            n = obs.available[f]
            left = {t: lay.tunnel_cap[t] for t in tuns if lay.tunnel_cap[t] > 0}
            while n > 0 and left:
                t = self._pick(f, [t for t in tuns if t in left], inj)
                inj[t] += 1
                left[t] -= 1
                if not left[t]:
                    del left[t]
                n -= 1
        self._last = inj
        return inj

    def _pick(self, flow, candidates, inj):
        raise NotImplementedError


class RandomSplit(_TunnelSplit):
    id = "random-split"

    def _pick(self, flow, candidates, inj):
        return candidates[int(self.rng.random() * len(candidates))]


class FixedSplit(_TunnelSplit):
    """Smooth weighted round robin over a flow's tunnels."""

    id = "fixed-split"

    def __init__(self, weights: dict[str, float] | None = None):
        self.weights = weights or {}

    def reset(self, spec, rng):
        super().reset(spec, rng)
        lay = self.layout
        self.w = [float(self.weights.get(name, 1.0)) for name in lay.tunnel_names]
        self.credit = [0.0] * lay.n_tunnels

    def _pick(self, flow, candidates, inj):
        w, cr = self.w, self.credit
        tot = sum(w[t] for t in candidates)
        for t in candidates:
            cr[t] += w[t]
        best = max(candidates, key=lambda t: (cr[t], -t))
        cr[best] -= tot
        return best


class POCTunnel(_TunnelSplit):
    """Tunnel-level controller: prices and budgets per tunnel, driven by the
    in-flight counts; each packet goes to the tunnel with the least
    lambda * in-flight (or least lambda with ``least_price``)."""

    id = "poc-t"

    def __init__(self, total_budget: float, schedules: StepSchedule | None = None,
                 price_cap: float = 100.0, initial_price: float = 1.0,
                 smoothing: float | None = None, budget_floor: float = 1e-6,
                 least_price: bool = False, initial_budgets: Sequence[float] | None = None):
        self.total_budget = total_budget
        self.schedules = schedules or StepSchedule.default()
        self.price_cap = price_cap
        self.initial_price = initial_price
        self.smoothing = smoothing
        self.budget_floor = budget_floor
        self.least_price = least_price
        self.initial_budgets = initial_budgets

    def reset(self, spec, rng):
        super().reset(spec, rng)
        n = self.layout.n_tunnels
        self.price_names = list(self.layout.tunnel_names)
        self.pricer = PriceController(n, self.price_cap, self.schedules.beta, self.initial_price, self.smoothing)
        self.tuner = BudgetTuner(n, self.total_budget, self.schedules.gamma, self.budget_floor,
                                 self.initial_budgets)

    @property
    def prices(self):
        return self.pricer.prices

    @property
    def budgets(self):
        return self.tuner.budgets

    def decide(self, obs):
        old = self.pricer.prices
        self.pricer.step(self.inflight.count, self.tuner.budgets, obs.t)
        self.tuner.step(old, obs.t)
        return super().decide(obs)

    def _pick(self, flow, candidates, inj):
        lam = self.pricer.prices
        q = self.inflight.count
        if self.least_price:
            cost = [lam[t] for t in candidates]
        else:
            cost = [lam[t] * (q[t] + inj[t]) for t in candidates]
        m = min(cost)
        ties = [t for t, c in zip(candidates, cost) if c == m]
        if len(ties) == 1:
            return ties[0]
        return ties[int(self.rng.random() * len(ties))]

    def snapshot(self):
        return {"controller": self.id, "price_names": self.price_names,
                "prices": list(self.prices), "budgets": list(self.budgets),
                "inflight": dict(zip(self.price_names, self.inflight.count))}


class Backpressure(Controller):
    """Weight per tunnel: source backlog minus the (identically empty) queue
    at the far overlay endpoint. Tunnels with positive weight fill up to
    their cap in tunnel order."""

    id = "bp"

    def reset(self, spec, rng):
        super().reset(spec, rng)
        self.inflight = _InFlight(self.layout.n_tunnels)
        self._last = [0] * self.layout.n_tunnels

    def observe(self, record):
        self.inflight.update(self._last, record.delivered_by_tunnel)

    def weights(self, obs) -> list[int]:
        lay = self.layout
        return [obs.available[lay.tunnels[t][0]] for t in range(lay.n_tunnels)]

    def decide(self, obs):
        lay = self.layout
        w = self.weights(obs)
        inj = [0] * lay.n_tunnels
        for f, tuns in enumerate(lay.flow_tunnels):
            left = obs.available[f]
            for t in sorted(tuns, key=lambda t: (-w[t], t)):
                if left <= 0 or w[t] <= 0:
                    break
                n = min(lay.tunnel_cap[t], left, self._limit(w[t]))
                inj[t] = n
                left -= n
        self._last = inj
        return inj

    def _limit(self, weight):
        return weight

    def snapshot(self):
        return {"controller": self.id, "inflight": dict(zip(self.layout.tunnel_names, self.inflight.count))}


class OverlayBackpressure(Backpressure):
    """Backpressure with the tunnel's in-flight packets added to the far-end
    queue: weight = backlog - in-flight, and a tunnel takes at most its weight."""

    id = "obp"

    def weights(self, obs):
        lay = self.layout
        c = self.inflight.count
        return [obs.available[lay.tunnels[t][0]] - c[t] for t in range(lay.n_tunnels)]


REGISTRY = {
    "poc": POC,
    "poc-t": POCTunnel,
    "bp": Backpressure,
    "obp": OverlayBackpressure,
    "random-split": RandomSplit,
    "fixed-split": FixedSplit,
    "qlearning": QLearningController,
}


def make_controller(cfg: dict) -> Controller:
    """Build a controller from a scenario ``controller`` section."""
    cfg = dict(cfg)
    cid = cfg.pop("id")
    if cid not in REGISTRY:
        raise ValueError(f"unknown controller id {cid!r}; expected one of {sorted(REGISTRY)}")
    if "schedules" in cfg:
        cfg["schedules"] = StepSchedule.from_dict(cfg["schedules"])
    return REGISTRY[cid](**cfg)


__all__ = ["Observation", "Controller", "QLearningController", "POC", "POCTunnel", "Backpressure",
           "OverlayBackpressure", "RandomSplit", "FixedSplit", "REGISTRY", "make_controller", "Step"]
