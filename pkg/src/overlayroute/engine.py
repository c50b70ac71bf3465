"""Slot loop, metric accumulation and result tables."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import random
from operator import add, itemgetter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict, field

import numpy as np

from . import __version__
from .controllers import Controller, Observation, make_controller
from .network import (UNDERLAY_POLICIES, Bernoulli, Deterministic, NetworkSpec, QueueState,
                      admit_arrivals, serve_and_route, validate)

# fixed offsets of the per-purpose random streams under one seed
STREAMS = {"arrivals": 0, "capacities": 1, "underlay": 2, "controller": 3}


def make_streams(seed: int, run: int = 0) -> dict[str, random.Random]:
    out = {}
    for name, off in STREAMS.items():
        state = np.random.SeedSequence([int(seed), int(run), off]).generate_state(4)
        out[name] = random.Random(int.from_bytes(state.tobytes(), "little"))
    return out


@dataclass
class SimConfig:
    horizon: int
    seed: int = 0
    underlay_policy: str = "static-split"
    controller: str = "random-split"
    stride: int = 100
    warmup: int | None = None  # None -> 10% of the horizon
    run: int = 0  # stream offset, used by sweeps

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.warmup is None:
            self.warmup = self.horizon // 10
        if not 0 <= self.warmup < self.horizon:
            raise ValueError("warmup must lie in [0, horizon)")
        if self.underlay_policy not in UNDERLAY_POLICIES:
            raise ValueError(f"unknown underlay policy {self.underlay_policy!r}")


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


@dataclass
class MetricsLog:
    link_ids: list[str]
    flow_ids: list[str]
    price_names: list[str] | None
    horizon: int
    warmup: int
    stride: int
    # post-warmup running sums
    link_queue_sum: list[int] = field(default_factory=list)
    flow_queue_sum: list[int] = field(default_factory=list)  # links + source buffer
    flow_link_queue_sum: list[int] = field(default_factory=list)  # links only
    arrivals: list[int] = field(default_factory=list)
    injected: list[int] = field(default_factory=list)
    delivered: list[int] = field(default_factory=list)
    dropped: list[int] = field(default_factory=list)
    delay_sum: list[int] = field(default_factory=list)
    delay_max: list[int] = field(default_factory=list)
    # whole-run counters
    dropped_total: list[int] = field(default_factory=list)
    tail_price_min: float | None = None  # min over the last 10% of slots of max price
    tail_price_max: float | None = None
    tail_price_mean: list[float] | None = None  # per priced entity, last 10% of slots
    timeseries: list[list] = field(default_factory=list)
    final_prices: list[float] | None = None
    final_budgets: list[float] | None = None
    controller_state: dict = field(default_factory=dict)

    @property
    def measured(self) -> int:
        return self.horizon - self.warmup

    def avg_link_queue(self) -> list[float]:
        return [s / self.measured for s in self.link_queue_sum]

    def avg_flow_queue(self) -> list[float]:
        return [s / self.measured for s in self.flow_queue_sum]

    def avg_queue(self) -> float:
        return sum(self.flow_queue_sum) / self.measured

    def avg_delay(self) -> float:
        n = sum(self.delivered)
        return sum(self.delay_sum) / n if n else 0.0

    def flow_delay(self) -> list[float]:
        return [s / n if n else 0.0 for s, n in zip(self.delay_sum, self.delivered)]

    def throughput(self) -> list[float]:
        return [d / self.measured for d in self.delivered]

    def little_check(self) -> list[dict]:
        """Per flow: time-averaged queue (links plus source buffer) against
        mean sojourn times delivery rate, over the post-warmup window."""
        out = []
        for f, fid in enumerate(self.flow_ids):
            L = self.flow_queue_sum[f] / self.measured
            rate = self.delivered[f] / self.measured
            W = self.delay_sum[f] / self.delivered[f] if self.delivered[f] else 0.0
            lw = rate * W
            err = abs(lw - L) / L if L > 0 else abs(lw)
            out.append({"flow": fid, "avg_queue": L, "delivery_rate": rate, "mean_sojourn": W,
                        "rate_x_sojourn": lw, "rel_error": err, "drops": self.dropped[f],
                        "applicable": self.dropped[f] == 0})
        return out

    def summary(self) -> dict:
        return {
            "horizon": self.horizon, "warmup": self.warmup,
            "avg_queue": self.avg_queue(), "avg_delay": self.avg_delay(),
            "throughput": sum(self.throughput()), "drops": sum(self.dropped),
            "flows": {fid: {"avg_queue": q, "avg_delay": d, "throughput": th,
                            "arrivals": a, "delivered": dl, "dropped": dr}
                      for fid, q, d, th, a, dl, dr in zip(
                          self.flow_ids, self.avg_flow_queue(), self.flow_delay(), self.throughput(),
                          self.arrivals, self.delivered, self.dropped)},
            "links": dict(zip(self.link_ids, self.avg_link_queue())),
            "tail_price_min": self.tail_price_min, "tail_price_max": self.tail_price_max,
            "tail_price_mean": None if self.tail_price_mean is None else dict(zip(self.price_names, self.tail_price_mean)),
            "final_prices": None if self.final_prices is None else dict(zip(self.price_names, self.final_prices)),
            "final_budgets": None if self.final_budgets is None else dict(zip(self.price_names, self.final_budgets)),
        }

    def timeseries_header(self) -> list[str]:
        h = ["t", "total_queue", "source_queue"] + [f"link:{l}" for l in self.link_ids]
        h += [f"flow:{f}" for f in self.flow_ids]
        if self.price_names:
            h += [f"price:{p}" for p in self.price_names] + [f"budget:{p}" for p in self.price_names]
        return h

    def timeseries_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.timeseries_header())
        for row in self.timeseries:
            w.writerow([_fmt(x) for x in row])
        return buf.getvalue()

    def links_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["link", "avg_queue", "price", "budget"])
        prices = dict(zip(self.price_names or [], self.final_prices or []))
        budgets = dict(zip(self.price_names or [], self.final_budgets or []))
        for lid, q in zip(self.link_ids, self.avg_link_queue()):
            w.writerow([lid, _fmt(q), _fmt(prices.get(lid, "")), _fmt(budgets.get(lid, ""))])
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["flow", "avg_queue", "avg_delay", "throughput", "arrivals", "delivered", "dropped",
                    "little_rel_error"])
        little = self.little_check()
        for f, fid in enumerate(self.flow_ids):
            w.writerow([fid, _fmt(self.avg_flow_queue()[f]), _fmt(self.flow_delay()[f]),
                        _fmt(self.throughput()[f]), self.arrivals[f], self.delivered[f], self.dropped[f],
                        _fmt(little[f]["rel_error"])])
        w.writerow(["all", _fmt(self.avg_queue()), _fmt(self.avg_delay()), _fmt(sum(self.throughput())),
                    sum(self.arrivals), sum(self.delivered), sum(self.dropped), ""])
        return buf.getvalue()


def _resolve_controller(controller, config: SimConfig) -> Controller:
    if controller is None:
        controller = {"id": config.controller}
    if isinstance(controller, str):
        controller = {"id": controller}
    if isinstance(controller, dict):
        return make_controller(controller)
    return controller


def run_simulation(spec: NetworkSpec, config: SimConfig, controller=None) -> MetricsLog:
    """Run one simulation; deterministic in (spec, config, controller settings).

    ``controller`` may be a ``Controller``, a controller config dict, an id,
    or ``None`` for ``config.controller`` with default settings.
    """
    report = validate(spec)
    if not report.ok:
        raise ValueError(f"invalid network:\n{report}")
    ctl = _resolve_controller(controller, config)
    streams = make_streams(config.seed, config.run)
    rng_a, rng_c, rng_u = streams["arrivals"], streams["capacities"], streams["underlay"]
    ctl.reset(spec, streams["controller"])

    lay = spec.layout
    nl, nf = lay.n_links, lay.n_flows
    T, warm, stride = config.horizon, config.warmup, config.stride
    tail_start = T - max(1, T // 10)
    policy = config.underlay_policy
    full_scope = ctl.scope == "flow-queues"
    arrival_d = lay.arrivals
    cap_d = lay.capacity
    # constant arrivals need no draws; single-trial capacities are drawn
    # inline, in link order, so the stream is consumed exactly as by sample()
    const_arrivals = [d.value for d in arrival_d] if all(isinstance(d, Deterministic) for d in arrival_d) else None
    cap_base = [d.value if isinstance(d, Deterministic) else 0 for d in cap_d]
    cap_coins = [(i, d.p) for i, d in enumerate(cap_d) if isinstance(d, Bernoulli)]
    if any(cap_d[i].n != 1 for i, _ in cap_coins):
        cap_coins = None
    coin = rng_c.random
    q_link, q_flow = lay.q_link, lay.q_flow
    flow_qids = lay.flow_qids
    nq = lay.n_queues

    log = MetricsLog(list(lay.link_ids), list(lay.flow_ids), ctl.price_names, T, warm, stride)
    qsum = [0] * nq
    src_sum = [0] * nf
    arr_sum = [0] * nf
    inj_sum = [0] * nf
    del_sum = [0] * nf
    drop_sum = [0] * nf
    drop_all = [0] * nf
    delay_sum = [0] * nf
    delay_max = [0] * nf
    tail_min, tail_max = math.inf, -math.inf
    tail_sum = None

    # fast paths for building observations
    links_are_queues = q_link == list(range(nl))
    flow_get = [(lambda v, q=qs[0]: (v[q],)) if len(qs) == 1 else itemgetter(*qs) for qs in flow_qids]

    state = QueueState(lay)
    queues, backlog = state.queues, state.backlog
    qlens = [0] * nq
    for t in range(T):
        arrivals = const_arrivals or [d.sample(rng_a) for d in arrival_d]
        admit_arrivals(state, arrivals, t)
        avail = [len(b) for b in backlog]
        if full_scope:
            if links_are_queues:
                ltot = qlens
            else:
                ltot = [0] * nl
                for q in range(nq):
                    ltot[q_link[q]] += qlens[q]
            obs = Observation(t, avail, [g(qlens) for g in flow_get], ltot)
        else:
            obs = Observation(t, avail)
        inj = ctl.decide(obs)
        if cap_coins is None:
            caps = [d.sample(rng_c) for d in cap_d]
        else:
            caps = cap_base[:]
            for i, p in cap_coins:
                caps[i] = 1 if coin() < p else 0
        _, rec = serve_and_route(state, caps, spec, rng_u, policy, inj, t, inplace=True)
        ctl.observe(rec)

        qlens = [len(q) for q in queues]
        dropped = rec.dropped
        if any(dropped):
            drop_all = list(map(add, drop_all, dropped))
        if t >= warm:
            qsum = list(map(add, qsum, qlens))
            src_sum = list(map(add, src_sum, map(len, backlog)))
            arr_sum = list(map(add, arr_sum, arrivals))
            inj_sum = list(map(add, inj_sum, rec.injected))
            if rec.sojourns:
                del_sum = list(map(add, del_sum, rec.delivered))
                for f, d in rec.sojourns:
                    delay_sum[f] += d
                    if d > delay_max[f]:
                        delay_max[f] = d
            if any(dropped):
                drop_sum = list(map(add, drop_sum, dropped))
        if t >= tail_start:
            prices = ctl.prices
            if prices:
                m = max(prices)
                tail_min = min(tail_min, m)
                tail_max = max(tail_max, m)
                tail_sum = prices if tail_sum is None else list(map(add, tail_sum, prices))
        if t % stride == 0 or t == T - 1:
            ltot = [0] * nl
            ftot = [0] * nf
            for q in range(nq):
                ltot[q_link[q]] += qlens[q]
                ftot[q_flow[q]] += qlens[q]
            src = [len(b) for b in backlog]
            row = [t, sum(qlens) + sum(src), sum(src)] + ltot + [a + b for a, b in zip(ftot, src)]
            if log.price_names:
                row += list(ctl.prices) + list(ctl.budgets or [math.nan] * len(log.price_names))
            log.timeseries.append(row)

    link_sum = [0] * nl
    flow_link_sum = [0] * nf
    for q in range(nq):
        link_sum[q_link[q]] += qsum[q]
        flow_link_sum[q_flow[q]] += qsum[q]
    flow_sum = [a + b for a, b in zip(flow_link_sum, src_sum)]
    log.link_queue_sum = link_sum
    log.flow_queue_sum = flow_sum
    log.flow_link_queue_sum = flow_link_sum
    log.arrivals, log.injected, log.delivered = arr_sum, inj_sum, del_sum
    log.dropped, log.dropped_total = drop_sum, drop_all
    log.delay_sum, log.delay_max = delay_sum, delay_max
    if tail_min is not math.inf:
        log.tail_price_min, log.tail_price_max = tail_min, tail_max
        log.tail_price_mean = [v / (T - tail_start) for v in tail_sum]
    if ctl.prices is not None:
        log.final_prices = list(ctl.prices)
    if ctl.budgets is not None:
        log.final_budgets = list(ctl.budgets)
    log.controller_state = ctl.snapshot()
    return log


def arrivals_for_rate(rate: float, n: int = 2):
    """Per-slot arrivals with mean ``rate``: sum of ``n`` Bernoulli(rate/n)."""
    if rate < 0 or rate > n:
        raise ValueError(f"rate {rate} outside [0, {n}]")
    if rate == 0:
        return Deterministic(0)
    return Bernoulli(n, rate / n)


def _sweep_one(args):
    spec, config, controller, rate, arrival_n = args
    spec = spec.with_arrivals({f.id: arrivals_for_rate(rate, arrival_n) for f in spec.flows})
    log = run_simulation(spec, config, controller)
    cid = controller["id"] if isinstance(controller, dict) else str(controller)
    return {"controller": cid, "rate": rate, "seed": config.seed, "avg_delay": log.avg_delay(),
            "avg_queue": log.avg_queue(), "throughput": sum(log.throughput()), "drops": sum(log.dropped)}


def sweep_arrival_rate(spec: NetworkSpec, config: SimConfig, controller, rates, arrival_n: int = 2,
                       workers: int = 1) -> list[dict]:
    """One run per rate; every flow gets the same per-slot arrival rate.

    Run ``i`` uses stream offset ``i`` under ``config.seed``, so two sweeps
    with different controllers see the same arrival and capacity samples.
    """
    if isinstance(controller, str):
        controller = {"id": controller}
    jobs = []
    for i, rate in enumerate(rates):
        cfg = SimConfig(**{**asdict(config), "run": i})
        jobs.append((spec, cfg, controller, float(rate), arrival_n))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_sweep_one, jobs))
    return [_sweep_one(j) for j in jobs]


def rows_to_csv(rows: list[dict], columns: list[str] | None = None) -> str:
    columns = columns or (list(rows[0]) if rows else [])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


def write_run(log: MetricsLog, out_dir: str, manifest: dict) -> list[str]:
    """Write the metric tables, controller state and manifest into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    files = {
        "timeseries.csv": log.timeseries_csv(),
        "links.csv": log.links_csv(),
        "summary.csv": log.summary_csv(),
    }
    state = dict(log.controller_state)
    qtables = state.pop("qtables", None) or {}
    for fid, text in qtables.items():
        files[f"qtable_{fid}.csv"] = text
    files["controller_state.json"] = json.dumps(state, indent=2, sort_keys=True) + "\n"
    man = {"version": __version__, **manifest, "summary": log.summary(), "little": log.little_check()}
    files["manifest.json"] = json.dumps(man, indent=2, sort_keys=True, default=str) + "\n"
    for name, text in files.items():
        with open(os.path.join(out_dir, name), "w", newline="") as fh:
            fh.write(text)
    return sorted(files)
