"""Tabular relative-value-iteration Q-learning for one flow's routing.

A flow's learning state is ``(packets available at the source, q_1, ..., q_k)``
with ``q_i`` the flow's own buffer occupancy on each link of its route (in
link-index order). Actions split the available packets over the flow's
ingress links. The cost charged in a state is the price-weighted sum of the
flow's link queues.
"""
from __future__ import annotations

import csv
import io
import itertools
from functools import lru_cache
from typing import Sequence

from .schedules import Step


@lru_cache(maxsize=None)
def action_space(caps: tuple[int, ...], available: int) -> tuple[tuple[int, ...], ...]:
    """Work-conserving injections: exactly ``min(available, sum(caps))`` packets.

    Returned in lexicographic order, so index 0 is the tie-break winner.
    """
    m = min(available, sum(caps))
    acts = [u for u in itertools.product(*(range(c + 1) for c in caps)) if sum(u) == m]
    return tuple(sorted(acts))


@lru_cache(maxsize=None)
def _action_index(caps: tuple[int, ...], available: int) -> dict:
    return {u: i for i, u in enumerate(action_space(caps, available))}


def holding_cost(q: Sequence[float], prices: Sequence[float]) -> float:
    """Price-weighted queue mass: sum_l prices[l] * q[l]."""
    return sum(p * x for p, x in zip(prices, q))


class QTable:
    """Sparse table of relative action values, rows created on first touch.

    ``reference`` is the (state, action) pair whose value is subtracted in
    every update; when left ``None`` it becomes the first pair updated.
    """

    def __init__(self, caps: Sequence[int], buffer_cap: int, reference=None):
        self.caps = tuple(int(c) for c in caps)
        self.buffer_cap = int(buffer_cap)
        self.values: dict[tuple, list[float]] = {}
        self.visits: dict[tuple, list[int]] = {}
        self.reference = reference

    def actions(self, state: tuple) -> tuple[tuple[int, ...], ...]:
        return action_space(self.caps, state[0])

    def action_index(self, state: tuple, action) -> int:
        if isinstance(action, int):
            return action
        return _action_index(self.caps, state[0])[tuple(action)]

    def row(self, state: tuple) -> list[float]:
        r = self.values.get(state)
        if r is None:
            return [0.0] * len(self.actions(state))
        return r

    def value(self, state: tuple, action) -> float:
        r = self.values.get(state)
        return 0.0 if r is None else r[self.action_index(state, action)]

    def _ensure(self, state: tuple) -> list[float]:
        r = self.values.get(state)
        if r is None:
            n = len(self.actions(state))
            r = self.values[state] = [0.0] * n
            self.visits[state] = [0] * n
        return r

    def reference_value(self) -> float:
        if self.reference is None:
            return 0.0
        s, a = self.reference
        r = self.values.get(s)
        return 0.0 if r is None else r[a]

    def greedy(self, state: tuple) -> int:
        r = self.values.get(state)
        if r is None:
            return 0
        return r.index(min(r))  # first minimum = lexicographically smallest action

    def policy(self) -> dict[tuple, tuple[int, ...]]:
        return {s: self.actions(s)[self.greedy(s)] for s in self.values}

    def clip(self, state: Sequence[int]) -> tuple[int, ...]:
        c = self.buffer_cap
        return tuple(x if x < c else c for x in state)

    # flat (state, action, value, visits) table for warm starts and inspection
    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["state", "action", "value", "visits", "reference"])
        ref = self.reference
        for s in sorted(self.values):
            acts = self.actions(s)
            for i, (v, n) in enumerate(zip(self.values[s], self.visits[s])):
                w.writerow([_fmt(s), _fmt(acts[i]), repr(v), n, int(ref == (s, i))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, caps: Sequence[int], buffer_cap: int) -> "QTable":
        table = cls(caps, buffer_cap)
        for rec in csv.DictReader(io.StringIO(text)):
            s = _parse(rec["state"])
            a = table.action_index(s, _parse(rec["action"]))
            table._ensure(s)
            table.values[s][a] = float(rec["value"])
            table.visits[s][a] = int(rec["visits"])
            if rec.get("reference") == "1":
                table.reference = (s, a)
        return table


def _fmt(t) -> str:
    return "|".join(str(x) for x in t)


def _parse(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split("|")) if s else ()


def q_update(table: QTable, transition: tuple, prices: Sequence[float], alpha: float) -> QTable:
    """One RVI Q-learning step on ``(state, action, next_state)``.

    ``prices`` are aligned with the link components ``state[1:]``.
    """
    s, a, s2 = transition
    a = table.action_index(s, a)
    if table.reference is None:
        table.reference = (s, a)
    if alpha == 0.0:
        return table
    row = table._ensure(s)
    cost = 0.0
    for p, x in zip(prices, s[1:]):
        cost += p * x
    nxt = table.values.get(s2)
    future = min(nxt) if nxt is not None else 0.0
    row[a] = (1.0 - alpha) * row[a] + alpha * (cost + future - table.reference_value())
    return table


def select_action(table: QTable, state: tuple, epsilon: float, rng) -> tuple[int, ...]:
    """Epsilon-greedy on the lowest relative value; ties go to the
    lexicographically smallest action."""
    acts = table.actions(state)
    if epsilon > 0.0 and rng.random() < epsilon:
        return acts[int(rng.random() * len(acts))]
    return acts[table.greedy(state)]


class QRouter:
    """Learner for one flow: a QTable, a visit-count step size and
    decaying exploration.

    Unless a reference pair is given, the first ``reference_delay`` updates
    run without the offset and the most visited pair at that point becomes
    the reference. Taking the very first pair instead can pin the offset to
    a transient state that is never revisited, and the values then drift.

    With ``random_ties`` the greedy choice is drawn uniformly among equal
    minima (including every action of a state never seen), instead of the
    lexicographically first one.
    """

    def __init__(self, caps: Sequence[int], buffer_cap: int, alpha: Step | None = None,
                 epsilon0: float = 0.2, epsilon_tau: float = 1e4, reference=None,
                 reference_delay: int = 1000, random_ties: bool = False):
        self.table = QTable(caps, buffer_cap, reference)
        self.random_ties = random_ties
        self.alpha = alpha if alpha is not None else Step(1.0, 0.6)
        self.epsilon0 = float(epsilon0)
        self.epsilon_tau = float(epsilon_tau)
        self.reference_delay = int(reference_delay)
        self.updates = 0

    def epsilon(self, t: int) -> float:
        if self.epsilon_tau <= 0:
            return self.epsilon0
        return self.epsilon0 / (1.0 + t / self.epsilon_tau)

    def act(self, state: tuple, t: int, rng) -> int:
        """Index of the chosen action within ``table.actions(state)``."""
        table = self.table
        eps = self.epsilon0 / (1.0 + t / self.epsilon_tau) if self.epsilon_tau > 0 else self.epsilon0
        if eps > 0.0 and rng.random() < eps:
            return int(rng.random() * len(table.actions(state)))
        r = table.values.get(state)
        if r is None:
            return int(rng.random() * len(table.actions(state))) if self.random_ties else 0
        m = min(r)
        if self.random_ties:
            ties = [i for i, v in enumerate(r) if v == m]
            if len(ties) > 1:
                return ties[int(rng.random() * len(ties))]
        return r.index(m)

    def _pick_reference(self):
        table = self.table
        best, most = None, -1
        for s in sorted(table.visits):
            for a, n in enumerate(table.visits[s]):
                if n > most:
                    best, most = (s, a), n
        table.reference = best

    def learn(self, state: tuple, action: int, next_state: tuple, prices: Sequence[float]) -> None:
        """Visit-count step size: the n-th update of a pair uses alpha(n)."""
        table = self.table
        row = table.values.get(state)
        if row is None:
            row = table._ensure(state)
        visits = table.visits[state]
        n = visits[action]
        visits[action] = n + 1
        self.updates += 1
        ref_pair = table.reference
        if ref_pair is None and self.updates > self.reference_delay:
            self._pick_reference()
            ref_pair = table.reference
        a = self.alpha(n)
        if a == 0.0:
            return
        cost = 0.0
        for p, x in zip(prices, state[1:]):
            cost += p * x
        nxt = table.values.get(next_state)
        future = min(nxt) if nxt is not None else 0.0
        if ref_pair is None:
            ref = 0.0
        else:
            rs, ra = ref_pair
            rrow = table.values.get(rs)
            ref = 0.0 if rrow is None else rrow[ra]
        row[action] = (1.0 - a) * row[action] + a * (cost + future - ref)
