"""Exact average-cost MDP for a single flow on a small network.

Because static capacity splitting serves a flow independently of the other
flows' queues, each flow's buffers form their own controlled Markov chain.
``FlowMDP`` enumerates that chain (same state convention as the learner:
``(packets available at the source, q_1, ..., q_k)``) and solves it by relative
value iteration. Used as a test oracle; not part of the simulation path.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.sparse.linalg import spsolve

from .network import NetworkSpec
from .qlearning import action_space


class OracleTooLarge(RuntimeError):
    pass


def _binom_pmf(n, p):
    return [math.comb(n, k) * p**k * (1 - p) ** (n - k) for k in range(n + 1)]


def _multinomial_splits(n, probs):
    """All ways to route ``n`` packets over targets with ``probs``."""
    k = len(probs)
    out = []
    for split in itertools.product(range(n + 1), repeat=k):
        if sum(split) != n:
            continue
        pr = math.factorial(n)
        for x, p in zip(split, probs):
            pr = pr / math.factorial(x) * p**x
        if pr > 0:
            out.append((pr, split))
    return out


@dataclass
class Solution:
    gain: float
    h: np.ndarray  # relative state values
    q: np.ndarray  # relative action values per (state, action) pair
    policy: list[int]  # greedy action index per state
    iterations: int


class FlowMDP:
    def __init__(self, spec: NetworkSpec, flow_id: str, max_states: int = 20_000):
        lay = spec.layout
        self.spec = spec
        self.flow = f = lay.flow_index[flow_id]
        self.C = C = spec.buffer_cap
        self.links = lay.flow_links[f]
        self.k = len(self.links)
        pos = {li: i for i, li in enumerate(self.links)}
        self.tunnel_pos = [pos[lay.tunnels[t][1]] for t in lay.flow_tunnels[f]]
        self.caps = tuple(lay.tunnel_cap[t] for t in lay.flow_tunnels[f])

        self.share_pmf = []
        for li in self.links:
            mu = lay.link_mu[li][lay.link_members[li].index(lay.qid[(li, f)])]
            cap_pmf = lay.capacity[li].pmf()
            pmf = [0.0] * len(cap_pmf)
            for c, pc in enumerate(cap_pmf):
                for k, pk in enumerate(_binom_pmf(c, mu)):
                    pmf[k] += pc * pk
            self.share_pmf.append(pmf)
        self.route = []
        for li in self.links:
            r = lay.q_route[lay.qid[(li, f)]]
            if r is None:
                self.route.append(None)
                continue
            targets, cum = r
            probs = [cum[0]] + [cum[i] - cum[i - 1] for i in range(1, len(cum))]
            self.route.append(([pos[lay.q_link[q]] for q in targets], probs))
        self.arrival_pmf = lay.arrivals[f].pmf()

        self._link_outcomes_cache = {}
        self._enumerate(max_states)

    def _link_outcomes(self, i, q):
        """Distribution of (served, inflow-vector contribution) for link i with queue q."""
        key = (i, q)
        hit = self._link_outcomes_cache.get(key)
        if hit is not None:
            return hit
        acc = {}
        for share, ps in enumerate(self.share_pmf[i]):
            if ps == 0:
                continue
            s = min(q, share)
            if self.route[i] is None or s == 0:
                key2 = (s, ())
                acc[key2] = acc.get(key2, 0.0) + ps
                continue
            targets, probs = self.route[i]
            for pr, split in _multinomial_splits(s, probs):
                moves = tuple((t, x) for t, x in zip(targets, split) if x)
                key2 = (s, moves)
                acc[key2] = acc.get(key2, 0.0) + ps * pr
        out = list(acc.items())
        self._link_outcomes_cache[key] = out
        return out

    def transitions(self, state, action):
        """List of (probability, next_state)."""
        n, q = state[0], state[1:]
        C = self.C
        per_link = [self._link_outcomes(i, q[i]) for i in range(self.k)]
        base = list(q)
        for t, u in zip(self.tunnel_pos, action):
            base[t] += u
        backlog = min(C, n - sum(action))
        dist = {}
        for combo in itertools.product(*per_link):
            p = 1.0
            nq = base[:]
            for i, ((s, moves), pl) in enumerate(combo):
                p *= pl
                nq[i] -= s
                for t, x in moves:
                    nq[t] += x
            if p == 0:
                continue
            nq = tuple(min(C, x) for x in nq)
            for a, pa in enumerate(self.arrival_pmf):
                if pa == 0:
                    continue
                s2 = (backlog + a,) + nq
                dist[s2] = dist.get(s2, 0.0) + p * pa
        return [(p, s2) for s2, p in dist.items()]

    def actions(self, state):
        return action_space(self.caps, state[0])

    def _enumerate(self, max_states):
        start = [(a,) + (0,) * self.k for a, pa in enumerate(self.arrival_pmf) if pa > 0]
        index = {}
        order = []
        frontier = list(start)
        for s in start:
            index[s] = len(order)
            order.append(s)
        trans = {}
        while frontier:
            s = frontier.pop()
            for ai, a in enumerate(self.actions(s)):
                tr = self.transitions(s, a)
                trans[(s, ai)] = tr
                for _, s2 in tr:
                    if s2 not in index:
                        if len(order) >= max_states:
                            raise OracleTooLarge(f"more than {max_states} states; network too large to enumerate")
                        index[s2] = len(order)
                        order.append(s2)
                        frontier.append(s2)
        # canonical order: sorted states, actions in lexicographic order
        self.states = sorted(order)
        self.index = {s: i for i, s in enumerate(self.states)}
        rows, cols, vals = [], [], []
        pair_state, pair_action = [], []
        for s in self.states:
            for ai in range(len(self.actions(s))):
                r = len(pair_state)
                pair_state.append(self.index[s])
                pair_action.append(ai)
                for p, s2 in trans[(s, ai)]:
                    rows.append(r)
                    cols.append(self.index[s2])
                    vals.append(p)
        self.pair_state = np.asarray(pair_state)
        self.pair_action = np.asarray(pair_action)
        self.P = sparse.csr_matrix((vals, (rows, cols)), shape=(len(pair_state), len(self.states)))
        self.first_pair = np.searchsorted(self.pair_state, np.arange(len(self.states)))
        self.queues = np.array([s[1:] for s in self.states], dtype=float)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_pairs(self) -> int:
        return len(self.pair_state)

    def solve(self, weights, tol: float = 1e-11, max_iter: int = 200_000, damping: float = 0.5,
              tie_tol: float = 1e-9) -> Solution:
        """Relative value iteration for the minimum average of ``weights . q``.

        ``damping`` mixes in a self-loop (aperiodicity transform); it changes
        neither the optimal gain nor the optimal policy.
        """
        c = self.queues @ np.asarray(weights, dtype=float)
        cpair = c[self.pair_state]
        h = np.zeros(self.n_states)
        ref = 0
        for it in range(1, max_iter + 1):
            qv = cpair + self.P @ h
            th = np.minimum.reduceat(qv, self.first_pair)
            th = damping * h + (1 - damping) * th
            diff = th - h
            h = th - th[ref]
            if diff.max() - diff.min() < tol:
                break
        # h + g/(1-d) = min(c + P h) at the fixed point: h is already the
        # relative value of the original chain, only the gain is scaled
        gain = float(diff[ref]) / (1 - damping)
        qv = cpair + self.P @ h - gain
        policy = []
        for s in range(self.n_states):
            lo, hi = self.first_pair[s], (self.first_pair[s + 1] if s + 1 < self.n_states else self.n_pairs)
            row = qv[lo:hi]
            policy.append(int(np.nonzero(row <= row.min() + tie_tol * max(1.0, abs(row.min())))[0][0]))
        return Solution(gain, h, qv, policy, it)

    def optimal_actions(self, sol: Solution, state, tie_tol: float = 1e-9) -> set[int]:
        s = self.index[state]
        lo = self.first_pair[s]
        hi = self.first_pair[s + 1] if s + 1 < self.n_states else self.n_pairs
        row = sol.q[lo:hi]
        return set(np.nonzero(row <= row.min() + tie_tol * max(1.0, abs(row.min())))[0].tolist())

    def action_gap(self, sol: Solution, state) -> float:
        s = self.index[state]
        lo = self.first_pair[s]
        hi = self.first_pair[s + 1] if s + 1 < self.n_states else self.n_pairs
        row = np.sort(sol.q[lo:hi])
        return float(row[1] - row[0]) if row.size > 1 else float("inf")

    def stationary(self, policy) -> np.ndarray:
        """Stationary distribution under a deterministic policy (action index
        per state) or a randomized one (per state, probabilities over actions)."""
        weights = np.zeros(self.n_pairs)
        for s in range(self.n_states):
            lo = self.first_pair[s]
            pi = policy[s]
            if np.ndim(pi) == 0:
                weights[lo + int(pi)] = 1.0
            else:
                weights[lo:lo + len(pi)] = pi
        sel = sparse.csr_matrix((weights, (self.pair_state, np.arange(self.n_pairs))),
                                shape=(self.n_states, self.n_pairs))
        A = ((sel @ self.P).T - sparse.identity(self.n_states)).tolil()
        A[0, :] = 1.0
        rhs = np.zeros(self.n_states)
        rhs[0] = 1.0
        return np.asarray(spsolve(A.tocsc(), rhs))

    def evaluate(self, policy) -> dict:
        """Stationary averages: per-link queue vector, total link queue,
        source occupancy (available packets) and mean injections."""
        pi = self.stationary(policy)
        avg_q = pi @ self.queues
        n_avail = np.array([s[0] for s in self.states], dtype=float)
        return {"pi": pi, "link_queues": avg_q, "total_queue": float(avg_q.sum()),
                "available": float(pi @ n_avail)}

    def constrained_optimum(self, weights, bounds) -> dict | None:
        """Linear program over stationary state-action frequencies:
        minimise the average of ``weights . q`` subject to average link queues
        ``<= bounds`` (``None`` entries are unconstrained). Returns ``None``
        when no policy, randomised or not, meets the bounds."""
        npairs, ns = self.n_pairs, self.n_states
        cost = self.queues[self.pair_state] @ np.asarray(weights, dtype=float)
        # balance: sum_a x(s', a) - sum_{s,a} x(s,a) P(s'|s,a) = 0, plus normalisation
        out = sparse.csr_matrix((np.ones(npairs), (self.pair_state, np.arange(npairs))), shape=(ns, npairs))
        A_eq = sparse.vstack([out - self.P.T, sparse.csr_matrix(np.ones((1, npairs)))]).tocsr()
        b_eq = np.zeros(ns + 1)
        b_eq[-1] = 1.0
        rows, rhs = [], []
        for i, b in enumerate(bounds):
            if b is not None:
                rows.append(self.queues[self.pair_state, i])
                rhs.append(b)
        res = linprog(cost, A_ub=np.array(rows) if rows else None, b_ub=np.array(rhs) if rows else None,
                      A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
        if res.status == 2:
            return None
        if not res.success:
            raise RuntimeError(f"linear program failed: {res.message}")
        x = res.x
        return {"value": float(res.fun), "frequencies": x,
                "link_queues": self.queues[self.pair_state].T @ x}
