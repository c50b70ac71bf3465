"""Projected subgradient ascent on link (or tunnel) prices."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .schedules import Step


def price_update(prices: Sequence[float], queues: Sequence[float], budgets: Sequence[float],
                 beta: float, cap: float) -> list[float]:
    """lambda' = clamp(lambda + beta * (||Q_l|| - B_l), 0, cap), elementwise."""
    out = []
    for lam, q, b in zip(prices, queues, budgets):
        v = lam + beta * (q - b)
        if v < 0.0:
            v = 0.0
        elif v > cap:
            v = cap
        out.append(v)
    return out


class PriceController:
    """Holds the price vector and advances it once per slot.

    ``smoothing`` in (0, 1] feeds an exponentially weighted queue estimate to
    the update instead of the instantaneous queue; ``None`` uses the raw queue.
    """

    def __init__(self, n: int, cap: float = 100.0, beta: Step | None = None,
                 initial: float = 1.0, smoothing: float | None = None):
        if cap <= 0:
            raise ValueError("price cap must be positive")
        if initial < 0 or initial > cap:
            raise ValueError("initial price must lie in [0, cap]")
        self.cap = float(cap)
        self.beta = beta if beta is not None else Step(1.0, 0.8)
        self.prices = [float(initial)] * n
        self.smoothing = smoothing
        self._avg = None

    def step(self, queues: Sequence[float], budgets: Sequence[float], t: int) -> list[float]:
        b = self.beta(t)
        if b == 0.0:
            return self.prices
        if self.smoothing is not None:
            w = self.smoothing
            if self._avg is None:
                self._avg = [float(q) for q in queues]
            else:
                self._avg = [(1 - w) * a + w * q for a, q in zip(self._avg, queues)]
            queues = self._avg
        cap = self.cap
        out = []
        for lam, q, bud in zip(self.prices, queues, budgets):
            v = lam + b * (q - bud)
            out.append(0.0 if v < 0.0 else (cap if v > cap else v))
        self.prices = out
        return out


def dual_function_estimate(oracles, prices, budgets, max_iter: int = 200_000) -> float:
    """Exact dual value sum_f min_pi sum_l lambda_l Qbar^f_l - sum_l lambda_l B_l.

    ``oracles`` is a sequence of ``(FlowMDP, link_positions)`` where
    ``link_positions[i]`` maps the i-th link component of the flow's state to
    an index of ``prices``. Only meant for enumerable toy networks.
    """
    prices = np.asarray(prices, dtype=float)
    total = 0.0
    for mdp, pos in oracles:
        weights = prices[list(pos)]
        if not np.any(weights):
            continue
        total += mdp.solve(weights, max_iter=max_iter).gain
    return float(total - prices @ np.asarray(budgets, dtype=float))
