"""Replicator-dynamics tuning of the per-link queue budgets.

Budgets live on the scaled simplex {B >= 0, sum(B) = total}. The replicator
drift is applied to the fractions ``b = B / total`` so the sum is preserved
for any total; a Euclidean projection then absorbs rounding and overshoot.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .schedules import Step


class ReplicatorODEError(RuntimeError):
    pass


def project_simplex(x: Sequence[float], total: float = 1.0) -> np.ndarray:
    """Euclidean projection onto {y >= 0, sum(y) = total} by sort and threshold."""
    x = np.asarray(x, dtype=float)
    if total < 0:
        raise ValueError("simplex total must be non-negative")
    if x.min() >= 0.0 and abs(x.sum() - total) <= 1e-12 * max(1.0, total):
        return x.copy()
    u = np.sort(x)[::-1]
    css = np.cumsum(u) - total
    ks = np.arange(1, x.size + 1)
    rho = np.nonzero(u - css / ks > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(x - theta, 0.0)


def _project_floored(x: np.ndarray, lo: float) -> np.ndarray:
    if lo <= 0.0:
        return project_simplex(x, 1.0)
    return lo + project_simplex(x - lo, 1.0 - lo * x.size)


def replicator_step(budgets: Sequence[float], prices: Sequence[float], gamma: float,
                    total: float, floor: float = 1e-6) -> np.ndarray:
    """b' = b + gamma * b * (lambda - <lambda, b>) on fractions, then projection.

    ``floor`` is a per-entry lower bound as a fraction of ``total``; the
    projection is onto the simplex shrunk by that floor so every entry stays
    interior.
    """
    B = np.asarray(budgets, dtype=float)
    lam = np.asarray(prices, dtype=float)
    if total <= 0:
        raise ValueError("total budget must be positive")
    b = B / total
    if gamma != 0.0:
        b = b + gamma * b * (lam - lam @ b)
    return total * _project_floored(b, floor)


def _project_list(b: list[float], lo: float) -> list[float]:
    """Pure-Python floored-simplex projection for the per-slot hot path."""
    n = len(b)
    if min(b) >= lo and abs(sum(b) - 1.0) <= 1e-12:
        return b
    z = 1.0 - lo * n
    x = [v - lo for v in b]
    u = sorted(x, reverse=True)
    acc, theta = 0.0, 0.0
    for k, v in enumerate(u, 1):
        acc += v
        t = (acc - z) / k
        if v - t > 0:
            theta = t
    return [lo + (v - theta if v > theta else 0.0) for v in x]


class BudgetTuner:
    """Budget state for the controllers: uniform start, one replicator step
    per slot with the gamma schedule. Lists instead of arrays keep the
    per-slot cost low for small L."""

    def __init__(self, n: int, total: float, gamma: Step | None = None,
                 floor: float = 1e-6, initial: Sequence[float] | None = None):
        if total <= 0:
            raise ValueError("total budget must be positive")
        self.total = float(total)
        self.gamma = gamma if gamma is not None else Step(1.0, 1.0)
        self.floor = floor
        if initial is None:
            self.budgets = [self.total / n] * n
        else:
            if len(initial) != n or abs(sum(initial) - total) > 1e-9 * max(1.0, total) or min(initial) < 0:
                raise ValueError("initial budgets must be non-negative and sum to the total")
            self.budgets = [float(v) for v in initial]

    def step(self, prices: Sequence[float], t: int) -> list[float]:
        g = self.gamma(t)
        if g == 0.0:
            return self.budgets
        tot = self.total
        b = [v / tot for v in self.budgets]
        avg = sum(p * v for p, v in zip(prices, b))
        b = [v + g * v * (p - avg) for p, v in zip(prices, b)]
        self.budgets = [tot * v for v in _project_list(b, self.floor)]
        return self.budgets


def replicator_field(lambda_bar: Callable, total: float) -> Callable[[np.ndarray], np.ndarray]:
    def field(B):
        lam = np.asarray(lambda_bar(B), dtype=float)
        return B * (lam - lam @ B / total)
    return field


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # shape (len(times), L)

    def at(self, t) -> np.ndarray:
        t = np.atleast_1d(t)
        return np.stack([np.interp(t, self.times, self.states[:, j]) for j in range(self.states.shape[1])], axis=-1)


def integrate_replicator_ode(lambda_bar: Callable, B0: Sequence[float], horizon: float,
                             dt: float = 1e-3, total: float | None = None, tol: float = 1e-8) -> Trajectory:
    """Classical RK4 on dB/dt = B * (lambda_bar(B) - <lambda_bar(B), B> / total)."""
    B = np.asarray(B0, dtype=float).copy()
    total = float(B.sum()) if total is None else float(total)
    if np.any(B <= 0):
        raise ValueError("initial budget must lie in the interior of the simplex")
    f = replicator_field(lambda_bar, total)
    n = int(np.ceil(horizon / dt - 1e-9))
    h = horizon / n if n else 0.0
    states = np.empty((n + 1, B.size))
    states[0] = B
    for k in range(n):
        k1 = f(B)
        k2 = f(B + 0.5 * h * k1)
        k3 = f(B + 0.5 * h * k2)
        k4 = f(B + h * k3)
        B = B + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if B.min() < -tol * total or abs(B.sum() - total) > tol * max(1.0, total):
            raise ReplicatorODEError(
                f"RK4 left the simplex at t={(k + 1) * h:.6g} (min={B.min():.3g}, "
                f"sum-total={B.sum() - total:.3g}); reduce dt")
        states[k + 1] = B
    return Trajectory(np.linspace(0.0, n * h, n + 1), states)


def replicator_recursion(lambda_bar: Callable, B0: Sequence[float], n_steps: int,
                         gamma: Step | Callable[[int], float] | None = None,
                         total: float | None = None, floor: float = 1e-6) -> np.ndarray:
    """Iterates of the discrete budget recursion driven by converged prices."""
    gamma = gamma if gamma is not None else Step(1.0, 1.0)
    B = np.asarray(B0, dtype=float)
    total = float(B.sum()) if total is None else float(total)
    out = np.empty((n_steps + 1, B.size))
    out[0] = B
    for k in range(n_steps):
        B = replicator_step(B, lambda_bar(B), gamma(k), total, floor)
        out[k + 1] = B
    return out


def lyapunov_value(B: Sequence[float], Bstar: Sequence[float]) -> float:
    """sum_l B*_l ln(B*_l / B_l); +inf if some B_l is zero where B*_l is not."""
    B = np.asarray(B, dtype=float)
    Bs = np.asarray(Bstar, dtype=float)
    mask = Bs > 0
    if np.any(B[mask] <= 0):
        return float("inf")
    return float(np.sum(Bs[mask] * np.log(Bs[mask] / B[mask])))


def ode_tracking_gaps(lambda_bar: Callable, B0: Sequence[float], starts: Sequence[int],
                      window: float = 1.0, gamma: Step | None = None, dt: float = 1e-3,
                      floor: float = 0.0) -> dict[int, float]:
    """Sup-distance between the interpolated discrete iterates and the ODE
    solution restarted from the iterate at each window start.

    Discrete iterate ``n`` sits at ODE time ``s(n) = gamma(0) + ... + gamma(n-1)``.
    """
    gamma = gamma if gamma is not None else Step(1.0, 1.0)
    B0 = np.asarray(B0, dtype=float)
    total = float(B0.sum())
    s_end = 0.0
    n = 0
    times = [0.0]
    last = max(starts)
    target = None
    while True:
        s_end += gamma(n)
        n += 1
        times.append(s_end)
        if n == last:
            target = s_end + window
        if target is not None and s_end >= target:
            break
    iterates = replicator_recursion(lambda_bar, B0, n, gamma, total, floor)
    times = np.asarray(times)
    gaps = {}
    for n0 in starts:
        traj = integrate_replicator_ode(lambda_bar, iterates[n0], window, dt, total)
        grid = times[n0] + traj.times
        disc = np.stack([np.interp(grid, times, iterates[:, j]) for j in range(B0.size)], axis=-1)
        gaps[n0] = float(np.max(np.linalg.norm(disc - traj.states, axis=1)))
    return gaps


@dataclass
class MonotonicityReport:
    samples: int
    satisfied: int
    worst: float  # largest <B - B', lambda(B) - lambda(B')> seen

    @property
    def fraction(self) -> float:
        return self.satisfied / self.samples if self.samples else 0.0

    def as_dict(self) -> dict:
        return {"samples": self.samples, "satisfied": self.satisfied,
                "fraction": self.fraction, "worst": self.worst}


def monotonicity_probe(lambda_bar: Callable, samples: int, rng, dim: int,
                       total: float = 1.0) -> MonotonicityReport:
    """Sample budget pairs uniformly on the simplex and count strict
    monotonicity ``<B - B', lambda(B) - lambda(B')> < 0``."""
    rng = np.random.default_rng(rng)
    ok = 0
    worst = -np.inf
    for _ in range(samples):
        B = total * rng.dirichlet(np.ones(dim))
        Bh = total * rng.dirichlet(np.ones(dim))
        inner = float((B - Bh) @ (np.asarray(lambda_bar(B)) - np.asarray(lambda_bar(Bh))))
        ok += inner < 0
        worst = max(worst, inner)
    return MonotonicityReport(samples, int(ok), float(worst))
