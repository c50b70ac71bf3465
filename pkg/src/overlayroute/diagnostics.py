"""Empirical check of the budget-layer convergence conditions on a scenario.

Converged prices are measured with the budget frozen at a set of points, an
affine surrogate ``lambda(B) ~ c + M B`` is fitted, and the monotonicity
probe, replicator ODE and Lyapunov descent are run against the surrogate.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .budget import (ReplicatorODEError, integrate_replicator_ode, lyapunov_value, monotonicity_probe,
                     ode_tracking_gaps)
from .engine import SimConfig, run_simulation
from .network import NetworkSpec


def _frozen(cfg: dict, budgets) -> dict:
    sched = dict(cfg.get("schedules") or {})
    sched["gamma"] = {**(sched.get("gamma") or {}), "scale": 0.0}
    return {**cfg, "initial_budgets": [float(b) for b in budgets], "schedules": sched}


def measure_prices(spec: NetworkSpec, controller: dict, budgets: np.ndarray, horizon: int, seed: int = 0,
                   underlay_policy: str = "static-split") -> np.ndarray:
    """Average price over the last 10% of a run with the budget frozen at
    each row of ``budgets``."""
    out = []
    for i, B in enumerate(budgets):
        cfg = SimConfig(horizon=horizon, seed=seed, run=i, underlay_policy=underlay_policy,
                        controller=controller["id"], stride=max(1, horizon // 100))
        log = run_simulation(spec, cfg, _frozen(controller, B))
        out.append(log.tail_price_mean)
    return np.asarray(out, dtype=float)


def fit_affine(B: np.ndarray, lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares ``lam ~ c + M B``; returns ``(c, M)``."""
    X = np.hstack([np.ones((B.shape[0], 1)), B])
    coef, *_ = np.linalg.lstsq(X, lam, rcond=None)
    return coef[0], coef[1:].T


def pairwise_monotonicity(B: np.ndarray, lam: np.ndarray) -> dict:
    """Sign of <B_i - B_j, lam_i - lam_j> over all measured pairs."""
    vals = [float((B[i] - B[j]) @ (lam[i] - lam[j])) for i in range(len(B)) for j in range(i + 1, len(B))]
    return {"pairs": len(vals), "satisfied": int(sum(v < 0 for v in vals)),
            "worst": max(vals) if vals else None}


@dataclass
class Diagnosis:
    points: list
    prices: list
    intercept: list
    slope: list
    measured_pairs: dict
    probe: dict
    ode_final: list | None
    ode_error: str | None
    lyapunov_nonincreasing: bool | None
    tracking_gaps: dict | None

    def as_dict(self) -> dict:
        return asdict(self)


def diagnose(spec: NetworkSpec, controller: dict, horizon: int = 50_000, n_points: int = 6,
             samples: int = 10_000, seed: int = 0, ode_horizon: float = 20.0,
             underlay_policy: str = "static-split") -> Diagnosis:
    if controller.get("id") not in ("poc", "poc-t"):
        raise ValueError("diagnose needs a poc or poc-t controller section")
    total = float(controller["total_budget"])
    L = len(spec.layout.active_links) if controller["id"] == "poc" else spec.layout.n_tunnels
    rng = np.random.default_rng(seed)
    pts = [np.full(L, total / L)] + [total * rng.dirichlet(np.ones(L)) for _ in range(n_points - 1)]
    B = np.asarray(pts)
    lam = measure_prices(spec, controller, B, horizon, seed, underlay_policy)
    c, M = fit_affine(B, lam)

    def surrogate(x):
        return c + M @ x

    probe = monotonicity_probe(surrogate, samples, rng, L, total)
    ode_final, ode_err, lyap_ok, gaps = None, None, None, None
    B0 = np.full(L, total / L)
    try:
        traj = integrate_replicator_ode(surrogate, B0, ode_horizon, dt=1e-3)
        ode_final = traj.states[-1].tolist()
        star = traj.states[-1]
        V = [lyapunov_value(x, star) for x in traj.states[:: max(1, len(traj.states) // 1000)]]
        lyap_ok = bool(np.all(np.diff(V) <= 1e-12))
        gaps = {int(k): v for k, v in ode_tracking_gaps(surrogate, B0, [10, 100, 1000]).items()}
    except ReplicatorODEError as exc:
        ode_err = str(exc)
    return Diagnosis(B.tolist(), lam.tolist(), c.tolist(), M.tolist(), pairwise_monotonicity(B, lam),
                     probe.as_dict(), ode_final, ode_err, lyap_ok, gaps)
