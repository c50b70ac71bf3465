"""Decaying step-size sequences for the coupled recursions.

Each sequence has the form

    scale / ((t + offset)^power * ln(t + offset)^log_power * ln ln(t + offset)^loglog_power)

which is enough to express both the polynomial defaults and the
``1/t``, ``1/(t log t)`` family. Summability and timescale separation are
decided from the exponents alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict


@dataclass(frozen=True)
class Step:
    scale: float = 1.0
    power: float = 1.0
    log_power: float = 0.0
    loglog_power: float = 0.0
    offset: float = 1.0

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError("step scale must be non-negative")
        need = 1.0
        if self.log_power:
            need = 2.0
        if self.loglog_power:
            need = math.e ** math.e + 1e-9
        if self.offset < need:
            raise ValueError(f"offset {self.offset} too small for the log factors (need >= {need:.3g})")

    def __call__(self, t: int) -> float:
        if self.scale == 0.0:
            return 0.0
        x = t + self.offset
        if not self.log_power and not self.loglog_power:
            return self.scale / x**self.power
        v = x**self.power
        if self.log_power:
            v *= math.log(x) ** self.log_power
        if self.loglog_power:
            v *= math.log(math.log(x)) ** self.loglog_power
        return self.scale / v

    @property
    def order(self) -> tuple[float, float, float]:
        """Decay exponents, compared lexicographically (larger decays faster)."""
        if self.scale == 0.0:
            return (math.inf, 0.0, 0.0)
        return (self.power, self.log_power, self.loglog_power)

    def sum_diverges(self) -> bool:
        p, lp, llp = self.order
        return p < 1 or (p == 1 and (lp < 1 or (lp == 1 and llp <= 1)))

    def square_sum_converges(self) -> bool:
        p, lp, llp = self.order
        p, lp, llp = 2 * p, 2 * lp, 2 * llp
        return p > 1 or (p == 1 and (lp > 1 or (lp == 1 and llp > 1)))

    def is_faster_than(self, other: "Step") -> bool:
        """True when ``self(t) / other(t) -> 0``."""
        return self.order > other.order


@dataclass(frozen=True)
class StepSchedule:
    alpha: Step
    beta: Step
    gamma: Step

    @classmethod
    def default(cls, a: float = 1.0, b: float = 1.0, c: float = 1.0) -> "StepSchedule":
        return cls(Step(a, 0.6), Step(b, 0.8), Step(c, 1.0))

    @classmethod
    def harmonic(cls) -> "StepSchedule":
        """alpha = 1/t, beta = 1/(t log t), gamma = 1/(t log t log log t)."""
        return cls(Step(1.0, 1.0), Step(1.0, 1.0, 1.0, offset=2.0),
                   Step(1.0, 1.0, 1.0, 1.0, offset=16.0))

    @classmethod
    def from_dict(cls, d: dict | None) -> "StepSchedule":
        if not d:
            return cls.default()
        preset = d.get("preset")
        if preset == "harmonic":
            base = cls.harmonic()
        elif preset in (None, "default"):
            base = cls.default()
        else:
            raise ValueError(f"unknown schedule preset {preset!r}")
        parts = {}
        for name in ("alpha", "beta", "gamma"):
            cur = asdict(getattr(base, name))
            cur.update(d.get(name) or {})
            parts[name] = Step(**cur)
        return cls(**parts)

    def to_dict(self) -> dict:
        return {k: asdict(getattr(self, k)) for k in ("alpha", "beta", "gamma")}

    def check(self) -> dict[str, bool]:
        """Robbins-Monro and timescale-separation conditions, per sequence.

        A sequence that is identically zero is reported as satisfying the
        separation conditions but not the divergence condition.
        """
        out = {}
        for name in ("alpha", "beta", "gamma"):
            s = getattr(self, name)
            out[f"{name}_sum_diverges"] = s.sum_diverges()
            out[f"{name}_square_summable"] = s.square_sum_converges()
        out["beta_over_alpha_to_zero"] = self.beta.is_faster_than(self.alpha)
        out["gamma_over_beta_to_zero"] = self.gamma.is_faster_than(self.beta)
        return out

    def valid(self) -> bool:
        return all(self.check().values())
