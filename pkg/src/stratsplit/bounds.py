"""Sample-size planners for (epsilon, delta)-approximation with the independent sampler.

All sample counts are rounded up to integers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

__all__ = [
    "InvalidTarget",
    "ApproximationTarget",
    "LevelPlan",
    "epsdelta_samplesizes",
    "hoeffding_m",
    "hoeffding_tv",
    "chernoff_m",
    "chernoff_tv",
]


class InvalidTarget(ValueError):
    pass


def _check_eps_delta(epsilon, delta):
    if not (0.0 < epsilon < 1.0 and 0.0 < delta < 1.0):
        raise InvalidTarget(f"need 0 < epsilon, delta < 1; got {epsilon}, {delta}")


@dataclass(frozen=True)
class ApproximationTarget:
    """Accuracy goal and per-level problem constants.

    ``r_lower[t]`` is ``min(r_t, 1 - r_t)``; ``a[t]``/``b[t]`` bound the
    integrand on stratum ``t``.  Scalars are broadcast to all ``n`` levels;
    ``a``/``b`` may be omitted for indicator problems.
    """

    epsilon: float
    delta: float
    n: int
    r_lower: Sequence[float] | float
    a: Sequence[float] | float | None = None
    b: Sequence[float] | float | None = None

    def __post_init__(self):
        _check_eps_delta(self.epsilon, self.delta)
        if self.n < 1:
            raise InvalidTarget("n must be >= 1")
        object.__setattr__(self, "r_lower", self._per_level(self.r_lower))
        if any(not 0.0 < r <= 0.5 for r in self.r_lower):
            raise InvalidTarget("r_lower values must lie in (0, 0.5]")
        if (self.a is None) != (self.b is None):
            raise InvalidTarget("give both a and b, or neither")
        if self.a is not None:
            a = self._per_level(self.a)
            b = self._per_level(self.b)
            if any(x <= 0 for x in a) or any(y < x for x, y in zip(a, b)):
                raise InvalidTarget("need 0 < a_t <= b_t")
            object.__setattr__(self, "a", a)
            object.__setattr__(self, "b", b)

    def _per_level(self, v):
        if isinstance(v, (int, float)):
            return (float(v),) * self.n
        v = tuple(float(x) for x in v)
        if len(v) != self.n:
            raise InvalidTarget(f"expected {self.n} per-level values, got {len(v)}")
        return v


@dataclass(frozen=True)
class LevelPlan:
    t: int
    tv_X: float
    min_X: int
    tv_Z: float | None
    min_Z: int | None


def epsdelta_samplesizes(target: ApproximationTarget) -> list[LevelPlan]:
    """Per-level total-variation budgets and minimum ``|X_t|``, ``|Z_t|``.

    ``tv_Z``/``min_Z`` are ``None`` when no integrand range was given; a
    constant stratum (``a_t == b_t``) needs no ``Z`` samples and has an
    unconstrained budget (``inf``).
    """
    eps, delta, n = target.epsilon, target.delta, target.n
    plans = []
    for t in range(n):
        r = target.r_lower[t]
        tv_x = eps * r / (32 * n)
        min_x = math.ceil(3072 * n**2 * math.log(4 * n**2 / delta) / (eps**2 * r**2))
        tv_z = min_z = None
        if target.a is not None:
            a, b = target.a[t], target.b[t]
            if b == a:
                tv_z, min_z = math.inf, 0
            else:
                tv_z = eps * a / (16 * (b - a))
                min_z = math.ceil(128 * (b - a) ** 2 * math.log(4 * n / delta) / (eps**2 * a**2))
        plans.append(LevelPlan(t + 1, tv_x, min_x, tv_z, min_z))
    return plans


def hoeffding_m(a: float, b: float, epsilon: float, delta: float) -> int:
    """Samples for a relative (epsilon, delta) mean estimate of a variable in ``[a, b]``, ``a > 0``."""
    _check_eps_delta(epsilon, delta)
    if not (a > 0 and b >= a):
        raise InvalidTarget(f"need 0 < a <= b; got a={a}, b={b}")
    return math.ceil((b - a) ** 2 * math.log(2 / delta) / (2 * (epsilon / 4) ** 2 * a**2))


def hoeffding_tv(a: float, b: float, epsilon: float) -> float:
    return math.inf if b == a else epsilon * a / (4 * (b - a))


def chernoff_m(p_lower: float, epsilon: float, delta: float) -> int:
    """Samples for a relative (epsilon, delta) estimate of a Bernoulli mean known to be >= ``p_lower``."""
    _check_eps_delta(epsilon, delta)
    if not 0.0 < p_lower <= 1.0:
        raise InvalidTarget(f"p_lower must lie in (0, 1]; got {p_lower}")
    return math.ceil(3 * math.log(2 / delta) / ((epsilon / 4) ** 2 * p_lower**2))


def chernoff_tv(p_lower: float, epsilon: float) -> float:
    return epsilon * p_lower / 4
