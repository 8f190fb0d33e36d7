"""Weighted component model: ``S(x) = w.x`` for uniform ``x`` in ``{0,1}^k``.

Two quantities are estimated: the tail probability ``P(S <= gamma)`` via
splitting over the knapsack sets ``{w.x <= b}``, and the conditional mean
``E[S | S <= gamma]`` from near-uniform samples of ``{w.x <= gamma}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..bounds import hoeffding_m
from ..engine import (
    AggregateEstimate,
    LevelSchedule,
    Orientation,
    ProblemSpec,
    RunConfig,
    aggregate,
    derive_rng,
    replicate,
)
from ..kernels import bitflip_kernel

# absorbs rounding in float sums sitting exactly on a level
SLACK = 1e-9


class NonPositiveLevels(ValueError):
    pass


@dataclass(frozen=True)
class WcmInstance:
    w: np.ndarray
    gamma: float

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).ravel()
        if w.size == 0 or np.any(w <= 0):
            raise ValueError("weights must be positive")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def k(self) -> int:
        return self.w.size

    @property
    def w_min(self) -> float:
        return float(self.w.min())

    @property
    def w_max(self) -> float:
        return float(self.w.max())

    @property
    def total(self) -> float:
        return float(self.w.sum())

    def performance(self, x):
        return np.asarray(x, dtype=float) @ self.w


def wcm_level_count(inst: WcmInstance) -> int:
    if inst.gamma > inst.total:
        raise NonPositiveLevels(f"gamma={inst.gamma} exceeds total weight {inst.total}")
    return int(math.floor((inst.total - inst.gamma) / inst.w_min + SLACK))


def wcm_levels(inst: WcmInstance) -> LevelSchedule:
    """``gamma_t = gamma + (n - t) * w_min`` for ``t = 0..n``, closed by ``-inf``."""
    n = wcm_level_count(inst)
    g = [inst.gamma + (n - t) * inst.w_min for t in range(n + 1)]
    return LevelSchedule(tuple(g) + (-math.inf,), Orientation.SUB)


def _excluded_states(inst: WcmInstance, top: float) -> int:
    # only the all-ones vector can exceed gamma_0 (> total - w_min)
    return int(inst.total > top + SLACK)


def wcm_spec(inst: WcmInstance, top: float | None = None) -> ProblemSpec:
    """Tail-probability problem on ``X_{gamma_0}``: integrand ``1{S <= gamma}``."""
    if top is None:
        top = wcm_levels(inst).thresholds[0]
    w = inst.w
    k = inst.k
    gamma = inst.gamma
    excluded = _excluded_states(inst, top)

    def sample_initial(rng, m):
        x = rng.integers(0, 2, size=(m, k), dtype=np.int8)
        if excluded:
            bad = x @ w > top + SLACK
            while bad.any():
                x[bad] = rng.integers(0, 2, size=(int(bad.sum()), k), dtype=np.int8)
                bad = x @ w > top + SLACK
        return x

    def performance(x):
        return x @ w

    def integrand(x):
        return (x @ w <= gamma + SLACK).astype(float)

    def kernel_factory(t, level):
        return bitflip_kernel(w, level + SLACK)

    return ProblemSpec(
        sample_initial, performance, integrand, kernel_factory, Orientation.SUB, "wcm"
    )


def wcm_tail(inst: WcmInstance, config: RunConfig) -> AggregateEstimate:
    """Estimate ``P(S <= gamma)``.

    The splitting runs on ``X_{gamma_0}``; the mass of the (at most one)
    state above ``gamma_0`` is added back exactly.
    """
    levels = wcm_levels(inst)
    top = levels.thresholds[0]
    spec = wcm_spec(inst, top)
    excluded = _excluded_states(inst, top)
    scale = (2.0**inst.k - excluded) / 2.0**inst.k
    # the excluded state is all-ones; it counts only if total <= gamma
    extra = excluded * float(inst.total <= inst.gamma + SLACK) / 2.0**inst.k
    return replicate(spec, levels, config, lambda run: run.estimate * scale + extra)


def wcm_condexp(
    inst: WcmInstance,
    config: RunConfig,
    epsilon: float | None = None,
    delta: float | None = None,
    mixing_steps: int | None = None,
) -> AggregateEstimate:
    """Estimate ``E[S | S <= gamma]`` from near-uniform samples of ``{w.x <= gamma}``.

    Every replication runs ``m`` independent bit-flip chains from the zero
    vector for ``mixing_steps`` steps (default ``max(burn_in, 20 k)``) and
    averages ``S`` over their end points.  ``m`` is ``config.N`` unless
    ``epsilon`` and ``delta`` are given, in which case the Hoeffding sample
    size for the range ``[w_min, max(gamma, w_min)]`` of the nonzero values
    of ``S`` on ``{S <= gamma}`` is used.
    """
    if inst.gamma < 0:
        raise ValueError("{S <= gamma} is empty for negative gamma")
    if epsilon is not None and delta is not None:
        m = max(hoeffding_m(inst.w_min, max(inst.gamma, inst.w_min), epsilon, delta), 1)
    else:
        m = config.N
    steps = mixing_steps or max(config.burn_in, 20 * inst.k)
    kernel = bitflip_kernel(inst.w, inst.gamma + SLACK)

    def one(j):
        rng = derive_rng(config.seed, 2, j)
        x = np.zeros((m, inst.k), dtype=np.int8)
        for _ in range(steps):
            x = kernel(x, rng)
        return float(np.mean(x @ inst.w))

    return aggregate([one(j) for j in range(config.replications)])


def wcm_r_lower_bound(k: int) -> float:
    """Guaranteed lower bound on ``|X_{b - w_min}| / |X_b|`` for ``b >= w_min``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return 1.0 / (k + 1)
