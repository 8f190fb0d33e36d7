"""Self-avoiding walks on the square lattice.

A state is a vector of ``n`` directions drawn uniformly from
``{Left, Right, Up, Down}``.  Its performance is the length of the longest
self-avoiding prefix, and the levels are ``0, 1, ..., n``.  Given a walk
whose first ``t`` steps avoid themselves, resampling the remaining
directions is an exact draw from the next conditional density, so that
is the splitting kernel.
"""
from __future__ import annotations

import math

import numpy as np

from ..engine import (
    AggregateEstimate,
    LevelSchedule,
    Orientation,
    ProblemSpec,
    RunConfig,
    SsaRun,
    aggregate,
    replicate,
    replicate_to_re,
)
from ..kernels import TransitionKernel

LEFT, RIGHT, UP, DOWN = range(4)
STEPS = np.array([(-1, 0), (1, 0), (0, 1), (0, -1)], dtype=np.int64)
_LETTERS = {"L": LEFT, "R": RIGHT, "U": UP, "D": DOWN}

MU_LOWER, MU_UPPER = 2.62002, 2.679192495


class NonPositive(ValueError):
    pass


def as_directions(walk) -> np.ndarray:
    """Accepts ``"RRL"``, ``["R", "U"]`` or integer codes."""
    if isinstance(walk, str):
        walk = list(walk)
    out = [(_LETTERS[c.upper()] if isinstance(c, str) else int(c)) for c in walk]
    return np.asarray(out, dtype=np.int8)


def positions(dirs) -> np.ndarray:
    """Lattice points visited, origin first; shape ``(..., m + 1, 2)``."""
    dirs = np.asarray(dirs, dtype=np.int64)
    steps = STEPS[dirs]
    pos = np.cumsum(steps, axis=-2)
    origin = np.zeros(pos.shape[:-2] + (1, 2), dtype=np.int64)
    return np.concatenate([origin, pos], axis=-2)


def prefix_lengths(dirs) -> np.ndarray:
    """Longest self-avoiding prefix of every row of ``dirs`` (shape ``(m, n)``)."""
    dirs = np.atleast_2d(np.asarray(dirs))
    m, n = dirs.shape
    if n == 0:
        return np.zeros(m, dtype=np.int64)
    pos = positions(dirs)
    span = 2 * n + 1
    codes = (pos[..., 0] + n) * span + (pos[..., 1] + n)
    order = np.argsort(codes, axis=1, kind="stable")
    sorted_codes = np.take_along_axis(codes, order, axis=1)
    repeat = sorted_codes[:, 1:] == sorted_codes[:, :-1]
    # with a stable sort the later visit of a repeated point sits second
    later = np.where(repeat, order[:, 1:], n + 1)
    first_repeat = later.min(axis=1)
    return np.minimum(first_repeat - 1, n)


def saw_prefix_length(walk, n: int | None = None) -> int:
    """Largest ``t <= n`` such that the first ``t`` steps visit ``t + 1`` distinct points."""
    dirs = as_directions(walk)
    if n is not None:
        dirs = dirs[:n]
    seen = {(0, 0)}
    x = y = 0
    for t, d in enumerate(dirs):
        dx, dy = STEPS[d]
        x, y = x + int(dx), y + int(dy)
        if (x, y) in seen:
            return t
        seen.add((x, y))
    return len(dirs)


def endpoint_distance(dirs) -> np.ndarray:
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.int64))
    end = STEPS[dirs].sum(axis=1)
    return np.hypot(end[:, 0], end[:, 1])


def saw_levels(n: int) -> LevelSchedule:
    return LevelSchedule(tuple(range(n + 1)) + (math.inf,), Orientation.SUPER)


def saw_spec(n: int, quantity: str = "count") -> ProblemSpec:
    """``quantity='count'``: integrand ``1{walk is a SAW}``; ``'delta'``: endpoint distance."""
    if n < 1:
        raise ValueError("n must be >= 1")

    def sample_initial(rng, m):
        return rng.integers(0, 4, size=(m, n), dtype=np.int8)

    def performance(x):
        return prefix_lengths(x)

    if quantity == "count":

        def integrand(x):
            return (prefix_lengths(x) >= n).astype(float)

    elif quantity == "delta":
        integrand = endpoint_distance
    else:
        raise ValueError(f"unknown quantity {quantity!r}")

    def kernel_factory(t, level):
        keep = int(level)

        def step(x, rng):
            x = x.copy()
            x[:, keep:] = rng.integers(0, 4, size=(x.shape[0], n - keep), dtype=np.int8)
            return x

        return TransitionKernel(step, f"uniform suffix after {keep} self-avoiding steps")

    return ProblemSpec(sample_initial, performance, integrand, kernel_factory, Orientation.SUPER, "saw")


def log_count(run: SsaRun, n: int) -> float:
    """``log c_hat_n = n log 4 + log prod R_hat``; ``-inf`` on extinction."""
    return n * math.log(4.0) + run.log_level_products[n - 1]


def count_from_run(run: SsaRun, n: int) -> float:
    return math.exp(log_count(run, n))


def delta_from_run(run: SsaRun) -> float:
    last = run.strata[-1]
    return math.nan if last.size_Z == 0 else last.H_hat


def _saw_config(config: RunConfig) -> RunConfig:
    # the suffix resampler is exact, extra steps add nothing
    return config if config.burn_in == 1 else RunConfig(**{**config.__dict__, "burn_in": 1})


def saw_runs(n: int, config: RunConfig, re_target: float | None = None, **kw) -> AggregateEstimate:
    """Replicated runs with the endpoint-distance integrand; ``per_run`` holds ``c_hat_n``."""
    spec = saw_spec(n, "delta")
    levels = saw_levels(n)
    cfg = _saw_config(config)
    stat = lambda run: count_from_run(run, n)  # noqa: E731
    if re_target is None:
        return replicate(spec, levels, cfg, stat)
    return replicate_to_re(spec, levels, cfg, re_target, stat, **kw)


def estimate_cn(n: int, config: RunConfig, re_target: float | None = None, **kw) -> AggregateEstimate:
    """Number of SAWs of length ``n``: ``4^n`` times the product of level ratios."""
    return saw_runs(n, config, re_target, **kw)


def delta_aggregate(runs) -> AggregateEstimate:
    vals = np.array([delta_from_run(r) for r in runs])
    return aggregate(vals[~np.isnan(vals)], runs)


def estimate_delta(n: int, config: RunConfig, re_target: float | None = None, **kw) -> AggregateEstimate:
    """Mean distance of the SAW end point from the origin (runs that go extinct are dropped)."""
    return delta_aggregate(saw_runs(n, config, re_target, **kw).runs)


def mu_estimate(c_hat: float, n: int) -> float:
    if c_hat <= 0 or n < 1:
        raise NonPositive("need c_hat > 0 and n >= 1")
    return math.exp(math.log(c_hat) / n)
