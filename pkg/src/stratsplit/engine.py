"""
Stratified splitting estimator for expectations ``E_f[phi(X)]``.

The state space is partitioned into strata by the level sets of a
performance function ``S``.  A population of ``N`` particles is pushed
through the levels: at each level the particles that fall out of the next
level set form the stratum sample ``Z_t``, the survivors ``Y_t`` are split
back to ``N`` particles with an MCMC kernel that leaves the next
conditional density invariant.  Per stratum we keep a crude Monte Carlo
estimate of the conditional mean of ``phi`` and a product-form estimate of
the stratum probability; their products sum to an unbiased estimate of the
integral.

States are numpy arrays whose first axis indexes particles, so models and
kernels work on whole populations at once.
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Orientation",
    "ProblemSpec",
    "LevelSchedule",
    "RunConfig",
    "StratumRecord",
    "SsaRun",
    "AggregateEstimate",
    "SsaError",
    "EmptyInitialSample",
    "ZeroSurvivors",
    "StallError",
    "ZeroTruth",
    "derive_rng",
    "split_allocation",
    "stratum_estimates",
    "run_ssa",
    "run_issa",
    "pilot_levels",
    "pilot_run",
    "merge_levels",
    "replicate",
    "replicate_to_re",
    "aggregate",
    "percent_error",
]


class SsaError(Exception):
    """Base class for estimator failures."""


class EmptyInitialSample(SsaError, ValueError):
    pass


class ZeroSurvivors(SsaError, ValueError):
    pass


class ZeroTruth(SsaError, ValueError):
    pass


class StallError(SsaError):
    """Adaptive level selection could not move past a level below the terminal one.

    The schedule built so far (closed with the sentinel) is kept on
    ``schedule`` and the adaptive pass on ``run``, so callers can still
    use them.
    """

    def __init__(self, message, schedule, run=None):
        super().__init__(message)
        self.schedule = schedule
        self.run = run


class Orientation(enum.Enum):
    SUPER = "super"  # X_t = {S >= gamma_t}
    SUB = "sub"  # X_t = {S <= gamma_t}

    @property
    def sign(self) -> float:
        return 1.0 if self is Orientation.SUPER else -1.0

    @property
    def sentinel(self) -> float:
        return math.inf if self is Orientation.SUPER else -math.inf


@dataclass(frozen=True)
class ProblemSpec:
    """Model contract consumed by the engine.

    Parameters
    ----------
    sample_initial : callable ``(rng, m) -> states``
        ``m`` exact draws from ``f``, stacked along axis 0.
    performance : callable ``states -> (m,) array``
        The level function ``S``.
    integrand : callable ``states -> (m,) array``
        The function ``phi`` whose expectation is estimated.
    kernel_factory : callable ``(t, gamma) -> kernel``
        Returns a batch transition kernel ``kernel(states, rng) -> states``
        that leaves ``f`` restricted to ``{S >= gamma}`` (``{S <= gamma}``
        for ``Orientation.SUB``) invariant.  ``t`` is the index of the
        level whose particles the kernel produces.
    orientation : Orientation
    """

    sample_initial: Callable[[np.random.Generator, int], np.ndarray]
    performance: Callable[[np.ndarray], np.ndarray]
    integrand: Callable[[np.ndarray], np.ndarray]
    kernel_factory: Callable[[int, float], Callable]
    orientation: Orientation = Orientation.SUPER
    name: str = ""

    def with_integrand(self, integrand) -> "ProblemSpec":
        return ProblemSpec(
            self.sample_initial,
            self.performance,
            integrand,
            self.kernel_factory,
            self.orientation,
            self.name,
        )


@dataclass(frozen=True)
class LevelSchedule:
    """Thresholds ``gamma_0 .. gamma_n``; ``gamma_n`` should make ``X_n`` empty."""

    thresholds: tuple
    orientation: Orientation = Orientation.SUPER

    def __post_init__(self):
        g = tuple(float(x) for x in self.thresholds)
        object.__setattr__(self, "thresholds", g)
        if len(g) < 2:
            raise ValueError("a schedule needs at least gamma_0 and gamma_n")
        if any(math.isnan(x) for x in g):
            raise ValueError("NaN threshold")
        s = self.orientation.sign
        if any(s * b <= s * a for a, b in zip(g, g[1:])):
            raise ValueError(
                f"thresholds must be strictly monotone ({self.orientation.value}-level): {g}"
            )

    @property
    def n(self) -> int:
        """Number of strata."""
        return len(self.thresholds) - 1

    def inside(self, t: int, perf: np.ndarray) -> np.ndarray:
        """Membership mask for ``X_t``."""
        s = self.orientation.sign
        return s * np.asarray(perf, dtype=float) >= s * self.thresholds[t]

    def stratum_of(self, perf: np.ndarray) -> np.ndarray:
        """Stratum index ``t`` (1-based) with ``x`` in ``Z_t``; 0 if below ``gamma_0``."""
        s = self.orientation.sign
        keys = s * np.asarray(perf, dtype=float)
        edges = s * np.asarray(self.thresholds)
        return np.searchsorted(edges, keys, side="right")


@dataclass(frozen=True)
class RunConfig:
    N: int = 1000
    burn_in: int = 50
    rho: float = 0.1
    replications: int = 10
    seed: int = 0
    mode: str = "ssa"
    # count the pilot pass as one replication (e.g. R = 1 + 5)
    pool_pilot: bool = False
    threads: int = 1
    # population of each restart in ISSA mode; None means N
    issa_inner: int | None = None

    def __post_init__(self):
        if self.N < 1:
            raise EmptyInitialSample("N must be >= 1")
        if self.burn_in < 1:
            raise ValueError("burn_in must be >= 1")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.mode not in ("ssa", "issa"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass(frozen=True)
class StratumRecord:
    t: int
    size_X: int
    size_Z: int
    R_hat: float
    P_hat: float
    H_hat: float
    C_hat: float
    empty: bool = False

    @property
    def size_Y(self) -> int:
        return self.size_X - self.size_Z


@dataclass(frozen=True)
class SsaRun:
    strata: tuple
    estimate: float
    log_level_products: tuple
    degenerate_flags: tuple
    levels: LevelSchedule | None = None

    @property
    def P_hats(self) -> np.ndarray:
        return np.array([r.P_hat for r in self.strata])

    @property
    def C_hats(self) -> np.ndarray:
        return np.array([r.C_hat for r in self.strata])

    @property
    def R_hats(self) -> np.ndarray:
        return np.array([r.R_hat for r in self.strata])

    @property
    def extinct(self) -> bool:
        """True when every particle left before the last stratum."""
        return any(r.size_X == 0 for r in self.strata)


@dataclass(frozen=True)
class AggregateEstimate:
    mean: float
    re: float
    per_run: np.ndarray
    R: int
    runs: tuple = field(default=(), repr=False, compare=False)

    @property
    def std_error(self) -> float:
        if self.R < 2:
            return math.nan
        return float(np.std(self.per_run, ddof=1) / math.sqrt(self.R))


def derive_rng(seed, *key) -> np.random.Generator:
    """Independent generator for stream ``key`` under root ``seed``.

    The derivation is positional (SeedSequence spawn keys), so the stream
    for a given key does not depend on how many other streams were drawn.
    """
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(key)))


def split_allocation(size_Y: int, N: int, rng: np.random.Generator) -> np.ndarray:
    """Offspring counts ``floor(N/|Y|) + K_i`` with exactly ``N mod |Y|`` of the K_i equal to 1."""
    if size_Y < 1:
        raise ZeroSurvivors("cannot split an empty survivor set")
    base, extra = divmod(int(N), int(size_Y))
    counts = np.full(size_Y, base, dtype=np.int64)
    if extra:
        counts[rng.choice(size_Y, size=extra, replace=False)] += 1
    return counts


def stratum_estimates(phi_values, R_hats: Sequence[float]):
    """Return ``(H_hat, P_hat, C_hat, empty)`` for stratum ``t = len(R_hats) - 1``.

    ``R_hats[0]`` must be 1.  An empty stratum sample gives ``H_hat = 0``
    and ``empty = True``.
    """
    R = [float(r) for r in R_hats]
    if not R or R[0] != 1.0:
        raise ValueError("R_hats[0] must equal 1")
    if any(r < 0.0 or r > 1.0 for r in R):
        raise ValueError("R_hat values must lie in [0, 1]")
    phi = np.asarray(phi_values, dtype=float)
    empty = phi.size == 0
    H = 0.0 if empty else float(phi.mean())
    P = (1.0 - R[-1]) * math.prod(R[:-1])
    return H, P, H * P, empty


def _tau_step(kernel, states, tau, rng):
    for _ in range(tau):
        states = kernel(states, rng)
    return states


def _split(survivors, N, kernel, tau, rng):
    """Grow ``survivors`` into ``N`` particles, ``M_i`` chained tau-step draws per survivor."""
    counts = split_allocation(len(survivors), N, rng)
    chains = np.array(survivors, copy=True)
    out = []
    for j in range(1, int(counts.max()) + 1):
        idx = np.flatnonzero(counts >= j)
        moved = _tau_step(kernel, chains[idx], tau, rng)
        chains[idx] = moved
        out.append(moved)
    return np.concatenate(out, axis=0)


def _populate(spec, levels, N, tau, rng, upto=None):
    """Particle sets ``X_1 .. X_upto`` with their performances.

    Stops early, returning fewer sets, once a level has no survivors.
    """
    upto = levels.n if upto is None else upto
    states = spec.sample_initial(rng, N)
    sets = []
    for t in range(1, upto + 1):
        perf = np.asarray(spec.performance(states), dtype=float)
        sets.append((states, perf))
        if t == upto:
            break
        up = levels.inside(t, perf)
        if not up.any():
            break
        kernel = spec.kernel_factory(t + 1, levels.thresholds[t])
        states = _split(states[up], N, kernel, tau, rng)
    return sets


def _assemble(spec, levels, sets) -> SsaRun:
    records = []
    R_hats = [1.0]
    log_prod = 0.0
    log_products = []
    flags = []
    for t in range(1, levels.n + 1):
        if t <= len(sets) and len(sets[t - 1][1]) > 0:
            states, perf = sets[t - 1]
            up = levels.inside(t, perf)
            size_X = len(perf)
            size_Z = int(size_X - up.sum())
            R = (size_X - size_Z) / size_X
            phi = spec.integrand(states[~up]) if size_Z else ()
        else:
            size_X = size_Z = 0
            R = 0.0
            phi = ()
        R_hats.append(R)
        H, P, C, empty = stratum_estimates(phi, R_hats)
        records.append(StratumRecord(t, size_X, size_Z, R, P, H, C, empty))
        log_prod = log_prod + math.log(R) if R > 0.0 else -math.inf
        log_products.append(log_prod)
        flags.append(empty)
    estimate = math.fsum(r.C_hat for r in records)
    return SsaRun(tuple(records), estimate, tuple(log_products), tuple(flags), levels)


def run_ssa(spec: ProblemSpec, levels: LevelSchedule, config: RunConfig, seed=None) -> SsaRun:
    """One pass of the stratified splitting algorithm.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``; it
    defaults to ``config.seed``.
    """
    if levels.orientation is not spec.orientation:
        raise ValueError("schedule and problem orientation differ")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    return _assemble(spec, levels, _populate(spec, levels, config.N, config.burn_in, rng))


def run_issa(spec: ProblemSpec, levels: LevelSchedule, config: RunConfig, seed=None) -> SsaRun:
    """Independent variant: the particles of each level come from distinct restarts.

    Level 1 is ``N`` direct draws from ``f``.  Particle ``i`` of level ``t``
    is the first particle that a fresh, independent splitting pass (with
    population ``config.issa_inner``) places in ``X_t``; restarts that die
    earlier are discarded.  Levels use disjoint restarts, so the level sets
    are independent of each other as well.
    """
    if levels.orientation is not spec.orientation:
        raise ValueError("schedule and problem orientation differ")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    N = config.N
    inner = config.issa_inner or N
    max_restarts = 100 * N
    first = spec.sample_initial(rng, N)
    sets = [(first, np.asarray(spec.performance(first), dtype=float))]
    for t in range(2, levels.n + 1):
        picked = []
        restarts = 0
        while len(picked) < N and restarts < max_restarts:
            restarts += 1
            lineage = _populate(spec, levels, inner, config.burn_in, rng, upto=t)
            if len(lineage) == t:
                picked.append(lineage[-1][0][:1])
        if not picked:
            break
        states = np.concatenate(picked, axis=0)
        sets.append((states, np.asarray(spec.performance(states), dtype=float)))
    return _assemble(spec, levels, sets)


def merge_levels(adaptive, mandatory, orientation=Orientation.SUPER):
    """Sorted union of two threshold collections in the schedule's direction."""
    merged = sorted(set(map(float, adaptive)) | set(map(float, mandatory)))
    return merged if orientation is Orientation.SUPER else merged[::-1]


def _quantile_level(keys, rho):
    # keys are sign-adjusted performances; the ceil(rho*m)-th largest
    m = len(keys)
    k = max(1, math.ceil(rho * m))
    return float(np.partition(keys, m - k)[m - k])


def pilot_run(
    spec: ProblemSpec,
    config: RunConfig,
    mandatory=(),
    start=None,
    terminal=None,
    seed=None,
    max_levels=10_000,
    retries=1,
):
    """Adaptive pass fixing the thresholds for later unbiased runs.

    Each new level is the ``ceil(rho*N)``-th best performance among the
    current particles (ties qualify, so more than ``rho*N`` may survive),
    capped at the next mandatory level.  If that quantile does not improve
    on the current level, the smallest strictly better performance is used
    instead.  When no particle improves, the population is re-mixed at the
    same level up to ``retries`` times.  The pass ends when the level
    reaches ``terminal`` or when no particle improves on the current level;
    mandatory levels not reached by then are appended.

    Returns the schedule and the pass itself assembled as an ``SsaRun``
    (biased as an estimate; only pooled on request).

    Raises
    ------
    StallError
        No particle improves on a level that is still short of ``terminal``.
    """
    o = spec.orientation
    s = o.sign
    rng = np.random.default_rng(
        seed if seed is not None else np.random.SeedSequence(config.seed, spawn_key=(0,))
    )
    gamma0 = -o.sentinel if start is None else float(start)
    term_key = None if terminal is None else s * float(terminal)
    pending = sorted(s * float(v) for v in mandatory if s * float(v) > s * gamma0)
    keys_levels = [s * gamma0]
    sets = []
    stalled = None
    stuck = 0

    states = spec.sample_initial(rng, config.N)
    while len(keys_levels) < max_levels:
        perf = np.asarray(spec.performance(states), dtype=float)
        sets.append((states, perf))
        keys = s * perf
        current = keys_levels[-1]
        if term_key is not None and current >= term_key:
            break
        nxt = _quantile_level(keys, config.rho)
        if nxt <= current:
            better = keys[keys > current]
            if better.size == 0:
                inside = keys >= current
                if term_key is not None and stuck < retries and inside.any():
                    # re-mix the population at the same level before giving up
                    stuck += 1
                    sets.pop()
                    kernel = spec.kernel_factory(len(keys_levels), s * current)
                    states = _split(states[inside], config.N, kernel, config.burn_in, rng)
                    continue
                if term_key is not None:
                    stalled = current
                break
            nxt = float(better.min())
        stuck = 0
        while pending and pending[0] <= current:
            pending.pop(0)
        if pending and pending[0] < nxt:
            nxt = pending.pop(0)
        if term_key is not None and nxt > term_key:
            nxt = term_key
        keys_levels.append(nxt)
        up = keys >= nxt
        kernel = spec.kernel_factory(len(keys_levels), s * nxt)
        states = _split(states[up], config.N, kernel, config.burn_in, rng)

    # mandatory levels past the adaptive range become fixed levels
    keys_levels.extend(v for v in pending if v > keys_levels[-1])
    schedule = LevelSchedule(tuple(s * k for k in keys_levels) + (o.sentinel,), o)
    while len(sets) < schedule.n:
        states, perf = sets[-1]
        t = len(sets)
        up = schedule.inside(t, perf)
        if not up.any():
            break
        kernel = spec.kernel_factory(t + 1, schedule.thresholds[t])
        states = _split(states[up], config.N, kernel, config.burn_in, rng)
        sets.append((states, np.asarray(spec.performance(states), dtype=float)))
    run = _assemble(spec, schedule, sets)
    if stalled is not None:
        raise StallError(f"no particle improves on level {s * stalled!r}", schedule, run)
    return schedule, run


def pilot_levels(spec: ProblemSpec, config: RunConfig, **kwargs) -> LevelSchedule:
    """Schedule from :func:`pilot_run`; keyword arguments are passed through."""
    return pilot_run(spec, config, **kwargs)[0]


def aggregate(values, runs=()) -> AggregateEstimate:
    """Mean and relative error ``std / (mean * sqrt(R))`` of replicated estimates.

    ``re`` is NaN for a single replication and ``inf`` for a zero mean.
    """
    per_run = np.asarray(values, dtype=float)
    R = per_run.size
    mean = float(per_run.mean()) if R else math.nan
    if R < 2:
        re = math.nan
    elif mean == 0.0:
        re = math.inf
    else:
        re = float(np.std(per_run, ddof=1) / (abs(mean) * math.sqrt(R)))
    return AggregateEstimate(mean, re, per_run, R, tuple(runs))


def _runner(config):
    return run_issa if config.mode == "issa" else run_ssa


def _replicate_runs(spec, levels, config, indices):
    runner = _runner(config)

    def one(j):
        return runner(spec, levels, config, derive_rng(config.seed, 1, j))

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            return list(pool.map(one, indices))
    return [one(j) for j in indices]


def replicate(
    spec: ProblemSpec,
    levels: LevelSchedule,
    config: RunConfig,
    statistic: Callable[[SsaRun], float] | None = None,
    prefix_runs: Sequence[SsaRun] = (),
) -> AggregateEstimate:
    """``config.replications`` independent runs, summarised by ``statistic`` (default: the estimate).

    Replication ``j`` always uses stream ``(1, j)`` of ``config.seed``, so the
    result does not depend on ``config.threads``.  ``prefix_runs`` (e.g. a
    pooled pilot pass) count towards the replication total.
    """
    fresh = max(config.replications - len(prefix_runs), 0)
    runs = list(prefix_runs) + _replicate_runs(spec, levels, config, range(fresh))
    stat = statistic or (lambda r: r.estimate)
    return aggregate([stat(r) for r in runs], runs)


def replicate_to_re(
    spec: ProblemSpec,
    levels: LevelSchedule,
    config: RunConfig,
    re_target: float,
    statistic: Callable[[SsaRun], float] | None = None,
    min_reps: int = 20,
    batch: int = 10,
    max_reps: int = 100_000,
) -> AggregateEstimate:
    """Add replications in batches until the estimated RE drops to ``re_target``."""
    stat = statistic or (lambda r: r.estimate)
    runs = []
    values = []
    target = max(min_reps, 2)
    while True:
        new = _replicate_runs(spec, levels, config, range(len(runs), target))
        runs.extend(new)
        values.extend(stat(r) for r in new)
        agg = aggregate(values, runs)
        if agg.re <= re_target or len(runs) >= max_reps:
            return agg
        target = min(len(runs) + batch, max_reps)


def percent_error(estimate: float, truth: float) -> float:
    if truth == 0:
        raise ZeroTruth("percent error undefined for zero truth")
    return 100.0 * (estimate - truth) / truth
