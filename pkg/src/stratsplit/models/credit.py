"""Normal-copula portfolio credit risk.

Obligor ``i`` defaults when ``a_i.z + b_i*eps_i > x_i`` with systematic
factors ``z ~ N(0, I_d)``, idiosyncratic ``eps ~ N(0, I_k)``,
``b_i = sqrt(1 - |a_i|^2)`` and ``x_i = Phi^{-1}(1 - p_i)``.  The splitting
runs in the ``d + k`` dimensional latent space with the portfolio loss as
performance function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from ..engine import (
    AggregateEstimate,
    LevelSchedule,
    Orientation,
    ProblemSpec,
    RunConfig,
    SsaRun,
    StallError,
    aggregate,
    pilot_run,
    replicate,
)
from ..kernels import GaussianLevelConstraint, hit_and_run_kernel


@dataclass(frozen=True)
class Portfolio:
    loadings: np.ndarray  # (k, d)
    losses: np.ndarray  # (k,)
    default_probs: np.ndarray  # (k,)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.loadings, dtype=float))
        l = np.asarray(self.losses, dtype=float).ravel()
        p = np.asarray(self.default_probs, dtype=float).ravel()
        if not (A.shape[0] == l.size == p.size):
            raise ValueError("loadings, losses and default_probs disagree on k")
        if np.any(np.einsum("ij,ij->i", A, A) >= 1.0):
            raise ValueError("every loading row must have norm < 1")
        if np.any(l <= 0):
            raise ValueError("losses must be positive")
        if np.any((p <= 0) | (p >= 1)):
            raise ValueError("default probabilities must lie in (0, 1)")
        object.__setattr__(self, "loadings", A)
        object.__setattr__(self, "losses", l)
        object.__setattr__(self, "default_probs", p)

    @property
    def k(self) -> int:
        return self.losses.size

    @property
    def d(self) -> int:
        return self.loadings.shape[1]

    @property
    def dim(self) -> int:
        return self.d + self.k

    @property
    def idiosyncratic(self) -> np.ndarray:
        return np.sqrt(1.0 - np.einsum("ij,ij->i", self.loadings, self.loadings))

    @property
    def thresholds(self) -> np.ndarray:
        return norm.isf(self.default_probs)

    @property
    def total_loss(self) -> float:
        return float(self.losses.sum())

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "d": self.d,
            "loadings": self.loadings.tolist(),
            "losses": self.losses.tolist(),
            "default_probs": self.default_probs.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Portfolio":
        if "generator" in data:
            g = data["generator"]
            return glasserman_li_portfolio(int(g["k"]), int(g["d"]), int(g.get("seed", 0)))
        pf = cls(data["loadings"], data["losses"], data["default_probs"])
        if pf.k != data.get("k", pf.k) or pf.d != data.get("d", pf.d):
            raise ValueError("declared k/d do not match the arrays")
        return pf


def glasserman_li_portfolio(k: int, d: int, seed: int = 0) -> Portfolio:
    """Synthetic portfolio in the style of the Glasserman-Li factor models.

    ``p_i = 0.01 (1 + sin(16 pi i / k))``, ``l_i = ceil(5 i / k)^2`` and
    loadings uniform on ``(0, 1/sqrt(d))``, for ``i = 1..k``.
    """
    if k < 1 or d < 1:
        raise ValueError("k and d must be >= 1")
    i = np.arange(1, k + 1)
    p = 0.01 * (1.0 + np.sin(16.0 * np.pi * i / k))
    # sin can hit -1 up to rounding; keep p strictly positive
    p = np.clip(p, 1e-12, None)
    l = np.ceil(5.0 * i / k) ** 2
    rng = np.random.default_rng(seed)
    hi = 1.0 / math.sqrt(d)
    A = rng.uniform(0.0, hi, size=(k, d))
    A = np.where(A <= 0.0, hi * 1e-12, A)  # open interval
    return Portfolio(A, l, p)


def default_indicators(pf: Portfolio, s) -> np.ndarray:
    """Default vector(s) for latent state(s) ``s = (z, eps)``."""
    s = np.asarray(s, dtype=float)
    z = s[..., : pf.d]
    eps = s[..., pf.d :]
    return (z @ pf.loadings.T + pf.idiosyncratic * eps > pf.thresholds).astype(np.int8)


def loss(pf: Portfolio, s) -> np.ndarray:
    return default_indicators(pf, s) @ pf.losses


def loss_line_profile(pf: Portfolio):
    """Breakpoints and segment losses of ``lam -> L(x + lam d)``, row by row.

    Obligor ``i`` is in default on one open half-line of ``lam`` whose end
    point is where ``a_i.z + b_i eps_i - x_i`` changes sign.
    """
    A, b, thr, l = pf.loadings, pf.idiosyncratic, pf.thresholds, pf.losses

    def profile(x, d):
        u = x[:, : pf.d] @ A.T + b * x[:, pf.d :] - thr
        g = d[:, : pf.d] @ A.T + b * d[:, pf.d :]
        with np.errstate(divide="ignore", invalid="ignore"):
            cross = np.where(g != 0, -u / g, np.inf)
        # far left, obligors with g < 0 are in default (g == 0: fixed status)
        left = np.where(g < 0, 1.0, np.where(g == 0, (u > 0).astype(float), 0.0)) @ l
        order = np.argsort(cross, axis=1)
        breaks = np.take_along_axis(cross, order, axis=1)
        delta = np.where(g > 0, l, np.where(g < 0, -l, 0.0))
        jumps = np.take_along_axis(delta, order, axis=1)
        values = np.concatenate([left[:, None], left[:, None] + np.cumsum(jumps, axis=1)], axis=1)
        return breaks, values

    return profile


def credit_spec(pf: Portfolio, integrand=None, exact_lines: bool = True) -> ProblemSpec:
    """Splitting problem on the latent Gaussian with ``S = L`` (super-level sets).

    With ``exact_lines`` the Hit-and-Run line draws use the piecewise
    constant loss profile; otherwise they fall back to capped rejection.
    """

    def performance(x):
        return loss(pf, x)

    def sample_initial(rng, m):
        return rng.standard_normal((m, pf.dim))

    profile = loss_line_profile(pf) if exact_lines else None

    def kernel_factory(t, level):
        return hit_and_run_kernel(
            GaussianLevelConstraint(level, performance, line_profile=profile)
        )

    return ProblemSpec(
        sample_initial,
        performance,
        integrand or performance,
        kernel_factory,
        Orientation.SUPER,
        "credit",
    )


def credit_levels(pf: Portfolio, vars_, config: RunConfig, spec=None):
    """Pilot schedule from 0 towards the total loss with every VaR inserted as a level.

    Returns ``(schedule, pilot_run)``.  Near the total loss a level can be
    so rare that no particle improves on it; the schedule then stops there,
    which costs nothing since the top stratum covers the remaining range.
    """
    spec = spec or credit_spec(pf)
    try:
        return pilot_run(spec, config, mandatory=vars_, start=0.0, terminal=pf.total_loss)
    except StallError as exc:
        return exc.schedule, exc.run


@dataclass(frozen=True)
class CvarResult:
    v: float
    cvar: AggregateEstimate
    tail: AggregateEstimate
    # replications where no particle reached v
    empty_runs: int = 0


def _level_index(levels: LevelSchedule, v: float) -> int:
    idx = [t for t, g in enumerate(levels.thresholds) if g == float(v)]
    if not idx:
        raise ValueError(f"{v} is not a level of the schedule")
    return idx[0]


def tail_from_run(run: SsaRun, j: int) -> float:
    """``P(L >= gamma_j)`` as the product of the first ``j`` entrance ratios."""
    return math.prod(r.R_hat for r in run.strata[:j])


def cvar_from_run(run: SsaRun, j: int) -> float:
    """Ratio of the stratum sums above level ``gamma_j``; NaN if those strata are empty."""
    upper = run.strata[j:]
    p = math.fsum(r.P_hat for r in upper)
    if p == 0.0:
        return math.nan
    return math.fsum(r.C_hat for r in upper) / p


def cvar_multi(pf: Portfolio, vars_, config: RunConfig, levels: LevelSchedule | None = None):
    """CVaRs ``E[L | L >= v_j]`` (and tail probabilities) for all ``v_j`` from shared runs.

    The integrand is the loss itself; for each ``v_j`` the strata above it
    are combined per run.  The ratio form is consistent but not exactly
    unbiased.  Replications with no particle above ``v_j`` are left out of
    that CVaR's aggregate and counted in ``empty_runs``.
    """
    vars_ = [float(v) for v in vars_]
    if vars_ != sorted(vars_):
        raise ValueError("VaR levels must be ascending")
    spec = credit_spec(pf)
    prefix = ()
    if levels is None:
        levels, pilot = credit_levels(pf, vars_, config, spec)
        if config.pool_pilot:
            prefix = (pilot,)
    agg = replicate(spec, levels, config, prefix_runs=prefix)
    out = []
    for v in vars_:
        j = _level_index(levels, v)
        cv = np.array([cvar_from_run(r, j) for r in agg.runs])
        ok = ~np.isnan(cv)
        tails = [tail_from_run(r, j) for r in agg.runs]
        out.append(CvarResult(v, aggregate(cv[ok]), aggregate(tails), int((~ok).sum())))
    return out, levels


def tail_prob(pf: Portfolio, v: float, config: RunConfig, levels: LevelSchedule | None = None):
    """``P(L >= v)``; exactly 1 for ``v <= 0`` and exactly 0 for ``v`` above the total loss."""
    v = float(v)
    if v <= 0.0:
        return aggregate(np.ones(config.replications))
    if v > pf.total_loss:
        return aggregate(np.zeros(config.replications))
    results, _ = cvar_multi(pf, [v], config, levels)
    return results[0].tail
