"""Transition kernels that leave level-restricted densities invariant.

All kernels act on a batch of states (one chain per row) and are
stateless apart from the generator passed in.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr, ndtri

from .engine import Orientation

__all__ = [
    "InfeasibleState",
    "TransitionKernel",
    "GaussianLevelConstraint",
    "hit_and_run_step",
    "bitflip_step",
    "tau_step",
    "hit_and_run_kernel",
    "bitflip_kernel",
    "identity_kernel",
    "MAX_LINE_PROPOSALS",
]

MAX_LINE_PROPOSALS = 100


class InfeasibleState(ValueError):
    pass


@dataclass(frozen=True)
class TransitionKernel:
    """A batch step ``(states, rng) -> states`` plus a description of its target."""

    step: Callable[[np.ndarray, np.random.Generator], np.ndarray]
    target: str = ""

    def __call__(self, states, rng):
        return self.step(states, rng)


@dataclass(frozen=True)
class GaussianLevelConstraint:
    """``{x : S(x) >= threshold}`` (or ``<=`` for sub-level sets) under a standard Gaussian.

    ``line_profile``, when given, maps ``(x, d)`` to ``(breaks, values)``:
    sorted breakpoints ``(m, K)`` of ``lam -> S(x + lam d)`` and its constant
    values on the ``K + 1`` segments ``(m, K + 1)``.  Hit-and-Run then samples
    the line exactly instead of by rejection.
    """

    threshold: float
    performance: Callable[[np.ndarray], np.ndarray]
    orientation: Orientation = Orientation.SUPER
    line_profile: Callable | None = None

    def satisfied(self, x: np.ndarray) -> np.ndarray:
        s = self.orientation.sign
        return s * np.asarray(self.performance(x), dtype=float) >= s * self.threshold


def hit_and_run_step(x, constraint: GaussianLevelConstraint, rng, direction=None):
    """One Hit-and-Run move for the standard Gaussian restricted to ``constraint``.

    A uniform direction ``d`` is drawn for every row (unless ``direction`` is
    given).  Along the line ``x + lam*d`` the Gaussian conditional is
    ``normal(-x.d, 1)``; ``lam`` is drawn from it and rejected until the
    constraint holds, at most ``MAX_LINE_PROPOSALS`` times.  Rows that never
    accept keep their current value.

    Parameters
    ----------
    x : (dim,) or (m, dim) array
        Current states, all inside the constraint.
    direction : array broadcastable to ``x``, optional
        Unit directions; drawn uniformly on the sphere when omitted.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    m, dim = X.shape
    if direction is None:
        d = rng.standard_normal((m, dim))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
    else:
        d = np.broadcast_to(np.asarray(direction, dtype=float), (m, dim))
    centre = -np.einsum("ij,ij->i", X, d)
    if constraint.line_profile is not None:
        breaks, values = constraint.line_profile(X, d)
        s = constraint.orientation.sign
        lam = _truncated_line_normal(centre, breaks, s * values >= s * constraint.threshold, rng)
        out = X + lam[:, None] * d
        # a draw within rounding distance of a breakpoint may land outside
        out = np.where(constraint.satisfied(out)[:, None], out, X)
        return out[0] if single else out
    out = X.copy()
    pending = np.arange(m)
    for _ in range(MAX_LINE_PROPOSALS):
        lam = centre[pending] + rng.standard_normal(pending.size)
        proposal = X[pending] + lam[:, None] * d[pending]
        ok = constraint.satisfied(proposal)
        out[pending[ok]] = proposal[ok]
        pending = pending[~ok]
        if pending.size == 0:
            break
    return out[0] if single else out


def _truncated_line_normal(centre, breaks, feasible, rng):
    """Draw ``normal(centre, 1)`` restricted to the feasible segments between ``breaks``."""
    m = centre.size
    z = breaks - centre[:, None]
    edges = np.empty((m, z.shape[1] + 2))
    edges[:, 0], edges[:, -1] = -np.inf, np.inf
    edges[:, 1:-1] = z
    # lower-tail cdf for negative edges, upper tail for positive ones, to keep precision
    F, G = ndtr(edges), ndtr(-edges)
    upper_seg = edges[:, :-1] >= 0
    mass = np.where(upper_seg, G[:, :-1] - G[:, 1:], F[:, 1:] - F[:, :-1])
    mass = np.where(feasible, np.maximum(mass, 0.0), 0.0)
    cum = np.cumsum(mass, axis=1)
    total = cum[:, -1]
    u = rng.random(m) * total
    seg = np.minimum((cum <= u[:, None]).sum(axis=1), mass.shape[1] - 1)
    rows = np.arange(m)
    a, b = edges[rows, seg], edges[rows, seg + 1]
    v = rng.random(m)
    upper = upper_seg[rows, seg]
    # invert within the chosen segment on whichever tail is more accurate
    Ga, Gb, Fa, Fb = G[rows, seg], G[rows, seg + 1], F[rows, seg], F[rows, seg + 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        draw = np.where(upper, -ndtri(Ga - v * (Ga - Gb)), ndtri(Fa + v * (Fb - Fa)))
    draw = np.clip(draw, a, b)
    # a segment with underflowing mass (all feasible mass far out) keeps lam = 0
    bad = ~np.isfinite(draw) | (total <= 0)
    lam = centre + draw
    lam[bad] = 0.0
    return lam


def bitflip_step(x, w, b, rng, coords=None):
    """Single-site Metropolis move on ``{x in {0,1}^k : w.x <= b}``.

    Each row picks a coordinate uniformly (or takes it from ``coords``) and
    flips it when the result stays feasible.  The proposal is symmetric, so
    the uniform law on the feasible set is stationary.
    """
    x = np.asarray(x)
    single = x.ndim == 1
    X = np.atleast_2d(x).astype(np.int8, copy=True)
    w = np.asarray(w, dtype=float)
    load = X @ w
    if np.any(load > b):
        raise InfeasibleState(f"state violates w.x <= {b}")
    m, k = X.shape
    i = rng.integers(0, k, size=m) if coords is None else np.broadcast_to(coords, (m,))
    rows = np.arange(m)
    flipped = 1 - X[rows, i]
    new_load = load + np.where(flipped == 1, w[i], -w[i])
    accept = new_load <= b
    X[rows[accept], i[accept]] = flipped[accept]
    return X[0] if single else X


def tau_step(kernel, x, tau: int, rng):
    """Apply ``kernel`` ``tau`` times."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    for _ in range(tau):
        x = kernel(x, rng)
    return x


def hit_and_run_kernel(constraint: GaussianLevelConstraint) -> TransitionKernel:
    return TransitionKernel(
        lambda x, rng: hit_and_run_step(x, constraint, rng),
        f"std normal | S {'>=' if constraint.orientation is Orientation.SUPER else '<='} "
        f"{constraint.threshold:g}",
    )


def bitflip_kernel(w, b, lazy: bool = True) -> TransitionKernel:
    """Single-flip chain on ``{w.x <= b}``; the lazy version holds each row with probability 1/2.

    Without laziness the chain is periodic whenever every flip is feasible
    (e.g. ``k = 1``), and its ``tau``-step law never converges.
    """
    w = np.asarray(w, dtype=float)

    def step(x, rng):
        if not lazy:
            return bitflip_step(x, w, b, rng)
        X = np.atleast_2d(x)
        moved = bitflip_step(X, w, b, rng)
        out = np.where((rng.random(len(X)) < 0.5)[:, None], X, moved).astype(np.int8)
        return out[0] if np.ndim(x) == 1 else out

    return TransitionKernel(step, f"uniform on {{w.x <= {b:g}}}")


identity_kernel = TransitionKernel(lambda x, rng: x, "any")
