"""Brute-force ground truth for small instances.

Nothing here reuses the model code: weights, walks and defaults are
re-implemented directly so that agreement is evidence, not tautology.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtri

__all__ = [
    "OracleResult",
    "TooLarge",
    "RefuseRareRegime",
    "wcm_enumerate",
    "saw_exact",
    "saw_count_exact",
    "saw_delta_exact",
    "credit_cmc",
]

WCM_MAX_K = 24
SAW_MAX_N = 18
MIN_HITS = 1000


class TooLarge(ValueError):
    pass


class RefuseRareRegime(ValueError):
    pass


@dataclass(frozen=True)
class OracleResult:
    value: float
    method: str  # "enumeration", "dfs" or "plain_mc"
    work: int
    standard_error: float = 0.0


def _all_sums(w):
    # subset sums in index order of the bit pattern, built by doubling
    sums = np.zeros(1)
    for wi in w:
        sums = np.concatenate([sums, sums + wi])
    return sums


def wcm_enumerate(w, gamma, tol: float = 1e-9):
    """Exact ``P(S <= gamma)`` and ``E[S | S <= gamma]`` over all ``2^k`` states.

    The conditional mean is NaN when no state qualifies.
    """
    w = [float(v) for v in np.ravel(w)]
    k = len(w)
    if k > WCM_MAX_K:
        raise TooLarge(f"k={k} exceeds the enumeration cap {WCM_MAX_K}")
    sums = _all_sums(w)
    hit = sums <= gamma + tol
    count = int(hit.sum())
    tail = count / 2.0**k
    cond = float(sums[hit].mean()) if count else math.nan
    work = 2**k
    return OracleResult(tail, "enumeration", work), OracleResult(cond, "enumeration", work)


def knapsack_count(w, b, tol: float = 1e-9) -> int:
    """``|{x in {0,1}^k : w.x <= b}|`` by enumeration."""
    return int((_all_sums(list(np.ravel(w))) <= b + tol).sum())


_MOVES = ((1, 0), (-1, 0), (0, 1), (0, -1))


def _dfs(n):
    counts = 0
    dist = 0.0
    visited = {(0, 0)}
    work = 0

    def go(x, y, left):
        nonlocal counts, dist, work
        work += 1
        if left == 0:
            counts += 1
            dist += math.hypot(x, y)
            return
        for dx, dy in _MOVES:
            p = (x + dx, y + dy)
            if p not in visited:
                visited.add(p)
                go(p[0], p[1], left - 1)
                visited.remove(p)

    go(0, 0, n)
    return counts, dist, work


def _dfs_symmetric(n):
    # first step fixed to +x (4 rotations); the first turn fixed to +y (2 reflections)
    counts = 0
    dist = 0.0
    work = 0
    visited = {(0, 0), (1, 0)}

    def go(x, y, left, weight, turned):
        nonlocal counts, dist, work
        work += 1
        if left == 0:
            counts += weight
            dist += weight * math.hypot(x, y)
            return
        for dx, dy in _MOVES:
            if not turned and dy == -1:
                continue
            p = (x + dx, y + dy)
            if p in visited:
                continue
            visited.add(p)
            if not turned and dy == 1:
                go(p[0], p[1], left - 1, 2, True)
            else:
                go(p[0], p[1], left - 1, weight, turned)
            visited.remove(p)

    go(1, 0, n - 1, 1, False)
    return 4 * counts, 4 * dist, work


@lru_cache(maxsize=None)
def saw_exact(n: int, symmetry: bool = False):
    """``(c_n, mean end-to-end distance, nodes visited)`` by depth-first enumeration."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n > SAW_MAX_N:
        raise TooLarge(f"n={n} exceeds the DFS cap {SAW_MAX_N}")
    if n == 0:
        return 1, 0.0, 1
    counts, dist, work = _dfs_symmetric(n) if symmetry else _dfs(n)
    return counts, dist / counts, work


def saw_count_exact(n: int, symmetry: bool = False) -> int:
    return saw_exact(n, symmetry)[0]


def saw_delta_exact(n: int, symmetry: bool = False) -> float:
    return saw_exact(n, symmetry)[1]


def credit_cmc(pf, v: float, samples: int = 10**7, seed: int = 0, chunk: int = 200_000):
    """Plain Monte Carlo ``P(L >= v)`` and ``E[L | L >= v]`` with standard errors.

    Refuses when ``v`` exceeds the total loss or fewer than 1000 samples
    land in ``{L >= v}``.
    """
    A = np.atleast_2d(np.asarray(pf.loadings, dtype=float))
    l = np.asarray(pf.losses, dtype=float)
    p = np.asarray(pf.default_probs, dtype=float)
    k, d = A.shape
    if v > l.sum():
        raise RefuseRareRegime(f"v={v} exceeds the total loss {l.sum()}")
    # default iff eps_i > (x_i - a_i.z) / b_i
    x = ndtri(1.0 - p)
    b = np.sqrt(1.0 - (A**2).sum(axis=1))
    rng = np.random.default_rng(seed)
    hits = 0
    s1 = s2 = 0.0
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        z = rng.standard_normal((m, d))
        eps = rng.standard_normal((m, k))
        cut = (x[None, :] - z @ A.T) / b[None, :]
        L = np.where(eps > cut, l[None, :], 0.0).sum(axis=1)
        sel = L[L >= v]
        hits += sel.size
        s1 += sel.sum()
        s2 += (sel**2).sum()
        done += m
    if hits < MIN_HITS:
        raise RefuseRareRegime(f"only {hits} of {samples} samples reach v={v}")
    tail = hits / samples
    tail_se = math.sqrt(tail * (1 - tail) / samples)
    mean = s1 / hits
    var = max(s2 / hits - mean**2, 0.0)
    # conditional mean as a ratio estimator: se ~ sd(L | hit) / sqrt(hits)
    cond_se = math.sqrt(var / hits)
    return (
        OracleResult(tail, "plain_mc", samples, tail_se),
        OracleResult(mean, "plain_mc", samples, cond_se),
    )
