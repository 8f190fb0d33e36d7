"""Acceptance criteria, one test per criterion at its stated tolerance.

Each test records a ``PASS``/``FAIL`` line; the lines are printed in the
terminal summary (see ``conftest.py``) and when the module is run as a
script.  Runs produced along the way are collected for the engine-identity
criterion, which therefore runs last.
"""
import itertools
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
from scipy import stats

from conftest import check_identities
from stratsplit.bounds import ApproximationTarget, chernoff_m, epsdelta_samplesizes, hoeffding_m
from stratsplit.engine import RunConfig, percent_error, replicate
from stratsplit.kernels import GaussianLevelConstraint, bitflip_kernel, hit_and_run_step, tau_step
from stratsplit.models import credit, saw, wcm
from stratsplit.oracles import credit_cmc, knapsack_count, saw_count_exact, wcm_enumerate

RESULTS = {}
RUNS = []


@contextmanager
def criterion(number, title, budget):
    """Record the outcome of one criterion, including its runtime budget in seconds."""
    t0 = time.time()
    notes = []
    try:
        yield notes
    except BaseException as exc:
        RESULTS[number] = f"C{number} FAIL  {title} ({time.time() - t0:.1f}s): {exc}".replace("\n", " ")
        raise
    elapsed = time.time() - t0
    detail = "; ".join(notes)
    if elapsed > budget:
        RESULTS[number] = f"C{number} FAIL  {title}: {elapsed:.1f}s exceeds {budget}s budget; {detail}"
        pytest.fail(RESULTS[number])
    RESULTS[number] = f"C{number} PASS  {title} ({elapsed:.1f}s): {detail}"


def summary_lines():
    return [RESULTS[k] for k in sorted(RESULTS)]


def test_c1_unbiasedness():
    with criterion(1, "WCM tail mean of 2000 runs within 4 SE of 0.375", 30) as notes:
        inst = wcm.WcmInstance([1, 1, 2], 1)
        agg = wcm.wcm_tail(inst, RunConfig(N=100, burn_in=10, replications=2000, seed=101))
        RUNS.extend(agg.runs)
        z = (agg.mean - 0.375) / agg.std_error
        notes.append(f"mean={agg.mean:.5f} se={agg.std_error:.5f} z={z:+.2f}")
        assert abs(z) <= 4


@pytest.mark.slow
def test_c2_wcm_oracle():
    with criterion(2, "20 WCM instances k=12, tail and conditional mean within 3 SE", 300) as notes:
        rng = np.random.default_rng(202)
        worst = 0.0
        cfg = RunConfig(N=100, burn_in=10, replications=200, seed=202)
        for i in range(20):
            w = rng.uniform(1.0, 3.0, size=12)
            sums = (np.array(list(itertools.product((0, 1), repeat=12))) @ w)
            gamma = float(np.median(sums))
            tail, cond = wcm_enumerate(w, gamma)
            inst = wcm.WcmInstance(w, gamma)
            t = wcm.wcm_tail(inst, RunConfig(**{**cfg.__dict__, "seed": 202 + i}))
            c = wcm.wcm_condexp(inst, RunConfig(**{**cfg.__dict__, "seed": 202 + i}))
            RUNS.extend(t.runs)
            zt = (t.mean - tail.value) / t.std_error
            zc = (c.mean - cond.value) / c.std_error
            worst = max(worst, abs(zt), abs(zc))
            assert abs(zt) <= 3, f"instance {i}: tail z={zt:+.2f}"
            assert abs(zc) <= 3, f"instance {i}: conditional mean z={zc:+.2f}"
        notes.append(f"max |z| = {worst:.2f}")


def test_c3_level_ratio_bound():
    with criterion(3, "100 random knapsack instances satisfy |X_(b-w_min)|/|X_b| >= 1/(k+1)", 60) as notes:
        rng = np.random.default_rng(303)
        lowest = math.inf
        for _ in range(100):
            k = int(rng.integers(1, 13))
            w = rng.uniform(0.1, 5.0, size=k)
            b = rng.uniform(w.min(), w.sum())
            ratio = knapsack_count(w, b - w.min()) / knapsack_count(w, b)
            lowest = min(lowest, ratio * (k + 1))
            assert ratio >= wcm.wcm_r_lower_bound(k), f"k={k} ratio={ratio}"
        notes.append(f"min ratio*(k+1) = {lowest:.3f}")


def test_c4_saw_accuracy():
    with criterion(4, "SAW c_n at RE <= 3% within 3 RE of DFS counts", 600) as notes:
        for n in (5, 8, 10, 12, 14):
            agg = saw.estimate_cn(n, RunConfig(N=1000, seed=400 + n), re_target=0.03)
            RUNS.extend(agg.runs[:50])
            exact = saw_count_exact(n, symmetry=True)
            pe = percent_error(agg.mean, exact)
            notes.append(f"n={n} R={agg.R} re={100 * agg.re:.2f}% pe={pe:+.2f}%")
            assert agg.re <= 0.03
            assert abs(pe) <= 3 * agg.re * 100, f"n={n}: PE {pe:.2f}% vs RE {100 * agg.re:.2f}%"


@pytest.mark.slow
def test_c5_saw_growth():
    with criterion(5, "mu_hat(50) in [2.55, 2.75]; n^(1/4) <= Delta_n <= n", 900) as notes:
        agg = saw.estimate_cn(50, RunConfig(N=1000, seed=500), re_target=0.03)
        RUNS.extend(agg.runs[:20])
        mu = saw.mu_estimate(agg.mean, 50)
        notes.append(f"c_50={agg.mean:.4g} re={100 * agg.re:.2f}% mu={mu:.4f}")
        assert agg.re <= 0.03
        assert 2.55 <= mu <= 2.75
        for n in (10, 30, 50):
            runs = agg.runs if n == 50 else saw.saw_runs(n, RunConfig(N=1000, replications=20, seed=500 + n)).runs
            d = saw.delta_aggregate(runs).mean
            notes.append(f"Delta_{n}={d:.3f}")
            assert n**0.25 <= d <= n


@pytest.mark.slow
def test_c6_credit():
    with criterion(6, "credit: CMC agreement, CVaR ordering, RE < 5%", 600) as notes:
        pf = credit.glasserman_li_portfolio(30, 2, seed=1)
        vars_ = [9.0, 25.0, 50.0]
        moderate = 25.0
        # (a) and (b): one multi-VaR study with R = 20
        results, levels = credit.cvar_multi(pf, vars_, RunConfig(N=1000, burn_in=10, rho=0.1, replications=20, seed=600))
        RUNS.extend(results[0].tail.runs)
        tail_mc, cvar_mc = credit_cmc(pf, moderate, samples=10**7, seed=601)
        r = results[vars_.index(moderate)]
        zt = (r.tail.mean - tail_mc.value) / math.hypot(r.tail.std_error, tail_mc.standard_error)
        zc = (r.cvar.mean - cvar_mc.value) / math.hypot(r.cvar.std_error, cvar_mc.standard_error)
        notes.append(f"(a) v={moderate:g}: tail z={zt:+.2f}, cvar z={zc:+.2f}")
        assert abs(zt) <= 3 and abs(zc) <= 3
        for res in results:
            assert res.empty_runs == 0
            assert np.all(res.cvar.per_run >= res.v)
        for lo, hi in zip(results, results[1:]):
            tol = 2 * math.hypot(lo.cvar.std_error, hi.cvar.std_error)
            assert hi.cvar.mean >= lo.cvar.mean - tol
        notes.append("(b) c_j >= v_j per run, means ordered: " + ", ".join(f"{x.cvar.mean:.2f}" for x in results))
        # (c) the reference configuration N=1000, tau=50, R=6
        results, _ = credit.cvar_multi(pf, vars_, RunConfig(N=1000, burn_in=50, rho=0.1, replications=6, seed=610))
        RUNS.extend(results[0].tail.runs)
        cvar_re = [x.cvar.re for x in results]
        tail_re = [x.tail.re for x in results]
        notes.append("(c) cvar RE " + ", ".join(f"{100 * e:.2f}%" for e in cvar_re))
        notes.append("tail RE (informational) " + ", ".join(f"{100 * e:.2f}%" for e in tail_re))
        assert max(cvar_re) < 0.05


def test_c8_bounds():
    with criterion(8, "bounds hand checks and monotonicity grid", 1) as notes:
        h = hoeffding_m(1, 2, 0.1, 0.05)
        m = epsdelta_samplesizes(ApproximationTarget(0.1, 0.05, 2, 0.5))[0].min_X
        notes.append(f"hoeffding={h} min_X={m}")
        for eps1, eps2 in itertools.combinations((0.05, 0.1, 0.2, 0.5), 2):
            for d1, d2 in itertools.combinations((0.01, 0.05, 0.1), 2):
                for r in (0.1, 0.3, 0.5):
                    for n in (1, 2, 5):
                        hi = epsdelta_samplesizes(ApproximationTarget(eps1, d1, n, r))[0].min_X
                        assert hi >= epsdelta_samplesizes(ApproximationTarget(eps2, d1, n, r))[0].min_X
                        assert hi >= epsdelta_samplesizes(ApproximationTarget(eps1, d2, n, r))[0].min_X
                        assert hi <= epsdelta_samplesizes(ApproximationTarget(eps1, d1, n + 1, r))[0].min_X
                assert hoeffding_m(1, 2, eps1, d1) >= hoeffding_m(1, 2, eps2, d2)
                assert chernoff_m(0.3, eps1, d1) >= chernoff_m(0.3, eps2, d2)
        assert h == 2952
        assert m == math.ceil(12288 * math.log(320) / 0.0025)


@pytest.mark.xfail(
    strict=True,
    reason="ceil(3 ln 40 / (0.000625 * 0.25)) = ceil(70826.49) = 70827; the stated 70828 is off by one",
)
def test_c8_chernoff_hand_value():
    with criterion(8, "bounds hand checks and monotonicity grid", 1) as notes:
        c = chernoff_m(0.5, 0.1, 0.05)
        notes.append(f"chernoff={c}")
        assert c == 70828, f"chernoff_m(0.5, 0.1, 0.05) = {c}, expected 70828"


def test_c9_kernel_stationarity():
    with criterion(9, "bit-flip TV < 0.02 on k <= 4; Hit-and-Run line law KS p > 1e-3", 120) as notes:
        rng = np.random.default_rng(909)
        worst = 0.0
        for w, b in [([1.0, 1.0], 1.0), ([1.0, 2.0, 3.0], 3.0), ([1.0, 1.0, 1.0, 1.0], 2.0), ([0.7, 1.3, 2.1, 2.9], 3.5)]:
            k = len(w)
            x = tau_step(bitflip_kernel(w, b), np.zeros((100_000, k), dtype=np.int8), 100, rng)
            codes = x @ (1 << np.arange(k))
            feasible = [c for c in range(2**k) if sum(w[i] for i in range(k) if c >> i & 1) <= b]
            freq = np.bincount(codes, minlength=2**k)[feasible] / len(x)
            tv = 0.5 * np.abs(freq - 1 / len(feasible)).sum()
            worst = max(worst, tv)
            assert tv < 0.02
        free = GaussianLevelConstraint(-math.inf, lambda s: np.zeros(len(s)))
        X = np.tile([2.0, -1.0, 0.5], (50_000, 1))
        d = np.array([0.6, 0.8, 0.0])
        lam = (hit_and_run_step(X, free, rng, direction=d) - X) @ d
        p = stats.kstest(lam, "norm", args=(-(X[0] @ d), 1.0)).pvalue
        notes.append(f"max TV={worst:.4f}, KS p={p:.3f}")
        assert p > 1e-3


def test_c7_engine_identities():
    with criterion(7, "accounting, telescoping and thread determinism", 120) as notes:
        if not RUNS:
            RUNS.extend(wcm.wcm_tail(wcm.WcmInstance([1, 1, 2], 1), RunConfig(N=50, burn_in=5, replications=50)).runs)
        for run in RUNS:
            check_identities(run, tol=1e-12)
        inst = wcm.WcmInstance([1, 2, 2, 3], 3)
        spec, levels = wcm.wcm_spec(inst), wcm.wcm_levels(inst)
        one = replicate(spec, levels, RunConfig(N=100, burn_in=5, replications=12, seed=7))
        four = replicate(spec, levels, RunConfig(N=100, burn_in=5, replications=12, seed=7, threads=4))
        assert one.per_run.tobytes() == four.per_run.tobytes() and one.runs == four.runs
        notes.append(f"{len(RUNS)} runs checked; threads 1 vs 4 byte-identical")


if __name__ == "__main__":
    import sys

    code = pytest.main([__file__, "-q"])
    print("\n".join(summary_lines()))
    sys.exit(code)
