"""Acceptance criteria, each run at its stated tolerance.

Reference values are themselves Monte Carlo estimates produced at a relative
variance of the mean of 0.001, so their standard error is taken as
``ref * sqrt(0.001)`` and combined in quadrature with ours.  Every criterion
prints one PASS/FAIL line, repeated in the terminal summary.
"""

import math

import numpy as np
import pytest
from scipy import stats

from gilbert_rare.core import RngStream, Window
from gilbert_rare.estimators import Estimator, TrialConfig, estimate, relative_variance
from gilbert_rare.graph import EventKind, EventSpec, GraphState
from gilbert_rare.oracles import (brute_force_pn, brute_force_statistics, hard_sphere_1d_exact, hard_sphere_pn_1d,
                                  probe_blocking_soundness)

VERDICTS: list[str] = []
REF_RV_OF_MEAN = 1e-3
NMC, CMC, IS = Estimator.NMC, Estimator.CMC, Estimator.IS

_CACHE: dict = {}


def verdict(number: int, ok: bool, detail: str):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS.append(line)
    print(line)
    return ok


def run(lam, kappa, kind, ell, est, K=None, d=2, target=1e-3, m_min=1000, m_max=10_000_000, seed=1,
        max_seconds=None):
    key = (lam, kappa, kind, ell, est, K, d, target, m_min, m_max, seed, max_seconds)
    if key not in _CACHE:
        cfg = TrialConfig(Window(d, lam), kappa, EventSpec(kind, ell), grid_K=K if est is IS else None)
        _CACHE[key] = estimate(cfg, est, target_rv_of_mean=target, m_min=m_min, m_max=m_max,
                               base_seed=seed, max_seconds=max_seconds)
    return _CACHE[key]


def z_vs_ref(rep, ref):
    se = math.hypot(rep.std_err, ref * math.sqrt(REF_RV_OF_MEAN))
    return abs(rep.mean - ref) / se


# Table 1/2 cells: kappa -> (reference, IS grid)
T12 = {0.1: (0.31, 100), 0.2: (1.81e-2, 100), 0.3: (3.65e-4, 100), 0.4: (3.46e-6, 300)}
EC = EventKind.EDGE_COUNT


def t12(kappa, est, K=None):
    if kappa == 0.4 and est is IS:
        return run(10.0, 0.4, EC, 0, IS, K=K or 300, m_min=5000)  # shared with the grid study
    if kappa == 0.4 and est is NMC:
        return run(10.0, 0.4, EC, 0, NMC, m_max=300_000)  # allowed to end as no-hit / relaxed
    return run(10.0, kappa, EC, 0, est, K=K or T12[kappa][1])


def test_criterion_01_table_1_2_means():
    parts, ok = [], True
    for kappa, (ref, K) in T12.items():
        for est in (NMC, CMC, IS):
            rep = t12(kappa, est)
            if kappa == 0.4 and est is NMC and rep.status != "converged":
                consistent = rep.status == "no-hit" and rep.ci_high >= ref or (
                    rep.status != "no-hit" and z_vs_ref(rep, ref) <= 4)
                parts.append(f"k={kappa} nmc {rep.status} m={rep.m} (allowed)")
                ok &= consistent
                continue
            z = z_vs_ref(rep, ref)
            ok &= z <= 4 and rep.status == "converged"
            parts.append(f"k={kappa} {est.value}={rep.mean:.4g} ({z:.2f} SE)")
    assert verdict(1, ok, "; ".join(parts))


def test_criterion_02_variance_ordering_at_0_2():
    rv = {est: t12(0.2, est).rv for est in (NMC, CMC, IS)}
    ref = {NMC: 54.28, CMC: 9.95, IS: 0.54}
    ordered = rv[IS] < rv[CMC] < rv[NMC]
    within = all(0.5 <= rv[e] / ref[e] <= 2.0 for e in ref)
    assert verdict(2, ordered and within, "RV " + ", ".join(
        f"{e.value}={rv[e]:.4g} (ref {ref[e]})" for e in (IS, CMC, NMC)))


def test_criterion_03_grid_refinement():
    reps = [run(10.0, 0.4, EC, 0, IS, K=K, m_min=5000) for K in (100, 200, 300)]
    ok = True
    steps = []
    for a, b in zip(reps, reps[1:]):
        comb = math.hypot(a.rv_se, b.rv_se)
        ok &= b.rv - a.rv <= 2 * comb
        steps.append(f"{a.rv:.3g}->{b.rv:.3g} (+-{comb:.2g})")
    assert verdict(3, ok, "RV_IS 100/200/300: " + ", ".join(steps) + " (ref 2.42 -> 0.97 -> 0.65)")


MD = EventKind.MAX_DEGREE
T4 = [(1.0, 4, 3.56e-3), (1.5, 4, 1.06e-8), (2.0, 5, 3.09e-12)]
T4_SECONDS = 30.0  # same wall-clock budget for both estimators in every row


def _p_star_upper_bound(n0=320, trials=20_000):
    """Independent upper bound on P(MD <= 4) at kappa = 1 on [0, 20]^2.

    Heredity gives p_n <= p_{n0} for n >= n0, hence
    p* <= P(N < n0) + P(N >= n0) * p_{n0}; p_{n0} is bounded by a 99.9%
    Clopper-Pearson limit from plain uniform sampling.
    """
    res = brute_force_pn(Window(2, 20.0), EventSpec(MD, 4), n0, trials, RngStream.oracle(4, 0).gen)
    hits = round(res.value * trials)
    p_hi = stats.beta.ppf(0.999, hits + 1, trials - hits)
    f_below = stats.poisson.cdf(n0 - 1, 400.0)
    return f_below + (1 - f_below) * p_hi, hits


def test_criterion_04_table_4():
    parts, ok_rv = [], True
    for kappa, ell, _ in T4:
        c = run(20.0, kappa, MD, ell, CMC, target=1e-3, m_min=1000, seed=4, max_seconds=T4_SECONDS)
        i = run(20.0, kappa, MD, ell, IS, K=200, target=1e-3, m_min=1000, seed=4, max_seconds=T4_SECONDS)
        ok_rv &= i.rv < c.rv
        parts.append(f"({kappa:g},{ell}) cmc={c.mean:.3g}/rv {c.rv:.3g}/m {c.m}, is={i.mean:.3g}/rv {i.rv:.3g}/m {i.m}")
    first = run(20.0, 1.0, MD, 4, IS, K=200, target=1e-3, m_min=1000, seed=4, max_seconds=T4_SECONDS)
    z = z_vs_ref(first, 3.56e-3)
    bound, hits = _p_star_upper_bound()
    parts.insert(0, f"mean at (1,4): {first.mean:.3g} vs 3.56e-3 ({z:.3g} SE); "
                    f"oracle bound p* <= {bound:.2e} (p_320: {hits} hits / 2e4); RV_IS<RV_CMC all rows: {ok_rv}")
    assert verdict(4, z <= 4 and ok_rv, "; ".join(parts))


def test_criterion_05_table_3_order_of_magnitude():
    rep = run(20.0, 0.3, EC, 0, IS, K=200, target=0.05, m_min=1000, seed=3)
    ratio = rep.mean / 6.7e-15
    assert verdict(5, 0.5 <= ratio <= 2.0 and rep.status == "converged",
                   f"IS(200^2) mean {rep.mean:.4g} (ratio {ratio:.3f} to 6.7e-15), rv {rep.rv:.3g}, m {rep.m}, relaxed")


def test_criterion_06_exact_oracle_1d():
    parts, ok = [], True
    for beta in (2.0, 5.0, 8.0):
        exact = hard_sphere_1d_exact(10.0, beta).value
        for est in (NMC, CMC, IS):
            rep = run(10.0, beta / 10.0, EC, 0, est, K=100, d=1, seed=6)
            z = abs(rep.mean - exact) / rep.std_err
            ok &= z <= 4
            parts.append(f"b={beta:g} {est.value} {z:.2f}SE")
    g = RngStream.oracle(6, 1).gen
    worst = 0.0
    for n in range(9):
        bf = brute_force_pn(Window(1, 10.0), EventSpec(EC, 0), n, 100_000, g)
        pn = hard_sphere_pn_1d(10.0, n)
        if bf.std_err == 0:
            ok &= bf.value == pn
        else:
            worst = max(worst, abs(bf.value - pn) / bf.std_err)
    ok &= worst <= 4
    parts.append(f"brute p_n (n<=8) worst {worst:.2f}SE")
    assert verdict(6, ok, "; ".join(parts))


SOUND_CASES = [(EventKind.EDGE_COUNT, 2, 0.3), (EventKind.MAX_DEGREE, 3, 0.6), (EventKind.MAX_COMPONENT, 3, 0.5),
               (EventKind.MAX_CLIQUE, 2, 0.8), (EventKind.TRIANGLE_COUNT, 1, 0.8)]


def test_criterion_07_blocking_soundness():
    parts, ok = [], True
    rng = np.random.default_rng(np.random.SeedSequence(7))
    for kind, ell, kappa in SOUND_CASES:
        for K in (50, 100):
            cfg = TrialConfig(Window(2, 10.0), kappa, EventSpec(kind, ell), grid_K=K)
            v = p = 0
            while p < 100_000:
                rep = probe_blocking_soundness(cfg, 50, 200, rng)
                v += rep.violations
                p += rep.probes
            ok &= v == 0
            parts.append(f"{kind.value}/K={K}: {v} of {p}")
    assert verdict(7, ok, "; ".join(parts))


def test_criterion_08_property_suite():
    rng = np.random.default_rng(8)
    failures = []
    kinds = list(EventKind)
    # hereditary monotonicity and incremental vs brute-force statistics
    for t in range(300):
        kind = kinds[t % 5]
        s = GraphState(EventSpec(kind, int(rng.integers(0, 4))))
        pts = rng.random((int(rng.integers(1, 51)), 2)) * 4
        flags = [s.add_point(p).still_in_A for p in pts]
        if any(b and not a for a, b in zip(flags, flags[1:])):
            failures.append("hereditary")
        ref = brute_force_statistics(pts)
        if any(s.statistic(k) != ref[k] for k in kinds):
            failures.append("statistics")
    # L trace, F_Poi(M) identity and replay
    from gilbert_rare.estimators import run_cmc_trial, run_is_trial
    for kind, ell, kappa in SOUND_CASES:
        cfg = TrialConfig(Window(2, 10.0), kappa, EventSpec(kind, ell), grid_K=100)
        for i in range(40):
            a = run_is_trial(cfg, RngStream(80, i), record=True)
            b = run_is_trial(cfg, RngStream(80, i), record=True)
            tr = a.l_trace
            if not (tr[0] == 1 and all(0 <= x <= 1 for x in tr) and all(x >= y for x, y in zip(tr, tr[1:]))):
                failures.append("L trace")
            if a.value != b.value or tr != b.l_trace:
                failures.append("IS replay")
            c = run_cmc_trial(cfg, RngStream(80, i))
            if c.value != cfg.poisson.F(c.points_generated):
                failures.append("F_Poi(M)")
            if c.value != run_cmc_trial(cfg, RngStream(80, i)).value:
                failures.append("CMC replay")
    again = estimate(TrialConfig(Window(2, 10.0), 0.2, EventSpec(EC, 0)), CMC, m_min=1000, base_seed=1)
    if again.mean != t12(0.2, CMC).mean:
        failures.append("estimate replay")
    assert verdict(8, not failures, "all properties hold" if not failures else f"failed: {sorted(set(failures))}")


def test_criterion_09_growing_window():
    delta, d = 1.5, 2
    rv = {CMC: [], IS: []}
    for beta in (20.0, 40.0, 80.0):
        lam = beta ** (delta / d)
        kappa = beta ** (1 - delta)
        K = math.ceil(10 * lam)
        for est in (CMC, IS):
            rv[est].append(run(lam, kappa, EC, 0, est, K=K, target=0.01, seed=12).rv)
    g = {e: [b / a for a, b in zip(v, v[1:])] for e, v in rv.items()}
    ok = all(gi < gc for gi, gc in zip(g[IS], g[CMC]))
    assert verdict(9, ok, f"growth ratios IS {[round(x, 3) for x in g[IS]]} vs CMC {[round(x, 3) for x in g[CMC]]}")


def test_criterion_10_unbiasedness_agreement():
    reps = {e: t12(0.2, e) for e in (NMC, CMC, IS)}
    worst, parts = 0.0, []
    es = list(reps)
    for i, a in enumerate(es):
        for b in es[i + 1:]:
            z = abs(reps[a].mean - reps[b].mean) / math.hypot(reps[a].std_err, reps[b].std_err)
            worst = max(worst, z)
            parts.append(f"{a.value}-{b.value} {z:.2f}SE")
    assert verdict(10, worst <= 4, ", ".join(parts))
