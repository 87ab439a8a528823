"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Sizes follow the criteria exactly; runtime budgets are asserted where stated.
"""

import math
import time

import numpy as np
import pytest

from sdpolymer.experiments.config import ExperimentConfig
from sdpolymer.experiments.runs import (
    beta_sweep,
    certificate_from_batch,
    coarse_grain_observables,
    decay_exponent,
    estimate_masses,
    localization_rows,
    run_replicas,
    ReplicaBatch,
)
from sdpolymer.field import FieldRegion, sample_field
from sdpolymer.model import DisorderSpec, ModelParams
from sdpolymer.oracle import (
    EnumerationBudget,
    enumerate_irreducible_annealed,
    enumerate_quenched,
    enumerate_quenched_tilted,
)
from sdpolymer.renewal import (
    build_annealed_series,
    compute_mu0,
    default_radius,
    deconvolve_irreducible,
    estimate_annealed_mass,
    local_clt_envelope_check,
    renewal_theorem_product,
    return_series_closed,
    sample_markov_renewal,
    survival_tail_fit,
)
from sdpolymer.slab import SlabSystem, solve_backward, solve_free_partition

BERN = DisorderSpec.bernoulli(0.5, 1.0)


def _random_instances(n, seed=2024):
    rng = np.random.default_rng(seed)
    laws = [
        lambda: DisorderSpec.bernoulli(float(rng.uniform(0.1, 0.9)), float(rng.uniform(0.5, 2.0))),
        lambda: DisorderSpec.exponential(float(rng.uniform(0.5, 2.0))),
        lambda: DisorderSpec.gamma(float(rng.uniform(0.5, 3.0)), float(rng.uniform(0.3, 1.5))),
    ]
    out = []
    for i in range(n):
        d = int(rng.integers(1, 3))
        spec = laws[int(rng.integers(0, 3))]()
        params = ModelParams.for_spec(d, float(rng.uniform(0.5, 1.5)), float(rng.uniform(0.0, 2.0)), spec)
        out.append(dict(d=d, L=int(rng.integers(1, 4)), params=params, spec=spec,
                        W=int(rng.integers(1, 4)), D=int(rng.integers(1, 4)), seed=int(rng.integers(0, 2**31)), rid=i))
    return out


@pytest.fixture(scope="module")
def oracle_instances():
    budget = EnumerationBudget(40)
    rows = []
    for inst in _random_instances(100):
        p, L, W, D = inst["params"], inst["L"], inst["W"], inst["D"]
        f = sample_field(inst["spec"], FieldRegion(p.d, -D, L, W), inst["seed"], inst["rid"])
        sb = solve_backward(SlabSystem(p, f, L, radius=W, tol=1e-13))
        sf = solve_free_partition(SlabSystem(p, f, L, radius=W, depth=D, tol=1e-13))
        ob = enumerate_quenched(f, p, L, True, budget, radius=W)
        of = enumerate_quenched(f, p, L, False, budget, radius=W, depth=D)
        tb = enumerate_quenched_tilted(f, p, L, True, budget, radius=W)
        tf = enumerate_quenched_tilted(f, p, L, False, budget, radius=W, depth=D)
        rows.append(dict(inst=inst, sb=sb, sf=sf, ob=ob, of=of, tb=tb, tf=tf))
    return rows


def test_criterion_01_oracle_equivalence(oracle_instances, report):
    t0 = time.perf_counter()
    worst = 0.0
    ok = True
    for r in oracle_instances:
        for solved, orc in ((r["sb"].total, r["ob"]), (r["sf"].total, r["of"])):
            eps = 1e-9 * max(solved, 1e-300)
            ok &= orc.contains(solved, eps)
            worst = max(worst, abs(solved - orc.value) / (orc.bound + eps))
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 300
    report(1, ok, f"100 instances, max |solver - oracle| / (eps + bound) = {worst:.3g}")
    assert ok


def test_criterion_02_girsanov_identity(oracle_instances, report):
    worst = 0.0
    for r in oracle_instances:
        k, L = r["inst"]["params"].kappa, r["inst"]["L"]
        for untilted, tilted in ((r["ob"], r["tb"]), (r["of"], r["tf"])):
            worst = max(worst, abs(tilted.value - math.exp(k * L) * untilted.value) / tilted.value)
        worst = max(worst, abs(r["sb"].tilted_bridge - math.exp(k * L) * r["sb"].total) / r["sb"].tilted_bridge)
    ok = worst <= 1e-10
    report(2, ok, f"max relative gap between tilted-centered and untilted forms = {worst:.2e}")
    assert ok


def test_criterion_03_renewal_identity(report):
    t0 = time.perf_counter()
    # d = 1 exact table against direct irreducible enumeration
    p1 = ModelParams.for_spec(1, 0.5, 0.5, BERN)
    exact = build_annealed_series(p1, BERN, 4, mode="oracle")
    long = build_annealed_series(p1, BERN, 64, mode="oracle")
    m_exact = estimate_annealed_mass(long)
    table = deconvolve_irreducible(exact, m_exact)
    budget = EnumerationBudget(40)
    ok1 = True
    for L in range(1, 5):
        direct = enumerate_irreducible_annealed(p1, BERN, L, budget)
        slack = direct.bound * math.exp(p1.kappa * L) + table.irreducible_stderr[L - 1]
        ok1 &= abs(table.irreducible[L - 1] - direct.tilted) <= slack + 1e-12 * direct.tilted
    long_table = deconvolve_irreducible(long, m_exact)
    tail = float(long_table.normalized[4:].sum())
    tail_bound = float(long_table.irreducible_stderr.sum() * math.exp(m_exact.value * 64)) + 1e-12
    ok1 &= abs(table.residual - tail) <= tail_bound + m_exact.ci_halfwidth * 64
    ok1 &= long_table.residual <= 1e-10
    # d = 2 Monte Carlo table
    p2 = ModelParams.for_spec(2, 0.5, 0.5, BERN)
    mc = build_annealed_series(p2, BERN, 16, 200, seed=7, mode="monte_carlo")
    mc_table = deconvolve_irreducible(mc, estimate_annealed_mass(mc))
    s = mc_table.sensitivity
    ok2 = mc_table.residual < 0.05
    elapsed = time.perf_counter() - t0
    ok = ok1 and ok2 and elapsed < 1800
    report(3, ok, f"d=1 L<=4 partial-sum residual {table.residual:.3e} vs exact tail {tail:.3e}, full residual "
                  f"{long_table.residual:.1e}; d=2 MC |sum - 1| = {mc_table.residual:.4f} "
                  f"(mass CI ends: {s['residual_mass_low']:.4f}, {s['residual_mass_high']:.4f})")
    assert ok


def test_criterion_04_sandwich(report):
    mu0 = compute_mu0(1, 0.5)
    closed = 1.0 / (1.0 / math.sqrt(1.0 - math.exp(-1.0)) - 1.0)
    ok = abs(mu0 - closed) < 1e-4 and abs(return_series_closed(1, 0.5) - 1 / closed) < 1e-12
    details = [f"mu0 = {mu0:.10f} (closed form {closed:.10f})"]
    cases = [
        ("d=1 exact", build_annealed_series(ModelParams.for_spec(1, 0.5, 0.5, BERN), BERN, 24, mode="oracle")),
        ("d=1 beta=1 exact", build_annealed_series(ModelParams.for_spec(1, 0.5, 1.0, BERN), BERN, 24, mode="oracle")),
        ("d=2 MC", build_annealed_series(ModelParams.for_spec(2, 0.5, 0.5, BERN), BERN, 16, 200, seed=7,
                                         mode="monte_carlo")),
    ]
    for name, series in cases:
        est = estimate_annealed_mass(series, mu0=compute_mu0(series.params.d, series.params.lam))
        ok &= est.sandwich_holds
        details.append(f"{name}: {int(est.sandwich_lower_ok.sum() + est.sandwich_upper_ok.sum())}/"
                       f"{2 * len(series.L)} sides hold")
    report(4, ok, "; ".join(details))
    assert ok


def test_criterion_05_renewal_theorem(report):
    p = ModelParams.for_spec(1, 0.5, 0.5, BERN)
    series = build_annealed_series(p, BERN, 24, mode="oracle")
    table = deconvolve_irreducible(series, estimate_annealed_mass(series))
    prod = renewal_theorem_product(series, table)
    ok = 0.8 <= prod <= 1.2
    report(5, ok, f"B_hat(24) * mu_hat = {prod:.6f}")
    assert ok


def _d1_config(**kw):
    base = dict(d=1, lam=0.5, beta=1.0, law="bernoulli", p=0.5, a=1.0, L_list=list(range(4, 25)),
                replicas=200, seed=11, workers=1)
    base.update(kw)
    return ExperimentConfig(**base)


def test_criterion_06_d1_strong_disorder(report):
    t0 = time.perf_counter()
    res = estimate_masses(_d1_config())
    s = res.summary
    elapsed = time.perf_counter() - t0
    ok = s["gap"] > 3 * s["gap_ci"] and s["jensen_ok"] and elapsed < 1200
    report(6, ok, f"gap = {s['gap']:.4f}, CI halfwidth = {s['gap_ci']:.4f} "
                  f"(m_q = {s['m_quenched']:.4f}, m_a = {s['m_annealed']:.4f}), {elapsed:.1f}s")
    assert ok


def test_criterion_07_fractional_certificate(report):
    out = {}
    for beta in (1.0, 0.0):
        cfg = _d1_config(beta=beta, gamma=0.5, N=4, L=6)
        params = cfg.params()
        batch = run_replicas(params, cfg.spec(), cfg.N * cfg.L, cfg.replicas, cfg.seed, default_radius(1, 24), workers=1)
        out[beta] = certificate_from_batch(cfg, params, batch)
    c1, c0 = out[1.0], out[0.0]
    ok = c1.c < -3 * c1.ci_halfwidth and abs(c0.c) < 3 * c0.ci_halfwidth
    report(7, ok, f"beta=1: c = {c1.c:.4f} (CI {c1.ci_halfwidth:.4f}, slope-fit variant "
                  f"{c1.c_alternatives.get('slope_fit', math.nan):.4f}); beta=0: c = {c0.c:.2e} (CI {c0.ci_halfwidth:.2e})")
    assert ok


def _bootstrap_exponent_se(batch, Ls, n_boot=200, seed=3):
    rng = np.random.default_rng(seed)
    n = len(batch.ids)
    ex = []
    for _ in range(n_boot):
        idx = rng.integers(0, n, n)
        sub = ReplicaBatch([batch.ids[i] for i in idx], batch.logs[idx], [batch.endpoints[i] for i in idx], [])
        ex.append(decay_exponent(Ls, [r["max_atom_median"] for r in localization_rows(sub, Ls)]))
    return float(np.std(ex, ddof=1))


def test_criterion_08_localization(report):
    Ls = [8, 16, 32]
    med, expo, se = {}, {}, {}
    for beta in (0.0, 4.0):
        params = ModelParams.for_spec(2, 0.5, beta, BERN)
        batch = run_replicas(params, BERN, 32, 200, 5, default_radius(2, 32), endpoints=True, workers=1)
        rows = localization_rows(batch, Ls)
        med[beta] = [r["max_atom_median"] for r in rows]
        expo[beta] = decay_exponent(Ls, med[beta])
        se[beta] = _bootstrap_exponent_se(batch, Ls)
    ratio = min(med[4.0]) / med[0.0][-1]
    ok_ratio = ratio >= 10
    ok_trend = expo[4.0] >= -3 * se[4.0]
    ok_control = abs(expo[0.0] + 0.5) <= 0.3 * 0.5
    ok = ok_ratio and ok_trend and ok_control
    report(8, ok, f"min_L median(beta=4) / median(beta=0, L=32) = {ratio:.2f} (need >= 10) "
                  f"[{'ok' if ok_ratio else 'fails'}]; beta=4 medians {np.round(med[4.0], 3).tolist()}, exponent "
                  f"{expo[4.0]:.3f} +- {se[4.0]:.3f} [{'ok' if ok_trend else 'fails'}]; beta=0 exponent "
                  f"{expo[0.0]:.3f} [{'ok' if ok_control else 'fails'}]")
    assert ok


def test_criterion_09_large_beta(report):
    cfg = ExperimentConfig(d=2, lam=0.5, law="bernoulli", p=0.4, a=1.0, beta_grid=[0.5, 1.0, 2.0, 4.0, 8.0],
                           L_list=list(range(4, 25)), replicas=100, seed=13, workers=1)
    with pytest.warns(UserWarning):
        res = beta_sweep(cfg)
    s = res.summary
    _, rows = res.tables["sweep"]
    ratios = [r["beta_star_over_beta"] for r in rows]
    ok_a = s["beta_star_ratio_decreasing"]
    ok_b = s["alpha_star_growth"] >= 1.5
    report(9, ok_a and ok_b, f"beta*/beta {np.round(ratios, 3).tolist()}, last drop {s['beta_star_ratio_drop']:.3f} "
                             f"vs CI {s['beta_star_ratio_drop_ci']:.3f} [{'ok' if ok_a else 'fails'}]; "
                             f"alpha*(8)/alpha*(4) = {s['alpha_star_growth']:.3f} (need >= 1.5) "
                             f"[{'ok' if ok_b else 'fails'}]; {s['precondition']}")
    assert ok_a and ok_b


def test_criterion_10_exponential_tails(report):
    p1 = ModelParams.for_spec(1, 0.5, 0.5, BERN)
    mass = estimate_annealed_mass(build_annealed_series(p1, BERN, 32, mode="oracle")).value
    smp = sample_markov_renewal(p1, BERN, 8, 100_000, seed=17, mass=mass)
    tail = survival_tail_fit(smp.durations)
    ok_tail = tail.slope < 0 and tail.r_squared >= 0.95
    env = {}
    for beta in (0.0, 0.5):
        p2 = ModelParams.for_spec(2, 0.5, beta, BERN)
        series = build_annealed_series(p2, BERN, 32, 100, seed=19, mode="monte_carlo", endpoints=True, workers=1)
        env[beta] = local_clt_envelope_check(series, [8, 16, 32], estimate_annealed_mass(series))
    ok = ok_tail and all(e.passed for e in env.values())
    report(10, ok, f"duration tail slope {tail.slope:.3f}, R^2 {tail.r_squared:.4f}, support mass "
                   f"{smp.law.support_mass:.6f}; envelope " +
                   ", ".join(f"beta={b}: {'pass' if e.passed else 'fail'} (rate {e.rate:.3f}, max ratio "
                             f"{e.max_ratio:.3f})" for b, e in env.items()))
    assert ok


def test_criterion_11_coarse_grain_bound(report):
    cfg = ExperimentConfig(d=2, lam=0.5, beta=0.5, law="bernoulli", p=0.5, a=1.0, L=64, C3=4.0,
                           K2=[1.0, 2.0, 3.0], replicas=10_000, seed=23, workers=1)
    res = coarse_grain_observables(cfg)
    _, rows = res.tables["coarse"]
    ok = all(r["p_hat_G2"] <= r["bound_G2"] + 3 * r["se_G2"] for r in rows)
    report(11, ok, "; ".join(f"K2={r['K2']:g}: p_hat {r['p_hat_G2']:.4f} <= bound {r['bound_G2']:.4f}"
                             for r in rows) + f" (delta_L^2 |J0| = {res.summary['delta2_J0']:.3f})")
    assert ok
