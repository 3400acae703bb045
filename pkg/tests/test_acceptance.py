"""End-to-end acceptance checks at full scale.

Each test records a PASS/FAIL line that the terminal summary prints, then
asserts. Statistical thresholds are the stated ones; nothing is loosened.
"""
import time

import numpy as np
import pytest

from conftest import record

from bpce.analysis import Transform, fit_power_law, sandwich_report
from bpce.cli import main
from bpce.env_gen import EnvPath, fgn_covariance, sample_fgn_batch
from bpce.offspring import assumption_a_constants, parse_family
from bpce.quenched import gk_decompose, mobius_compose_geometric, survival_curve
from bpce.rng import replica_rng
from bpce.sim import (
    estimate_persistence,
    estimate_population_tails,
    estimate_tail_extinction,
    martingale_check,
    population_horizon,
)

GEO = parse_family("geometric")
FULL_REPLICATES = 100_000


def _envs(h, n, count, seed):
    rows = sample_fgn_batch(h, n, [replica_rng(seed, r) for r in range(count)])
    return [EnvPath.from_increments(row) for row in rows]


def test_01_classical_oracle():
    n = 10_000
    t0 = time.perf_counter()
    q = survival_curve(EnvPath.from_increments(np.zeros(n)), GEO, n).q
    elapsed = time.perf_counter() - t0
    err = float(np.max(np.abs(q * np.arange(1, n + 2) - 1)))
    ok = record(1, "classical oracle q[n] = 1/(n+1)", err <= 1e-12 and elapsed < 1.0,
                f"max rel err {err:.2e}, {elapsed:.2f} s")
    assert ok


def test_02_mobius_equivalence():
    t0 = time.perf_counter()
    worst = 0.0
    for env in _envs(0.7, 100, 1000, seed=2):
        q = survival_curve(env, GEO, 100).q
        for k in range(1, 101):
            worst = max(worst, abs(mobius_compose_geometric(env, k) / q[k] - 1))
    elapsed = time.perf_counter() - t0
    ok = record(2, "survival curve vs Moebius products", worst <= 1e-12 and elapsed < 10.0,
                f"max rel err {worst:.2e} over 1000 envs, n <= 100, {elapsed:.1f} s")
    assert ok


def test_03_gk_identity():
    worst, eta_ok = 0.0, True
    envs = _envs(0.7, 50, 1000, seed=3)
    for name in ("geometric", "poisson", "binomial:1000"):
        fam = parse_family(name)
        for env in envs:
            q = survival_curve(env, fam, 50).q
            for n in (1, 5, 20, 50):
                d = gk_decompose(env, fam, n)
                worst = max(worst, abs(d.total * q[n] - 1))
                eta_ok &= bool(np.all(d.eta >= 0) and np.all(d.eta <= d.eta_bound * (1 + 1e-12)))
    ok = record(3, "GK identity and eta range", worst <= 1e-9 and eta_ok,
                f"max rel err {worst:.2e}, eta in range: {eta_ok}")
    assert ok


def test_04_fgn_correctness():
    t0 = time.perf_counter()
    h = 0.7
    x = sample_fgn_batch(h, 2**14, [replica_rng(4, r) for r in range(200)])
    lag1 = (x[:, 1:] * x[:, :-1]).mean(axis=1)
    mean, se = lag1.mean(), lag1.std(ddof=1) / np.sqrt(len(lag1))
    target = fgn_covariance(1, h)
    cov_ok = abs(mean - target) < 3 * se
    del x

    walks = np.cumsum(sample_fgn_batch(h, 256, [replica_rng(40, r) for r in range(10_000)]), axis=1)
    ratios = {n: float(walks[:, n - 1].var() / n ** (2 * h)) for n in (16, 64, 256)}
    var_ok = all(abs(r - 1) < 0.05 for r in ratios.values())
    elapsed = time.perf_counter() - t0
    ok = record(4, "fGn covariance and Var S_n", cov_ok and var_ok and elapsed < 60,
                f"lag-1 {mean:.5f} +- {se:.5f} (target {target:.5f}); Var S_n / n^1.4 = "
                + ", ".join(f"{r:.3f}" for r in ratios.values()) + f"; {elapsed:.1f} s")
    assert ok


@pytest.mark.parametrize(
    "number, h, band",
    [(5, 0.5, (-0.58, -0.42)), (6, 0.7, (-0.38, -0.22))],
)
def test_05_06_extinction_exponent(number, h, band):
    t0 = time.perf_counter()
    est = estimate_tail_extinction(h, GEO, [2**k for k in range(4, 13)], FULL_REPLICATES, 2024)
    fit = fit_power_law(est, Transform.LOG)
    elapsed = time.perf_counter() - t0
    ok = record(number, f"extinction-time exponent at H = {h}", band[0] <= fit.slope <= band[1],
                f"slope {fit.slope:.4f} +- {fit.slope_std_err:.4f}, band {band}, {elapsed:.0f} s")
    assert ok


def test_07_persistence_exponent():
    lines, ok = [], True
    for h in (0.5, 0.7):
        est = estimate_persistence(h, [2**k for k in range(6, 15)], 0.0, FULL_REPLICATES, 2024)
        fit = fit_power_law(est, Transform.LOG)
        target = -(1 - h)
        ok &= abs(fit.slope - target) <= 0.08
        lines.append(f"H={h}: slope {fit.slope:.4f} (target {target:.1f})")
    ok = record(7, "persistence exponent", ok, "; ".join(lines))
    assert ok


def test_08_population_tail_properties():
    h, seed, reps = 0.7, 8, 20_000
    max_thr = [2**k for k in range(1, 21)]
    tot_thr = [2**k for k in range(1, 21)]
    ext_thr = [2**k for k in range(1, 11)]
    horizon = population_horizon(tot_thr[-1])
    mx, tot = estimate_population_tails(h, GEO, max_thr, tot_thr, reps, 1, seed, horizon=horizon)
    # same seed and path length: the extinction table sees the same environments
    ext = estimate_tail_extinction(h, GEO, ext_thr, reps, seed, env_length=horizon)

    def monotone(est):
        p, se = est.p_hat, est.std_err
        return bool(np.all(p[1:] <= p[:-1] + 3 * np.hypot(se[1:], se[:-1])))

    mono = monotone(mx) and monotone(tot)
    rep = sandwich_report(mx, tot, ext, n_sigma=3.0)
    fit = fit_power_law(mx, Transform.LOGLOG)
    passed = mono and rep.ok and fit.slope < 0
    ok = record(8, "max/total tail properties (H = 0.7)", passed,
                f"monotone {mono}; sandwich rows {len(rep.rows)}, violations {len(rep.violations)}; "
                f"loglog max slope {fit.slope:.3f} +- {fit.slope_std_err:.3f}; "
                f"max censored fraction {mx.censored_fraction.max():.1e}")
    assert ok


def test_09_martingale():
    envs = _envs(0.7, 32, 3, seed=9)
    results = []
    for name in ("geometric", "poisson", "binomial:1000"):
        fam = parse_family(name)
        for i, env in enumerate(envs):
            results.append(martingale_check(env, fam, 32, 100_000, replica_rng(90, i)))
    worst_mean = max(r.mean_z for r in results)
    worst_sq = max(r.second_moment_z for r in results)
    ok = record(9, "martingale mean and second moment", all(r.passed(4.0) for r in results),
                f"worst |z| mean {worst_mean:.2f}, second moment {worst_sq:.2f} (limit 4)")
    assert ok


def test_10_variance_envelope():
    rng = np.random.default_rng(10)
    ok = True
    for name in ("geometric", "poisson", "binomial:1", "binomial:10", "binomial:1000"):
        fam = parse_family(name)
        a, b, c = assumption_a_constants(fam)
        if fam.n_max:
            m = rng.uniform(0, fam.n_max, 10_000)
            m = m[m > 0]
        else:
            m = np.exp(rng.uniform(-6, 6, 10_000))
        ok &= bool(np.all(fam.variance(m) <= a * m * m + b * m + c))
    ok = record(10, "variance envelope audit (A m^2 + B m + C)", ok, "10^4 means per family, five families")
    assert ok


def test_11_worker_determinism(tmp_path):
    args = ["tail-extinction", "--set", "hurst=0.7", "--set", "env_replicates=20000", "-q"]
    rc1 = main([*args, "--output-dir", str(tmp_path / "w1"), "--workers", "1"])
    rc2 = main([*args, "--output-dir", str(tmp_path / "w2"), "--workers", "2"])
    names = ("extinction.csv", "extinction.json", "extinction_fit.json", "extinction_fit.dat")
    same = [(tmp_path / "w1" / n).read_bytes() == (tmp_path / "w2" / n).read_bytes() for n in names]
    ok = record(11, "byte-identical outputs across worker counts", rc1 == rc2 == 0 and all(same),
                f"exit codes {rc1}/{rc2}; identical files {sum(same)}/{len(names)}")
    assert ok
