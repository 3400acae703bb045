"""Oracle checks for the quenched computations, run by ``bpce verify``."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .env_gen import EnvPath, sample_fgn_batch
from .offspring import OffspringFamily, assumption_a_constants, parse_family
from .quenched import gk_decompose, mobius_compose_geometric, survival_curve
from .rng import replica_rng
from .sim import martingale_check

# Binomial n_max large enough that -log(n_max) is never reached by N(0,1) draws in practice.
VERIFY_FAMILIES = ("geometric", "poisson", "binomial:1000")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: dict

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


def _envs(hurst, length, count, seed, offset=0) -> List[EnvPath]:
    rngs = [replica_rng(seed, offset + r) for r in range(count)]
    return [EnvPath.from_increments(row) for row in sample_fgn_batch(hurst, length, rngs)]


def check_classical(n: int = 10_000) -> CheckResult:
    env = EnvPath.from_increments(np.zeros(n))
    q = survival_curve(env, parse_family("geometric"), n).q
    err = float(np.max(np.abs(q * np.arange(1, n + 2) - 1.0)))
    return CheckResult("classical_geometric", err <= 1e-12, {"n": n, "max_rel_err": err})


def check_mobius(envs: List[EnvPath], n: int = 100) -> CheckResult:
    geo = parse_family("geometric")
    worst = 0.0
    for env in envs:
        q = survival_curve(env, geo, n).q
        for k in range(1, n + 1):
            worst = max(worst, abs(mobius_compose_geometric(env, k) / q[k] - 1.0))
    return CheckResult("mobius_equivalence", worst <= 1e-12, {"envs": len(envs), "n": n, "max_rel_err": worst})


def check_gk(envs: List[EnvPath], families=VERIFY_FAMILIES, n: int = 50) -> CheckResult:
    worst_identity = 0.0
    eta_ok = True
    for name in families:
        fam = parse_family(name)
        for env in envs:
            d = gk_decompose(env, fam, n)
            q = survival_curve(env, fam, n).q[n]
            worst_identity = max(worst_identity, abs(d.total * q - 1.0))
            eta_ok &= bool(np.all(d.eta >= 0) and np.all(d.eta <= d.eta_bound * (1 + 1e-12)))
    return CheckResult(
        "gk_identity",
        worst_identity <= 1e-9 and eta_ok,
        {"envs": len(envs), "families": list(families), "n": n, "max_rel_err": worst_identity, "eta_in_range": eta_ok},
    )


def check_martingale(envs: List[EnvPath], family: OffspringFamily, n: int, trajectories: int, seed: int) -> CheckResult:
    rows = []
    for i, env in enumerate(envs):
        res = martingale_check(env, family, n, trajectories, replica_rng(seed, 10_000_000 + i))
        rows.append(
            {
                "w_mean": res.w_mean,
                "w_mean_se": res.w_mean_se,
                "w2_mean": res.w2_mean,
                "w2_mean_se": res.w2_mean_se,
                "w2_formula": res.w2_formula,
                "passed": res.passed(4.0),
            }
        )
    return CheckResult(
        "martingale", all(r["passed"] for r in rows), {"n": n, "trajectories": trajectories, "envs": rows}
    )


def audit_assumption_a(family: OffspringFamily, rng: np.random.Generator, draws: int = 10_000) -> bool:
    a, b, c = assumption_a_constants(family)
    if family.n_max is not None:
        m = rng.uniform(0.0, family.n_max, draws)
        m = m[m > 0]
    else:
        m = np.exp(rng.uniform(-6.0, 6.0, draws))
    return bool(np.all(family.variance(m) <= a * m * m + b * m + c))


def check_assumption_a(seed: int, draws: int = 10_000) -> CheckResult:
    rng = replica_rng(seed, 20_000_000)
    results = {name: audit_assumption_a(parse_family(name), rng, draws) for name in ("geometric", "poisson", "binomial:1", "binomial:10")}
    return CheckResult("assumption_a", all(results.values()), {"draws": draws, "families": results})


def run_all(hurst: float, seed: int, env_count: int = 200, trajectories: int = 20_000) -> List[CheckResult]:
    envs100 = _envs(hurst, 100, env_count, seed)
    envs50 = [EnvPath.from_increments(e.x[:50]) for e in envs100]
    mart_envs = _envs(hurst, 32, 3, seed, offset=env_count)
    return [
        check_classical(),
        check_mobius(envs100),
        check_gk(envs50),
        check_martingale(mart_envs, parse_family("geometric"), 32, trajectories, seed),
        check_assumption_a(seed),
    ]
