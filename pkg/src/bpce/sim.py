"""Monte Carlo over environments and populations.

Every estimator splits its environment replicates into fixed chunks of
``CHUNK`` consecutive replicas. Replica ``r`` draws its environment (and then
its offspring) from ``replica_rng(master_seed, r)``, chunk partial sums are
merged in chunk order, and the worker count only decides where a chunk runs.
Results are therefore identical for any number of workers.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence

import numpy as np

from .env_gen import EnvPath, sample_fgn_batch, validate_hurst
from .errors import ConfigError, DomainError
from .offspring import BINOMIAL, GEOMETRIC, POISSON, OffspringFamily
from .quenched import survival_at_horizons
from .rng import replica_rng

__all__ = [
    "CHUNK",
    "TailMode",
    "TailEstimate",
    "Trajectory",
    "simulate_trajectory",
    "sample_generation_sizes",
    "martingale_check",
    "MartingaleCheck",
    "population_horizon",
    "estimate_tail_extinction",
    "estimate_tail_max",
    "estimate_tail_total",
    "estimate_population_tails",
    "estimate_persistence",
]

CHUNK = 256


class TailMode(str, Enum):
    EXTINCTION_TIME = "extinction_time"
    MAX_POPULATION = "max_population"
    TOTAL_POPULATION = "total_population"
    PERSISTENCE = "persistence"


@dataclass(frozen=True)
class TailEstimate:
    """Monte Carlo tail table.

    ``p_hat[i]`` estimates the probability that the statistic exceeds
    ``thresholds[i]`` (for persistence: that the running max stays at or
    below the level up to length ``thresholds[i]``). ``n_censored[i]`` counts
    trajectories still alive at the horizon whose outcome at that threshold
    was undecided and was counted as "not exceeding".
    """

    thresholds: tuple
    p_hat: np.ndarray
    std_err: np.ndarray
    replicates: int
    mode: TailMode
    n_censored: np.ndarray = None
    trajectories: int = 0

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(self.thresholds))
        object.__setattr__(self, "p_hat", np.asarray(self.p_hat, dtype=float))
        object.__setattr__(self, "std_err", np.asarray(self.std_err, dtype=float))
        if self.n_censored is None:
            object.__setattr__(self, "n_censored", np.zeros(len(self.thresholds), dtype=np.int64))
        else:
            object.__setattr__(self, "n_censored", np.asarray(self.n_censored, dtype=np.int64))
        if not self.trajectories:
            object.__setattr__(self, "trajectories", int(self.replicates))
        n = len(self.thresholds)
        if not (len(self.p_hat) == len(self.std_err) == len(self.n_censored) == n):
            raise ValueError("tail table columns have different lengths")
        object.__setattr__(self, "mode", TailMode(self.mode))

    def value_at(self, threshold):
        i = self.thresholds.index(threshold)
        return float(self.p_hat[i]), float(self.std_err[i])

    @property
    def censored_fraction(self) -> np.ndarray:
        return self.n_censored / max(self.trajectories, 1)

    def bias_acceptable(self) -> np.ndarray:
        """Per threshold: censored fraction below 10% of the estimate."""
        return self.censored_fraction < 0.1 * self.p_hat

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "replicates": int(self.replicates),
            "trajectories": int(self.trajectories),
            "thresholds": [int(t) if float(t).is_integer() else float(t) for t in self.thresholds],
            "p_hat": [float(v) for v in self.p_hat],
            "std_err": [float(v) for v in self.std_err],
            "n_censored": [int(v) for v in self.n_censored],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TailEstimate":
        return cls(
            thresholds=d["thresholds"],
            p_hat=d["p_hat"],
            std_err=d["std_err"],
            replicates=d["replicates"],
            mode=d["mode"],
            n_censored=d.get("n_censored"),
            trajectories=d.get("trajectories", 0),
        )


# ---------------------------------------------------------------------------
# single trajectories


@dataclass(frozen=True)
class Trajectory:
    """Population sizes Z_0..Z_last of one run.

    ``extinction_time`` is None unless extinction was observed. ``max_z`` and
    ``total_z`` are None once they exceeded their caps; otherwise they are the
    values reached (lower bounds if the run was censored at the horizon).
    """

    z: tuple
    extinction_time: Optional[int]
    max_z: Optional[int]
    total_z: Optional[int]
    censored: bool

    def max_exceeds(self, n) -> bool:
        return self.max_z is None or self.max_z > n

    def total_exceeds(self, n) -> bool:
        return self.total_z is None or self.total_z > n


def _scalar_step(family: OffspringFamily, rng: np.random.Generator) -> Callable[[int, float], int]:
    if family.kind == GEOMETRIC:
        gamma, poisson = rng.gamma, rng.poisson

        def step(z, m):
            return int(poisson(gamma(z, m)))

    elif family.kind == POISSON:
        poisson = rng.poisson

        def step(z, m):
            return int(poisson(z * m))

    else:
        binomial, n_max = rng.binomial, family.n_max

        def step(z, m):
            return int(binomial(z * n_max, m / n_max))

    return step


def _run_population(means: list, step, pop_cap, total_cap, keep_path: bool):
    """Core loop; returns (path, extinction_time, max_z, total_z, censored)."""
    z = max_z = total_z = 1
    path = [1] if keep_path else None
    capped = pop_cap is not None or total_cap is not None
    max_done = pop_cap is None or max_z > pop_cap
    total_done = total_cap is None or total_z > total_cap
    if capped and max_done and total_done:
        return path, None, max_z, total_z, False
    for k, m in enumerate(means, start=1):
        z = step(z, m)
        if keep_path:
            path.append(z)
        if z == 0:
            return path, k, max_z, total_z, False
        total_z += z
        if z > max_z:
            max_z = z
            if not max_done and max_z > pop_cap:
                max_done = True
        if not total_done and total_z > total_cap:
            total_done = True
        if capped and max_done and total_done:
            return path, None, max_z, total_z, False
    return path, None, max_z, total_z, True


def simulate_trajectory(
    env: EnvPath,
    family: OffspringFamily,
    pop_cap: Optional[int],
    horizon: int,
    rng: np.random.Generator,
    total_cap: Optional[int] = -1,
) -> Trajectory:
    """Run one population on ``env`` for at most ``horizon`` generations.

    The run stops at extinction, at the horizon, or once both caps are
    exceeded: some Z_k > ``pop_cap`` and running total > ``total_cap``
    (``total_cap`` defaults to ``pop_cap``; None disables a cap). Tail
    events at thresholds up to the caps are decided at that point.
    """
    if horizon > env.length:
        raise DomainError(f"horizon {horizon} exceeds environment length {env.length}")
    if pop_cap is not None and pop_cap < 1:
        raise DomainError("pop_cap must be >= 1")
    if total_cap == -1:
        total_cap = pop_cap
    means = env.means[:horizon]
    family.check_means(means)
    path, t_ext, max_z, total_z, censored = _run_population(
        means.tolist(), _scalar_step(family, rng), pop_cap, total_cap, keep_path=True
    )
    return Trajectory(
        z=tuple(path),
        extinction_time=t_ext,
        max_z=None if pop_cap is not None and max_z > pop_cap else max_z,
        total_z=None if total_cap is not None and total_z > total_cap else total_z,
        censored=censored,
    )


def sample_generation_sizes(
    env: EnvPath, family: OffspringFamily, n: int, n_traj: int, rng: np.random.Generator
) -> np.ndarray:
    """Z_n for ``n_traj`` independent populations on the same environment."""
    if n > env.length:
        raise DomainError(f"generation {n} exceeds environment length {env.length}")
    means = env.means[:n]
    family.check_means(means)
    z = np.ones(n_traj, dtype=np.int64)
    for m in means:
        alive = z > 0
        if not alive.any():
            break
        z[alive] = family.sample(m, z[alive], rng)
    return z


@dataclass(frozen=True)
class MartingaleCheck:
    n: int
    trajectories: int
    w_mean: float
    w_mean_se: float
    w2_mean: float
    w2_mean_se: float
    w2_formula: float

    @property
    def mean_z(self) -> float:
        return abs(self.w_mean - 1.0) / self.w_mean_se if self.w_mean_se > 0 else 0.0

    @property
    def second_moment_z(self) -> float:
        return abs(self.w2_mean - self.w2_formula) / self.w2_mean_se if self.w2_mean_se > 0 else 0.0

    def passed(self, n_sigma: float = 4.0) -> bool:
        return self.mean_z <= n_sigma and self.second_moment_z <= n_sigma


def martingale_check(
    env: EnvPath, family: OffspringFamily, n: int, n_traj: int, rng: np.random.Generator
) -> MartingaleCheck:
    """Compare simulated W_n = Z_n e^{S_n} with E W_n = 1 and the exact E W_n^2."""
    from .quenched import w_second_moment

    w = sample_generation_sizes(env, family, n, n_traj, rng) * math.exp(env.s[n])
    w2 = w * w
    return MartingaleCheck(
        n=n,
        trajectories=n_traj,
        w_mean=float(w.mean()),
        w_mean_se=float(w.std(ddof=1) / math.sqrt(n_traj)),
        w2_mean=float(w2.mean()),
        w2_mean_se=float(w2.std(ddof=1) / math.sqrt(n_traj)),
        w2_formula=w_second_moment(env, family, n),
    )


# ---------------------------------------------------------------------------
# chunked estimators


@dataclass
class _Partial:
    """Sums over one chunk of environment replicates."""

    count: int
    s1: np.ndarray
    s2: np.ndarray
    censored: np.ndarray = field(default=None)


def _merge(partials: List[_Partial], thresholds, mode: TailMode, trajectories: int) -> TailEstimate:
    count = sum(p.count for p in partials)
    s1 = np.sum(np.stack([p.s1 for p in partials]), axis=0)
    s2 = np.sum(np.stack([p.s2 for p in partials]), axis=0)
    mean = s1 / count
    var = np.maximum(s2 - count * mean * mean, 0.0) / max(count - 1, 1)
    se = np.sqrt(var / count)
    censored = None
    if partials[0].censored is not None:
        censored = np.sum(np.stack([p.censored for p in partials]), axis=0)
    return TailEstimate(
        thresholds=thresholds,
        p_hat=mean,
        std_err=se,
        replicates=count,
        mode=mode,
        n_censored=censored,
        trajectories=trajectories or count,
    )


def _chunk_bounds(replicates: int):
    return [(lo, min(lo + CHUNK, replicates)) for lo in range(0, replicates, CHUNK)]


def _run_chunks(fn, args: tuple, replicates: int, workers: int) -> List[_Partial]:
    tasks = [(lo, hi) + args for lo, hi in _chunk_bounds(replicates)]
    if workers <= 1 or len(tasks) == 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _chunk_envs(lo, hi, hurst, length, family, master_seed):
    rngs = [replica_rng(master_seed, r) for r in range(lo, hi)]
    x = sample_fgn_batch(hurst, length, rngs)
    if family is not None and family.kind == BINOMIAL:
        bad = x < -math.log(family.n_max)
        if bad.any():
            raise ConfigError(
                f"environment value {x[bad].min():.4g} below -log(n_max) for {family}; "
                "choose a larger n_max"
            )
    return rngs, x


def _validate_common(h: float, env_replicates: int) -> float:
    try:
        h = validate_hurst(h, correlated=True)
    except DomainError as exc:
        raise ConfigError(str(exc)) from None
    if int(env_replicates) < 1:
        raise ConfigError("env_replicates must be positive")
    return h


def _validate_ascending(values, name: str, minimum=None):
    values = list(values)
    if not values:
        raise ConfigError(f"{name} must not be empty")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError(f"{name} must be strictly ascending, got {values}")
    if minimum is not None and values[0] < minimum:
        raise ConfigError(f"{name} must be >= {minimum}")
    return values


def _extinction_chunk(task) -> _Partial:
    lo, hi, h, length, family, horizons, seed = task
    _, x = _chunk_envs(lo, hi, h, length, family, seed)
    q = survival_at_horizons(x, family, horizons)
    return _Partial(hi - lo, q.sum(axis=0), (q * q).sum(axis=0))


MIN_ENV_REPLICATES = 100


def estimate_tail_extinction(
    h: float,
    family: OffspringFamily,
    horizons: Sequence[int],
    env_replicates: int,
    master_seed: int,
    *,
    env_length: Optional[int] = None,
    workers: int = 1,
) -> TailEstimate:
    """P(T > n) as the average of the exact quenched survival P^E(T > n).

    Conditioning on the environment removes all offspring noise; the
    standard error reflects environmental variation only. ``env_length``
    (default: largest horizon) fixes the sampled path length so that other
    estimators with the same seed can share environments.
    """
    h = _validate_common(h, env_replicates)
    horizons = _validate_ascending([int(v) for v in horizons], "horizons", minimum=1)
    if env_replicates < MIN_ENV_REPLICATES:
        raise ConfigError(f"env_replicates must be >= {MIN_ENV_REPLICATES}")
    length = int(env_length or horizons[-1])
    if length < horizons[-1]:
        raise ConfigError("env_length shorter than the largest horizon")
    parts = _run_chunks(
        _extinction_chunk, (h, length, family, tuple(horizons), master_seed), env_replicates, workers
    )
    return _merge(parts, horizons, TailMode.EXTINCTION_TIME, env_replicates)


def population_horizon(n_max: float) -> int:
    """Generations simulated for max/total tails: max(4096, (log2 N_max)^3)."""
    return max(4096, math.ceil(math.log2(max(n_max, 2)) ** 3))


def _population_chunk(task) -> tuple:
    lo, hi, h, horizon, family, max_thr, tot_thr, traj_per_env, seed = task
    rngs, x = _chunk_envs(lo, hi, h, horizon, family, seed)
    pop_cap = max_thr[-1] if max_thr else None
    total_cap = tot_thr[-1] if tot_thr else None
    max_thr = np.asarray(max_thr, dtype=float)
    tot_thr = np.asarray(tot_thr, dtype=float)
    out = []
    for thr in (max_thr, tot_thr):
        out.append([np.zeros(len(thr)), np.zeros(len(thr)), np.zeros(len(thr), dtype=np.int64)])
    means = np.exp(-x)
    for i, rng in enumerate(rngs):
        step = _scalar_step(family, rng)
        m_list = means[i].tolist()
        hit_max = np.zeros(len(max_thr))
        hit_tot = np.zeros(len(tot_thr))
        for _ in range(traj_per_env):
            _, _, max_z, total_z, censored = _run_population(m_list, step, pop_cap, total_cap, False)
            over_max = max_z > max_thr
            over_tot = total_z > tot_thr
            hit_max += over_max
            hit_tot += over_tot
            if censored:
                out[0][2] += ~over_max
                out[1][2] += ~over_tot
        for acc, hits in ((out[0], hit_max), (out[1], hit_tot)):
            v = hits / traj_per_env
            acc[0] += v
            acc[1] += v * v
    count = hi - lo
    return (
        _Partial(count, out[0][0], out[0][1], out[0][2]),
        _Partial(count, out[1][0], out[1][1], out[1][2]),
    )


def estimate_population_tails(
    h: float,
    family: OffspringFamily,
    max_thresholds: Sequence[int],
    total_thresholds: Sequence[int],
    env_replicates: int,
    traj_per_env: int,
    master_seed: int,
    *,
    horizon: Optional[int] = None,
    workers: int = 1,
):
    """Tails of max_k Z_k and sum_k Z_k from one shared set of trajectories.

    Populations are capped at the largest max-threshold and the largest
    total-threshold; runs alive at ``horizon`` (default
    ``population_horizon`` of the largest threshold) count as not exceeding
    any threshold they have not yet passed. Returns ``(max_tail, total_tail)``;
    a side with no thresholds is returned as None.
    """
    h = _validate_common(h, env_replicates)
    max_thr = _validate_ascending([int(v) for v in max_thresholds], "max thresholds", 0) if max_thresholds else []
    tot_thr = _validate_ascending([int(v) for v in total_thresholds], "total thresholds", 0) if total_thresholds else []
    if not max_thr and not tot_thr:
        raise ConfigError("no thresholds given")
    if int(traj_per_env) < 1:
        raise ConfigError("traj_per_env must be >= 1")
    biggest = max(max_thr[-1:] + tot_thr[-1:])
    horizon = int(horizon or population_horizon(biggest))
    parts = _run_chunks(
        _population_chunk,
        (h, horizon, family, tuple(max_thr), tuple(tot_thr), int(traj_per_env), master_seed),
        env_replicates,
        workers,
    )
    n_traj = env_replicates * int(traj_per_env)
    max_est = _merge([p[0] for p in parts], max_thr, TailMode.MAX_POPULATION, n_traj) if max_thr else None
    tot_est = _merge([p[1] for p in parts], tot_thr, TailMode.TOTAL_POPULATION, n_traj) if tot_thr else None
    return max_est, tot_est


def estimate_tail_max(h, family, thresholds, env_replicates, traj_per_env=1, master_seed=0, *, horizon=None, workers=1) -> TailEstimate:
    """P(max_k Z_k > N) for each threshold N (population cap = largest N)."""
    return estimate_population_tails(
        h, family, thresholds, [], env_replicates, traj_per_env, master_seed, horizon=horizon, workers=workers
    )[0]


def estimate_tail_total(h, family, thresholds, env_replicates, traj_per_env=1, master_seed=0, *, horizon=None, workers=1) -> TailEstimate:
    """P(sum_k Z_k > N) for each threshold N (running-total cap = largest N)."""
    return estimate_population_tails(
        h, family, [], thresholds, env_replicates, traj_per_env, master_seed, horizon=horizon, workers=workers
    )[1]


def _persistence_chunk(task) -> _Partial:
    lo, hi, h, lengths, level, seed = task
    _, x = _chunk_envs(lo, hi, h, lengths[-1], None, seed)
    np.cumsum(x, axis=1, out=x)
    np.maximum.accumulate(x, axis=1, out=x)  # running max of S_1..S_n
    stayed = (x[:, np.asarray(lengths) - 1] <= level).astype(float)
    s1 = stayed.sum(axis=0)
    return _Partial(hi - lo, s1, s1.copy())


def estimate_persistence(
    h: float,
    lengths: Sequence[int],
    level: float,
    env_replicates: int,
    master_seed: int,
    *,
    workers: int = 1,
) -> TailEstimate:
    """P(max_{1<=m<=n} S_m <= level) for each n in ``lengths``."""
    h = _validate_common(h, env_replicates)
    lengths = _validate_ascending([int(v) for v in lengths], "lengths", minimum=1)
    parts = _run_chunks(_persistence_chunk, (h, tuple(lengths), float(level), master_seed), env_replicates, workers)
    return _merge(parts, lengths, TailMode.PERSISTENCE, env_replicates)
