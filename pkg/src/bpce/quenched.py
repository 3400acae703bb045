"""Exact computations on a fixed environment (quenched quantities).

Survival probabilities are computed by composing the offspring pgfs from the
innermost map outward in survival form, q <- 1 - f_i(1 - q), so values far
below machine epsilon keep full relative precision.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .env_gen import EnvPath
from .errors import HorizonError, PrecisionError
from .offspring import OffspringFamily, assumption_a_constants

__all__ = [
    "QuenchedSurvivalCurve",
    "GkDecomposition",
    "GK_MAX_HORIZON",
    "survival_curve",
    "survival_at_horizons",
    "mobius_compose_geometric",
    "gk_decompose",
    "quenched_mean",
    "w_second_moment",
    "w_second_moment_envelope",
]

GK_MAX_HORIZON = 50
_UNDERFLOW = 1e-300


def _check_horizon(env: EnvPath, n: int) -> int:
    n = int(n)
    if n < 1:
        raise ValueError(f"horizon must be positive, got {n}")
    if n > env.length:
        raise HorizonError(f"horizon {n} exceeds environment length {env.length}")
    return n


@dataclass(frozen=True)
class QuenchedSurvivalCurve:
    """q[k] = P^E(T > k) for k = 0..n on one environment."""

    q: np.ndarray
    env: EnvPath
    family: OffspringFamily

    def __getitem__(self, k):
        return self.q[k]

    def __len__(self):
        return len(self.q)


def survival_curve(env: EnvPath, family: OffspringFamily, n: int) -> QuenchedSurvivalCurve:
    """Quenched survival probabilities up to horizon ``n``.

    Every horizon k is composed separately, applying f_{k-1} first and f_0
    last. The k compositions are advanced together: at layer j each horizon
    k > j applies the map of generation k-1-j.
    """
    n = _check_horizon(env, n)
    m = env.means[:n]
    family.check_means(m)
    q = np.ones(n + 1)
    tail = q[1:]  # tail[k-1] belongs to horizon k
    for j in range(n):
        tail[j:] = family.survival_map(m[: n - j], tail[j:])
    # horizons are composed independently; remove ulp-level upticks on plateaus
    np.minimum.accumulate(q, out=q)
    q.flags.writeable = False
    return QuenchedSurvivalCurve(q, env, family)


def survival_at_horizons(x: np.ndarray, family: OffspringFamily, horizons: Sequence[int]) -> np.ndarray:
    """P^E(T > n) for a batch of environments and selected horizons.

    ``x`` has shape (batch, length) and holds increments X_1..X_length per row.
    Returns an array of shape (batch, len(horizons)).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    hz = np.asarray(horizons, dtype=np.int64)
    if hz.size and (hz.min() < 1 or hz.max() > x.shape[1]):
        raise HorizonError(f"horizons must lie in [1, {x.shape[1]}]")
    m = np.exp(-x[:, : int(hz.max()) if hz.size else 0])
    family.check_means(m)
    q = np.ones((x.shape[0], hz.size))
    for j in range(int(hz.max()) if hz.size else 0):
        active = np.nonzero(hz > j)[0]
        if active.size == hz.size:
            q = family.survival_map(m[:, hz - 1 - j], q)
        else:
            q[:, active] = family.survival_map(m[:, hz[active] - 1 - j], q[:, active])
    return q


def mobius_compose_geometric(env: EnvPath, n: int, log_scale: bool = True) -> float:
    """P^E(T > n) for geometric offspring via 2x2 matrix products.

    In survival coordinates the geometric map q -> m q / (1 + m q) is the
    Moebius transform of [[m, 0], [m, 1]]; the composition is the matrix
    product applied to q = 1. The running product is renormalized every step
    unless ``log_scale`` is off.
    """
    n = _check_horizon(env, n)
    a, b, c, d = 1.0, 0.0, 0.0, 1.0
    for mi in env.means[:n].tolist():
        # [[a, b], [c, d]] @ [[mi, 0], [mi, 1]]
        a, b, c, d = (a + b) * mi, b, (c + d) * mi, d
        if log_scale:
            scale = max(abs(a), abs(b), abs(c), abs(d))
            a, b, c, d = a / scale, b / scale, c / scale, d / scale
        elif not np.isfinite(a + b + c + d):
            raise OverflowError("matrix product overflowed; enable log scaling")
    return (a + b) / (c + d)


@dataclass(frozen=True)
class GkDecomposition:
    """1 / P^E(T > n) = leading + sum_k weights[k] * eta[k].

    ``weights[k]`` is exp(S_k) and ``eta[k]`` is g_k evaluated at the
    composition of generations k+1..n-1 applied to 0.
    """

    leading: float
    weights: np.ndarray
    eta: np.ndarray
    eta_bound: np.ndarray
    total: float
    survival: float

    @property
    def eta_terms(self) -> np.ndarray:
        return self.weights * self.eta


def gk_decompose(env: EnvPath, family: OffspringFamily, n: int) -> GkDecomposition:
    n = _check_horizon(env, n)
    if n > GK_MAX_HORIZON:
        raise ValueError(f"decomposition is limited to n <= {GK_MAX_HORIZON}, got {n}")
    m = env.means[:n]
    family.check_means(m)
    # u[k] = 1 - f_k o ... o f_{n-1}(0), u[n] = 1
    u = np.ones(n + 1)
    for k in range(n - 1, -1, -1):
        u[k] = family.survival_map(m[k], u[k + 1])
    if u[0] < _UNDERFLOW:
        raise PrecisionError(f"survival probability {u[0]:.3e} underflowed")
    inner = u[1:]
    # g_k(s) = 1/(1 - f_k(s)) - 1/(m_k (1 - s)) = defect / (phi * m * q)
    eta = family.defect(m, inner) / (u[:-1] * m * inner)
    eta_bound = family.second_factorial_moment(m) / (m * m)
    weights = np.exp(env.s[:n])
    leading = float(np.exp(env.s[n]))
    total = leading + float(np.sum(weights * eta))
    return GkDecomposition(leading, weights, eta, eta_bound, total, float(u[0]))


def quenched_mean(env: EnvPath, k: int) -> float:
    """E^E[Z_k] = exp(-S_k)."""
    if not 0 <= k <= env.length:
        raise IndexError(f"generation {k} outside [0, {env.length}]")
    return float(np.exp(-env.s[k]))


def w_second_moment_envelope(env: EnvPath, family: OffspringFamily, n: int) -> float:
    """Upper bound 1 + A + (A+B) sum e^{S_k} + C sum e^{S_k + X_k}, k = 1..n."""
    n = _check_horizon(env, n)
    a, b, c = assumption_a_constants(family)
    s = env.s[1 : n + 1]
    x = env.x[:n]
    return float(1.0 + a + (a + b) * np.sum(np.exp(s)) + c * np.sum(np.exp(s + x)))


def w_second_moment(env: EnvPath, family: OffspringFamily, n: int) -> float:
    """E^E[W_n^2] for the normalized population W_n = Z_n exp(S_n)."""
    n = _check_horizon(env, n)
    m = env.means[:n]
    family.check_means(m)
    sigma2 = family.variance(m)
    value = float(1.0 + np.sum(sigma2 * np.exp(env.s[1 : n + 1] + env.x[:n])))
    bound = w_second_moment_envelope(env, family, n)
    if value > bound * (1.0 + 1e-12):
        raise ArithmeticError(f"second moment {value} exceeds its envelope {bound}")
    return value
