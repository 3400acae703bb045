"""Offspring laws whose mean is set by the environment, m = exp(-X).

Three families are supported, selected by a config string:

* ``"geometric"``: P(k) = p (1-p)^k on {0, 1, ...}, pgf 1 / (1 + m (1 - s))
* ``"poisson"``: pgf exp(m (s - 1))
* ``"binomial:<n_max>"``: Binomial(n_max, m / n_max)

Besides the pgf itself, each family provides the survival-form map
q -> 1 - f(1 - q) and its defect m q - (1 - f(1 - q)), both evaluated without
the cancellation that the generic expressions suffer for small q.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial
from typing import NamedTuple, Optional

import numpy as np

from .errors import DomainError

__all__ = [
    "OffspringFamily",
    "OffspringLaw",
    "AssumptionAConstants",
    "GEOMETRIC",
    "POISSON",
    "BINOMIAL",
    "parse_family",
    "pgf_eval",
    "variance",
    "assumption_a_constants",
    "sample_aggregate",
]

GEOMETRIC = "geometric"
POISSON = "poisson"
BINOMIAL = "binomial"

# Below these arguments the defect is summed from its Taylor series.
_SERIES_CUTOFF = 0.1
_SERIES_TERMS = 12
_INV_FACT = np.array([1.0 / factorial(j) for j in range(_SERIES_TERMS + 2)])


class AssumptionAConstants(NamedTuple):
    """(a, b, c) with variance <= a m^2 + b m + c over the family's domain."""

    a: float
    b: float
    c: float


def _poisson_defect(x: np.ndarray) -> np.ndarray:
    # x - (1 - e^{-x}) = sum_{j>=2} (-x)^j / j!
    out = x + np.expm1(-x)
    small = x < _SERIES_CUTOFF
    if np.any(small):
        xs = x[small]
        acc = np.zeros_like(xs)
        for j in range(_SERIES_TERMS + 1, 1, -1):
            acc = acc * xs + ((-1) ** j) * _INV_FACT[j]
        # acc now holds sum_j (-1)^j x^{j-2} / j!
        out[small] = acc * xs * xs
    return out


def _binomial_defect(y: np.ndarray, n_max: int) -> np.ndarray:
    # n y - 1 + (1 - y)^n = sum_{j=2}^{n} C(n, j) (-y)^j
    if n_max == 1:
        return np.zeros_like(y)
    with np.errstate(divide="ignore"):
        out = n_max * y + np.expm1(n_max * np.log1p(-y))
    small = n_max * y < _SERIES_CUTOFF
    if np.any(small):
        ys = y[small]
        term = 0.5 * n_max * (n_max - 1) * ys * ys
        acc = term.copy()
        for j in range(2, min(n_max, _SERIES_TERMS + 2)):
            term = term * (-ys) * (n_max - j) / (j + 1)
            acc += term
        out[small] = acc
    return out


@dataclass(frozen=True)
class OffspringFamily:
    """Shape of the reproduction law; the mean is supplied per generation."""

    kind: str
    n_max: Optional[int] = None

    def __post_init__(self):
        if self.kind not in (GEOMETRIC, POISSON, BINOMIAL):
            raise DomainError(f"unknown offspring family {self.kind!r}")
        if self.kind == BINOMIAL:
            if self.n_max is None or int(self.n_max) < 1:
                raise DomainError("binomial family needs n_max >= 1")
            object.__setattr__(self, "n_max", int(self.n_max))
        elif self.n_max is not None:
            raise DomainError("n_max only applies to the binomial family")

    def __str__(self) -> str:
        return f"binomial:{self.n_max}" if self.kind == BINOMIAL else self.kind

    def law(self, mean: float) -> "OffspringLaw":
        return OffspringLaw(self, mean)

    def check_means(self, m) -> None:
        """Raise DomainError if any mean is outside the family's domain."""
        m = np.asarray(m, dtype=float)
        if not np.all(m > 0):
            raise DomainError("offspring mean must be positive")
        if self.kind == BINOMIAL and np.any(m > self.n_max):
            raise DomainError(
                f"binomial:{self.n_max} cannot have mean above {self.n_max} "
                f"(environment value below {-np.log(self.n_max):.4g})"
            )

    # Array-friendly primitives; ``m`` and ``q``/``s`` broadcast.

    def pgf(self, m, s):
        m = np.asarray(m, dtype=float)
        s = np.asarray(s, dtype=float)
        if self.kind == GEOMETRIC:
            return 1.0 / (1.0 + m * (1.0 - s))
        if self.kind == POISSON:
            return np.exp(m * (s - 1.0))
        p = m / self.n_max
        return (1.0 - p + p * s) ** self.n_max

    def survival_map(self, m, q):
        """1 - f(1 - q), the one-generation update of a survival probability."""
        m = np.asarray(m, dtype=float)
        q = np.asarray(q, dtype=float)
        if self.kind == GEOMETRIC:
            mq = m * q
            return mq / (1.0 + mq)
        if self.kind == POISSON:
            return -np.expm1(-m * q)
        with np.errstate(divide="ignore"):
            return -np.expm1(self.n_max * np.log1p(-(m / self.n_max) * q))

    def defect(self, m, q):
        """m q - (1 - f(1 - q)) >= 0, accurate to relative precision."""
        m, q = np.broadcast_arrays(np.asarray(m, dtype=float), np.asarray(q, dtype=float))
        x = np.array(m * q, dtype=float, ndmin=1)
        if self.kind == GEOMETRIC:
            out = x * x / (1.0 + x)
        elif self.kind == POISSON:
            out = _poisson_defect(x)
        else:
            y = np.array((m / self.n_max) * q, dtype=float, ndmin=1)
            out = _binomial_defect(y, self.n_max)
        return out.reshape(np.shape(m)) if np.ndim(m) else float(out[0])

    def second_factorial_moment(self, m):
        """f''(1)."""
        m = np.asarray(m, dtype=float)
        if self.kind == GEOMETRIC:
            return 2.0 * m * m
        if self.kind == POISSON:
            return m * m
        return m * m * (1.0 - 1.0 / self.n_max)

    def variance(self, m):
        m = np.asarray(m, dtype=float)
        if self.kind == GEOMETRIC:
            return m * m + m
        if self.kind == POISSON:
            return m
        return m * (1.0 - m / self.n_max)

    def sample(self, m, z, rng: np.random.Generator):
        """Total offspring of ``z`` parents, vectorized over ``m`` and ``z``."""
        z = np.asarray(z, dtype=np.int64)
        m = np.asarray(m, dtype=float)
        if self.kind == GEOMETRIC:
            # sum of z geometrics = NegBin(z, .) = Poisson(Gamma(shape z, scale m))
            lam = rng.gamma(np.maximum(z, 1), m)
            out = rng.poisson(lam)
            return np.where(z > 0, out, 0)
        if self.kind == POISSON:
            return rng.poisson(z * m)
        return rng.binomial(z * self.n_max, m / self.n_max)


def parse_family(text: str) -> OffspringFamily:
    """Parse ``"geometric"``, ``"poisson"`` or ``"binomial:<n_max>"``."""
    key = text.strip().lower()
    if key.startswith(BINOMIAL):
        _, sep, rest = key.partition(":")
        if not sep:
            raise DomainError("binomial family must be written binomial:<n_max>")
        try:
            n_max = int(rest)
        except ValueError:
            raise DomainError(f"bad binomial n_max {rest!r}") from None
        return OffspringFamily(BINOMIAL, n_max)
    return OffspringFamily(key)


@dataclass(frozen=True)
class OffspringLaw:
    family: OffspringFamily
    mean: float

    def __post_init__(self):
        object.__setattr__(self, "mean", float(self.mean))
        self.family.check_means(self.mean)


def pgf_eval(law: OffspringLaw, s: float) -> float:
    if not 0.0 <= s <= 1.0:
        raise DomainError(f"pgf argument must lie in [0, 1], got {s}")
    return float(law.family.pgf(law.mean, s))


def variance(law: OffspringLaw) -> float:
    return float(law.family.variance(law.mean))


def assumption_a_constants(family: OffspringFamily) -> AssumptionAConstants:
    if family.kind == GEOMETRIC:
        return AssumptionAConstants(1.0, 1.0, 0.0)
    return AssumptionAConstants(0.0, 1.0, 0.0)


def sample_aggregate(law: OffspringLaw, z: int, rng: np.random.Generator) -> int:
    """Number of children of ``z`` independent parents under ``law``."""
    if z < 0:
        raise DomainError("number of parents must be nonnegative")
    if z == 0:
        return 0
    return int(law.family.sample(law.mean, z, rng))
