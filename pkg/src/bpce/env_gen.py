"""Correlated Gaussian environments and walk functionals.

The environment is fractional Gaussian noise (fGn): a stationary standard
Gaussian sequence X_1, X_2, ... with autocovariance

    r(j) = (|j+1|^{2H} - 2|j|^{2H} + |j-1|^{2H}) / 2,

so that Var(S_n) = n^{2H} for the walk S_n = X_1 + ... + X_n. Paths are drawn
exactly in distribution by circulant embedding (Davies-Harte).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, EmbeddingFailure
from .rng import check_seed, make_rng

__all__ = [
    "EnvPath",
    "FgnSpec",
    "validate_hurst",
    "fgn_covariance",
    "circulant_eigenvalues",
    "sample_fgn",
    "sample_fgn_batch",
    "running_max",
    "first_passage",
    "env_to_bytes",
    "env_from_bytes",
    "dump_env",
    "load_env",
    "ENV_MAGIC",
]

# Relative clipping tolerance for round-off negative circulant eigenvalues.
EIGEN_CLIP_TOL = 1e-9

ENV_MAGIC = b"BPCEENV1"
_HEADER = struct.Struct("<8sII")


def validate_hurst(h: float, *, correlated: bool = False) -> float:
    """Check 0 < h < 1; with ``correlated`` also require h >= 1/2.

    Below 1/2 the increments are negatively correlated and lose positive
    association, so experiment drivers refuse that range.
    """
    h = float(h)
    if not 0.0 < h < 1.0:
        raise DomainError(f"Hurst parameter must lie in (0, 1), got {h}")
    if correlated and h < 0.5:
        raise DomainError(f"correlated environments need H >= 1/2, got {h}")
    return h


def fgn_covariance(j, h: float):
    """Autocovariance r(j) of unit-variance fGn with Hurst index ``h``.

    Accepts a scalar or an integer array of nonnegative lags.
    """
    h = validate_hurst(h)
    j_arr = np.asarray(j, dtype=float)
    if np.any(j_arr < 0):
        raise DomainError("lag must be nonnegative")
    two_h = 2.0 * h
    r = 0.5 * (np.abs(j_arr + 1) ** two_h - 2.0 * np.abs(j_arr) ** two_h + np.abs(j_arr - 1) ** two_h)
    if np.ndim(r) == 0:
        return float(r)
    return r


def _transform_length(n: int) -> int:
    m = 2
    while m < 2 * (n - 1):
        m *= 2
    return m


@lru_cache(maxsize=32)
def _eigenvalues(h: float, m: int) -> np.ndarray:
    lags = np.minimum(np.arange(m), m - np.arange(m))
    row = fgn_covariance(lags, h)
    lam = np.fft.rfft(row).real
    lam_max = lam.max()
    lam_min = lam.min()
    if lam_min < -EIGEN_CLIP_TOL * lam_max:
        raise EmbeddingFailure(
            f"circulant eigenvalue {lam_min:.3e} below tolerance for H={h}, size {m}"
        )
    lam = np.clip(lam, 0.0, None)
    lam.flags.writeable = False
    return lam


def circulant_eigenvalues(h: float, n: int) -> np.ndarray:
    """Nonnegative eigenvalues (first half of the spectrum) of the embedding for length ``n``."""
    return _eigenvalues(validate_hurst(h), _transform_length(n))


@dataclass(frozen=True)
class EnvPath:
    """One environment realization: increments ``x`` and walk ``s``.

    ``x[k-1]`` holds X_k for k = 1..n and ``s[k]`` holds S_k for k = 0..n, so
    ``s`` is one element longer than ``x``. Both arrays are read-only.
    """

    x: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        if self.x.ndim != 1 or self.s.ndim != 1 or len(self.s) != len(self.x) + 1:
            raise ValueError("s must be one element longer than x")
        if len(self.x) < 1:
            raise ValueError("environment must have positive length")
        if self.s[0] != 0.0:
            raise ValueError("walk must start at S_0 = 0")

    @classmethod
    def from_increments(cls, x: Sequence[float]) -> "EnvPath":
        x = np.array(x, dtype=np.float64)
        s = np.empty(len(x) + 1)
        s[0] = 0.0
        np.cumsum(x, out=s[1:])
        x.flags.writeable = False
        s.flags.writeable = False
        return cls(x, s)

    @property
    def length(self) -> int:
        return len(self.x)

    @property
    def means(self) -> np.ndarray:
        """Offspring means m_i = exp(-X_{i+1}), i = 0..n-1."""
        return np.exp(-self.x)

    def __len__(self) -> int:
        return len(self.x)


@dataclass(frozen=True)
class FgnSpec:
    hurst: float
    length: int
    seed: int = 0

    def __post_init__(self):
        validate_hurst(self.hurst)
        if int(self.length) < 1:
            raise ValueError("length must be >= 1")
        check_seed(self.seed)


def _fgn_rows(h: float, n: int, normals: np.ndarray) -> np.ndarray:
    m = normals.shape[1]
    half = m // 2
    lam = _eigenvalues(h, m)
    coef = np.empty((normals.shape[0], half + 1), dtype=np.complex128)
    coef[:, 0] = normals[:, 0] * np.sqrt(lam[0])
    coef[:, half] = normals[:, 1] * np.sqrt(lam[half])
    amp = np.sqrt(lam[1:half] / 2.0)
    coef[:, 1:half].real = normals[:, 2 : half + 1] * amp
    coef[:, 1:half].imag = normals[:, half + 1 :] * amp
    out = np.fft.irfft(coef, n=m, axis=1)[:, :n]
    out *= np.sqrt(m)
    return out


def sample_fgn_batch(h: float, n: int, rngs: Sequence[np.random.Generator]) -> np.ndarray:
    """Draw one fGn path of length ``n`` from each generator in ``rngs``.

    Row ``i`` depends only on ``rngs[i]``, so batching never changes results.
    At H = 1/2 the noise is white and is drawn directly.
    """
    h = validate_hurst(h)
    n = int(n)
    if n < 1:
        raise ValueError("length must be >= 1")
    if h == 0.5:
        out = np.empty((len(rngs), n))
        for i, g in enumerate(rngs):
            g.standard_normal(out=out[i])
        return out
    m = _transform_length(n)
    _eigenvalues(h, m)  # fail before drawing anything
    normals = np.empty((len(rngs), m))
    for i, g in enumerate(rngs):
        g.standard_normal(out=normals[i])
    return _fgn_rows(h, n, normals)


def sample_fgn(spec: FgnSpec, rng: Optional[np.random.Generator] = None) -> EnvPath:
    """Sample one environment; uses ``spec.seed`` when no generator is given."""
    if rng is None:
        rng = make_rng(spec.seed)
    x = sample_fgn_batch(spec.hurst, spec.length, [rng])[0]
    return EnvPath.from_increments(x)


def running_max(path: EnvPath, start: int, stop: int) -> float:
    """max(S_start, ..., S_stop) for 1 <= start <= stop <= n."""
    if not 1 <= start <= stop <= path.length:
        raise IndexError(f"need 1 <= start <= stop <= {path.length}, got ({start}, {stop})")
    return float(path.s[start : stop + 1].max())


def first_passage(path: EnvPath, level: float) -> Optional[int]:
    """First k >= 1 with S_k >= level (level > 0) or S_k <= level (level < 0).

    Returns None when the level is not reached within the path.
    """
    if level == 0:
        raise DomainError("first-passage level must be nonzero")
    walk = path.s[1:]
    hit = walk >= level if level > 0 else walk <= level
    idx = int(np.argmax(hit))
    if not hit[idx]:
        return None
    return idx + 1


def env_to_bytes(path: EnvPath) -> bytes:
    """Serialize increments as little-endian float64 after a 16-byte header."""
    return _HEADER.pack(ENV_MAGIC, path.length, 0) + np.asarray(path.x, dtype="<f8").tobytes()


def env_from_bytes(raw: bytes) -> EnvPath:
    if len(raw) < _HEADER.size:
        raise ValueError("truncated environment file")
    magic, n, _ = _HEADER.unpack_from(raw)
    if magic != ENV_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    body = raw[_HEADER.size :]
    if len(body) != 8 * n:
        raise ValueError(f"expected {n} values, found {len(body) // 8}")
    return EnvPath.from_increments(np.frombuffer(body, dtype="<f8"))


def dump_env(path: EnvPath, dest) -> None:
    Path(dest).write_bytes(env_to_bytes(path))


def load_env(src) -> EnvPath:
    return env_from_bytes(Path(src).read_bytes())
