"""Power-law fits of tail tables and the predicted tail exponents."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from .env_gen import validate_hurst
from .errors import AlignmentError, DegenerateData, InsufficientData
from .sim import TailEstimate

__all__ = [
    "Transform",
    "PowerLawFit",
    "TheoreticalExponents",
    "theoretical_exponents",
    "fit_power_law",
    "sandwich_report",
    "SandwichReport",
    "MIN_FIT_POINTS",
]

MIN_FIT_POINTS = 4
# fraction of the smallest thresholds dropped by the default window
DEFAULT_DROP = 0.1


class Transform(str, Enum):
    LOG = "log"
    LOGLOG = "loglog"

    def apply(self, t: np.ndarray) -> np.ndarray:
        if self is Transform.LOG:
            return np.log(t)
        return np.log(np.log(t))


@dataclass(frozen=True)
class TheoreticalExponents:
    """Decay exponents: P(T > n) ~ n^-extinction, P(max Z > N) ~ (log N)^-max_pop."""

    extinction: float
    max_pop: float
    total_pop: float


def theoretical_exponents(h: float) -> TheoreticalExponents:
    h = validate_hurst(h)
    ext = 1.0 - h
    return TheoreticalExponents(ext, ext / h, ext / h)


@dataclass(frozen=True)
class PowerLawFit:
    slope: float
    intercept: float
    slope_std_err: float
    window: Tuple[float, float]
    r_squared: float
    transform: Transform = Transform.LOG
    n_points: int = 0

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "slope_std_err": self.slope_std_err,
            "window": list(self.window),
            "r_squared": self.r_squared,
            "transform": self.transform.value,
            "n_points": self.n_points,
        }


def _default_window(thresholds: np.ndarray) -> Tuple[float, float]:
    t = np.sort(thresholds)
    drop = int(math.floor(DEFAULT_DROP * len(t)))
    return float(t[drop]), float(t[-1])


def fit_power_law(
    estimate: TailEstimate,
    x_transform: Transform | str = Transform.LOG,
    window: Optional[Tuple[float, float]] = None,
) -> PowerLawFit:
    """Weighted least squares of log p_hat against the transformed threshold.

    Weights are 1 / (std_err / p_hat)^2; if any point has zero standard error
    the fit falls back to equal weights. The slope standard error is scaled
    by the residual variance, so it stays meaningful when the reported errors
    are off by a common factor. The default window drops the smallest 10% of
    thresholds.
    """
    tr = Transform(x_transform)
    t = np.asarray(estimate.thresholds, dtype=float)
    p = np.asarray(estimate.p_hat, dtype=float)
    se = np.asarray(estimate.std_err, dtype=float)
    lo, hi = window if window is not None else _default_window(t)
    usable = (t >= lo) & (t <= hi) & (p > 0)
    usable &= t > (1.0 if tr is Transform.LOGLOG else 0.0)
    if usable.sum() < MIN_FIT_POINTS:
        raise InsufficientData(f"need {MIN_FIT_POINTS} usable points, have {int(usable.sum())}")
    t, p, se = t[usable], p[usable], se[usable]
    if np.all(p == p[0]):
        raise DegenerateData("all estimates are equal")

    x = tr.apply(t)
    y = np.log(p)
    rel = se / p
    w = np.ones_like(y) if np.any(rel <= 0) else 1.0 / rel**2
    w = w / w.sum()

    xm = np.sum(w * x)
    ym = np.sum(w * y)
    sxx = np.sum(w * (x - xm) ** 2)
    if sxx <= 0:
        raise DegenerateData("thresholds do not vary inside the window")
    slope = np.sum(w * (x - xm) * (y - ym)) / sxx
    intercept = ym - slope * xm
    resid = y - intercept - slope * x
    n = len(x)
    ss_res = np.sum(w * resid**2)
    ss_tot = np.sum(w * (y - ym) ** 2)
    # normalized weights: sigma^2 estimate = n * ss_res / (n - 2)
    slope_var = ss_res / (n - 2) / sxx
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return PowerLawFit(
        slope=float(slope),
        intercept=float(intercept),
        slope_std_err=float(math.sqrt(max(slope_var, 0.0))),
        window=(float(t.min()), float(t.max())),
        r_squared=float(min(max(r2, 0.0), 1.0)),
        transform=tr,
        n_points=n,
    )


@dataclass
class SandwichReport:
    """Per-threshold check of P(sum > N^2) - P(T > N) <= P(max > N) <= P(sum > N)."""

    rows: List[dict] = field(default_factory=list)
    n_sigma: float = 3.0

    @property
    def violations(self) -> List[dict]:
        return [r for r in self.rows if not (r["lower_ok"] and r["upper_ok"])]

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"n_sigma": self.n_sigma, "rows": self.rows, "violations": len(self.violations)}


def sandwich_report(
    max_t: TailEstimate, total_t: TailEstimate, ext_t: TailEstimate, n_sigma: float = 3.0
) -> SandwichReport:
    """Check the max/sum/extinction-time chain at every aligned threshold N.

    N is aligned when the max table has N, the total table has N and N^2,
    and the extinction table has N. Each side gets ``n_sigma`` pooled
    standard errors of slack.
    """
    tot = dict(zip(total_t.thresholds, zip(total_t.p_hat, total_t.std_err)))
    ext = dict(zip(ext_t.thresholds, zip(ext_t.p_hat, ext_t.std_err)))
    report = SandwichReport(n_sigma=n_sigma)
    for n, p_max, se_max in zip(max_t.thresholds, max_t.p_hat, max_t.std_err):
        if n not in tot or n * n not in tot or n not in ext:
            continue
        p_tot, se_tot = tot[n]
        p_tot2, se_tot2 = tot[n * n]
        p_ext, se_ext = ext[n]
        lower = p_tot2 - p_ext
        slack_lo = n_sigma * math.sqrt(se_tot2**2 + se_ext**2 + se_max**2)
        slack_hi = n_sigma * math.sqrt(se_max**2 + se_tot**2)
        report.rows.append(
            {
                "threshold": int(n) if float(n).is_integer() else float(n),
                "lower": float(lower),
                "max": float(p_max),
                "upper": float(p_tot),
                "lower_ok": bool(lower <= p_max + slack_lo),
                "upper_ok": bool(p_max <= p_tot + slack_hi),
            }
        )
    if not report.rows:
        raise AlignmentError("no threshold N has N in all tables and N^2 in the total table")
    return report
