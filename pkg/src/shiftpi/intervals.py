"""Prediction intervals for the target-site estimate and calibration of the
ratio bounds (L, U)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm

from .errors import EmptyInput, TooFewRatios
from .estimators import GeneralizationEstimate

METHODS = ("IID", "CovShiftDR", "CovShiftEB", "Const", "Adaptive", "Oracle", "WorstCaseKL")
CONSTANT = "Constant"
QUANTILE = "Quantile"


@dataclass(frozen=True)
class PredictionInterval:
    method: str
    lo: float
    hi: float
    alpha: float
    center: float
    width: float
    scale: float = math.nan
    L: float = math.nan
    U: float = math.nan

    def covers(self, value: float) -> bool:
        return self.lo <= value <= self.hi


def make_interval(method, lo, hi, alpha, center, scale=math.nan, L=math.nan, U=math.nan):
    lo, hi = float(lo), float(hi)
    if hi < lo:
        raise ValueError(f"{method}: lower end {lo} above upper end {hi}")
    return PredictionInterval(method, lo, hi, float(alpha), float(center), hi - lo,
                              float(scale), float(L), float(U))


@dataclass(frozen=True)
class CalibrationBounds:
    L: float
    U: float
    mode: str
    n_calibration: int = 0

    def __post_init__(self):
        if self.L > self.U:
            raise ValueError("calibration bounds need L <= U")


def normal_quantile(p: float) -> float:
    return float(norm.ppf(p))


def order_statistic(values, q: float) -> float:
    """Inclusive empirical quantile: the ceil(q*m)-th smallest of m values (1-based)."""
    v = np.sort(np.asarray(values, dtype=float))
    m = v.size
    if m == 0:
        raise EmptyInput("quantile of an empty sample")
    k = math.ceil(q * m - 1e-9)  # guard against q*m landing a hair above an integer
    return float(v[min(max(k, 1), m) - 1])


def iid_interval(theta_source: float, sd: float, n_source: int, n_target: int,
                 alpha: float = 0.05) -> PredictionInterval:
    half = normal_quantile(1 - alpha / 2) * sd * math.sqrt(1.0 / n_source + 1.0 / n_target)
    return make_interval("IID", theta_source - half, theta_source + half, alpha, theta_source,
                         sd * math.sqrt(1.0 / n_source + 1.0 / n_target))


def covshift_interval(gen: GeneralizationEstimate, alpha: float = 0.05) -> PredictionInterval:
    half = normal_quantile(1 - alpha / 2) * gen.sigma_covshift
    return make_interval(f"CovShift{gen.method}", gen.theta_w - half, gen.theta_w + half, alpha,
                         gen.theta_w, gen.sigma_covshift)


def calibrate_bounds(ratios: Optional[Sequence[float]] = None, alpha: float = 0.05,
                     mode: str = QUANTILE) -> CalibrationBounds:
    """Constant mode returns (-1, 1); quantile mode takes order statistics of
    the finite ratios at ceil(alpha/2 * m) and ceil((1 - alpha/2) * m)."""
    if mode == CONSTANT:
        return CalibrationBounds(-1.0, 1.0, CONSTANT, 0)
    if mode != QUANTILE:
        raise ValueError(f"unknown calibration mode {mode!r}")
    r = np.asarray([] if ratios is None else ratios, dtype=float)
    r = r[np.isfinite(r)]
    if r.size < 2:
        raise TooFewRatios(f"quantile calibration needs at least 2 finite ratios, got {r.size}")
    return CalibrationBounds(order_statistic(r, alpha / 2), order_statistic(r, 1 - alpha / 2),
                             QUANTILE, int(r.size))


def predictive_interval(gen: GeneralizationEstimate, t_x: float, s_yx: float,
                        bounds: CalibrationBounds, alpha: float = 0.05,
                        method: Optional[str] = None) -> PredictionInterval:
    """[theta_w + L * t_x * s_yx, theta_w + U * t_x * s_yx]."""
    if t_x < 0 or s_yx < 0:
        raise ValueError("t_x and s_yx must be non-negative")
    if method is None:
        method = "Const" if bounds.mode == CONSTANT else "Adaptive"
    scale = t_x * s_yx
    center = gen.theta_w

    def end(b):
        return b if math.isinf(b) else center + b * scale

    return make_interval(method, end(bounds.L), end(bounds.U), alpha, center, scale,
                         bounds.L, bounds.U)
