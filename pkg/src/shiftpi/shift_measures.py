"""Standardized shift measures between a source site and a target site."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import NoUsableCovariates, ZeroConditionalScale, ZeroCovariateShift
from .estimators import ConditionalVariances, GeneralizationEstimate

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ShiftMeasures:
    t_yx: float
    t_x: float
    ratio: float
    delta_yx: float
    delta_x: float
    rel_x: float
    s_yx: float
    rel_x_unstable: bool = False

    def as_row(self) -> dict:
        return {"t_yx": self.t_yx, "t_x": self.t_x, "ratio": self.ratio, "delta_yx": self.delta_yx,
                "delta_x": self.delta_x, "rel_x": self.rel_x}


class AlternativeMeasures(NamedTuple):
    delta_yx: float
    delta_x: float
    rel_x: float

    @property
    def unstable(self) -> bool:
        return not math.isfinite(self.rel_x)


def _usable_columns(source_X):
    sd = source_X.std(axis=0, ddof=1)
    keep = np.flatnonzero(sd > 0)
    if keep.size < source_X.shape[1]:
        logger.info("%d zero-variance covariate(s) left out of the covariate shift measure",
                    source_X.shape[1] - keep.size)
    if keep.size == 0:
        raise NoUsableCovariates("no covariate with positive source variance")
    return keep


def stabilized_covariate_shift(source_X, target_X, mahalanobis: bool = False) -> float:
    """Root mean square of the covariate mean differences in source-sd units.

    With ``mahalanobis`` the differences are whitened by the source covariance
    instead of the per-column sd.
    """
    S = np.asarray(source_X, dtype=float)
    T = np.asarray(target_X, dtype=float)
    if S.ndim == 1:
        S, T = S.reshape(-1, 1), T.reshape(-1, 1)
    if S.shape[0] < 2:
        raise NoUsableCovariates("need at least 2 source rows to estimate covariate spread")
    keep = _usable_columns(S)
    S, T = S[:, keep], T[:, keep]
    diff = T.mean(axis=0) - S.mean(axis=0)
    if mahalanobis:
        cov = np.atleast_2d(np.cov(S, rowvar=False))
        q = float(diff @ np.linalg.lstsq(cov, diff, rcond=None)[0])
        return math.sqrt(max(q, 0.0) / keep.size)
    z = diff / S.std(axis=0, ddof=1)
    return math.sqrt(float(np.mean(z * z)))


def conditional_shift_measure(theta_target: float, gen: GeneralizationEstimate,
                              cv: ConditionalVariances) -> float:
    if not cv.s_yx > 0:
        raise ZeroConditionalScale("residual scale s_yx is zero")
    return (theta_target - gen.theta_w) / cv.s_yx


def alternative_measures(theta_source: float, theta_target: float, gen: GeneralizationEstimate,
                         cv: ConditionalVariances = None, rel_scale: float = None) -> AlternativeMeasures:
    """Unstandardized conditional and covariate shifts, and the covariate shift
    relative to the explained spread ``rel_scale`` (defaults to ``cv.s_x``)."""
    scale = cv.s_x if rel_scale is None else rel_scale
    delta_yx = theta_target - gen.theta_w
    delta_x = gen.theta_w - theta_source
    if scale > 0:
        rel = delta_x / scale
    else:
        rel = -math.inf if delta_x < 0 else math.inf
        logger.info("relative covariate shift undefined (zero explained spread); sentinel returned")
    return AlternativeMeasures(delta_yx, delta_x, rel)


def shift_ratio(t_yx: float, t_x: float) -> float:
    if not t_x > 0:
        raise ZeroCovariateShift("covariate shift measure is zero; ratio undefined")
    return t_yx / t_x


def compute_shift_measures(theta_source: float, theta_target: float, gen: GeneralizationEstimate,
                           cv: ConditionalVariances, t_x: float) -> ShiftMeasures:
    t_yx = conditional_shift_measure(theta_target, gen, cv)
    alt = alternative_measures(theta_source, theta_target, gen, cv)
    ratio = shift_ratio(t_yx, t_x) if t_x > 0 else math.nan
    return ShiftMeasures(t_yx, t_x, ratio, alt.delta_yx, alt.delta_x, alt.rel_x, cv.s_yx, alt.unstable)
