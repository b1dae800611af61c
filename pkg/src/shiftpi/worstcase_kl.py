"""KL-ball worst-case bounds on the target mean of the influence function.

The interval endpoints are the extreme means of phi over all reweightings of
the covariate-adjusted source sample within KL radius rho. They are computed
through the exponential-tilt dual, with the radius calibrated from conditional
KL estimates on fully observed site pairs.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .data_model import SiteDataset, split_indices
from .errors import EmptyInput
from .estimators import weighted_mean
from .intervals import PredictionInterval, make_interval, order_statistic
from .nuisance import fit_density_ratio
from .rng import substream

logger = logging.getLogger(__name__)

KL_CLIP = (1e-8, 1e8)


@dataclass(frozen=True)
class KLBudget:
    rho: float
    source_quantile: float = 0.99
    n_pairs_used: int = 0


def _joint_features(d: SiteDataset, with_treatment: bool):
    cols = [d.X, d.Y[:, None]]
    if with_treatment:
        t = d.T.astype(float)[:, None]
        cols += [t, t * d.Y[:, None]]
    return np.hstack(cols)


def estimate_conditional_kl(source: SiteDataset, target: SiteDataset, seed: int = 0,
                            crossfit: bool = False) -> float:
    """Plug-in estimate of KL(Q_{Y|X} || P_{Y|X}) averaged over Q_X.

    Two logistic discriminators (target versus source) give the joint ratio on
    (X, Y) and the marginal ratio on X; their quotient is the conditional ratio
    r. The estimate is the Q_X-reweighted source average of r log r, with r
    normalized to have weighted mean one, floored at 0. When both sites carry
    a treatment column the joint features also include t and t*y. With
    ``crossfit`` the discriminators are fit on one half of each sample and
    evaluated on the other.
    """
    y_all = np.concatenate([source.Y, target.Y])
    if np.all(y_all == y_all[0]):
        # both conditionals are the same point mass
        return 0.0
    with_t = source.T is not None and target.T is not None
    js, jt = _joint_features(source, with_t), _joint_features(target, with_t)
    if crossfit:
        s1, s2 = split_indices(source.n, substream(seed, "kl", "source"))
        t1, t2 = split_indices(target.n, substream(seed, "kl", "target"))
        parts = [(s1, t1, s2), (s2, t2, s1)]
    else:
        everything = np.arange(source.n)
        parts = [(everything, np.arange(target.n), everything)]
    num = 0.0
    den = 0.0
    for fit_s, fit_t, ev in parts:
        joint = fit_density_ratio(js[fit_s], jt[fit_t], KL_CLIP)
        marg = fit_density_ratio(source.X[fit_s], target.X[fit_t], KL_CLIP)
        log_a = marg.log_odds(source.X[ev])
        log_r = joint.log_odds(js[ev]) - log_a
        a = np.exp(log_a - log_a.max())
        a /= a.sum()
        shift = log_r.max()
        r = np.exp(log_r - shift)
        norm_r = float(a @ r)
        r /= norm_r
        log_r = log_r - shift - math.log(norm_r)
        num += float(a @ (r * log_r))
        den += 1.0
    return max(num / den, 0.0)


def calibrate_kl_bound(kl_values, quantile: float = 0.99) -> KLBudget:
    v = np.asarray(kl_values, dtype=float).reshape(-1)
    v = v[np.isfinite(v)]
    if v.size == 0:
        raise EmptyInput("no KL values to calibrate from")
    return KLBudget(max(order_statistic(v, quantile), 0.0), quantile, int(v.size))


def _tilt_kl(phi, w, s):
    log_mgf, tilted_mean = _kernels.tilted_stats(phi, w, s)
    return s * tilted_mean - log_mgf, tilted_mean


def _upper_end(phi, w, rho, tol, max_iter):
    lo_v, hi_v = float(phi.min()), float(phi.max())
    rng_ = hi_v - lo_v
    # tilt parameter s = 1/lambda; KL of the tilted law increases with s
    s_lo = 1.0 / (1e3 * rng_)
    s_hi = 1.0 / (1e-6 * rng_)
    kl_lo, mean_lo = _tilt_kl(phi, w, s_lo)
    grow = 0
    while kl_lo > rho and grow < 60:
        s_hi, s_lo = s_lo, s_lo / 8.0
        kl_lo, mean_lo = _tilt_kl(phi, w, s_lo)
        grow += 1
    kl_hi, mean_hi = _tilt_kl(phi, w, s_hi)
    if kl_hi <= rho:
        # the ball reaches (numerically) the point mass at the maximum
        return min(mean_hi, hi_v)
    a, b = math.log(s_lo), math.log(s_hi)
    best = mean_lo
    for _ in range(max_iter):
        if b - a <= tol:
            break
        mid = 0.5 * (a + b)
        kl_mid, mean_mid = _tilt_kl(phi, w, math.exp(mid))
        if kl_mid <= rho:
            a, best = mid, mean_mid
        else:
            b = mid
    return min(max(best, lo_v), hi_v)


def kl_worstcase_interval(phi, weights=None, rho: float = 0.0, alpha: float = 0.05,
                          tol: float = 1e-10, max_iter: int = 200) -> PredictionInterval:
    """Range of E[phi] over reweightings of the weighted sample within KL radius rho.

    The upper end solves inf over lambda > 0 of lambda*rho + lambda*log E_w exp(phi/lambda)
    by bisection in log(1/lambda) on the KL of the tilted law; the lower end is
    the same problem for -phi. ``tol`` is the bracket width in log(1/lambda).
    """
    phi = np.ascontiguousarray(phi, dtype=float).reshape(-1)
    w = np.ones_like(phi) if weights is None else np.ascontiguousarray(weights, dtype=float).reshape(-1)
    if phi.size == 0:
        raise EmptyInput("empty sample")
    if w.shape != phi.shape or np.any(w < 0) or not np.all(np.isfinite(w)) or not w.sum() > 0:
        raise ValueError("weights must be non-negative, finite, not all zero and match phi")
    if rho < 0:
        raise ValueError("rho must be >= 0")
    if np.any(w == 0):
        # massless points stay massless anywhere in the ball (absolute continuity)
        keep = w > 0
        phi, w = np.ascontiguousarray(phi[keep]), np.ascontiguousarray(w[keep])
    if phi.max() == phi.min():
        c = float(phi[0])
        return make_interval("WorstCaseKL", c, c, alpha, c, 0.0)
    center = weighted_mean(phi, w)
    if rho == 0:
        return make_interval("WorstCaseKL", center, center, alpha, center, 0.0)
    wn = w / w.sum()
    hi = max(_upper_end(phi, wn, rho, tol, max_iter), center)
    lo = min(-_upper_end(-phi, wn, rho, tol, max_iter), center)
    return make_interval("WorstCaseKL", lo, hi, alpha, center, rho)
