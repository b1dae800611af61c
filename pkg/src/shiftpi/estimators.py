"""Generalization point estimates (doubly robust, entropy balancing) and the
variances the interval constructors need."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .data_model import PairTask, SiteDataset, exclude_unbalanceable_covariates, split_folds, split_indices
from .influence import InfluenceSpec, influence_vector
from .nuisance import NuisanceConfig, UnitRatio, ZeroModel, entropy_balance
from .rng import substream

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GeneralizationEstimate:
    theta_w: float
    method: str
    sigma_covshift: float
    n_source: int
    n_target: int
    converged: bool = True
    weights: Optional[np.ndarray] = field(default=None, repr=False)
    phi: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass(frozen=True)
class ConditionalVariances:
    s_yx: float
    s_x: float
    residuals: np.ndarray = field(repr=False)
    fitted: Optional[np.ndarray] = field(default=None, repr=False)


def weighted_mean(phi, weights) -> float:
    """sum(w * phi) / sum(w); the single definition shared by every reweighted mean."""
    phi = np.asarray(phi, dtype=float)
    w = np.asarray(weights, dtype=float)
    return float(np.dot(w, phi) / np.sum(w))


def _covshift_sigma(w, resid, n_source, n_target):
    r2 = resid * resid
    var = np.mean(w * w * r2) / n_source + np.mean(w * r2) / n_target
    return float(np.sqrt(max(var, 0.0)))


def crossfit_predictions(X, phi, folds, cfg: NuisanceConfig, oracle: Optional[Callable] = None):
    """Out-of-fold predictions of the conditional mean of phi given X."""
    if oracle is not None:
        return np.asarray(oracle(X), dtype=float)
    f1, f2 = folds
    fitted = np.empty(X.shape[0])
    fitted[f2] = cfg.fit_regressor(X[f1], phi[f1]).predict(X[f2])
    fitted[f1] = cfg.fit_regressor(X[f2], phi[f2]).predict(X[f1])
    return fitted


def dr_estimate(task: PairTask, spec: InfluenceSpec, seed: int = 0,
                cfg: NuisanceConfig = NuisanceConfig(),
                force_unit_weights: bool = False, force_zero_outcome_model: bool = False,
                oracle_ratio: Optional[Callable] = None,
                oracle_mean: Optional[Callable] = None) -> GeneralizationEstimate:
    """Cross-fitted doubly robust estimate of E_Q[phi_P(X)].

    Source and target are each split in two; nuisances fit on one half of both
    are applied to the other half. ``oracle_ratio``/``oracle_mean`` replace the
    fitted nuisances with known functions.
    """
    src = task.source
    X, XT = src.X, task.target_X
    phi = influence_vector(spec, src)
    n, m = src.n, task.n_target
    if n < 4:
        raise ValueError("doubly robust estimation needs at least 4 source rows")
    sf = split_folds(src, seed)
    s_folds = (sf.fold1, sf.fold2)
    # same stream as the source split, so equal-sized identical samples get identical folds
    t_folds = split_indices(m, substream(seed, "folds")) if m >= 2 else (np.arange(m), np.arange(m))

    w = np.empty(n)
    fit_s = np.empty(n)
    fit_t = np.empty(m)
    for k in (0, 1):
        train_s, apply_s = s_folds[k], s_folds[1 - k]
        train_t, apply_t = t_folds[k], t_folds[1 - k]
        if force_zero_outcome_model:
            reg = ZeroModel()
        elif oracle_mean is not None:
            reg = None
        else:
            reg = cfg.fit_regressor(X[train_s], phi[train_s])
        if force_unit_weights:
            ratio = UnitRatio()
        elif oracle_ratio is not None:
            ratio = None
        else:
            tt = train_t if train_t.size else np.arange(m)
            ratio = cfg.fit_ratio(X[train_s], XT[tt])
        w[apply_s] = oracle_ratio(X[apply_s]) if ratio is None else ratio.predict(X[apply_s])
        fit_s[apply_s] = oracle_mean(X[apply_s]) if reg is None else reg.predict(X[apply_s])
        if apply_t.size:
            fit_t[apply_t] = oracle_mean(XT[apply_t]) if reg is None else reg.predict(XT[apply_t])
    resid = phi - fit_s
    theta = float(np.mean(w * resid) + np.mean(fit_t))
    sigma = _covshift_sigma(w, resid, n, m)
    return GeneralizationEstimate(theta, "DR", sigma, n, m, True, w, phi)


def eb_estimate(task: PairTask, spec: InfluenceSpec, seed: int = 0,
                cfg: NuisanceConfig = NuisanceConfig(),
                force_unit_weights: bool = False, force_zero_outcome_model: bool = False,
                oracle_mean: Optional[Callable] = None) -> GeneralizationEstimate:
    """Entropy-balancing estimate: the balanced-weight mean of phi on the source.

    Covariates whose target mean is outside the source range are excluded
    before balancing. The variance uses the same plug-in formula as the doubly
    robust path with a cross-fitted outcome model.
    """
    src = task.source
    phi = influence_vector(spec, src)
    n, m = src.n, task.n_target
    if force_unit_weights:
        w, converged = np.ones(n), True
    else:
        pruned, ptx, _ = exclude_unbalanceable_covariates(src, task.target_X)
        bw = entropy_balance(pruned.X, ptx.mean(axis=0), cfg.eb_tol, cfg.eb_max_iter)
        w, converged = bw.w, bw.converged
        if not converged:
            logger.warning("entropy balancing did not converge for %s -> %s (hypothesis %s)",
                           src.site_id, task.target_site, src.hypothesis_id)
    theta = weighted_mean(phi, w)
    if force_zero_outcome_model:
        fitted = np.zeros(n)
    else:
        sf = split_folds(src, seed)
        fitted = crossfit_predictions(src.X, phi, (sf.fold1, sf.fold2), cfg, oracle_mean)
    sigma = _covshift_sigma(w, phi - fitted, n, m)
    return GeneralizationEstimate(theta, "EB", sigma, n, m, converged, w, phi)


def conditional_variances(source: SiteDataset, spec: InfluenceSpec, seed: int = 0,
                          cfg: NuisanceConfig = NuisanceConfig(),
                          oracle_mean: Optional[Callable] = None) -> ConditionalVariances:
    """Cross-fitted split of Var(phi) into a residual part and an X-explained part.

    s_yx^2 = mean (phi - fhat)^2 and s_x^2 = mean fhat (2 phi - fhat) - mean(phi)^2,
    the latter truncated at zero.
    """
    phi = influence_vector(spec, source)
    if source.n < 4 and oracle_mean is None:
        raise ValueError("conditional variances need at least 4 rows")
    sf = split_folds(source, seed)
    fitted = crossfit_predictions(source.X, phi, (sf.fold1, sf.fold2), cfg, oracle_mean)
    resid = phi - fitted
    s_yx2 = float(np.mean(resid * resid))
    s_x2 = float(np.mean(fitted * (2.0 * phi - fitted)) - np.mean(phi) ** 2)
    return ConditionalVariances(float(np.sqrt(s_yx2)), float(np.sqrt(max(s_x2, 0.0))), resid, fitted)


def iid_variance(source: SiteDataset, spec: InfluenceSpec) -> float:
    """Sample standard deviation (n-1 denominator) of the influence values."""
    phi = influence_vector(spec, source)
    return float(np.std(phi, ddof=1))
