"""Nuisance models: conditional mean of the influence function, covariate
density ratio, and entropy-balancing weights."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .errors import ConfigError, DegenerateDesign, NotConverged, SeparableClasses

logger = logging.getLogger(__name__)

DEFAULT_CLIP = (0.05, 20.0)
LOGISTIC_PENALTY = 1e-6
EXTREME_WEIGHT_SPREAD = 1e6


def _as_matrix(X):
    X = np.asarray(X, dtype=float)
    return X.reshape(-1, 1) if X.ndim == 1 else X


@dataclass(frozen=True)
class RegressorModel:
    method: str
    intercept: float = 0.0
    coef: Optional[np.ndarray] = None  # slopes on the original covariate scale
    ridge_lambda: Optional[float] = None
    k: Optional[int] = None
    train_X: Optional[np.ndarray] = None
    train_y: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None

    def predict(self, X) -> np.ndarray:
        X = _as_matrix(X)
        if self.method == "ridge":
            return self.intercept + X @ self.coef
        return _kernels.knn_mean(self.train_X, self.train_y,
                                 np.ascontiguousarray(X / self.scale), self.k)


def _ridge_path(Xs, yc, lambdas):
    """GCV score for each penalty, via one SVD of the centred design."""
    n = Xs.shape[0]
    U, s, _ = np.linalg.svd(Xs, full_matrices=False)
    uty = U.T @ yc
    resid0 = yc @ yc - uty @ uty  # part of y outside the column space
    scores = []
    for lam in lambdas:
        shrink = s ** 2 / (s ** 2 + lam)
        df = 1.0 + shrink.sum()
        if df >= n:
            scores.append(np.inf)
            continue
        rss = resid0 + np.sum(((1.0 - shrink) * uty) ** 2)
        scores.append((rss / n) / (1.0 - df / n) ** 2)
    return np.asarray(scores)


def _fit_ridge(X, y, lam):
    n, L = X.shape
    xm, ym = X.mean(axis=0), y.mean()
    sd = X.std(axis=0)
    live = sd > 0
    coef = np.zeros(L)
    if not live.any():
        if lam is not None and lam == 0.0:
            raise DegenerateDesign("all rows identical: slopes are not identified without a penalty")
        return RegressorModel("ridge", float(ym), coef, 0.0 if lam is None else float(lam))
    Xs = (X[:, live] - xm[live]) / sd[live]
    yc = y - ym
    if lam is None:
        base = float(np.mean(np.linalg.svd(Xs, compute_uv=False) ** 2)) or 1.0
        grid = base * np.logspace(-6, 4, 41)
        lam = float(grid[int(np.argmin(_ridge_path(Xs, yc, grid)))])
    if lam == 0.0:
        beta = np.linalg.lstsq(Xs, yc, rcond=None)[0]
    else:
        beta = np.linalg.solve(Xs.T @ Xs + lam * np.eye(Xs.shape[1]), Xs.T @ yc)
    coef[live] = beta / sd[live]
    return RegressorModel("ridge", float(ym - xm @ coef), coef, float(lam))


def fit_conditional_mean(train_X, train_phi, method: str = "ridge",
                         ridge_lambda: Optional[float] = None,
                         knn_k: Optional[int] = None) -> RegressorModel:
    """Regress the influence values on covariates.

    Ridge leaves the intercept unpenalized and, when ``ridge_lambda`` is None,
    picks the penalty by generalized cross-validation. KNN averages the
    ``knn_k`` nearest rows (default ceil(sqrt(n))) in sd-scaled covariates.
    """
    X = _as_matrix(train_X)
    y = np.asarray(train_phi, dtype=float).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise ValueError("train_X and train_phi differ in length")
    if X.shape[0] < 2:
        raise DegenerateDesign("need at least 2 training rows")
    method = method.lower()
    if method == "ridge":
        if ridge_lambda is not None and ridge_lambda < 0:
            raise ConfigError("ridge_lambda must be >= 0")
        return _fit_ridge(X, y, ridge_lambda)
    if method == "knn":
        n = X.shape[0]
        k = int(knn_k) if knn_k else math.ceil(math.sqrt(n))
        if k < 1:
            raise ConfigError("knn_k must be >= 1")
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        return RegressorModel("knn", k=min(k, n), train_X=np.ascontiguousarray(X / scale),
                              train_y=y.copy(), scale=scale)
    raise ConfigError(f"unknown regressor {method!r}; expected ridge or knn")


class ZeroModel:
    """Stand-in outcome model that predicts 0 (debug hook)."""

    def predict(self, X):
        return np.zeros(_as_matrix(X).shape[0])


@dataclass(frozen=True)
class DensityRatioModel:
    coef: np.ndarray  # logistic slopes on sd-scaled columns
    intercept: float
    center: np.ndarray
    scale: np.ndarray
    columns: np.ndarray
    prior_factor: float  # n_P / n_Q
    clip: tuple = DEFAULT_CLIP
    iterations: int = 0

    def log_odds(self, X) -> np.ndarray:
        Z = (_as_matrix(X)[:, self.columns] - self.center) / self.scale
        return self.intercept + Z @ self.coef

    def predict(self, X) -> np.ndarray:
        # odds p/(1-p) is exp(log-odds); clip on the log scale to avoid overflow
        lo, hi = self.clip
        eta = self.log_odds(X) + math.log(self.prior_factor)
        return np.clip(np.exp(np.clip(eta, math.log(lo), math.log(hi))), lo, hi)


class UnitRatio:
    """Stand-in density ratio that returns 1 everywhere (debug hook)."""

    def predict(self, X):
        return np.ones(_as_matrix(X).shape[0])


def logistic_irls(Z, labels, penalty=LOGISTIC_PENALTY, max_iter=100, tol=1e-10):
    """Penalized logistic regression by Newton/IRLS with step halving.

    The intercept is unpenalized; slopes carry an L2 penalty so a finite
    solution exists even when the classes are separable.
    Returns (intercept, slopes, iterations).
    """
    n, L = Z.shape
    A = np.hstack([np.ones((n, 1)), Z])
    pen = np.full(L + 1, penalty * n)
    pen[0] = 0.0
    beta = np.zeros(L + 1)
    p0 = labels.mean()
    beta[0] = math.log(p0 / (1 - p0))

    def objective(b):
        eta = A @ b
        return float(np.sum(np.logaddexp(0.0, eta) - labels * eta) + 0.5 * pen @ (b * b))

    f = objective(beta)
    for it in range(1, max_iter + 1):
        eta = A @ beta
        p = 0.5 * (1.0 + np.tanh(0.5 * eta))  # overflow-free sigmoid
        grad = A.T @ (p - labels) + pen * beta
        H = (A * (p * (1 - p))[:, None]).T @ A + np.diag(pen)
        H[np.diag_indices_from(H)] += 1e-12
        step = np.linalg.solve(H, grad)
        t = 1.0
        while True:
            cand = beta - t * step
            fc = objective(cand)
            if fc <= f or t < 1e-10:
                break
            t *= 0.5
        converged = abs(f - fc) <= tol * (1.0 + abs(f)) and np.max(np.abs(t * step)) < 1e-7
        beta, f = cand, fc
        if converged or np.max(np.abs(grad)) < 1e-10 * n:
            return float(beta[0]), beta[1:], it
    raise SeparableClasses(f"logistic IRLS did not converge in {max_iter} iterations")


def _scaled_columns(X, cols=None):
    if cols is None:
        sd = X.std(axis=0)
        cols = np.flatnonzero(sd > 0)
    center = X[:, cols].mean(axis=0)
    scale = X[:, cols].std(axis=0)
    scale[scale == 0] = 1.0
    return cols, center, scale


def fit_density_ratio(source_X, target_X, clip=DEFAULT_CLIP,
                      penalty=LOGISTIC_PENALTY, max_iter=100) -> DensityRatioModel:
    """Estimate dQ_X/dP_X with a target-versus-source logistic classifier."""
    S, T = _as_matrix(source_X), _as_matrix(target_X)
    if S.shape[0] == 0 or T.shape[0] == 0:
        raise DegenerateDesign("density ratio needs non-empty source and target samples")
    if S.shape[1] != T.shape[1]:
        raise ValueError("source and target covariate counts differ")
    lo, hi = float(clip[0]), float(clip[1])
    if not 0 < lo <= hi:
        raise ConfigError("clip bounds must satisfy 0 < lo <= hi")
    pooled = np.vstack([S, T])
    cols, center, scale = _scaled_columns(pooled)
    Z = (pooled[:, cols] - center) / scale
    labels = np.concatenate([np.zeros(S.shape[0]), np.ones(T.shape[0])])
    b0, b, iters = logistic_irls(Z, labels, penalty=penalty, max_iter=max_iter)
    return DensityRatioModel(b, b0, center, scale, cols, S.shape[0] / T.shape[0], (lo, hi), iters)


@dataclass(frozen=True)
class BalanceWeights:
    w: np.ndarray
    dual: np.ndarray
    converged: bool
    iterations: int
    max_violation: float = float("nan")
    objective_trace: tuple = field(default=(), repr=False)

    @property
    def extreme(self) -> bool:
        """Weight spread above EXTREME_WEIGHT_SPREAD, typical of a target mean on the source boundary."""
        return bool(self.w.min() <= 0 or self.w.max() / self.w.min() > EXTREME_WEIGHT_SPREAD)


def entropy_balance(source_X, target_means, tol: float = 1e-8, max_iter: int = 200,
                    strict: bool = False) -> BalanceWeights:
    """Entropy-balancing weights by Newton's method on the convex dual.

    Weights are proportional to exp(dual . x), normalized to mean one, and
    chosen so the weighted source means equal ``target_means``. Columns with
    zero source variance are left out of the solve. If the moments cannot be
    matched within ``max_iter`` steps the best iterate comes back with
    ``converged=False`` (or NotConverged is raised when ``strict``).
    """
    X = _as_matrix(source_X)
    m = np.asarray(target_means, dtype=float).reshape(-1)
    n, L = X.shape
    if m.shape[0] != L:
        raise ValueError("target_means length does not match covariate count")
    sd = X.std(axis=0)
    live = np.flatnonzero(sd > 0)
    dual = np.zeros(L)

    def violation(w):
        return float(np.max(np.abs(w @ X / n - m))) if L else 0.0

    if live.size == 0:
        w = np.ones(n)
        v = violation(w)
        return BalanceWeights(w, dual, v < tol, 0, v)

    # work on sd-scaled, target-centred columns; the weights are unchanged by this
    Z = np.ascontiguousarray((X[:, live] - m[live]) / sd[live])
    lam = np.zeros(live.size)
    f, g, H = _kernels.balance_terms(Z, lam)
    trace = [f]
    converged = False
    it = 0
    w = np.ones(n)
    v = violation(w)
    if v < tol:
        return BalanceWeights(w, dual, True, 0, v, tuple(trace))
    def accept(fc, gc):
        # near the optimum the objective is flat to rounding; a smaller gradient still counts
        if fc < f:
            return True
        return fc <= f + 1e-14 * max(1.0, abs(f)) and np.linalg.norm(gc) < np.linalg.norm(g)

    for it in range(1, max_iter + 1):
        step = np.linalg.lstsq(H, g, rcond=None)[0]
        t = 1.0
        while True:
            cand = lam - t * step
            fc, gc, Hc = _kernels.balance_terms(Z, cand)
            if accept(fc, gc) or t < 1e-12:
                break
            t *= 0.5
        if not accept(fc, gc):
            break  # no further progress is possible in floating point
        lam, f, g, H = cand, fc, gc, Hc
        trace.append(f)
        a = Z @ lam
        e = np.exp(a - a.max())
        w = e * (n / e.sum())
        v = violation(w)
        if v < tol:
            converged = True
            break
    if not converged:
        v = violation(w)
        converged = v < tol
    dual[live] = lam / sd[live]
    out = BalanceWeights(w, dual, converged, it, v, tuple(trace))
    if converged and out.extreme:
        logger.warning("entropy balancing weights span a factor above %.0e; a target mean is near the "
                       "edge of the source covariate range", EXTREME_WEIGHT_SPREAD)
    if not converged:
        msg = f"entropy balancing stopped after {it} iterations, max moment gap {v:.3g}"
        if strict:
            raise NotConverged(msg)
        logger.warning(msg)
    return out


@dataclass(frozen=True)
class NuisanceConfig:
    regressor: str = "ridge"
    ridge_lambda: Optional[float] = None  # None: chosen by GCV
    knn_k: Optional[int] = None
    clip_lo: float = DEFAULT_CLIP[0]
    clip_hi: float = DEFAULT_CLIP[1]
    eb_tol: float = 1e-8
    eb_max_iter: int = 200

    def fit_regressor(self, X, phi):
        return fit_conditional_mean(X, phi, self.regressor, self.ridge_lambda, self.knn_k)

    def fit_ratio(self, source_X, target_X):
        return fit_density_ratio(source_X, target_X, (self.clip_lo, self.clip_hi))
