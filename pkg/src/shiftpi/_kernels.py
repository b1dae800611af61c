"""Hot inner loops, compiled with numba when available.

Each kernel exists twice: a plain numpy version and an ``@njit`` version with
identical semantics. The module-level names resolve to the compiled versions
unless numba is missing or ``SHIFTPI_DISABLE_NUMBA`` is set to a truthy value.
Both sets stay importable (``numpy_impl`` / ``numba_impl``) so tests and the
benchmark can compare them directly.
"""
import logging
import os
from types import SimpleNamespace

import numpy as np

logger = logging.getLogger(__name__)


def _np_sample_counts(cum, u):
    idx = np.searchsorted(cum, u, side="right")
    np.minimum(idx, cum.shape[0] - 1, out=idx)
    return np.bincount(idx, minlength=cum.shape[0]).astype(np.int64)


def _np_sample_indices(cum, u):
    idx = np.searchsorted(cum, u, side="right")
    np.minimum(idx, cum.shape[0] - 1, out=idx)
    return idx.astype(np.int64)


def _np_tilted_stats(phi, w, s):
    # log of the w-weighted mean of exp(s*phi), and the tilted mean of phi
    a = s * phi
    m = a.max()
    e = w * np.exp(a - m)
    tot = e.sum()
    return m + np.log(tot / w.sum()), float(e @ phi) / tot


def _np_balance_terms(Z, lam):
    a = Z @ lam
    m = a.max()
    e = np.exp(a - m)
    tot = e.sum()
    p = e / tot
    mean = p @ Z
    cov = (Z * p[:, None]).T @ Z - np.outer(mean, mean)
    return m + np.log(tot / Z.shape[0]), mean, cov


def _np_knn_mean(train_X, train_y, query_X, k):
    d2 = ((query_X[:, None, :] - train_X[None, :, :]) ** 2).sum(axis=2)
    if k >= train_X.shape[0]:
        return np.full(query_X.shape[0], train_y.mean())
    # stable sort keeps ties resolved by training order in both backends
    nn = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return train_y[nn].mean(axis=1)


numpy_impl = SimpleNamespace(
    sample_counts=_np_sample_counts,
    sample_indices=_np_sample_indices,
    tilted_stats=_np_tilted_stats,
    balance_terms=_np_balance_terms,
    knn_mean=_np_knn_mean,
)


def _build_numba():
    import numba as nb

    @nb.njit(cache=True)
    def _search(cum, x):
        lo, hi = 0, cum.shape[0]
        while lo < hi:
            mid = (lo + hi) // 2
            if cum[mid] <= x:
                lo = mid + 1
            else:
                hi = mid
        if lo > cum.shape[0] - 1:
            lo = cum.shape[0] - 1
        return lo

    @nb.njit(cache=True)
    def sample_counts(cum, u):
        counts = np.zeros(cum.shape[0], dtype=np.int64)
        for i in range(u.shape[0]):
            counts[_search(cum, u[i])] += 1
        return counts

    @nb.njit(cache=True)
    def sample_indices(cum, u):
        out = np.empty(u.shape[0], dtype=np.int64)
        for i in range(u.shape[0]):
            out[i] = _search(cum, u[i])
        return out

    @nb.njit(cache=True)
    def tilted_stats(phi, w, s):
        n = phi.shape[0]
        m = -np.inf
        for i in range(n):
            if s * phi[i] > m:
                m = s * phi[i]
        tot = 0.0
        acc = 0.0
        wsum = 0.0
        for i in range(n):
            e = w[i] * np.exp(s * phi[i] - m)
            tot += e
            acc += e * phi[i]
            wsum += w[i]
        return m + np.log(tot / wsum), acc / tot

    @nb.njit(cache=True)
    def balance_terms(Z, lam):
        n, L = Z.shape
        a = np.empty(n)
        m = -np.inf
        for i in range(n):
            v = 0.0
            for j in range(L):
                v += Z[i, j] * lam[j]
            a[i] = v
            if v > m:
                m = v
        tot = 0.0
        for i in range(n):
            a[i] = np.exp(a[i] - m)
            tot += a[i]
        mean = np.zeros(L)
        second = np.zeros((L, L))
        for i in range(n):
            p = a[i] / tot
            for j in range(L):
                pz = p * Z[i, j]
                mean[j] += pz
                for k in range(j + 1):
                    second[j, k] += pz * Z[i, k]
        cov = np.empty((L, L))
        for j in range(L):
            for k in range(j + 1):
                c = second[j, k] - mean[j] * mean[k]
                cov[j, k] = c
                cov[k, j] = c
        return m + np.log(tot / n), mean, cov

    @nb.njit(cache=True)
    def knn_mean(train_X, train_y, query_X, k):
        n, L = train_X.shape
        q = query_X.shape[0]
        out = np.empty(q)
        if k >= n:
            out[:] = train_y.mean()
            return out
        d2 = np.empty(n)
        for r in range(q):
            for i in range(n):
                s = 0.0
                for j in range(L):
                    diff = query_X[r, j] - train_X[i, j]
                    s += diff * diff
                d2[i] = s
            order = np.argsort(d2, kind="mergesort")
            acc = 0.0
            for i in range(k):
                acc += train_y[order[i]]
            out[r] = acc / k
        return out

    return SimpleNamespace(
        sample_counts=sample_counts,
        sample_indices=sample_indices,
        tilted_stats=tilted_stats,
        balance_terms=balance_terms,
        knn_mean=knn_mean,
    )


def _disabled_by_env():
    return os.environ.get("SHIFTPI_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}


try:
    numba_impl = _build_numba()
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_impl = None

if numba_impl is not None and not _disabled_by_env():
    BACKEND = "numba"
    _active = numba_impl
else:
    BACKEND = "numpy"
    _active = numpy_impl
logger.debug("shiftpi kernels backend: %s", BACKEND)

sample_counts = _active.sample_counts
sample_indices = _active.sample_indices
tilted_stats = _active.tilted_stats
balance_terms = _active.balance_terms
knn_mean = _active.knn_mean
