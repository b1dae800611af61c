"""Site datasets, CSV ingestion with the cleaning rules, and fold splitting."""
from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (AllCovariatesDropped, DataError, EmptyDataset, MissingColumn,
                     NonBinaryTreatment)
from .rng import substream

logger = logging.getLogger(__name__)

MISSING_TOKENS = {"", "na", "nan"}

DEFAULT_SCHEMA = {
    "site": "site",
    "hypothesis": "hypothesis",
    "outcome": "y",
    "treatment": "t",
    "covariates": None,  # None: every column named x<digits>, in numeric order
}


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SiteDataset:
    site_id: str
    hypothesis_id: str
    X: np.ndarray
    Y: np.ndarray
    T: Optional[np.ndarray] = None
    pi: Optional[float] = None
    covariate_names: tuple = field(default=())

    def __post_init__(self):
        X = _frozen(self.X)
        if X.ndim == 1:
            X = _frozen(X.reshape(-1, 1))
        Y = _frozen(self.Y).reshape(-1)
        n = Y.shape[0]
        if n < 2:
            raise EmptyDataset(f"site {self.site_id!r}: need at least 2 rows, got {n}")
        if X.shape[0] != n:
            raise DataError(f"site {self.site_id!r}: X has {X.shape[0]} rows, Y has {n}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise DataError(f"site {self.site_id!r}: non-finite values after cleaning")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        if self.T is not None:
            T = np.asarray(self.T, dtype=float).reshape(-1)
            if T.shape[0] != n:
                raise DataError(f"site {self.site_id!r}: T has {T.shape[0]} rows, Y has {n}")
            if not np.all((T == 0) | (T == 1)):
                raise NonBinaryTreatment(f"site {self.site_id!r}: treatment outside {{0,1}}")
            object.__setattr__(self, "T", _frozen(T, np.int8))
        if self.pi is not None and not 0.0 < float(self.pi) < 1.0:
            raise DataError(f"site {self.site_id!r}: pi must lie in (0, 1), got {self.pi}")
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DataError("covariate_names length does not match X")
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def L(self) -> int:
        return self.X.shape[1]

    def select_columns(self, keep) -> "SiteDataset":
        keep = list(keep)
        return SiteDataset(self.site_id, self.hypothesis_id, self.X[:, keep], self.Y, self.T,
                           self.pi, tuple(self.covariate_names[j] for j in keep))

    def subset(self, rows) -> "SiteDataset":
        rows = np.asarray(rows)
        return SiteDataset(self.site_id, self.hypothesis_id, self.X[rows], self.Y[rows],
                           None if self.T is None else self.T[rows], self.pi,
                           self.covariate_names)

    def with_pi(self, pi) -> "SiteDataset":
        return SiteDataset(self.site_id, self.hypothesis_id, self.X, self.Y, self.T, pi,
                           self.covariate_names)


@dataclass(frozen=True)
class PairTask:
    """A generalization task: full source data, covariates only from the target.

    ``target_full`` is carried for evaluation and must never be read while an
    interval is being built.
    """
    source: SiteDataset
    target_X: np.ndarray
    target_full: Optional[SiteDataset] = None
    target_site: str = ""

    def __post_init__(self):
        tx = _frozen(self.target_X)
        if tx.ndim == 1:
            tx = _frozen(tx.reshape(-1, 1))
        if tx.shape[1] != self.source.L:
            raise DataError(f"target has {tx.shape[1]} covariates, source has {self.source.L}")
        if tx.shape[0] < 1:
            raise EmptyDataset("target covariate matrix is empty")
        object.__setattr__(self, "target_X", tx)
        if self.target_full is not None:
            if self.target_full.hypothesis_id != self.source.hypothesis_id:
                raise DataError("source and target belong to different hypotheses")
            if not np.array_equal(self.target_full.X, tx):
                raise DataError("target_full covariates differ from target_X")
            if not self.target_site:
                object.__setattr__(self, "target_site", self.target_full.site_id)

    @classmethod
    def from_sites(cls, source: SiteDataset, target: SiteDataset, keep_full=False) -> "PairTask":
        return cls(source, target.X, target if keep_full else None, target.site_id)

    def without_target(self) -> "PairTask":
        return PairTask(self.source, self.target_X, None, self.target_site)

    @property
    def n_target(self) -> int:
        return self.target_X.shape[0]


@dataclass(frozen=True)
class FoldSplit:
    fold1: np.ndarray
    fold2: np.ndarray
    seed: int


def split_indices(n: int, rng: np.random.Generator):
    """Random halves of range(n); which half gets the odd element is random too."""
    perm = rng.permutation(n)
    cut = n // 2 + (int(rng.integers(2)) if n % 2 else 0)
    return np.sort(perm[:cut]), np.sort(perm[cut:])


def split_folds(dataset: SiteDataset, seed: int) -> FoldSplit:
    if dataset.n < 2:
        raise EmptyDataset("cannot split fewer than 2 rows")
    f1, f2 = split_indices(dataset.n, substream(seed, "folds"))
    return FoldSplit(_frozen(f1, np.int64), _frozen(f2, np.int64), int(seed))


def exclude_unbalanceable_covariates(source: SiteDataset, target_X):
    """Drop covariates whose target mean lies outside the source's [min, max]."""
    target_X = np.asarray(target_X, dtype=float)
    if target_X.ndim == 1:
        target_X = target_X.reshape(-1, 1)
    if target_X.shape[1] != source.L:
        raise DataError("column counts of source and target differ")
    tmean = target_X.mean(axis=0)
    inside = (tmean >= source.X.min(axis=0)) & (tmean <= source.X.max(axis=0))
    dropped = np.flatnonzero(~inside)
    if dropped.size == source.L:
        raise AllCovariatesDropped("every covariate's target mean is outside the source range")
    if dropped.size:
        logger.info("site %s: %d covariate(s) outside source support dropped from balancing",
                    source.site_id, dropped.size)
    keep = np.flatnonzero(inside)
    return source.select_columns(keep), target_X[:, keep], dropped


def column_median(values: np.ndarray, rule: str = "midpoint") -> float:
    """Median of the non-missing values.

    ``midpoint`` averages the two middle order statistics of an even count;
    ``lower`` takes the lower of the two, which keeps integer codes integral.
    """
    v = np.sort(values[~np.isnan(values)])
    if v.size == 0:
        return float("nan")
    mid = (v.size - 1) // 2
    if v.size % 2 or rule == "lower":
        return float(v[mid])
    return float(0.5 * (v[mid] + v[mid + 1]))


def _parse(token: str) -> float:
    t = token.strip()
    if t.lower() in MISSING_TOKENS:
        return float("nan")
    try:
        return float(t)
    except ValueError as exc:
        raise DataError(f"non-numeric value {token!r}") from exc


def _read_table(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDataset(f"{path} is empty") from None
        rows = [r for r in reader if any(cell.strip() for cell in r)]
    return header, rows


def _covariate_columns(header, schema):
    names = schema.get("covariates")
    if names:
        missing = [c for c in names if c not in header]
        if missing:
            raise MissingColumn(f"covariate column(s) {missing} not in header")
        return list(names)
    found = [h for h in header if re.fullmatch(r"x\d+", h)]
    return sorted(found, key=lambda h: int(h[1:]))


def _clean_group(site, hyp, X, Y, T, names, median_rule):
    keep_rows = ~np.isnan(Y)
    if T is not None:
        keep_rows &= ~np.isnan(T)
    X, Y = X[keep_rows], Y[keep_rows]
    T = None if T is None else T[keep_rows]
    if Y.size < 2:
        raise EmptyDataset(f"site {site!r}, hypothesis {hyp!r}: fewer than 2 usable rows")
    if T is not None and not np.all((T == 0) | (T == 1)):
        raise NonBinaryTreatment(f"site {site!r}: treatment values outside {{0,1}}")
    all_na = np.all(np.isnan(X), axis=0) if X.size else np.zeros(0, bool)
    X = X.copy()
    for j in np.flatnonzero(~all_na):
        col = X[:, j]
        if np.isnan(col).any():
            col[np.isnan(col)] = column_median(col, median_rule)
    return X, Y, T, all_na


def load_sites(path, schema: Optional[dict] = None, pis: Optional[dict] = None,
               median_rule: str = "midpoint") -> list[SiteDataset]:
    """Read a multi-site CSV and return one cleaned dataset per (hypothesis, site).

    Cleaning per site: rows with missing outcome or treatment are dropped,
    all-missing covariate columns are dropped, and remaining gaps take the
    site's column median. A column dropped at any site of a hypothesis is
    dropped at every site of that hypothesis so column counts agree.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    header, rows = _read_table(path)
    for key in ("site", "hypothesis", "outcome"):
        if schema[key] not in header:
            raise MissingColumn(f"column {schema[key]!r} ({key}) not in header")
    tcol = schema.get("treatment")
    has_t = bool(tcol) and tcol in header
    xcols = _covariate_columns(header, schema)
    pos = {h: i for i, h in enumerate(header)}

    groups: dict = {}
    for r in rows:
        if len(r) < len(header):
            r = r + [""] * (len(header) - len(r))
        key = (r[pos[schema["hypothesis"]]].strip(), r[pos[schema["site"]]].strip())
        groups.setdefault(key, []).append(r)
    if not groups:
        raise EmptyDataset(f"{path}: no data rows")

    cleaned = {}
    for (hyp, site), grp in groups.items():
        X = np.array([[_parse(r[pos[c]]) for c in xcols] for r in grp], dtype=float).reshape(len(grp), len(xcols))
        Y = np.array([_parse(r[pos[schema["outcome"]]]) for r in grp])
        T = np.array([_parse(r[pos[tcol]]) for r in grp]) if has_t else None
        if T is not None and np.all(np.isnan(T)):
            T = None
        cleaned[(hyp, site)] = _clean_group(site, hyp, X, Y, T, xcols, median_rule)

    out = []
    for hyp in sorted({h for h, _ in cleaned}):
        sites = sorted(s for h, s in cleaned if h == hyp)
        drop = np.zeros(len(xcols), dtype=bool)
        for s in sites:
            drop |= cleaned[(hyp, s)][3]
        if drop.any():
            logger.info("hypothesis %s: dropping all-missing covariate(s) %s", hyp,
                        [xcols[j] for j in np.flatnonzero(drop)])
        keep = np.flatnonzero(~drop)
        for s in sites:
            X, Y, T, _ = cleaned[(hyp, s)]
            pi = None if pis is None else pis.get(hyp)
            out.append(SiteDataset(s, hyp, X[:, keep], Y, T, pi,
                                   tuple(xcols[j] for j in keep)))
    return out


def load_site_dataset(path, schema: Optional[dict] = None, site: Optional[str] = None,
                      hypothesis: Optional[str] = None, pi: Optional[float] = None,
                      median_rule: str = "midpoint") -> SiteDataset:
    """Load a single site. ``site``/``hypothesis`` pick one group from a multi-site file."""
    sites = load_sites(path, schema, median_rule=median_rule)
    picked = [d for d in sites
              if (site is None or d.site_id == site) and (hypothesis is None or d.hypothesis_id == hypothesis)]
    if not picked:
        raise EmptyDataset(f"{path}: no rows for site={site!r}, hypothesis={hypothesis!r}")
    if len(picked) > 1:
        raise DataError(f"{path}: {len(picked)} site/hypothesis groups match; pass site and hypothesis")
    d = picked[0]
    return d if pi is None else d.with_pi(pi)


def write_sites(path, sites: Sequence[SiteDataset]):
    """Write datasets back out in the ingestion schema."""
    L = max(d.L for d in sites)
    has_t = any(d.T is not None for d in sites)
    header = ["site", "hypothesis", "y"] + (["t"] if has_t else []) + [f"x{j + 1}" for j in range(L)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for d in sites:
            for i in range(d.n):
                row = [d.site_id, d.hypothesis_id, repr(float(d.Y[i]))]
                if has_t:
                    row.append("" if d.T is None else str(int(d.T[i])))
                row += [repr(float(v)) for v in d.X[i]] + ["NA"] * (L - d.L)
                w.writerow(row)
