"""Pairwise generalization across sites and hypotheses, calibration scenarios,
coverage/width tables and report files."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import permutations as ordered_pairs
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .data_model import PairTask, SiteDataset
from .errors import ConfigError, DataError
from .estimators import (ConditionalVariances, GeneralizationEstimate, conditional_variances,
                         dr_estimate, eb_estimate, iid_variance)
from .influence import InfluenceSpec, resolve_spec, site_estimate
from .intervals import (CONSTANT, METHODS, CalibrationBounds, PredictionInterval, calibrate_bounds,
                        covshift_interval, iid_interval, make_interval, predictive_interval)
from .nuisance import NuisanceConfig
from .rng import derive_seed, substream
from .shift_measures import ShiftMeasures, compute_shift_measures, stabilized_covariate_shift
from .worstcase_kl import calibrate_kl_bound, estimate_conditional_kl, kl_worstcase_interval

logger = logging.getLogger(__name__)

SCENARIOS = ("Direct", "OverStudy", "OverSite", "OverBoth")
DEFAULT_METHODS = ("IID", "CovShiftEB", "Const", "Adaptive", "Oracle", "WorstCaseKL")
ALL = "ALL"


@dataclass(frozen=True)
class RunConfig:
    alpha: float = 0.05
    methods: Tuple[str, ...] = DEFAULT_METHODS
    scenario: str = "Direct"
    permutations: int = 10
    seed: int = 0
    nuisance: NuisanceConfig = NuisanceConfig()
    center: str = "EB"
    kl_quantile: float = 0.99
    kl_tol: float = 1e-10
    kl_crossfit: bool = False
    mahalanobis: bool = False
    force_unit_weights: bool = False
    force_zero_outcome_model: bool = False
    debug_bounds: Optional[Tuple[float, float]] = None
    specs: Dict[str, InfluenceSpec] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.permutations < 1:
            raise ConfigError("permutations must be >= 1")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.center not in ("EB", "DR"):
            raise ConfigError("center must be EB or DR")
        if not self.methods:
            raise ConfigError("no interval methods requested")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown interval method(s) {bad}; expected a subset of {METHODS}")
        if not 0 < self.kl_quantile <= 1:
            raise ConfigError("worstcase quantile must lie in (0, 1]")
        if self.debug_bounds is not None and self.debug_bounds[0] > self.debug_bounds[1]:
            raise ConfigError("debug bounds need lower <= upper")


@dataclass
class PairAnalysis:
    """Everything needed to build intervals for one ordered site pair.

    Fields above ``theta_target`` come from the source data and the target
    covariates only; the rest are evaluation quantities read from the full
    target site.
    """
    hypothesis: str
    source: str
    target: str
    theta_source: float
    sd_source: float
    n_source: int
    n_target: int
    gen: GeneralizationEstimate
    cv: ConditionalVariances
    t_x: float
    covshift: Dict[str, GeneralizationEstimate]
    theta_target: float = math.nan
    measures: Optional[ShiftMeasures] = None
    kl: float = math.nan

    @property
    def ratio(self) -> float:
        return self.measures.ratio if self.measures is not None else math.nan


@dataclass(frozen=True)
class EvaluationRow:
    hypothesis: str
    source: str
    target: str
    method: str
    covered: int
    width: float
    lo: float
    hi: float
    theta_target: float
    permutation: int = -1
    step: int = 0

    def as_dict(self):
        return {"method": self.method, "source": self.source, "target": self.target,
                "hypothesis": self.hypothesis, "lo": self.lo, "hi": self.hi,
                "covered": self.covered, "width": self.width, "theta_target": self.theta_target,
                "permutation": self.permutation, "step": self.step}


def group_sites(sites: Iterable[SiteDataset]) -> Dict[str, Dict[str, SiteDataset]]:
    out: Dict[str, Dict[str, SiteDataset]] = defaultdict(dict)
    for s in sites:
        if s.site_id in out[s.hypothesis_id]:
            raise DataError(f"duplicate site {s.site_id!r} for hypothesis {s.hypothesis_id!r}")
        out[s.hypothesis_id][s.site_id] = s
    return {h: dict(sorted(v.items())) for h, v in sorted(out.items())}


def spec_for(cfg: RunConfig, hypothesis: str, data: SiteDataset) -> InfluenceSpec:
    spec = cfg.specs.get(hypothesis)
    if spec is None:
        spec = InfluenceSpec("ATE" if data.T is not None else "Mean")
    return resolve_spec(spec, data)


def construct_pair(task: PairTask, spec: InfluenceSpec, cfg: RunConfig, seed: int,
                   want_dr: bool = False, want_eb: bool = False) -> PairAnalysis:
    """Source-side estimates for one generalization task.

    Works from the source site and the target covariates only; a task that
    carries the full target data is refused.
    """
    if task.target_full is not None:
        raise AssertionError("interval construction received target outcomes")
    src = task.source
    kw = dict(seed=seed, cfg=cfg.nuisance, force_unit_weights=cfg.force_unit_weights,
              force_zero_outcome_model=cfg.force_zero_outcome_model)
    ests = {}
    if cfg.center == "EB" or want_eb:
        ests["EB"] = eb_estimate(task, spec, **kw)
    if cfg.center == "DR" or want_dr:
        ests["DR"] = dr_estimate(task, spec, **kw)
    theta_source, _ = site_estimate(spec, src)
    cv = conditional_variances(src, spec, seed=seed, cfg=cfg.nuisance)
    t_x = stabilized_covariate_shift(src.X, task.target_X, cfg.mahalanobis)
    return PairAnalysis(src.hypothesis_id, src.site_id, task.target_site, theta_source,
                        iid_variance(src, spec), src.n, task.n_target, ests[cfg.center], cv, t_x,
                        ests)


def analyze_pair(source: SiteDataset, target: SiteDataset, spec: InfluenceSpec,
                 cfg: RunConfig) -> PairAnalysis:
    seed = derive_seed(cfg.seed, "pair", source.hypothesis_id, f"{source.site_id}-{target.site_id}")
    task = PairTask.from_sites(source, target, keep_full=False)
    pa = construct_pair(task, spec, cfg, seed, want_dr="CovShiftDR" in cfg.methods,
                        want_eb="CovShiftEB" in cfg.methods)
    pa.theta_target, _ = site_estimate(spec, target)
    pa.measures = compute_shift_measures(pa.theta_source, pa.theta_target, pa.gen, pa.cv, pa.t_x)
    if "WorstCaseKL" in cfg.methods:
        pa.kl = estimate_conditional_kl(source, target, seed=seed, crossfit=cfg.kl_crossfit)
    return pa


def analyze_corpus(sites: Iterable[SiteDataset], cfg: RunConfig, min_sites: int = 2
                   ) -> Dict[str, List[PairAnalysis]]:
    """Analyze every ordered site pair of every hypothesis. Pairs that raise a
    data error are logged and skipped."""
    grouped = group_sites(sites)
    if not grouped:
        raise ConfigError("no sites to evaluate")
    out = {}
    for h, by_site in grouped.items():
        if len(by_site) < min_sites:
            raise ConfigError(f"hypothesis {h!r} has {len(by_site)} site(s); need at least {min_sites}")
        spec = spec_for(cfg, h, next(iter(by_site.values())))
        pairs = []
        for i, j in ordered_pairs(by_site, 2):
            try:
                pairs.append(analyze_pair(by_site[i], by_site[j], spec, cfg))
            except DataError as exc:
                logger.warning("skipping pair %s -> %s (hypothesis %s): %s", i, j, h, exc)
        out[h] = pairs
    return out


def _ratios(pairs: Iterable[PairAnalysis]) -> List[float]:
    return [p.ratio for p in pairs if math.isfinite(p.ratio)]


def build_intervals(pa: PairAnalysis, cfg: RunConfig, adaptive: Optional[CalibrationBounds] = None,
                    oracle: Optional[CalibrationBounds] = None,
                    rho: Optional[float] = None) -> List[PredictionInterval]:
    """All requested intervals for one pair. Methods whose calibration input
    is missing are left out."""
    out = []
    a = cfg.alpha
    if cfg.debug_bounds is not None:
        forced = CalibrationBounds(cfg.debug_bounds[0], cfg.debug_bounds[1], "Quantile")
        adaptive = oracle = forced
    for method in cfg.methods:
        if method == "IID":
            out.append(iid_interval(pa.theta_source, pa.sd_source, pa.n_source, pa.n_target, a))
        elif method in ("CovShiftDR", "CovShiftEB"):
            out.append(covshift_interval(pa.covshift[method[-2:]], a))
        elif method == "Const":
            b = calibrate_bounds(mode=CONSTANT) if cfg.debug_bounds is None else adaptive
            if pa.t_x == 0:
                logger.info("zero covariate shift for %s -> %s: Const interval is a point", pa.source, pa.target)
            out.append(predictive_interval(pa.gen, pa.t_x, pa.cv.s_yx, b, a, "Const"))
        elif method == "Adaptive" and adaptive is not None:
            out.append(predictive_interval(pa.gen, pa.t_x, pa.cv.s_yx, adaptive, a, "Adaptive"))
        elif method == "Oracle" and oracle is not None:
            out.append(predictive_interval(pa.gen, pa.t_x, pa.cv.s_yx, oracle, a, "Oracle"))
        elif method == "WorstCaseKL" and rho is not None:
            if cfg.debug_bounds is not None and math.isinf(cfg.debug_bounds[1]):
                out.append(make_interval("WorstCaseKL", cfg.debug_bounds[0], cfg.debug_bounds[1], a,
                                         pa.gen.theta_w))
            else:
                out.append(kl_worstcase_interval(pa.gen.phi, pa.gen.weights, rho, a, cfg.kl_tol))
    return out


def _rows(pa: PairAnalysis, intervals, permutation=-1, step=0) -> List[EvaluationRow]:
    return [EvaluationRow(pa.hypothesis, pa.source, pa.target, iv.method,
                          int(iv.covers(pa.theta_target)), iv.width, iv.lo, iv.hi, pa.theta_target,
                          permutation, step) for iv in intervals]


def _safe_bounds(ratios, alpha, label):
    try:
        return calibrate_bounds(ratios, alpha)
    except DataError as exc:
        logger.warning("no %s bounds: %s", label, exc)
        return None


def _safe_rho(pairs, quantile):
    kl = [p.kl for p in pairs if math.isfinite(p.kl)]
    return calibrate_kl_bound(kl, quantile).rho if kl else None


def _oracle_bounds(analyses, alpha):
    return {h: _safe_bounds(_ratios(pairs), alpha, f"oracle ({h})") for h, pairs in analyses.items()}


@dataclass
class EvaluationResult:
    scenario: str
    rows: List[EvaluationRow]
    summary: List[dict]
    analyses: Dict[str, List[PairAnalysis]] = field(default_factory=dict, repr=False)

    def coverage(self, method: str, hypothesis: str = ALL, step: int = 0) -> float:
        for r in self.summary:
            if r["method"] == method and r["hypothesis"] == hypothesis and r["step"] == step:
                return r["coverage"]
        return math.nan

    def mean_width(self, method: str, hypothesis: str = ALL, step: int = 0) -> float:
        for r in self.summary:
            if r["method"] == method and r["hypothesis"] == hypothesis and r["step"] == step:
                return r["mean_width"]
        return math.nan


def evaluate_direct(sites: Iterable[SiteDataset], cfg: RunConfig,
                    analyses: Optional[Dict[str, List[PairAnalysis]]] = None) -> EvaluationResult:
    """Every ordered pair within every hypothesis.

    Adaptive bounds come from the ratios of all other hypotheses, Oracle bounds
    from every pair of the same hypothesis, and the KL radius from the
    within-hypothesis KL estimates (which read target outcomes, so WorstCaseKL
    is a reference method rather than a feasible one).
    """
    if analyses is None:
        analyses = analyze_corpus(sites, cfg)
    oracle = _oracle_bounds(analyses, cfg.alpha)
    rows = []
    for h, pairs in analyses.items():
        others = [p for g, ps in analyses.items() if g != h for p in ps]
        adaptive = _safe_bounds(_ratios(others), cfg.alpha, f"adaptive ({h})") if others else None
        rho = _safe_rho(pairs, cfg.kl_quantile)
        for pa in pairs:
            rows += _rows(pa, build_intervals(pa, cfg, adaptive, oracle[h], rho))
    return EvaluationResult("Direct", rows, aggregate(rows), analyses)


def _scenario_steps(scenario: str, hyps: Sequence[str], site_ids: Sequence[str]):
    """(step, revealed hypotheses, revealed sites, evaluated hypotheses, evaluated sites) for one
    ordering of hypotheses and sites."""
    K, N = len(hyps), len(site_ids)
    if scenario == "OverStudy":
        if K < 2:
            raise ConfigError("OverStudy needs at least 2 hypotheses")
        for t in range(1, K):
            yield t, hyps[:t], site_ids, hyps[t:], site_ids
    elif scenario == "OverSite":
        if N < 4:
            raise ConfigError("OverSite needs at least 4 sites")
        for t in range(2, N - 1):
            yield t, hyps, site_ids[:t], hyps, site_ids[t:]
    elif scenario == "OverBoth":
        if K < 3 or N < 5:
            raise ConfigError("OverBoth needs at least 3 hypotheses and 5 sites")
        t = 1
        while t + 1 < K and 3 * t <= N - 2:
            yield t, hyps[:t + 1], site_ids[:3 * t], hyps[t + 1:], site_ids[3 * t:]
            t += 1
    else:
        raise ConfigError(f"unknown calibration scenario {scenario!r}")


def evaluate_scenario(sites: Iterable[SiteDataset], cfg: RunConfig,
                      analyses: Optional[Dict[str, List[PairAnalysis]]] = None) -> EvaluationResult:
    """Sequential calibration over random orderings of hypotheses and/or sites.

    At each step the ratio pool (and KL radius) comes from pairs among the
    revealed slice; intervals are built for pairs in the unrevealed slice.
    Results are pooled over ``cfg.permutations`` orderings.
    """
    if cfg.scenario == "Direct":
        return evaluate_direct(sites, cfg, analyses)
    if analyses is None:
        analyses = analyze_corpus(sites, cfg)
    hyps = sorted(analyses)
    site_ids = sorted({s for ps in analyses.values() for p in ps for s in (p.source, p.target)})
    oracle = _oracle_bounds(analyses, cfg.alpha)
    rows = []
    for perm in range(cfg.permutations):
        rng = substream(cfg.seed, "perm", perm)
        h_order = [hyps[k] for k in rng.permutation(len(hyps))]
        s_order = [site_ids[k] for k in rng.permutation(len(site_ids))]
        for t, rev_h, rev_s, ev_h, ev_s in _scenario_steps(cfg.scenario, h_order, s_order):
            rev_s, ev_s = set(rev_s), set(ev_s)
            pool = [p for h in rev_h for p in analyses[h] if p.source in rev_s and p.target in rev_s]
            adaptive = _safe_bounds(_ratios(pool), cfg.alpha, f"step {t}")
            rho = _safe_rho(pool, cfg.kl_quantile)
            for h in ev_h:
                for pa in analyses[h]:
                    if pa.source in ev_s and pa.target in ev_s:
                        rows += _rows(pa, build_intervals(pa, cfg, adaptive, oracle[h], rho), perm, t)
    return EvaluationResult(cfg.scenario, rows, aggregate(rows), analyses)


def aggregate(rows: Sequence[EvaluationRow]) -> List[dict]:
    """Coverage and mean width per (step, hypothesis, method), plus pooled
    hypothesis-"ALL" rows. Widths are also normalized by the largest mean width
    among methods for the same step and hypothesis."""
    cells = defaultdict(list)
    for r in rows:
        cells[(r.step, r.hypothesis, r.method)].append(r)
        cells[(r.step, ALL, r.method)].append(r)
    out = []
    for (step, h, method), rs in cells.items():
        out.append({"step": step, "hypothesis": h, "method": method, "n_pairs": len(rs),
                    # fsum is exact, so the tables do not depend on row order
                    "coverage": math.fsum(r.covered for r in rs) / len(rs),
                    "mean_width": math.fsum(r.width for r in rs) / len(rs)})
    widest = defaultdict(float)
    for s in out:
        widest[(s["step"], s["hypothesis"])] = max(widest[(s["step"], s["hypothesis"])], s["mean_width"])
    for s in out:
        top = widest[(s["step"], s["hypothesis"])]
        if math.isinf(top):
            s["normalized_width"] = 1.0 if math.isinf(s["mean_width"]) else 0.0
        else:
            s["normalized_width"] = s["mean_width"] / top if top > 0 else math.nan
    out.sort(key=lambda s: (s["step"], s["hypothesis"] == ALL, s["hypothesis"], s["method"]))
    return out


INTERVAL_FIELDS = ["method", "source", "target", "hypothesis", "lo", "hi", "covered", "width"]
MEASURE_FIELDS = ["source", "target", "hypothesis", "t_yx", "t_x", "ratio", "delta_yx", "delta_x", "rel_x"]


def measure_rows(analyses: Dict[str, List[PairAnalysis]]) -> List[dict]:
    return [{"source": p.source, "target": p.target, "hypothesis": h, **p.measures.as_row()}
            for h, pairs in analyses.items() for p in pairs if p.measures is not None]


def write_csv(path, fields, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


def emit_reports(result: EvaluationResult, out_dir, methods: Optional[Sequence[str]] = None) -> Dict[str, str]:
    """Write intervals.csv, summary.json, summary_long.csv and measures.csv."""
    if methods is not None and not methods:
        raise ConfigError("empty method set")
    if not result.rows:
        raise ConfigError("nothing to report: no evaluation rows")
    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, f) for k, f in
             [("intervals", "intervals.csv"), ("summary", "summary.json"),
              ("long", "summary_long.csv"), ("measures", "measures.csv")]}
    fields = INTERVAL_FIELDS + ([] if result.scenario == "Direct" else ["permutation", "step"])
    write_csv(paths["intervals"], fields, [r.as_dict() for r in result.rows])
    with open(paths["summary"], "w") as fh:
        json.dump({"scenario": result.scenario, "rows": result.summary}, fh, indent=2)
    long = []
    for s in result.summary:
        for metric in ("coverage", "mean_width", "normalized_width"):
            long.append({"scenario": result.scenario, "step": s["step"], "hypothesis": s["hypothesis"],
                         "method": s["method"], "metric": metric, "value": s[metric]})
    write_csv(paths["long"], ["scenario", "step", "hypothesis", "method", "metric", "value"], long)
    if result.analyses:
        write_csv(paths["measures"], MEASURE_FIELDS, measure_rows(result.analyses))
    else:
        del paths["measures"]
    return paths
