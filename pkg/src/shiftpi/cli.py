"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys

from . import config as cfgmod
from .data_model import PairTask, load_sites, write_sites
from .errors import ConfigError, DataError
from .harness import (MEASURE_FIELDS, analyze_corpus, build_intervals, construct_pair, emit_reports,
                      evaluate_direct, evaluate_scenario, group_sites, measure_rows, write_csv, spec_for)
from .intervals import CalibrationBounds, predictive_interval
from .randshift_sim import run_clt_experiment, simulate_corpus
from .rng import derive_seed

logger = logging.getLogger("shiftpi")

EXIT_CONFIG = 2
EXIT_DATA = 3


def _json_default(o):
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    if hasattr(o, "tolist"):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _dump(obj, path):
    text = json.dumps(obj, indent=2, default=_json_default)
    if path in (None, "-"):
        print(text)
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _load(args, cp):
    if not args.data:
        raise ConfigError("--data is required")
    return load_sites(args.data, cfgmod.data_schema(cp), median_rule=cfgmod.median_rule(cp))


def _run_config(args, cp, scenario=None):
    methods = tuple(m.strip() for m in args.methods.split(",")) if getattr(args, "methods", None) else None
    return cfgmod.run_config(cp, alpha=args.alpha, seed=args.seed, methods=methods,
                             scenario=scenario, permutations=getattr(args, "permutations", None),
                             center=getattr(args, "center", None),
                             force_unit_weights=args.force_unit_weights or None,
                             force_zero_outcome_model=args.force_zero_outcome_model or None)


def cmd_ingest(args, cp):
    sites = _load(args, cp)
    for d in sites:
        print(f"{d.hypothesis_id}\t{d.site_id}\tn={d.n}\tL={d.L}\t"
              f"{'treated=' + str(int(d.T.sum())) if d.T is not None else 'one-sample'}")
    if args.out:
        write_sites(args.out, sites)
    return 0


def cmd_measure(args, cp):
    run = _run_config(args, cp)
    run = dataclasses.replace(run, methods=tuple(m for m in run.methods if m != "WorstCaseKL") or ("Const",))
    analyses = analyze_corpus(_load(args, cp), run)
    rows = measure_rows(analyses)
    if args.out:
        write_csv(args.out, MEASURE_FIELDS, rows)
    else:
        w = sys.stdout
        w.write(",".join(MEASURE_FIELDS) + "\n")
        for r in rows:
            w.write(",".join(str(r[k]) for k in MEASURE_FIELDS) + "\n")
    return 0


def cmd_generalize(args, cp):
    """One source site with full data to one target site, of which only the
    covariates are read."""
    run = _run_config(args, cp)
    grouped = group_sites(_load(args, cp))
    if args.hypothesis not in grouped:
        raise DataError(f"hypothesis {args.hypothesis!r} not in data")
    by_site = grouped[args.hypothesis]
    for s in (args.source, args.target):
        if s not in by_site:
            raise DataError(f"site {s!r} not in hypothesis {args.hypothesis!r}")
    source = by_site[args.source]
    task = PairTask.from_sites(source, by_site[args.target], keep_full=False)
    spec = spec_for(run, args.hypothesis, source)
    seed = derive_seed(run.seed, "pair", args.hypothesis, f"{args.source}-{args.target}")
    pa = construct_pair(task, spec, run, seed, want_dr=True, want_eb=True)
    feasible = [m for m in run.methods if m in ("IID", "CovShiftDR", "CovShiftEB", "Const")]
    intervals = build_intervals(pa, dataclasses.replace(run, methods=tuple(feasible) or ("Const",)))
    if args.bounds:
        lo, hi = (float(x) for x in args.bounds.split(","))
        intervals.append(predictive_interval(pa.gen, pa.t_x, pa.cv.s_yx,
                                             CalibrationBounds(lo, hi, "Quantile"), run.alpha, "Adaptive"))
    out = {"hypothesis": args.hypothesis, "source": args.source, "target": args.target,
           "estimand": spec.kind, "theta_source": pa.theta_source, "theta_w": pa.gen.theta_w,
           "center": pa.gen.method, "t_x": pa.t_x, "s_yx": pa.cv.s_yx, "s_x": pa.cv.s_x,
           "intervals": [{"method": iv.method, "lo": iv.lo, "hi": iv.hi, "width": iv.width}
                         for iv in intervals]}
    _dump(out, args.out)
    return 0


def _sites_or_corpus(args, cp):
    if args.data:
        return _load(args, cp), {}
    corpus = simulate_corpus(cfgmod.corpus_config(cp))
    return corpus.sites, corpus.specs


def _evaluate(args, cp, scenario):
    sites, sim_specs = _sites_or_corpus(args, cp)
    run = _run_config(args, cp, scenario)
    if sim_specs:
        run = dataclasses.replace(run, specs={**sim_specs, **run.specs})
    result = evaluate_direct(sites, run) if scenario == "Direct" else evaluate_scenario(sites, run)
    paths = emit_reports(result, args.out, run.methods)
    for s in result.summary:
        if s["hypothesis"] == "ALL":
            step = f"step={s['step']}\t" if scenario != "Direct" else ""
            print(f"{step}{s['method']}\tcoverage={s['coverage']:.3f}\tmean_width={s['mean_width']:.4g}")
    logger.info("reports written: %s", ", ".join(paths.values()))
    return 0


def cmd_evaluate(args, cp):
    return _evaluate(args, cp, "Direct")


def cmd_scenario(args, cp):
    return _evaluate(args, cp, args.scenario)


def cmd_simulate_clt(args, cp):
    shift_cfg, psi, n_cov = cfgmod.shift_config(cp)
    if args.replicates:
        shift_cfg = dataclasses.replace(shift_cfg, replicates=args.replicates)
    report = run_clt_experiment(shift_cfg, psi, n_cov)
    _dump(report.to_json(include_replicates=args.include_replicates), args.out)
    print(f"empirical_var={report.empirical_var:.6g} theory_var={report.theory_var:.6g} "
          f"ratio={report.empirical_var / report.theory_var:.4f} ks_p={report.ks_pvalue:.3g}")
    return 0


def cmd_simulate_corpus(args, cp):
    ccfg = cfgmod.corpus_config(cp)
    if args.seed is not None:
        ccfg = dataclasses.replace(ccfg, seed=args.seed)
    corpus = simulate_corpus(ccfg)
    write_sites(args.out, corpus.sites)
    ini = os.path.splitext(args.out)[0] + ".ini"
    with open(ini, "w") as fh:
        fh.write(cfgmod.specs_to_ini(corpus.specs))
    print(f"{len(corpus.sites)} site datasets -> {args.out}; estimands -> {ini}; "
          f"delta_M_sq={corpus.delta_M_sq:.4g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [harness], [data_model], [nuisance], ... sections")
    common.add_argument("--seed", type=int)
    common.add_argument("--alpha", type=float)
    common.add_argument("--force-unit-weights", action="store_true",
                        help="debug: replace density-ratio / balancing weights by 1")
    common.add_argument("--force-zero-outcome-model", action="store_true",
                        help="debug: replace the outcome regression by 0")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="shiftpi", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("ingest", parents=[common], help="clean a multi-site CSV")
    q.add_argument("--data", required=True)
    q.add_argument("--out", help="write the cleaned datasets here")
    q.set_defaults(func=cmd_ingest)

    q = sub.add_parser("measure", parents=[common], help="shift measures for every ordered site pair")
    q.add_argument("--data", required=True)
    q.add_argument("--out")
    q.add_argument("--methods", help=argparse.SUPPRESS)
    q.set_defaults(func=cmd_measure)

    q = sub.add_parser("generalize", parents=[common], help="intervals for one source -> target pair")
    q.add_argument("--data", required=True)
    q.add_argument("--hypothesis", required=True)
    q.add_argument("--source", required=True)
    q.add_argument("--target", required=True)
    q.add_argument("--methods", default="IID,CovShiftDR,CovShiftEB,Const")
    q.add_argument("--bounds", help="L,U ratio bounds for an extra calibrated interval (write --bounds=-1,1)")
    q.add_argument("--center", choices=("EB", "DR"))
    q.add_argument("--out")
    q.set_defaults(func=cmd_generalize)

    for name, helptext in (("evaluate", "all-pairs evaluation (Direct)"),
                           ("scenario", "sequential calibration scenario")):
        q = sub.add_parser(name, parents=[common], help=helptext)
        q.add_argument("--data", help="multi-site CSV; without it a corpus is simulated from [corpus]")
        q.add_argument("--methods")
        q.add_argument("--center", choices=("EB", "DR"))
        q.add_argument("--out", required=True, help="output directory")
        if name == "scenario":
            q.add_argument("--scenario", required=True, choices=("OverStudy", "OverSite", "OverBoth"))
            q.add_argument("--permutations", type=int)
            q.set_defaults(func=cmd_scenario)
        else:
            q.set_defaults(func=cmd_evaluate)

    sim = sub.add_parser("simulate", help="random distribution shift simulations")
    simsub = sim.add_subparsers(dest="simulation", required=True)
    q = simsub.add_parser("clt", parents=[common], help="variance and normality check under random shift")
    q.add_argument("--out", required=True)
    q.add_argument("--replicates", type=int)
    q.add_argument("--include-replicates", action="store_true")
    q.set_defaults(func=cmd_simulate_clt)
    q = simsub.add_parser("corpus", parents=[common], help="multi-site, multi-hypothesis corpus CSV")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_simulate_corpus)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cp = cfgmod.read_config(args.config)
        return args.func(args, cp)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
