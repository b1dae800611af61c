import csv
import json
import math

import numpy as np
import pytest

from shiftpi.data_model import PairTask
from shiftpi.errors import ConfigError
from shiftpi.harness import (ALL, EvaluationResult, EvaluationRow, RunConfig, aggregate, analyze_corpus,
                             construct_pair, emit_reports, evaluate_direct, evaluate_scenario, spec_for)
from shiftpi.randshift_sim import CorpusConfig, simulate_corpus

FAST = ("IID", "CovShiftEB", "Const", "Adaptive", "Oracle")


@pytest.fixture(scope="module")
def corpus():
    return simulate_corpus(CorpusConfig(n_sites=5, n_hypotheses=3, n_per_site=150, seed=21))


@pytest.fixture(scope="module")
def analyses(corpus):
    return analyze_corpus(corpus.sites, RunConfig(specs=corpus.specs, methods=FAST + ("WorstCaseKL",)))


def row(covered, method="Const", h="H1"):
    return EvaluationRow(h, "S1", "S2", method, covered, 1.0, 0.0, 1.0, 0.5)


def test_run_config_validation():
    for kw in (dict(alpha=0.0), dict(alpha=1.0), dict(permutations=0), dict(methods=()),
               dict(methods=("Bogus",)), dict(scenario="Sideways"), dict(debug_bounds=(1.0, -1.0))):
        with pytest.raises(ConfigError):
            RunConfig(**kw)


def test_three_sites_six_pairs(corpus):
    sites = [d for d in corpus.sites if d.hypothesis_id == "H1" and d.site_id in ("S01", "S02", "S03")]
    res = evaluate_direct(sites, RunConfig(specs=corpus.specs, methods=("IID", "Const")))
    for m in ("IID", "Const"):
        assert sum(r.method == m for r in res.rows) == 6


def test_too_few_sites(corpus):
    one = [d for d in corpus.sites if d.site_id == "S01"]
    with pytest.raises(ConfigError):
        evaluate_direct(one, RunConfig(specs=corpus.specs))


def test_infinite_debug_bounds_cover_everything(corpus, analyses):
    cfg = RunConfig(specs=corpus.specs, methods=("Const", "Adaptive", "Oracle", "WorstCaseKL"),
                    debug_bounds=(-math.inf, math.inf))
    res = evaluate_direct(corpus.sites, cfg, analyses)
    for m in cfg.methods:
        assert res.coverage(m) == 1.0


def test_covered_matches_bounds(corpus, analyses):
    res = evaluate_direct(corpus.sites, RunConfig(specs=corpus.specs, methods=FAST + ("WorstCaseKL",)), analyses)
    assert res.rows
    for r in res.rows:
        assert r.covered == int(r.lo <= r.theta_target <= r.hi)


def test_construction_refuses_target_outcomes(corpus):
    src, tgt = corpus.sites[0], corpus.sites[1]
    cfg = RunConfig(specs=corpus.specs)
    with pytest.raises(AssertionError):
        construct_pair(PairTask.from_sites(src, tgt, keep_full=True), spec_for(cfg, "H1", src), cfg, 0)


def test_normalized_widths(corpus, analyses):
    res = evaluate_direct(corpus.sites, RunConfig(specs=corpus.specs, methods=FAST), analyses)
    by_h = {}
    for s in res.summary:
        by_h.setdefault(s["hypothesis"], []).append(s["normalized_width"])
    for h, v in by_h.items():
        v = np.array(v)
        assert np.all((v > 0) & (v <= 1))
        assert np.sum(v == 1.0) == 1


def test_aggregate_arithmetic():
    s = aggregate([row(1), row(0), row(1), row(1)])
    cell = [x for x in s if x["hypothesis"] == ALL][0]
    assert cell["coverage"] == 0.75 and cell["n_pairs"] == 4


def test_emit_reports(tmp_path):
    res = EvaluationResult("Direct", [row(1)], aggregate([row(1)]))
    paths = emit_reports(res, tmp_path / "out")
    lines = (tmp_path / "out" / "intervals.csv").read_text().strip().splitlines()
    assert len(lines) == 2 and lines[0].startswith("method,source,target")
    assert json.loads(open(paths["summary"]).read())["rows"][0]["coverage"] == 1.0
    res4 = EvaluationResult("Direct", [row(1), row(0), row(1), row(1)], aggregate([row(1), row(0), row(1), row(1)]))
    emit_reports(res4, tmp_path / "four")
    js = json.loads((tmp_path / "four" / "summary.json").read_text())
    assert [r["coverage"] for r in js["rows"] if r["hypothesis"] == ALL] == [0.75]
    with open(tmp_path / "four" / "summary_long.csv") as fh:
        assert {r["metric"] for r in csv.DictReader(fh)} == {"coverage", "mean_width", "normalized_width"}


def test_emit_refuses_empty_method_set(tmp_path):
    res = EvaluationResult("Direct", [row(1)], aggregate([row(1)]))
    with pytest.raises(ConfigError):
        emit_reports(res, tmp_path / "never", methods=())
    assert not (tmp_path / "never").exists()
    with pytest.raises(ConfigError):
        emit_reports(EvaluationResult("Direct", [], []), tmp_path / "never")


def test_scenario_deterministic(corpus, analyses):
    cfg = RunConfig(specs=corpus.specs, methods=FAST, scenario="OverStudy", permutations=1, seed=5)
    a = evaluate_scenario(corpus.sites, cfg, analyses)
    b = evaluate_scenario(corpus.sites, cfg, analyses)
    assert a.summary == b.summary and a.rows == b.rows


def test_permutation_order_invariance(corpus, analyses):
    cfg = RunConfig(specs=corpus.specs, methods=FAST, scenario="OverSite", permutations=3, seed=2)
    res = evaluate_scenario(corpus.sites, cfg, analyses)
    shuffled = list(res.rows)
    np.random.default_rng(0).shuffle(shuffled)
    assert sorted(aggregate(shuffled), key=repr) == sorted(res.summary, key=repr)


def test_overstudy_full_pool_matches_oracle(corpus, analyses):
    """Two hypotheses sharing the same pairs: the revealed pool at step 1 is
    exactly the oracle pool of the held-out one."""
    shared = {"H1": analyses["H1"], "H2": analyses["H1"]}
    cfg = RunConfig(specs=corpus.specs, methods=("Adaptive", "Oracle"), scenario="OverStudy", permutations=2)
    res = evaluate_scenario(corpus.sites, cfg, shared)
    ad = [r for r in res.rows if r.method == "Adaptive"]
    orc = [r for r in res.rows if r.method == "Oracle"]
    assert [(r.lo, r.hi) for r in ad] == [(r.lo, r.hi) for r in orc]
    assert res.coverage("Adaptive", step=1) == res.coverage("Oracle", step=1)


def test_scenario_needs_enough_units(corpus, analyses):
    one_h = {"H1": analyses["H1"]}
    with pytest.raises(ConfigError):
        evaluate_scenario(corpus.sites, RunConfig(specs=corpus.specs, methods=FAST, scenario="OverStudy"), one_h)


def test_overboth_runs(corpus, analyses):
    res = evaluate_scenario(corpus.sites, RunConfig(specs=corpus.specs, methods=FAST, scenario="OverBoth",
                                                    permutations=2), analyses)
    assert {r.step for r in res.rows} == {1}
