"""Acceptance suite: one PASS/FAIL line per criterion, with the stated tolerances.

Run under pytest (lines are repeated in the terminal summary) or directly as
``python tests/test_acceptance.py``.
"""
import math
import sys

import numpy as np
import pytest
from scipy import stats

from shiftpi.data_model import PairTask, SiteDataset
from shiftpi.estimators import conditional_variances, dr_estimate, eb_estimate, weighted_mean
from shiftpi.harness import RunConfig, analyze_corpus, evaluate_direct, evaluate_scenario
from shiftpi.influence import InfluenceSpec
from shiftpi.intervals import covshift_interval
from shiftpi.nuisance import entropy_balance
from shiftpi.randshift_sim import (CorpusConfig, LinearGaussianLaw, RandomShiftConfig, TwoPoint, UniformInterval,
                                   base_distribution, build_model, perturb, run_clt_experiment, sample_from,
                                   simulate_corpus)
from shiftpi.rng import substream
from shiftpi.worstcase_kl import kl_worstcase_interval

RESULTS = []


def report(criterion, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


def check(criterion, checks):
    """``checks`` is a list of (label, ok); every one is reported, then all must hold."""
    ok = all(c for _, c in checks)
    report(criterion, ok, "; ".join(f"{label} {'ok' if c else 'NOT MET'}" for label, c in checks))
    failed = [label for label, c in checks if not c]
    assert not failed, f"criterion {criterion} not met: {failed}"


def scaled_chi2_ks(z, scale):
    return stats.kstest(np.asarray(z) ** 2 / scale, "chi2", args=(1,)).pvalue


# 1 ---------------------------------------------------------------------------

def test_clt_variance_and_normality():
    law = LinearGaussianLaw(beta=(0.5,) * 4, gamma=(1.0,), sigma=math.sqrt(2.0))
    cfg = RandomShiftConfig(M=2000, weight_law=UniformInterval(0.5, 1.5), n_P=1000, n_Q=1000, base_law=law,
                            replicates=5000, seed=1, u_atoms=10)
    rep = run_clt_experiment(cfg)
    ratio = rep.empirical_var / rep.theory_var
    check(1, [(f"kappa={rep.kappa:.3f}", abs(rep.kappa - 0.5) < 1e-9),
              (f"var ratio={ratio:.4f} in [0.93, 1.07]", 0.93 <= ratio <= 1.07),
              (f"KS p={rep.ks_pvalue:.3g} > 0.01", rep.ks_pvalue > 0.01)])


# 2, 3 ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def wide_covariate_run():
    law = LinearGaussianLaw(beta=(0.2,) * 50, gamma=(1.0,), sigma=1.0)
    cfg = RandomShiftConfig(M=500, weight_law=TwoPoint(0.25, 1.75, 0.5), n_P=1000, n_Q=1000, base_law=law,
                            replicates=5000, seed=2, u_atoms=5)
    rep = run_clt_experiment(cfg)
    return rep, 1 / cfg.n_P + 1 / cfg.n_Q + rep.delta_M_sq


def test_covariate_chi_square_law(wide_covariate_run):
    rep, scale = wide_covariate_run
    p = scaled_chi2_ks(rep.replicate_stats["cov_z"][:, 0], scale)
    check(2, [(f"delta_M_sq={rep.delta_M_sq:.4g}, KS vs chi2(1) p={p:.3g} > 0.01", p > 0.01)])


def test_stabilized_measure_concentrates(wide_covariate_run):
    rep, scale = wide_covariate_run
    sq = rep.replicate_stats["t_x"] ** 2
    rel = sq.mean() / scale
    cv = sq.std(ddof=1) / sq.mean()
    check(3, [(f"mean/target={rel:.4f} within 10%", abs(rel - 1) <= 0.10),
              (f"CV={cv:.3f} < 0.25", cv < 0.25)])


# 4 ---------------------------------------------------------------------------

def ordering_run(kappa):
    law = LinearGaussianLaw(beta=(0.3,) * 20, gamma=(math.sqrt(kappa),), sigma=math.sqrt(1 - kappa))
    cfg = RandomShiftConfig(M=200, weight_law=TwoPoint(0.1, 3.0, 0.3), n_P=5000, n_Q=5000, base_law=law,
                            replicates=2000, seed=3, u_atoms=4)
    return run_clt_experiment(cfg, psi="resid")


def decile_dominance(cond, cov):
    """Largest shortfall of the ECDF of |cond| below that of |cov| at the deciles
    of |cov|, in units of the two-sample standard error."""
    a, b = np.sort(np.abs(cond)), np.sort(np.abs(cov))
    worst = -np.inf
    for q in np.quantile(b, np.arange(1, 10) / 10):
        fa = np.searchsorted(a, q, side="right") / a.size
        fb = np.searchsorted(b, q, side="right") / b.size
        se = math.sqrt(fa * (1 - fa) / a.size + fb * (1 - fb) / b.size)
        worst = max(worst, (fb - fa) / se if se > 0 else 0.0)
    return worst


def test_stochastic_ordering():
    kappas = (0.25, 0.5, 0.75)
    fracs, checks = [], []
    for kappa in kappas:
        rep = ordering_run(kappa)
        st_ = rep.replicate_stats
        frac = float(np.mean(np.abs(st_["ratio"]) <= 1))
        fracs.append(frac)
        shortfall = decile_dominance(st_["cond_t"], st_["cov_z"][:, 0])
        checks.append((f"kappa={kappa} (resid kappa={rep.metadata['kappa_resid']:.3f}): "
                       f"P(|r|<=1)={frac:.3f} >= 0.85", frac >= 0.85))
        checks.append((f"kappa={kappa}: decile dominance shortfall={shortfall:.2f} se <= 2", shortfall <= 2))
    checks.append(("fraction increases as kappa decreases", fracs[0] > fracs[1] > fracs[2]))
    check(4, checks)


# 5, 6 ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def corpus_analyses():
    corpus = simulate_corpus(CorpusConfig())
    cfg = RunConfig(specs=corpus.specs)
    return corpus, cfg, analyze_corpus(corpus.sites, cfg)


def test_interval_method_ordering(corpus_analyses):
    corpus, cfg, analyses = corpus_analyses
    res = evaluate_direct(corpus.sites, cfg, analyses)
    cov = {m: res.coverage(m) for m in cfg.methods}
    sampling = corpus.metadata["sampling_term"]
    checks = [(f"Const coverage={cov['Const']:.3f} >= 0.90", cov["Const"] >= 0.90)]
    if corpus.delta_M_sq >= 2 * sampling:
        checks.append((f"IID coverage={cov['IID']:.3f} at least 0.05 below Const",
                       cov["IID"] <= cov["Const"] - 0.05))
    checks.append((f"WorstCaseKL coverage={cov['WorstCaseKL']:.3f} >= Const", cov["WorstCaseKL"] >= cov["Const"]))
    for h in sorted(analyses):
        wk, wc = res.mean_width("WorstCaseKL", h), res.mean_width("Const", h)
        checks.append((f"{h} width WorstCaseKL={wk:.3f} >= Const={wc:.3f}", wk >= wc))
    checks.append((f"Oracle coverage={cov['Oracle']:.3f} within 0.03 of 0.95", abs(cov["Oracle"] - 0.95) <= 0.03))
    check(5, checks)


def test_adaptive_overstudy(corpus_analyses):
    corpus, cfg, analyses = corpus_analyses
    run = RunConfig(specs=corpus.specs, methods=("Adaptive",), scenario="OverStudy", permutations=10)
    res = evaluate_scenario(corpus.sites, run, analyses)
    steps = sorted({r.step for r in res.rows if r.step >= 2})
    checks = []
    for t in steps:
        c = res.coverage("Adaptive", step=t)
        checks.append((f"t={t} coverage={c:.3f} within 0.05 of 0.95", abs(c - 0.95) <= 0.05))
    check(6, checks)


# 7 ---------------------------------------------------------------------------

def test_entropy_balance():
    x = np.r_[np.ones(50), np.zeros(50)][:, None]
    bw = entropy_balance(x, [0.6])
    closed = float(max(np.max(np.abs(bw.w[:50] - 1.2)), np.max(np.abs(bw.w[50:] - 0.8))))
    worst = 0.0
    all_converged = True
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(300, 4))
        target = rng.normal(0.3, 1.0, size=(300, 4)).mean(axis=0)
        res = entropy_balance(X, target)
        all_converged &= res.converged
        worst = max(worst, float(np.max(np.abs(res.w @ X / len(X) - target))))
    check(7, [(f"binary closed form error={closed:.2e} <= 1e-8", closed <= 1e-8),
              ("20 random problems converged", all_converged),
              (f"max moment violation={worst:.2e} <= 1e-8", worst <= 1e-8)])


# 8 ---------------------------------------------------------------------------

def test_kl_worst_case():
    rng = np.random.default_rng(8)
    phi = (rng.random(100000) < 0.5).astype(float)
    hi = kl_worstcase_interval(phi, None, 0.02).hi
    w = rng.random(phi.size) + 0.5
    zero = kl_worstcase_interval(phi, w, 0.0)
    exact = zero.lo == zero.hi == weighted_mean(phi, w)
    cont = rng.normal(size=2000)
    ends = [kl_worstcase_interval(cont, None, r) for r in np.linspace(0, 1, 10)]
    mono = all(b.hi >= a.hi and b.lo <= a.lo for a, b in zip(ends, ends[1:]))
    check(8, [(f"upper={hi:.5f} within 0.002 of 0.5995", abs(hi - 0.5995) <= 0.002),
              ("rho=0 equals weighted mean bit-for-bit", exact),
              ("endpoints monotone in rho", mono)])


# 9 ---------------------------------------------------------------------------

def test_covariate_shift_consistency():
    law = LinearGaussianLaw(beta=(1.0, 0.5), gamma=(0.0,), sigma=1.0, intercept=0.5)
    cfg = RandomShiftConfig(M=50, weight_law=UniformInterval(0.5, 1.5), n_P=500, n_Q=500, base_law=law,
                            population="sample", population_size=20000, seed=9)
    model = build_model(cfg)
    base = base_distribution(model)
    spec = InfluenceSpec("Mean")
    reps = 2000
    err = {"DR": [], "EB": []}
    hit = {"DR": [], "EB": []}
    for r in range(reps):
        dist = perturb(model, cfg.seed, f"rep/{r}")
        P = sample_from(base, cfg.n_P, rng=substream(cfg.seed, "consistency", r, "P"), site_id="P")
        Q = sample_from(dist, cfg.n_Q, rng=substream(cfg.seed, "consistency", r, "Q"), site_id="Q")
        piece_w = dist.piece_weights

        def ratio(X, piece_w=piece_w):
            return piece_w[np.searchsorted(model.pieces.boundaries, X[:, 0])]

        task = PairTask.from_sites(P, Q, keep_full=False)
        theta_q = float(Q.Y.mean())
        for name, g in (("DR", dr_estimate(task, spec, seed=r, oracle_ratio=ratio, oracle_mean=law.phi_given_x)),
                        ("EB", eb_estimate(task, spec, seed=r, oracle_mean=law.phi_given_x))):
            err[name].append(g.theta_w - theta_q)
            hit[name].append(covshift_interval(g).covers(theta_q))
    checks = []
    for name in ("DR", "EB"):
        e = np.asarray(err[name])
        z = e.mean() / (e.std(ddof=1) / math.sqrt(reps))
        c = float(np.mean(hit[name]))
        checks.append((f"{name} bias={e.mean():.2e} ({z:.2f} MC se) within 3 se", abs(z) <= 3))
        checks.append((f"{name} coverage={c:.3f} within 0.02 of 0.95", abs(c - 0.95) <= 0.02))
    check(9, checks)


# 10 --------------------------------------------------------------------------

def test_variance_decomposition():
    checks = []
    for kappa in (0.25, 0.5, 0.75):
        rng = np.random.default_rng(10)
        n = 5000
        beta = np.array([1.0, -1.0, 0.5])
        beta *= math.sqrt(kappa) / np.linalg.norm(beta)
        X = rng.standard_normal((n, 3))
        Y = X @ beta + math.sqrt(1 - kappa) * rng.standard_normal(n)
        cv = conditional_variances(SiteDataset("S", "H", X, Y), InfluenceSpec("Mean"), seed=1)
        share = cv.s_x ** 2 / (cv.s_x ** 2 + cv.s_yx ** 2)
        checks.append((f"kappa={kappa}: explained share={share:.3f} within 0.05", abs(share - kappa) <= 0.05))
    check(10, checks)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
