"""Random distribution shift simulator.

A base law over (X, U, T, Y) is represented by a finite population of (X, U)
rows partitioned into M equal-mass pieces. A perturbed law draws i.i.d.
positive weights W_1..W_M and samples a piece with probability proportional to
its weight, then a row uniformly inside the piece. Treatment is Bernoulli(pi)
independently of everything, so only the (X, U) law moves. U is latent and is
dropped from emitted datasets.

The default population is a product grid of X-atoms and U-atoms with one row
per piece. Each margin is moment-standardized, so the population moments used
by the theory are exact and X carries no information about U.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import stats

from . import _kernels
from .data_model import SiteDataset
from .errors import ConfigError, TooFewSamples
from .influence import ATE, MEAN, InfluenceSpec
from .rng import substream

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class UniformInterval:
    a: float
    b: float

    def __post_init__(self):
        if not 0 < self.a <= self.b:
            raise ConfigError("UniformInterval needs 0 < a <= b (weights bounded away from zero)")

    @property
    def mean(self):
        return 0.5 * (self.a + self.b)

    @property
    def var(self):
        return (self.b - self.a) ** 2 / 12.0

    def draw(self, rng, size):
        return rng.uniform(self.a, self.b, size)


@dataclass(frozen=True)
class TwoPoint:
    """W = w1 with probability p, else w0."""
    w0: float
    w1: float
    p: float

    def __post_init__(self):
        if not (self.w0 > 0 and self.w1 > 0):
            raise ConfigError("TwoPoint weights must be positive")
        if not 0 <= self.p <= 1:
            raise ConfigError("TwoPoint p must lie in [0, 1]")

    @property
    def mean(self):
        return self.w0 + self.p * (self.w1 - self.w0)

    @property
    def var(self):
        return self.p * (1 - self.p) * (self.w1 - self.w0) ** 2

    def draw(self, rng, size):
        return np.where(rng.random(size) < self.p, self.w1, self.w0)


WeightLaw = Union[UniformInterval, TwoPoint]


def delta_m_sq(law: WeightLaw, M: int) -> float:
    """Perturbation strength (1/M) Var(W) / E[W]^2."""
    return law.var / law.mean ** 2 / M


def delta_m_sq_second_moment(law: WeightLaw, M: int) -> float:
    """The alternative (1/M) E[W^2] / E[W]^2 form, reported for comparison."""
    return (law.var + law.mean ** 2) / law.mean ** 2 / M


@dataclass(frozen=True)
class LinearGaussianLaw:
    """Y = c + b.X + g.U + T (t0 + tx.X + tu.U) + sigma * eps, T ~ Bernoulli(pi).

    Empty ``tau_x``/``tau_u`` mean no effect modification.
    """
    beta: tuple
    gamma: tuple = (1.0,)
    sigma: float = 1.0
    pi: float = 0.5
    intercept: float = 0.0
    tau0: float = 0.0
    tau_x: tuple = ()
    tau_u: tuple = ()
    estimand: str = MEAN

    def __post_init__(self):
        for name in ("beta", "gamma", "tau_x", "tau_u"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        object.__setattr__(self, "estimand", InfluenceSpec(self.estimand, self.pi).kind)
        if not 0 < self.pi < 1:
            raise ConfigError("pi must lie in (0, 1)")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if self.tau_x and len(self.tau_x) != len(self.beta):
            raise ConfigError("tau_x must match beta in length")
        if self.tau_u and len(self.tau_u) != len(self.gamma):
            raise ConfigError("tau_u must match gamma in length")

    @property
    def L(self):
        return len(self.beta)

    @property
    def d_u(self):
        return len(self.gamma)

    @property
    def spec(self) -> InfluenceSpec:
        return InfluenceSpec(self.estimand, self.pi if self.estimand == ATE else None)

    def _vec(self, v, k):
        return np.asarray(v, dtype=float) if v else np.zeros(k)

    def base_and_effect(self, X, U):
        """Outcome mean under control, and the treatment effect, for each row."""
        mu = self.intercept + X @ self._vec(self.beta, self.L) + U @ self._vec(self.gamma, self.d_u)
        tau = self.tau0 + X @ self._vec(self.tau_x, self.L) + U @ self._vec(self.tau_u, self.d_u)
        return mu, tau

    def outcome(self, X, U, T, eps):
        mu, tau = self.base_and_effect(X, U)
        return mu + T * tau + self.sigma * eps

    def phi(self, Y, T):
        if self.estimand == MEAN:
            return Y
        return Y * (T / self.pi - (1 - T) / (1 - self.pi))

    def phi_moments(self, X, U):
        """E[phi | X, U] and Var(phi | X, U), averaging over T and eps."""
        mu, tau = self.base_and_effect(X, U)
        p, s2 = self.pi, self.sigma ** 2
        if self.estimand == MEAN:
            mean = mu + p * tau
            return mean, s2 + p * (1 - p) * tau ** 2
        second = ((mu + tau) ** 2 + s2) / p + (mu ** 2 + s2) / (1 - p)
        return tau, second - tau ** 2

    def phi_given_x(self, X):
        """E[phi | X] under the base law, where U has mean zero independently of X."""
        zeros = np.zeros((X.shape[0], self.d_u))
        return self.phi_moments(X, zeros)[0]


def _standardize(A):
    """Centre and whiten rows so the sample mean is 0 and covariance is I (1/N form)."""
    A = A - A.mean(axis=0)
    cov = A.T @ A / A.shape[0]
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() <= 1e-12:
        raise ConfigError("too few atoms to standardize; increase the atom count")
    return A @ vecs @ np.diag(vals ** -0.5) @ vecs.T


@dataclass(frozen=True)
class Population:
    X: np.ndarray
    U: np.ndarray

    @property
    def N(self):
        return self.X.shape[0]

    @property
    def Z(self):
        return np.hstack([self.X, self.U])


def grid_population(L: int, d_u: int, x_atoms: int, u_atoms: int, rng, standardize=True) -> Population:
    """Every combination of x_atoms draws of X ~ N(0, I_L) and u_atoms draws of U ~ N(0, I_du)."""
    xa = rng.standard_normal((x_atoms, L))
    ua = rng.standard_normal((u_atoms, d_u))
    if standardize:
        xa, ua = _standardize(xa), _standardize(ua)
    X = np.repeat(xa, u_atoms, axis=0)
    U = np.tile(ua, (x_atoms, 1))
    return Population(X, U)


def sample_population(L: int, d_u: int, N: int, rng) -> Population:
    Z = rng.standard_normal((N, L + d_u))
    return Population(Z[:, :L], Z[:, L:])


@dataclass(frozen=True)
class Pieces:
    M: int
    boundaries: np.ndarray  # M-1 cut points on the index coordinate
    assignment: np.ndarray  # piece of each population row
    order: np.ndarray  # rows sorted by piece
    offsets: np.ndarray  # piece m owns order[offsets[m]:offsets[m+1]]

    @property
    def sizes(self):
        return np.diff(self.offsets)


def build_pieces(base_sample, M: int, coordinate: int = 0) -> Pieces:
    """Equal-count quantile bins of one column of ``base_sample``.

    Rows are ranked on the column (ties broken by row order) and rank r goes to
    piece floor(r * M / N), so every piece holds N/M rows up to rounding.
    """
    Z = np.asarray(base_sample, dtype=float)
    if Z.ndim == 1:
        Z = Z.reshape(-1, 1)
    N = Z.shape[0]
    if M < 1:
        raise ConfigError("M must be >= 1")
    if N < M:
        raise TooFewSamples(f"{N} rows cannot fill {M} pieces")
    if N < 10 * M:
        logger.debug("%d rows for %d pieces: piece means are coarse", N, M)
    col = Z[:, coordinate]
    order = np.argsort(col, kind="stable")
    ranks = np.empty(N, dtype=np.int64)
    ranks[order] = np.arange(N)
    assignment = ranks * M // N
    offsets = np.searchsorted(assignment[order], np.arange(M + 1))
    sorted_col = col[order]
    cut = offsets[1:-1]
    boundaries = 0.5 * (sorted_col[cut - 1] + sorted_col[cut])
    return Pieces(M, boundaries, assignment, order, offsets)


@dataclass(frozen=True)
class RandomShiftConfig:
    M: int
    weight_law: WeightLaw
    n_P: int
    n_Q: int
    base_law: LinearGaussianLaw
    replicates: int = 1000
    seed: int = 0
    population: str = "grid"  # "grid" or "sample"
    u_atoms: int = 2  # grid: U-atoms; X-atoms = M / u_atoms
    population_size: int = 0  # sample: rows (default 10 M)
    piece_coordinate: int = 0
    standardize: bool = True

    def __post_init__(self):
        if self.M < 2:
            raise ConfigError("M must be >= 2")
        if self.n_P < 2 or self.n_Q < 2:
            raise ConfigError("n_P and n_Q must be >= 2")
        if self.population == "grid" and self.M % self.u_atoms:
            raise ConfigError("grid population needs M divisible by u_atoms")
        if self.population not in ("grid", "sample"):
            raise ConfigError(f"unknown population design {self.population!r}")


@dataclass(frozen=True)
class ShiftModel:
    """Population, pieces and outcome law: everything except the random weights."""
    config: RandomShiftConfig
    population: Population
    pieces: Pieces

    @property
    def law(self) -> LinearGaussianLaw:
        return self.config.base_law


def build_model(config: RandomShiftConfig) -> ShiftModel:
    rng = substream(config.seed, "population")
    law = config.base_law
    if config.population == "grid":
        pop = grid_population(law.L, law.d_u, config.M // config.u_atoms, config.u_atoms, rng,
                              config.standardize)
    else:
        pop = sample_population(law.L, law.d_u, config.population_size or 10 * config.M, rng)
    return ShiftModel(config, pop, build_pieces(pop.Z, config.M, config.piece_coordinate))


@dataclass(frozen=True)
class PerturbedDistribution:
    model: ShiftModel
    piece_weights: np.ndarray  # normalized to mean one
    raw_weights: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def boundaries(self):
        return self.model.pieces.boundaries


def base_distribution(model: ShiftModel) -> PerturbedDistribution:
    return PerturbedDistribution(model, np.ones(model.pieces.M))


def normalize_weights(raw) -> np.ndarray:
    return raw / raw.mean()


def perturb(config: Union[RandomShiftConfig, ShiftModel], seed, name: str = "weights") -> PerturbedDistribution:
    """Draw i.i.d. piece weights from the weight law and normalize them to mean one."""
    model = config if isinstance(config, ShiftModel) else build_model(config)
    rng = substream(seed, "perturb", name)
    raw = model.config.weight_law.draw(rng, model.pieces.M).astype(float)
    return PerturbedDistribution(model, normalize_weights(raw), raw)


def _draw_rows(dist: PerturbedDistribution, n: int, rng) -> np.ndarray:
    pcs = dist.model.pieces
    cum = np.cumsum(dist.piece_weights)
    cum /= cum[-1]
    piece = _kernels.sample_indices(cum, rng.random(n))
    sizes = pcs.sizes[piece]
    within = np.minimum((rng.random(n) * sizes).astype(np.int64), sizes - 1)
    return pcs.order[pcs.offsets[piece] + within]


def sample_arrays(dist: PerturbedDistribution, n: int, rng):
    """Rows drawn from ``dist``: (row index, X, U, T, Y)."""
    law = dist.model.law
    rows = _draw_rows(dist, n, rng)
    X, U = dist.model.population.X[rows], dist.model.population.U[rows]
    T = (rng.random(n) < law.pi).astype(float)
    Y = law.outcome(X, U, T, rng.standard_normal(n))
    return rows, X, U, T, Y


def sample_from(dist: PerturbedDistribution, n: int, seed=0, site_id="S", hypothesis_id="H",
                rng=None) -> SiteDataset:
    """Emit an observed dataset (X, T, Y) of size n; U stays hidden."""
    rng = substream(seed, "sample", site_id, hypothesis_id) if rng is None else rng
    law = dist.model.law
    _, X, _, T, Y = sample_arrays(dist, n, rng)
    return SiteDataset(site_id, hypothesis_id, X, Y, T, law.pi,
                       tuple(f"x{j + 1}" for j in range(X.shape[1])))


PSI_KINDS = ("phi", "resid")


def psi_moments(model: ShiftModel, psi: str):
    """Per-row E[psi | X, U] and Var(psi | X, U) for psi in {phi, resid, x<k>}."""
    pop, law = model.population, model.law
    if psi == "phi":
        return law.phi_moments(pop.X, pop.U)
    if psi == "resid":
        m, v = law.phi_moments(pop.X, pop.U)
        return m - law.phi_given_x(pop.X), v
    if psi.startswith("x") and psi[1:].isdigit():
        j = int(psi[1:]) - 1
        return pop.X[:, j].copy(), np.zeros(pop.N)
    raise ConfigError(f"unknown psi {psi!r}; expected phi, resid or x<k>")


@dataclass
class CLTReport:
    empirical_var: float
    theory_var: float
    ks_pvalue: float
    delta_M_sq: float
    kappa: float
    psi: str = "phi"
    metadata: dict = field(default_factory=dict)
    replicate_stats: dict = field(default_factory=dict, repr=False)

    def to_json(self, include_replicates=False) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "replicate_stats"}
        if include_replicates:
            out["replicate_stats"] = {k: np.asarray(v).tolist() for k, v in self.replicate_stats.items()}
        return out


def theory_moments(model: ShiftModel, psi: str):
    """(Var_P(psi), Var_P(E[psi|X,U]), piece-level variance of E[psi|piece])."""
    m, v = psi_moments(model, psi)
    var_cond = float(np.mean(m * m) - np.mean(m) ** 2)
    var_psi = var_cond + float(np.mean(v))
    pcs = model.pieces
    piece_means = np.bincount(pcs.assignment, weights=m, minlength=pcs.M) / pcs.sizes
    var_piece = float(np.mean(piece_means ** 2) - np.mean(piece_means) ** 2)
    return var_psi, var_cond, var_piece


def _sample_sums(dist, n, rng, law, psi_cols):
    rows, X, U, T, Y = sample_arrays(dist, n, rng)
    phi = law.phi(Y, T)
    vals = {"phi": phi, "resid": phi - law.phi_given_x(X)}
    out = {k: (float(vals[k].mean()), float(vals[k].var(ddof=1))) for k in psi_cols}
    return out, X


def run_clt_experiment(config: RandomShiftConfig, psi: str = "phi",
                       n_covariates: Optional[int] = None) -> CLTReport:
    """Monte-Carlo check of the central limit theorem under random shift.

    Each replicate perturbs the base law, samples n_P rows from the base law
    and n_Q rows from the perturbed law, and records the difference of sample
    means of psi. Alongside, per replicate, it stores the standardized
    covariate mean differences, the stabilized covariate measure over the
    first ``n_covariates`` covariates, and the standardized residual
    difference, which are the inputs of the stochastic-ordering checks.
    """
    if config.replicates < 2:
        raise ConfigError("need at least 2 replicates")
    model = build_model(config)
    law = model.law
    L = law.L if n_covariates is None else int(n_covariates)
    base = base_distribution(model)
    R = config.replicates
    diff = np.empty(R)
    cond_t = np.empty(R)
    cov_z = np.empty((R, L))
    for r in range(R):
        dist = perturb(model, config.seed, f"rep/{r}")
        rng_p = substream(config.seed, "clt", "rep", r, "P")
        rng_q = substream(config.seed, "clt", "rep", r, "Q")
        sp, XP = _sample_sums(base, config.n_P, rng_p, law, ("phi", "resid"))
        sq, XQ = _sample_sums(dist, config.n_Q, rng_q, law, ("phi", "resid"))
        if psi in ("phi", "resid"):
            diff[r] = sq[psi][0] - sp[psi][0]
        else:
            j = int(psi[1:]) - 1
            diff[r] = XQ[:, j].mean() - XP[:, j].mean()
        cond_t[r] = (sq["resid"][0] - sp["resid"][0]) / math.sqrt(sp["resid"][1])
        cov_z[r] = (XQ[:, :L].mean(axis=0) - XP[:, :L].mean(axis=0)) / XP[:, :L].std(axis=0, ddof=1)

    d2 = delta_m_sq(config.weight_law, config.M)
    var_psi, var_cond, var_piece = theory_moments(model, psi)
    sampling = 1.0 / config.n_P + 1.0 / config.n_Q
    theory = sampling * var_psi + d2 * var_cond
    ks = stats.kstest(diff / math.sqrt(theory), "norm") if theory > 0 else None
    t_x = np.sqrt(np.mean(cov_z ** 2, axis=1))
    rv, rc, _ = theory_moments(model, "resid")
    meta = {
        "delta_M_sq_second_moment_form": delta_m_sq_second_moment(config.weight_law, config.M),
        "var_psi": var_psi,
        "var_cond_mean": var_cond,
        "var_piece_mean": var_piece,
        "theory_var_piece_level": sampling * var_psi + d2 * var_piece,
        "kappa_resid": rc / rv if rv > 0 else float("nan"),
        "mean_diff": float(diff.mean()),
        "M": config.M, "n_P": config.n_P, "n_Q": config.n_Q,
        "replicates": R, "n_covariates": L, "seed": config.seed,
    }
    return CLTReport(
        empirical_var=float(diff.var(ddof=1)),
        theory_var=float(theory),
        ks_pvalue=float(ks.pvalue) if ks is not None else float("nan"),
        delta_M_sq=d2,
        kappa=var_cond / var_psi if var_psi > 0 else float("nan"),
        psi=psi,
        metadata=meta,
        replicate_stats={"diff": diff, "cond_t": cond_t, "cov_z": cov_z, "t_x": t_x,
                         "ratio": np.divide(cond_t, t_x, out=np.full(R, np.nan), where=t_x > 0)},
    )


@dataclass(frozen=True)
class CorpusConfig:
    """Multi-site, multi-hypothesis corpus under independent per-site random shifts.

    All hypotheses share one (X, U) grid population and each site's piece
    weights, as when every hypothesis is studied on the same participant pool
    at a site. Hypotheses differ in their outcome laws.
    """
    n_sites: int = 10
    n_hypotheses: int = 5
    n_per_site: int = 400
    L: int = 8
    d_u: int = 2
    x_atoms: int = 40
    u_atoms: int = 4
    weight_law: WeightLaw = TwoPoint(0.1, 3.0, 0.3)
    seed: int = 0
    laws: tuple = ()

    def __post_init__(self):
        if self.n_sites < 2 or self.n_hypotheses < 1:
            raise ConfigError("corpus needs at least 2 sites and 1 hypothesis")
        if self.laws and len(self.laws) != self.n_hypotheses:
            raise ConfigError("laws must list one outcome law per hypothesis")

    @property
    def M(self):
        return self.x_atoms * self.u_atoms


def _direction(rng, k):
    v = rng.standard_normal(k)
    return v / np.linalg.norm(v)


def default_laws(L: int, d_u: int, K: int, seed: int = 0) -> tuple:
    """Alternating ATE and mean hypotheses with moderate explained variance.

    ATE laws carry covariate- and latent-driven effect modification on a small
    baseline; mean laws have a covariate signal plus a weaker latent one. Both
    kinds leave roughly the same share (about 0.08) of the residual variance
    to the latent variable, so the shift ratio has a similar law across
    hypotheses.
    """
    laws = []
    for k in range(K):
        rng = substream(seed, "laws", k)
        if k % 2 == 0:
            laws.append(LinearGaussianLaw(
                beta=tuple(0.2 * _direction(rng, L)), gamma=tuple(0.2 * _direction(rng, d_u)),
                sigma=0.5, pi=0.5, intercept=0.2, tau0=0.3 + 0.1 * k,
                tau_x=tuple(1.0 * _direction(rng, L)), tau_u=tuple(0.6 * _direction(rng, d_u)),
                estimand=ATE))
        else:
            laws.append(LinearGaussianLaw(
                beta=tuple(1.0 * _direction(rng, L)), gamma=tuple(0.3 * _direction(rng, d_u)),
                sigma=1.0, pi=0.5, intercept=1.0 + 0.2 * k, estimand=MEAN))
    return tuple(laws)


@dataclass
class Corpus:
    sites: list
    specs: dict
    laws: dict
    delta_M_sq: float
    metadata: dict = field(default_factory=dict)


def simulate_corpus(cfg: CorpusConfig = CorpusConfig()) -> Corpus:
    laws = cfg.laws or default_laws(cfg.L, cfg.d_u, cfg.n_hypotheses, cfg.seed)
    pop = grid_population(cfg.L, cfg.d_u, cfg.x_atoms, cfg.u_atoms,
                          substream(cfg.seed, "corpus", "population"))
    pieces = build_pieces(pop.Z, cfg.M)
    hyp_ids = [f"H{k + 1}" for k in range(cfg.n_hypotheses)]
    site_ids = [f"S{j + 1:02d}" for j in range(cfg.n_sites)]
    site_weights = [normalize_weights(cfg.weight_law.draw(substream(cfg.seed, "corpus", "weights", s),
                                                          cfg.M).astype(float))
                    for s in site_ids]
    out = []
    for h, law in zip(hyp_ids, laws):
        rcfg = RandomShiftConfig(M=cfg.M, weight_law=cfg.weight_law, n_P=cfg.n_per_site,
                                 n_Q=cfg.n_per_site, base_law=law, u_atoms=cfg.u_atoms,
                                 seed=cfg.seed)
        model = ShiftModel(rcfg, pop, pieces)
        for s, w in zip(site_ids, site_weights):
            dist = PerturbedDistribution(model, w)
            out.append(sample_from(dist, cfg.n_per_site, rng=substream(cfg.seed, "corpus", "sample", h, s),
                                   site_id=s, hypothesis_id=h))
    d2 = delta_m_sq(cfg.weight_law, cfg.M)
    meta = {"M": cfg.M, "n_per_site": cfg.n_per_site, "delta_M_sq": d2,
            "sampling_term": 2.0 / cfg.n_per_site, "seed": cfg.seed}
    for h, law in zip(hyp_ids, laws):
        model = ShiftModel(RandomShiftConfig(M=cfg.M, weight_law=cfg.weight_law, n_P=2, n_Q=2,
                                             base_law=law, u_atoms=cfg.u_atoms), pop, pieces)
        vp, vc, _ = theory_moments(model, "phi")
        rv, rc, _ = theory_moments(model, "resid")
        meta[h] = {"estimand": law.estimand, "kappa_phi": vc / vp, "kappa_resid": rc / rv}
    return Corpus(out, {h: law.spec for h, law in zip(hyp_ids, laws)},
                  dict(zip(hyp_ids, laws)), d2, meta)
