"""INI configuration files with one section per module.

Example::

    [harness]
    alpha = 0.05
    methods = IID, Const, Adaptive, Oracle, WorstCaseKL
    scenario = OverStudy
    permutations = 10
    seed = 7

    [influence]
    H1.estimand = ATE
    H1.pi = 0.5

    [randshift_sim]
    M = 2000
    weight_law = uniform:0.5,1.5
"""
from __future__ import annotations

import configparser
from typing import Optional

from .errors import ConfigError
from .harness import DEFAULT_METHODS, RunConfig
from .influence import InfluenceSpec
from .nuisance import NuisanceConfig
from .randshift_sim import (CorpusConfig, LinearGaussianLaw, RandomShiftConfig, TwoPoint,
                            UniformInterval, WeightLaw)


def read_config(path: Optional[str]) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep hypothesis ids case-sensitive
    if path is None:
        return cp
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path!r} not found") from None
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path!r}: {exc}") from None
    return cp


class _Section:
    """Typed getters over one section that turn bad values into ConfigError."""

    def __init__(self, cp: configparser.ConfigParser, name: str):
        self.name = name
        self.items = dict(cp.items(name)) if cp.has_section(name) else {}

    def _convert(self, key, fn, default):
        raw = self.items.get(key)
        if raw is None or raw.strip() == "":
            return default
        try:
            return fn(raw.strip())
        except (TypeError, ValueError):
            raise ConfigError(f"[{self.name}] {key} = {raw!r} is not valid") from None

    def str(self, key, default=None):
        return self._convert(key, str, default)

    def int(self, key, default=None):
        return self._convert(key, int, default)

    def float(self, key, default=None):
        return self._convert(key, float, default)

    def bool(self, key, default=False):
        def parse(v):
            low = v.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(v)
        return self._convert(key, parse, default)

    def floats(self, key, default=()):
        return self._convert(key, lambda v: tuple(float(x) for x in v.split(",") if x.strip()), default)

    def names(self, key, default=()):
        return self._convert(key, lambda v: tuple(x.strip() for x in v.split(",") if x.strip()), default)


def parse_weight_law(text: str) -> WeightLaw:
    """``uniform:a,b`` or ``twopoint:w0,w1,p``."""
    try:
        kind, args = text.split(":", 1)
        vals = [float(x) for x in args.split(",")]
        kind = kind.strip().lower()
        if kind == "uniform" and len(vals) == 2:
            return UniformInterval(*vals)
        if kind == "twopoint" and len(vals) == 3:
            return TwoPoint(*vals)
    except ValueError:
        pass
    raise ConfigError(f"weight law {text!r}: expected uniform:a,b or twopoint:w0,w1,p")


def nuisance_config(cp) -> NuisanceConfig:
    s = _Section(cp, "nuisance")
    d = NuisanceConfig()
    return NuisanceConfig(regressor=s.str("regressor", d.regressor),
                          ridge_lambda=s.float("ridge_lambda", d.ridge_lambda),
                          knn_k=s.int("knn_k", d.knn_k),
                          clip_lo=s.float("clip_lo", d.clip_lo), clip_hi=s.float("clip_hi", d.clip_hi),
                          eb_tol=s.float("eb_tol", d.eb_tol), eb_max_iter=s.int("eb_max_iter", d.eb_max_iter))


def influence_specs(cp) -> dict:
    """``<hypothesis>.estimand`` and ``<hypothesis>.pi`` keys of [influence]."""
    s = _Section(cp, "influence")
    specs = {}
    hyps = {k.rsplit(".", 1)[0] for k in s.items if "." in k}
    for h in sorted(hyps):
        kind = s.str(f"{h}.estimand", "ATE")
        try:
            specs[h] = InfluenceSpec(kind, s.float(f"{h}.pi"))
        except ConfigError as exc:
            raise ConfigError(f"[influence] {h}: {exc}") from None
    return specs


def data_schema(cp) -> dict:
    s = _Section(cp, "data_model")
    schema = {}
    for key in ("site", "hypothesis", "outcome", "treatment"):
        if key in s.items:
            schema[key] = s.str(key)
    if "covariates" in s.items:
        schema["covariates"] = list(s.names("covariates")) or None
    return schema


def median_rule(cp) -> str:
    rule = _Section(cp, "data_model").str("median_rule", "midpoint")
    if rule not in ("midpoint", "lower"):
        raise ConfigError(f"[data_model] median_rule must be midpoint or lower, got {rule!r}")
    return rule


def run_config(cp, **overrides) -> RunConfig:
    h = _Section(cp, "harness")
    wc = _Section(cp, "worstcase" if cp.has_section("worstcase") else "worstcase_kl")
    bounds = h.floats("debug_bounds", None)
    if bounds is not None and len(bounds) != 2:
        raise ConfigError("[harness] debug_bounds needs two numbers, e.g. -inf,inf")
    kw = dict(alpha=h.float("alpha", 0.05), methods=h.names("methods", DEFAULT_METHODS),
              scenario=h.str("scenario", "Direct"), permutations=h.int("permutations", 10),
              seed=h.int("seed", 0), nuisance=nuisance_config(cp), center=h.str("center", "EB"),
              kl_quantile=wc.float("quantile", 0.99), kl_tol=wc.float("dual_tol", 1e-10),
              kl_crossfit=wc.bool("crossfit", False), mahalanobis=h.bool("mahalanobis", False),
              force_unit_weights=h.bool("force_unit_weights", False),
              force_zero_outcome_model=h.bool("force_zero_outcome_model", False),
              debug_bounds=bounds, specs=influence_specs(cp))
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**kw)


def _vector(s: _Section, key, length, default):
    v = s.floats(key, None)
    if v is None:
        return tuple(default for _ in range(length)) if length else ()
    if len(v) == 1 and length > 1:
        return v * length
    return v


def shift_config(cp) -> tuple:
    """(RandomShiftConfig, psi, n_covariates) from [randshift_sim]."""
    s = _Section(cp, "randshift_sim")
    L = s.int("L", 4)
    d_u = s.int("d_u", 1)
    law = LinearGaussianLaw(beta=_vector(s, "beta", L, 0.5), gamma=_vector(s, "gamma", d_u, 1.0),
                            sigma=s.float("sigma", 1.0), pi=s.float("pi", 0.5),
                            intercept=s.float("intercept", 0.0), tau0=s.float("tau0", 0.0),
                            tau_x=_vector(s, "tau_x", 0, 0.0), tau_u=_vector(s, "tau_u", 0, 0.0),
                            estimand=s.str("estimand", "Mean"))
    if law.L != L or law.d_u != d_u:
        raise ConfigError(f"[randshift_sim] beta needs {L} values and gamma {d_u} (or one value each)")
    cfg = RandomShiftConfig(M=s.int("M", 2000), weight_law=parse_weight_law(s.str("weight_law", "uniform:0.5,1.5")),
                            n_P=s.int("n_P", 1000), n_Q=s.int("n_Q", 1000), base_law=law,
                            replicates=s.int("replicates", 1000), seed=s.int("seed", 0),
                            population=s.str("population", "grid"), u_atoms=s.int("u_atoms", 2),
                            population_size=s.int("population_size", 0),
                            piece_coordinate=s.int("piece_coordinate", 0))
    psi = s.str("psi", "phi")
    n_cov = s.int("n_covariates", None)
    if n_cov is not None and not 1 <= n_cov <= L:
        raise ConfigError(f"[randshift_sim] n_covariates must lie in 1..{L}")
    return cfg, psi, n_cov


def corpus_config(cp) -> CorpusConfig:
    s = _Section(cp, "corpus")
    d = CorpusConfig()
    law = s.str("weight_law", None)
    return CorpusConfig(n_sites=s.int("n_sites", d.n_sites), n_hypotheses=s.int("n_hypotheses", d.n_hypotheses),
                        n_per_site=s.int("n_per_site", d.n_per_site), L=s.int("L", d.L), d_u=s.int("d_u", d.d_u),
                        x_atoms=s.int("x_atoms", d.x_atoms), u_atoms=s.int("u_atoms", d.u_atoms),
                        weight_law=d.weight_law if law is None else parse_weight_law(law),
                        seed=s.int("seed", d.seed))


def specs_to_ini(specs: dict) -> str:
    lines = ["[influence]"]
    for h, spec in specs.items():
        lines.append(f"{h}.estimand = {spec.kind}")
        if spec.pi is not None:
            lines.append(f"{h}.pi = {spec.pi!r}")
    return "\n".join(lines) + "\n"

