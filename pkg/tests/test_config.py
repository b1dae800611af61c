import pytest

from shiftpi.config import (corpus_config, data_schema, influence_specs, median_rule, parse_weight_law,
                            read_config, run_config, shift_config, specs_to_ini)
from shiftpi.errors import ConfigError
from shiftpi.randshift_sim import TwoPoint, UniformInterval


def cfg_from(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text)
    return read_config(str(p))


def test_missing_and_malformed(tmp_path):
    with pytest.raises(ConfigError):
        read_config(str(tmp_path / "nope.ini"))
    with pytest.raises(ConfigError):
        cfg_from(tmp_path, "no section header\n")


def test_defaults_without_file():
    run = run_config(read_config(None))
    assert run.alpha == 0.05 and run.permutations == 10 and run.scenario == "Direct"


def test_harness_section(tmp_path):
    cp = cfg_from(tmp_path, """
[harness]
alpha = 0.1
methods = IID, Const
scenario = OverSite
permutations = 3
seed = 9
debug_bounds = -inf, inf
[worstcase]
quantile = 0.9
crossfit = yes
[influence]
H1.estimand = ATE
H1.pi = 0.4
h2.estimand = Mean
""")
    run = run_config(cp, seed=11)
    assert run.methods == ("IID", "Const") and run.scenario == "OverSite" and run.seed == 11
    assert run.kl_quantile == 0.9 and run.kl_crossfit
    assert run.debug_bounds == (float("-inf"), float("inf"))
    assert run.specs["H1"].pi == 0.4 and run.specs["h2"].kind == "Mean"


@pytest.mark.parametrize("text", ["[harness]\nalpha = 2\n", "[harness]\nalpha = abc\n",
                                  "[harness]\nmethods = Magic\n", "[harness]\ndebug_bounds = 1\n",
                                  "[worstcase]\ncrossfit = maybe\n"])
def test_bad_harness_values(tmp_path, text):
    with pytest.raises(ConfigError):
        run_config(cfg_from(tmp_path, text))


def test_weight_laws():
    assert parse_weight_law("uniform:0.5,1.5") == UniformInterval(0.5, 1.5)
    assert parse_weight_law("TwoPoint: 0.1, 3, 0.3") == TwoPoint(0.1, 3.0, 0.3)
    for bad in ("uniform:1", "gamma:1,2", "twopoint:a,b,c", "uniform"):
        with pytest.raises(ConfigError):
            parse_weight_law(bad)


def test_shift_section(tmp_path):
    cp = cfg_from(tmp_path, "[randshift_sim]\nL = 3\nbeta = 0.5\ngamma = 1\nM = 100\nu_atoms = 5\n"
                            "weight_law = twopoint:0.5,1.5,0.5\npsi = resid\nn_covariates = 2\n")
    cfg, psi, n_cov = shift_config(cp)
    assert cfg.base_law.beta == (0.5, 0.5, 0.5) and cfg.M == 100
    assert (psi, n_cov) == ("resid", 2)
    with pytest.raises(ConfigError):
        shift_config(cfg_from(tmp_path, "[randshift_sim]\nL = 3\nbeta = 1, 2\n"))
    with pytest.raises(ConfigError):
        shift_config(cfg_from(tmp_path, "[randshift_sim]\nL = 3\nn_covariates = 4\n"))


def test_corpus_and_data_sections(tmp_path):
    cp = cfg_from(tmp_path, "[corpus]\nn_sites = 4\nweight_law = uniform:0.5,1.5\n"
                            "[data_model]\noutcome = score\ncovariates = a, b\nmedian_rule = lower\n")
    c = corpus_config(cp)
    assert c.n_sites == 4 and c.weight_law == UniformInterval(0.5, 1.5)
    assert data_schema(cp) == {"outcome": "score", "covariates": ["a", "b"]}
    assert median_rule(cp) == "lower"
    with pytest.raises(ConfigError):
        median_rule(cfg_from(tmp_path, "[data_model]\nmedian_rule = upper\n"))


def test_specs_round_trip(tmp_path):
    cp = cfg_from(tmp_path, "[influence]\nH1.estimand = ATE\nH1.pi = 0.5\nH2.estimand = Mean\n")
    specs = influence_specs(cp)
    again = influence_specs(cfg_from(tmp_path, specs_to_ini(specs)))
    assert again == specs
