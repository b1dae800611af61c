import json
import subprocess
import sys

import pytest

from shiftpi.cli import main

CORPUS_INI = "[corpus]\nn_sites = 4\nn_hypotheses = 2\nn_per_site = 120\nseed = 3\n"


@pytest.fixture(scope="module")
def corpus_csv(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    ini = d / "sim.ini"
    ini.write_text(CORPUS_INI)
    out = d / "corpus.csv"
    assert main(["simulate", "corpus", "--config", str(ini), "--out", str(out)]) == 0
    return out


def test_simulate_corpus_writes_estimands(corpus_csv):
    text = corpus_csv.with_suffix(".ini").read_text()
    assert "H1.estimand = ATE" in text and "H2.estimand = Mean" in text
    header = corpus_csv.read_text().splitlines()[0]
    assert header.startswith("site,hypothesis,y,t,x1")


def test_ingest(corpus_csv, tmp_path, capsys):
    assert main(["ingest", "--data", str(corpus_csv), "--out", str(tmp_path / "clean.csv")]) == 0
    assert "S01" in capsys.readouterr().out
    assert (tmp_path / "clean.csv").exists()


def test_measure(corpus_csv, tmp_path):
    out = tmp_path / "m.csv"
    assert main(["measure", "--data", str(corpus_csv), "--config", str(corpus_csv.with_suffix(".ini")),
                 "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("source,target,hypothesis,t_yx,t_x,ratio")
    assert len(lines) == 1 + 2 * 12


def test_generalize(corpus_csv, tmp_path):
    out = tmp_path / "g.json"
    rc = main(["generalize", "--data", str(corpus_csv), "--config", str(corpus_csv.with_suffix(".ini")),
               "--hypothesis", "H2", "--source", "S01", "--target", "S02", "--bounds=-1.5,1.5",
               "--out", str(out)])
    assert rc == 0
    res = json.loads(out.read_text())
    methods = [iv["method"] for iv in res["intervals"]]
    assert methods == ["IID", "CovShiftDR", "CovShiftEB", "Const", "Adaptive"]
    assert res["estimand"] == "Mean"


def test_generalize_unknown_site(corpus_csv):
    assert main(["generalize", "--data", str(corpus_csv), "--hypothesis", "H1", "--source", "S01",
                 "--target", "S99"]) == 3


def test_evaluate_and_scenario(corpus_csv, tmp_path):
    ini = str(corpus_csv.with_suffix(".ini"))
    assert main(["evaluate", "--data", str(corpus_csv), "--config", ini, "--out", str(tmp_path / "d")]) == 0
    summary = json.loads((tmp_path / "d" / "summary.json").read_text())
    assert summary["scenario"] == "Direct"
    assert main(["scenario", "--data", str(corpus_csv), "--config", ini, "--scenario", "OverSite",
                 "--permutations", "2", "--methods", "IID,Const,Adaptive", "--out", str(tmp_path / "s")]) == 0
    head = (tmp_path / "s" / "intervals.csv").read_text().splitlines()[0]
    assert head.endswith("permutation,step")


def test_evaluate_simulates_without_data(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text(CORPUS_INI + "[harness]\nmethods = IID, Const\n")
    assert main(["evaluate", "--config", str(ini), "--out", str(tmp_path / "o")]) == 0


def test_debug_flags(corpus_csv, tmp_path):
    out = tmp_path / "g.json"
    args = ["generalize", "--data", str(corpus_csv), "--hypothesis", "H2", "--source", "S01", "--target", "S02",
            "--methods", "CovShiftEB", "--out", str(out), "--force-unit-weights"]
    assert main(args) == 0
    res = json.loads(out.read_text())
    # unit weights reduce the EB centre to the source mean
    assert res["theta_w"] == pytest.approx(res["theta_source"], abs=1e-12)


def test_simulate_clt(tmp_path):
    ini = tmp_path / "clt.ini"
    ini.write_text("[randshift_sim]\nL = 2\nM = 100\nu_atoms = 4\nn_P = 100\nn_Q = 100\nreplicates = 50\n")
    out = tmp_path / "report.json"
    assert main(["simulate", "clt", "--config", str(ini), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert {"empirical_var", "theory_var", "ks_pvalue", "delta_M_sq", "kappa"} <= set(rep)


def test_config_errors_exit_2(tmp_path):
    bad_law = tmp_path / "law.ini"
    bad_law.write_text("[randshift_sim]\nweight_law = lognormal\n")
    assert main(["simulate", "clt", "--config", str(bad_law), "--out", str(tmp_path / "r.json")]) == 2
    bad_alpha = tmp_path / "alpha.ini"
    bad_alpha.write_text(CORPUS_INI + "[harness]\nalpha = 3\n")
    assert main(["evaluate", "--config", str(bad_alpha), "--out", str(tmp_path / "o")]) == 2
    assert main(["simulate", "clt", "--config", str(tmp_path / "missing.ini"), "--out", "x"]) == 2


def test_data_error_exit_3(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("site,hypothesis,t,x1\nA,H,1,0.5\n")
    assert main(["ingest", "--data", str(bad)]) == 3


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "shiftpi", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("ingest", "measure", "generalize", "evaluate", "scenario", "simulate"):
        assert cmd in r.stdout
