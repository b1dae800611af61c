import sys

import numpy as np
import pytest

from shiftpi.data_model import SiteDataset


def make_site(X, Y, T=None, pi=None, site="S1", hyp="H1"):
    return SiteDataset(site, hyp, np.asarray(X, dtype=float), np.asarray(Y, dtype=float),
                       None if T is None else np.asarray(T), pi)


def linear_site(rng, n, L=2, shift=0.0, beta=(1.0, -0.5), noise=1.0, site="S1", hyp="H1", ate=False):
    X = rng.normal(shift, 1.0, (n, L))
    T = rng.integers(0, 2, n)
    Y = X @ np.asarray(beta[:L]) + noise * rng.standard_normal(n)
    if ate:
        Y = Y + T * (0.5 + X[:, 0])
    return SiteDataset(site, hyp, X, Y, T, 0.5 if ate else None)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_csv(path, text):
    path.write_text(text)
    return str(path)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
