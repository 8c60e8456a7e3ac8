import re
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

CRITERIA = {
    1: "Gaussian/t log-density equals joint over product of margins (1e-10)",
    2: "Spearman rho of simulated Gaussian and AR(1) copulas (+-0.01)",
    3: "Bernoulli masses by differencing (1e-6) and DA frequencies (0.005)",
    4: "skew-t reduces to t at delta=0; augmentation marginalizes (1e-3)",
    5: "UCSV unit variance (+-0.01) and margin table vs empirical CDF (0.005)",
    6: "calibration coverage: UCSV >= 15/20, regression >= 16/20",
    7: "regression Woodbury, beta marginalization, predictive integrals",
    8: "regression fit n=580 p=5 10^4 iterations under 5 minutes",
    9: "interpolation tables: normal quantile error, monotone round trips",
    10: "simulated u-margins pass KS uniformity at 0.01 for every family",
}

_results: dict = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    k = int(m.group(1))
    if report.when == "call" or report.failed:
        _results[k] = _results.get(k, True) and report.passed


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for k, desc in CRITERIA.items():
        state = "not run" if k not in _results else ("PASS" if _results[k] else "FAIL")
        terminalreporter.write_line(f"criterion {k:2d}: {state:7s} {desc}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_correlation(m, rng, conc=None):
    a = rng.standard_normal((m, (conc or m) + 2))
    c = a @ a.T
    d = np.sqrt(np.diag(c))
    return c / np.outer(d, d)
