"""Regenerate the bundled synthetic datasets with fixed seeds."""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from implicit_copulas.copula_core import simulate_copula_model  # noqa: E402
from implicit_copulas.margins import AsymLaplaceMargin, StudentTMargin  # noqa: E402
from implicit_copulas.mcmc import write_csv  # noqa: E402
from implicit_copulas.regression import simulate_regression_data  # noqa: E402
from implicit_copulas.timeseries import UcsvCopula, UcsvParams  # noqa: E402

DATA = Path(__file__).resolve().parents[1] / "src" / "implicit_copulas" / "data"


def inflation_like(T=240, seed=11):
    # quarterly-looking series with persistent level and volatility shifts
    model = UcsvCopula(UcsvParams(0.95, 0.05, 0.9, 0.2), length=T)
    margin = AsymLaplaceMargin(2.5, 0.6, 0.35)
    y = simulate_copula_model(model, margin, 1, rng=np.random.default_rng(seed))[0]
    write_csv(DATA / "ucsv_inflation.csv", ["inflation"], y[:, None])


def regression_synth(n=580, seed=12):
    rng = np.random.default_rng(seed)
    cov = 0.3 + 0.7 * np.eye(5)
    X = rng.standard_normal((n, 5)) @ np.linalg.cholesky(cov).T
    X = X * np.array([1.0, 2.0, 0.5, 1.0, 3.0]) + np.array([0.0, 1.0, -1.0, 5.0, 0.0])
    beta = np.array([0.8, -0.25, 0.6, 0.0, 0.0])
    Xs = (X - X.mean(axis=0)) / X.std(axis=0)
    y = simulate_regression_data(Xs, beta, rng, margin=StudentTMargin(4.0, 0.0, 1.0))
    write_csv(DATA / "regression_synth.csv", ["y", "x1", "x2", "x3", "x4", "x5"],
              np.column_stack([y, X]))


if __name__ == "__main__":
    DATA.mkdir(parents=True, exist_ok=True)
    inflation_like()
    regression_synth()
    print(f"wrote datasets to {DATA}")
