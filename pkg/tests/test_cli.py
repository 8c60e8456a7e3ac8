import json
import shutil
import subprocess
import sys

import numpy as np
import pytest
from scipy import stats

from implicit_copulas.cli import main
from implicit_copulas.margins import margin_from_dict
from implicit_copulas.mcmc import read_csv, write_csv


def toml(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def table(path):
    return read_csv(path)


@pytest.fixture(scope="module")
def reg_fit(tmp_path_factory):
    out = tmp_path_factory.mktemp("reg") / "fit"
    rc = main(["fit", "--family", "regression", "--input", "bundled:regression",
               "--out", str(out), "--iters", "600", "--seed", "3"])
    assert rc == 0
    return out


def test_regression_fit_summary(reg_fit):
    summary = json.loads((reg_fit / "summary.json").read_text())
    rows = summary["table"]
    assert len(rows) == 5
    for r in rows:
        lo, hi = r["beta_ci95"]
        assert lo <= r["beta_mean"] <= hi
        assert 0 < r["accept_rate"] < 1
    manifest = json.loads((reg_fit / "manifest.json").read_text())
    assert set(manifest["artifacts"]) >= {"chain.csv", "chain.json", "model.json", "summary.json",
                                          "margin.json", "manifest.json"}
    header, vals = table(reg_fit / "chain.csv")
    assert header[0] == "chain" and vals.shape == (480, 12)


def test_ucsv_fit_smoke(tmp_path):
    out = tmp_path / "ucsv"
    assert main(["fit", "--family", "ucsv", "--input", "bundled:ucsv", "--out", str(out),
                 "--iters", "60"]) == 0
    for name in ("chain.csv", "chain.json", "model.json", "summary.json", "margin.json"):
        assert (out / name).exists()
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["parameters"]) == {"rho_mu", "sigma2_mu", "rho_zeta", "sigma2_zeta"}
    grid_out = tmp_path / "grid"
    assert main(["density-grid", "--input", str(out), "--out", str(grid_out), "--grid-n", "6"]) == 0
    assert table(grid_out / "density_grid.csv")[1].shape == (36, 4)


def test_missing_input_leaves_nothing(tmp_path, capsys):
    out = tmp_path / "never"
    rc = main(["fit", "--family", "gaussian", "--input", str(tmp_path / "nope.csv"),
               "--out", str(out)])
    assert rc != 0
    assert not out.exists()
    assert list(tmp_path.iterdir()) == []
    assert "not found" in capsys.readouterr().err


def test_config_errors(tmp_path):
    assert main(["fit", "--input", "bundled:ucsv", "--out", str(tmp_path / "a")]) == 2
    bad = toml(tmp_path, "iters = [")
    assert main(["simulate", "--config", bad, "--out", str(tmp_path / "b")]) == 2
    assert main(["simulate", "--out", str(tmp_path / "c"), "--grid-n", "1"]) == 2


GAUSS = """
n = {n}
[model]
family = "gaussian"
omega = [[1.0, 0.5], [0.5, 1.0]]
"""


def test_simulate_spearman(tmp_path):
    cfg = toml(tmp_path, GAUSS.format(n=100_000))
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "s"), "--seed", "1"]) == 0
    header, u = table(tmp_path / "s" / "simulated.csv")
    assert header == ["u1", "u2"]
    assert stats.spearmanr(u[:, 0], u[:, 1])[0] == pytest.approx(0.4826, abs=0.01)


def test_simulate_empty_and_deterministic(tmp_path):
    assert main(["simulate", "--config", toml(tmp_path, GAUSS.format(n=0)),
                 "--out", str(tmp_path / "e")]) == 0
    assert (tmp_path / "e" / "simulated.csv").read_text() == "u1,u2\n"
    cfg = toml(tmp_path, GAUSS.format(n=50), "b.toml")
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "r1"), "--seed", "4"])
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "r2"), "--seed", "4"])
    a = (tmp_path / "r1" / "simulated.csv").read_bytes()
    assert a == (tmp_path / "r2" / "simulated.csv").read_bytes()
    first = a.decode().splitlines()[1].split(",")[0]
    assert float(first) == float(repr(float(first)))


UCSV = """
[model]
family = "ucsv"
rho_mu = {rm}
sigma2_mu = {s2m}
rho_zeta = {rz}
sigma2_zeta = {s2z}
"""


def test_density_grid_cases(tmp_path):
    indep = toml(tmp_path, UCSV.format(rm=0.5, s2m=1e-9, rz=0.5, s2z=1e-9), "i.toml")
    assert main(["density-grid", "--config", indep, "--out", str(tmp_path / "i"),
                 "--grid-n", "10"]) == 0
    _, g = table(tmp_path / "i" / "density_grid.csv")
    assert np.allclose(g[:, 2], 1.0, atol=1e-3)
    assert main(["density-grid", "--config", indep, "--out", str(tmp_path / "two"),
                 "--grid-n", "2"]) == 0
    assert table(tmp_path / "two" / "density_grid.csv")[1].shape[0] == 4
    vol = toml(tmp_path, UCSV.format(rm=0.9, s2m=0.05, rz=0.95, s2z=0.1), "v.toml")
    assert main(["density-grid", "--config", vol, "--out", str(tmp_path / "v"),
                 "--grid-n", "50"]) == 0
    _, g = table(tmp_path / "v" / "density_grid.csv")
    c = g[:, 2].reshape(50, 50)
    assert c[0, 0] > c[25, 25]


def test_predict_sweep_blocks(reg_fit, tmp_path):
    cfg = toml(tmp_path, '[predict.sweep]\ncovariate = "x3"\n'
               'quantiles = [0.1, 0.3, 0.5, 0.7, 0.9]\n')
    assert main(["predict", "--input", str(reg_fit), "--config", cfg,
                 "--out", str(tmp_path / "p")]) == 0
    header, v = table(tmp_path / "p" / "predictive.csv")
    assert header == ["block", "covariate", "quantile", "x_value", "y", "f_bayes", "f_point"]
    assert sorted(set(v[:, 0])) == [1, 2, 3, 4, 5]
    for b in range(1, 6):
        blk = v[v[:, 0] == b]
        for col in (5, 6):
            assert np.trapezoid(blk[:, col], blk[:, 4]) == pytest.approx(1.0, abs=1e-2)


def test_predict_zero_shrunk_chain_is_margin(reg_fit, tmp_path):
    art = tmp_path / "zero"
    shutil.copytree(reg_fit, art)
    header, v = table(art / "chain.csv")
    v = v[:10].copy()
    v[:, 1:] = 0.0
    v[:, 6:11] = 1e-12
    v[:, 11] = 1.0
    write_csv(art / "chain.csv", header, v)
    assert main(["predict", "--input", str(art), "--out", str(tmp_path / "p")]) == 0
    _, out = table(tmp_path / "p" / "predictive.csv")
    g = margin_from_dict(json.loads((art / "model.json").read_text())["margins"][0])
    assert np.allclose(out[:, 1], g.pdf(out[:, 0]), rtol=1e-8)
    assert np.allclose(out[:, 2], g.pdf(out[:, 0]), rtol=1e-8)


def test_point_fits_and_margin_fit(tmp_path):
    rng = np.random.default_rng(5)
    z = rng.multivariate_normal([0, 0, 0], [[1, .5, .3], [.5, 1, .4], [.3, .4, 1]], 800)
    write_csv(tmp_path / "d.csv", ["a", "b", "c"], np.exp(z))
    for fam in ("gaussian", "t", "factor"):
        out = tmp_path / fam
        assert main(["fit", "--family", fam, "--input", str(tmp_path / "d.csv"),
                     "--out", str(out)]) == 0
        model = json.loads((out / "model.json").read_text())["model"]
        assert model["family"] == fam
        assert not (out / "chain.csv").exists()
    cfg = toml(tmp_path, 'table_n = 20\n[margin]\nfamily = "normal"\n')
    assert main(["margin-fit", "--input", str(tmp_path / "d.csv"), "--config", cfg,
                 "--out", str(tmp_path / "m")]) == 0
    header, v = table(tmp_path / "m" / "margin_table.csv")
    assert header == ["column", "p", "q", "logf"] and sorted(set(v[:, 0])) == [1, 2, 3]


def test_time_series_predict(tmp_path):
    rng = np.random.default_rng(6)
    z = np.zeros(400)
    for t in range(1, 400):
        z[t] = 0.6 * z[t - 1] + rng.standard_normal()
    write_csv(tmp_path / "ar.csv", ["y"], z[:, None])
    assert main(["fit", "--family", "ar", "--input", str(tmp_path / "ar.csv"),
                 "--out", str(tmp_path / "fit")]) == 0
    rho = json.loads((tmp_path / "fit" / "summary.json").read_text())["rho"][0]
    assert rho == pytest.approx(0.6, abs=0.1)
    assert main(["predict", "--input", str(tmp_path / "fit"), "--out", str(tmp_path / "p")]) == 0
    header, v = table(tmp_path / "p" / "predictive.csv")
    assert header == ["y", "f"]
    assert np.trapezoid(v[:, 1], v[:, 0]) == pytest.approx(1.0, abs=0.01)


def test_manifest_records_config(reg_fit):
    m = json.loads((reg_fit / "manifest.json").read_text())
    assert m["config"]["seed"] == 3 and m["config"]["iters"] == 600
    assert m["command"] == "fit" and m["version"]


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "implicit_copulas.cli", "simulate", "--out",
                          str(tmp_path / "x")], capture_output=True, text=True)
    assert res.returncode == 2
    assert "model" in res.stderr
