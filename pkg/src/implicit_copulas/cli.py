"""Command-line front door: fit, simulate, density-grid, predict, margin-fit.

Every command writes into a scratch directory next to ``--out`` and moves the
files into place only when it succeeds, so a failed run leaves nothing behind.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import platform
import shutil
import subprocess
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy
from scipy import special

from . import __version__
from .copula_core import (CorrelationMatrix, GaussianCopula, TCopula, fit_gaussian_copula,
                          fit_t_copula, model_from_dict, simulate_copula_model)
from .errors import (CapacityError, CopulaError, DomainError, FitError, MatrixError,
                     NumericError, RunError)
from .factor import FactorCopula, factor_fit_em
from .margins import P_CLAMP, build_interp_table, fit_margin, margin_from_dict
from .mcmc import Chain, chain_summary, read_chain_csv, read_csv, spawn_rngs, write_csv
from .regression import (RegressionCopula, RegressionData, default_y_grid, reg_mcmc_fit,
                         reg_predict_density)
from .skewt import SkewTCopula, SkewTCopulaParams, SkewTPrior, skewt_mcmc_fit
from .timeseries import (ArCopula, UcsvCopula, UcsvParams, UcsvSamplerConfig, VarCopula,
                         ar_fit, state_summary, ts_predictive_density, ucsv_mcmc_fit, var_fit)
from .timeseries.ucsv import PARAM_NAMES, ucsv_bivariate_density_grid

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
DEFAULT_SEED = 20240917
FAMILIES = ("gaussian", "t", "skewt", "factor", "ar", "var", "ucsv", "regression")
MCMC_FAMILIES = ("skewt", "ucsv", "regression")
TS_FAMILIES = ("ar", "var", "ucsv")
COMMANDS = ("fit", "simulate", "density-grid", "predict", "margin-fit")
DATA_DIR = Path(__file__).parent / "data"
BUNDLED = {"ucsv": "ucsv_inflation.csv", "regression": "regression_synth.csv"}


class ConfigError(CopulaError):
    pass


class DataError(CopulaError):
    pass


@dataclass
class RunConfig:
    command: str
    input: str | None = None
    out: str = "out"
    family: str | None = None
    margin: dict = field(default_factory=lambda: {"family": "kde"})
    iters: int = 2000
    burnin: float = 0.2
    seed: int = DEFAULT_SEED
    chains: int = 1
    grid_n: int = 50
    options: dict = field(default_factory=dict)

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.family is not None and self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; choose from {', '.join(FAMILIES)}")
        if self.command == "fit" and self.family is None:
            raise ConfigError("fit needs --family")
        if not isinstance(self.iters, int) or self.iters < 0:
            raise ConfigError("iters must be a non-negative integer")
        if not 0.0 <= self.burnin < 1.0:
            raise ConfigError("burnin is a fraction in [0, 1)")
        if self.chains < 1:
            raise ConfigError("chains must be at least 1")
        if self.grid_n < 2:
            raise ConfigError("grid-n must be at least 2")
        if not isinstance(self.margin, dict) or "family" not in self.margin:
            raise ConfigError("margin spec needs a family")
        return self

    @property
    def burn_in_iters(self):
        return int(math.floor(self.iters * self.burnin))

    def resolved_input(self) -> Path | None:
        if self.input is None:
            return None
        if self.input.startswith("bundled:"):
            name = self.input.split(":", 1)[1]
            if name not in BUNDLED:
                raise ConfigError(f"no bundled dataset {name!r}; available: {', '.join(BUNDLED)}")
            path = DATA_DIR / BUNDLED[name]
        else:
            path = Path(self.input)
        if not path.exists():
            raise DataError(f"input not found: {path}")
        return path

    def to_dict(self):
        return asdict(self)


def load_config(args) -> RunConfig:
    """TOML file first, then command-line flags on top."""
    raw = {}
    if args.config:
        try:
            with open(args.config, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {args.config}: {exc}") from None
    known = {k: raw.pop(k) for k in list(raw) if k in RunConfig.__dataclass_fields__}
    known.pop("command", None)
    opts = dict(known.pop("options", {}))
    opts.update(raw)
    flags = {"input": args.input, "out": args.out, "family": args.family, "iters": args.iters,
             "burnin": args.burnin, "seed": args.seed, "chains": args.chains,
             "grid_n": args.grid_n}
    known.update({k: v for k, v in flags.items() if v is not None})
    try:
        cfg = RunConfig(command=args.command, options=opts, **known)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def version_string() -> str:
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if res.returncode == 0 and res.stdout.strip():
            return f"{__version__}+g{res.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _dump(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, allow_nan=True)
        fh.write("\n")


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise DataError(f"missing artifact: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: {exc}") from None


def _read_input(cfg: RunConfig):
    path = cfg.resolved_input()
    if path is None:
        raise ConfigError(f"{cfg.command} needs --input")
    try:
        header, values = read_csv(path)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if values.shape[0] == 0:
        raise DataError(f"{path}: no data rows")
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: non-finite values")
    return header, values


def _fit_margins(cfg, cols):
    opts = {k: v for k, v in cfg.margin.items() if k != "family"}
    try:
        return [fit_margin(c, cfg.margin["family"], **opts) for c in cols.T]
    except DomainError as exc:
        raise ConfigError(str(exc)) from None


def _to_u(margins, cols):
    return np.column_stack([np.clip(m.cdf(c), P_CLAMP, 1 - P_CLAMP)
                            for m, c in zip(margins, cols.T)])


# --------------------------------------------------------------------------
# Chains
# --------------------------------------------------------------------------

def _run_chain(family, payload, iters, burn_in, seed, options):
    rng = np.random.default_rng(seed)
    if family == "skewt":
        prior = SkewTPrior(**options.get("prior", {}))
        return skewt_mcmc_fit(payload, prior, iters, rng, burn_in=burn_in, seed=seed)
    if family == "ucsv":
        conf = UcsvSamplerConfig(**options.get("sampler", {}))
        return ucsv_mcmc_fit(payload[:, 0], iters, rng, burn_in=burn_in, config=conf, seed=seed)
    return reg_mcmc_fit(payload, iters, rng, burn_in=burn_in, seed=seed)


def _run_chains(cfg, payload):
    seeds = [int(r.integers(2 ** 63 - 1)) for r in spawn_rngs(cfg.seed, cfg.chains)]
    args = [(cfg.family, payload, cfg.iters, cfg.burn_in_iters, s, cfg.options) for s in seeds]
    if cfg.chains == 1:
        return [_run_chain(*args[0])]
    workers = min(cfg.chains, os.cpu_count() or 1)
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_chain, *zip(*args)))


def _pool(chains) -> Chain:
    first = chains[0]
    acc, prop = {}, {}
    for c in chains:
        for k, v in c.proposed.items():
            prop[k] = prop.get(k, 0) + v
            acc[k] = acc.get(k, 0) + c.accepted.get(k, 0)
    return Chain(first.names, np.vstack([c.draws for c in chains]), accepted=acc, proposed=prop,
                 blocks=first.blocks, burn_in=first.burn_in, seed=first.seed, meta=first.meta)


def _write_chains(tmp, chains):
    pooled = _pool(chains)
    idx = np.concatenate([np.full(len(c), k + 1) for k, c in enumerate(chains)])
    write_csv(tmp / "chain.csv", ["chain"] + pooled.names,
              np.column_stack([idx, pooled.draws]) if len(pooled) else np.empty((0, 1 + len(pooled.names))))
    side = pooled.sidecar()
    side["chains"] = [c.sidecar() for c in chains]
    _dump(tmp / "chain.json", side)
    return pooled


def _load_chain(art: Path) -> Chain:
    try:
        ch = read_chain_csv(art / "chain.csv", art / "chain.json")
    except FileNotFoundError as exc:
        raise DataError(f"missing artifact: {exc.filename}") from None
    if ch.names and ch.names[0] == "chain":
        ch = Chain(ch.names[1:], ch.draws[:, 1:], accepted=ch.accepted, proposed=ch.proposed,
                   blocks=ch.blocks, burn_in=ch.burn_in, seed=ch.seed, meta=ch.meta)
    return ch


def _summary(chain: Chain):
    return chain_summary(chain) if len(chain) else {}


def _posterior_mean(chain: Chain, prefix_names):
    return {n: float(chain[n].mean()) for n in prefix_names}


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_fit(cfg: RunConfig, tmp: Path):
    header, data = _read_input(cfg)
    fam = cfg.family
    opts = cfg.options
    art = {"family": fam, "columns": header}
    summary = {"family": fam, "n_obs": int(data.shape[0])}

    if fam == "regression":
        if data.shape[1] < 2:
            raise DataError("regression input needs y and at least one covariate")
        margins = _fit_margins(cfg, data[:, :1])
        rd = RegressionData(data[:, 1:], data[:, 0], margins[0],
                            standardize=bool(opts.get("standardize", True)))
        chains = _run_chains(cfg, rd)
        pooled = _write_chains(tmp, chains)
        summ = _summary(pooled)
        table = []
        for j, name in enumerate(header[1:]):
            b, lam = summ.get(f"beta_{j + 1}"), summ.get(f"lambda_{j + 1}")
            if b is None:
                continue
            table.append({"covariate": name, "beta_mean": b["mean"],
                          "beta_ci95": [b["q025"], b["q975"]], "lambda_mean": lam["mean"],
                          "lambda_ci95": [lam["q025"], lam["q975"]],
                          "accept_rate": lam["accept_rate"]})
        summary.update(table=table, parameters=summ, accept_rates=pooled.accept_rates())
        lam_hat = (np.array([pooled[f"lambda_{j + 1}"].mean() for j in range(rd.p)])
                   if len(pooled) else np.full(rd.p, 0.5))
        art["model"] = RegressionCopula(rd.X, lam_hat).to_dict()
        art.update(covariates=header[1:], center=rd.center.tolist(), scale=rd.scale.tolist(),
                   medians=np.median(data[:, 1:], axis=0).tolist(),
                   training_x=data[:, 1:].tolist())
    else:
        if fam in ("ucsv", "ar") and data.shape[1] != 1:
            raise DataError(f"{fam} input must have exactly one series column")
        margins = _fit_margins(cfg, data)
        u = _to_u(margins, data)
        T = u.shape[0]
        if fam in TS_FAMILIES:
            art["history_u"] = u.tolist()
        if fam in MCMC_FAMILIES:
            chains = _run_chains(cfg, u)
            pooled = _write_chains(tmp, chains)
            summ = _summary(pooled)
            summary.update(parameters=summ, accept_rates=pooled.accept_rates())
            if fam == "ucsv":
                if len(pooled):
                    par = UcsvParams.from_dict(_posterior_mean(pooled, PARAM_NAMES))
                    summary["states"] = state_summary(chains[0])
                    art["model"] = UcsvCopula(par, T).to_dict()
            elif len(pooled):
                m = u.shape[1]
                g = np.eye(m)
                for i in range(m):
                    for j in range(i + 1, m):
                        g[i, j] = g[j, i] = pooled[f"gamma_{i + 1}_{j + 1}"].mean()
                delta = [pooled[f"delta_{j + 1}"].mean() for j in range(m)]
                par = SkewTCopulaParams(CorrelationMatrix(g), np.array(delta),
                                        float(pooled["nu"].mean()))
                art["model"] = SkewTCopula(par).to_dict()
        elif fam == "gaussian":
            model = GaussianCopula(fit_gaussian_copula(u))
            art["model"] = model.to_dict()
            summary["omega"] = art["model"]["omega"]
        elif fam == "t":
            par = fit_t_copula(u)
            art["model"] = TCopula(par.omega, par.nu).to_dict()
            summary.update(omega=par.omega.values.tolist(), nu=par.nu)
        elif fam == "factor":
            par = factor_fit_em(special.ndtri(u), int(opts.get("factors", 1)))
            art["model"] = FactorCopula(par).to_dict()
            summary.update(par.to_dict())
        elif fam == "ar":
            res = ar_fit(u[:, 0], int(opts.get("lag", 1)))
            art["model"] = ArCopula(res.params, T).to_dict()
            summary.update(rho=res.params.rho.tolist(), loglik=res.loglik)
        elif fam == "var":
            par = var_fit(u, int(opts.get("lag", 1)))
            art["model"] = VarCopula(par, T).to_dict()
            summary.update(par.to_dict())
    art["margins"] = [m.to_dict() for m in margins]
    _dump(tmp / "model.json", art)
    _dump(tmp / "margin.json", {"columns": header if fam != "regression" else header[:1],
                                "margins": art["margins"]})
    _dump(tmp / "summary.json", summary)


def _model_spec(cfg: RunConfig):
    """Model dict plus margins from an artifact (``--input``) or an inline ``[model]`` table."""
    if "model" in cfg.options:
        spec = dict(cfg.options["model"])
        margins = cfg.options.get("margins")
        return spec, margins, None
    path = cfg.resolved_input()
    if path is None:
        raise ConfigError(f"{cfg.command} needs --input (artifact) or a [model] table")
    art = _load_json(path / "model.json" if path.is_dir() else path)
    if "model" not in art:
        raise DataError("artifact has no fitted model (was the chain empty?)")
    return art["model"], art.get("margins"), art


def _build_model(spec):
    try:
        return model_from_dict(spec)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"incomplete model spec: {exc}") from None


def cmd_simulate(cfg: RunConfig, tmp: Path):
    spec, mspecs, _ = _model_spec(cfg)
    model = _build_model(spec)
    n = int(cfg.options.get("n", 1000))
    if n < 0:
        raise ConfigError("n must be non-negative")
    margins = None
    if mspecs:
        margins = [margin_from_dict(d) for d in mspecs]
        if len(margins) == 1:
            margins = margins[0]
        elif model.dim % len(margins) == 0:
            margins = [margins[j % len(margins)] for j in range(model.dim)]
    rng = np.random.default_rng(cfg.seed)
    draws = simulate_copula_model(model, margins, n, rng=rng)
    tag = "u" if margins is None else "y"
    write_csv(tmp / "simulated.csv", [f"{tag}{j + 1}" for j in range(model.dim)], draws)


def cmd_density_grid(cfg: RunConfig, tmp: Path):
    spec, _, _ = _model_spec(cfg)
    if spec.get("family") != "ucsv":
        raise ConfigError("density-grid needs a ucsv model")
    try:
        par = UcsvParams.from_dict(spec)
    except KeyError as exc:
        raise ConfigError(f"incomplete ucsv parameters: {exc}") from None
    g = ucsv_bivariate_density_grid(par, cfg.grid_n, n_quad=int(cfg.options.get("n_quad", 50)),
                                    lag=int(cfg.options.get("lag", 1)))
    cols = ["u1", "u2", "c", "log_c"]
    write_csv(tmp / "density_grid.csv", cols,
              np.column_stack([np.ravel(g[k]) for k in cols]))


def _regression_predict(cfg, art, margin, tmp):
    chain = _load_chain(Path(cfg.resolved_input()))
    if len(chain) == 0:
        raise DataError("chain is empty; nothing to predict from")
    pred = cfg.options.get("predict", {})
    y_grid = np.asarray(pred["y_grid"], float) if "y_grid" in pred else default_y_grid(
        margin, int(pred.get("n_grid", 512)))
    medians = np.asarray(art["medians"], float)
    if "sweep" in pred:
        sw = pred["sweep"]
        cov = sw["covariate"]
        j = art["covariates"].index(cov) if isinstance(cov, str) else int(cov)
        if not 0 <= j < medians.size:
            raise ConfigError(f"no covariate {cov!r}")
        qs = np.asarray(sw.get("quantiles", [0.1, 0.25, 0.5, 0.75, 0.9]), float)
        xj = np.quantile(np.asarray(art["training_x"], float)[:, j], qs)
        rows = []
        for b, (q, v) in enumerate(zip(qs, xj)):
            x = medians.copy()
            x[j] = v
            out = reg_predict_density(x, chain, margin, y_grid)
            k = y_grid.size
            rows.append(np.column_stack([np.full(k, b + 1), np.full(k, j + 1), np.full(k, q),
                                         np.full(k, v), out["y"], out["bayes"], out["point"]]))
        write_csv(tmp / "predictive.csv",
                  ["block", "covariate", "quantile", "x_value", "y", "f_bayes", "f_point"],
                  np.vstack(rows))
        return
    xs = np.atleast_2d(np.asarray(pred.get("x_new", medians), float))
    if xs.shape[1] != medians.size:
        raise ConfigError(f"x_new needs {medians.size} covariate values")
    if xs.shape[0] == 1:
        out = reg_predict_density(xs[0], chain, margin, y_grid)
        write_csv(tmp / "predictive.csv", ["y", "f_bayes", "f_point"],
                  np.column_stack([out["y"], out["bayes"], out["point"]]))
        return
    rows = []
    for b, x in enumerate(xs):
        out = reg_predict_density(x, chain, margin, y_grid)
        rows.append(np.column_stack([np.full(y_grid.size, b + 1), out["y"], out["bayes"],
                                     out["point"]]))
    write_csv(tmp / "predictive.csv", ["block", "y", "f_bayes", "f_point"], np.vstack(rows))


def cmd_predict(cfg: RunConfig, tmp: Path):
    path = cfg.resolved_input()
    if path is None or not path.is_dir():
        raise ConfigError("predict needs --input pointing at a fit output directory")
    art = _load_json(path / "model.json")
    if "model" not in art:
        raise DataError("artifact has no fitted model")
    margins = [margin_from_dict(d) for d in art["margins"]]
    fam = art["family"]
    if fam == "regression":
        _regression_predict(cfg, art, margins[0], tmp)
        return
    if fam not in TS_FAMILIES:
        raise ConfigError(f"predict supports regression and time-series fits, not {fam!r}")
    pred = cfg.options.get("predict", {})
    if "history" in pred:
        hist_y = np.atleast_2d(np.asarray(pred["history"], float))
        if fam != "var":
            hist_y = hist_y.reshape(-1, 1)
        hist = _to_u(margins, hist_y)
    else:
        hist = np.asarray(art["history_u"], float)
    model = _build_model(art["model"])
    rng = np.random.default_rng(cfg.seed)
    n_grid = int(pred.get("n_grid", 512))
    if fam == "var":
        grids = np.array([default_y_grid(m, n_grid) for m in margins])
        f = ts_predictive_density(model, hist, margins, grids, rng=rng)
        rows = [np.column_stack([np.full(n_grid, j + 1), grids[j], f[j]])
                for j in range(len(margins))]
        write_csv(tmp / "predictive.csv", ["series", "y", "f"], np.vstack(rows))
        return
    y = (np.asarray(pred["y_grid"], float) if "y_grid" in pred
         else default_y_grid(margins[0], n_grid))
    f = ts_predictive_density(model, hist[:, 0], margins[0], y, rng=rng,
                              n_particles=int(pred.get("particles", 2000)))
    write_csv(tmp / "predictive.csv", ["y", "f"], np.column_stack([y, f]))


def cmd_margin_fit(cfg: RunConfig, tmp: Path):
    header, data = _read_input(cfg)
    margins = _fit_margins(cfg, data)
    _dump(tmp / "margin.json", {"columns": header, "margins": [m.to_dict() for m in margins]})
    table_n = cfg.options.get("table_n")
    if table_n:
        rows = []
        for j, m in enumerate(margins):
            t = build_interp_table(m.cdf, m.logpdf, int(table_n), quantile_fn=m.quantile)
            k = t.grid_p.size
            rows.append(np.column_stack([np.full(k, j + 1), t.grid_p, t.grid_q, t.grid_logf]))
        write_csv(tmp / "margin_table.csv", ["column", "p", "q", "logf"], np.vstack(rows))


HANDLERS = {"fit": cmd_fit, "simulate": cmd_simulate, "density-grid": cmd_density_grid,
            "predict": cmd_predict, "margin-fit": cmd_margin_fit}


def run(cfg: RunConfig) -> Path:
    """Execute one command; artifacts appear in ``cfg.out`` only on success."""
    out = Path(cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}-", dir=out.parent))
    try:
        HANDLERS[cfg.command](cfg, tmp)
        _dump(tmp / "manifest.json", {
            "command": cfg.command, "version": version_string(), "config": cfg.to_dict(),
            "wall_time_seconds": time.perf_counter() - t0, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__,
            "artifacts": sorted(p.name for p in tmp.iterdir()) + ["manifest.json"]})
        out.mkdir(exist_ok=True)
        for p in tmp.iterdir():
            os.replace(p, out / p.name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--family", choices=FAMILIES)
    common.add_argument("--input", help="CSV file, fit output directory, or bundled:<name>")
    common.add_argument("--out", help="output directory")
    common.add_argument("--iters", type=int)
    common.add_argument("--burnin", type=float, help="burn-in fraction of iters")
    common.add_argument("--seed", type=int)
    common.add_argument("--chains", type=int)
    common.add_argument("--grid-n", dest="grid_n", type=int)
    common.add_argument("--config", help="TOML run configuration")
    parser = argparse.ArgumentParser(prog="implicit-copulas",
                                     description="Fit, simulate and predict with implicit copulas.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, RunError, MatrixError, FitError, CapacityError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, DomainError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CopulaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
