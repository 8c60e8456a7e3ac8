"""Bivariate UCSV copula density on a grid, for a persistent and a calm volatility process.

Writes CSV grids and, if matplotlib is installed, a two-panel contour plot.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from implicit_copulas.mcmc import write_csv  # noqa: E402
from implicit_copulas.timeseries import UcsvParams, ucsv_bivariate_density_grid  # noqa: E402

CASES = {
    "persistent": UcsvParams(0.95, 0.05, 0.95, 0.1),
    "calm": UcsvParams(0.95, 0.05, 0.3, 0.05),
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid-n", type=int, default=100)
    ap.add_argument("--out", default="density_grids")
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grids = {}
    for name, par in CASES.items():
        g = ucsv_bivariate_density_grid(par, args.grid_n)
        cols = ["u1", "u2", "c", "log_c"]
        write_csv(out / f"{name}.csv", cols, np.column_stack([g[k] for k in cols]))
        n = args.grid_n
        c = g["c"].reshape(n, n)
        print(f"{name:10s} c(corner)={c[0, 0]:8.3f}  c(centre)={c[n // 2, n // 2]:6.3f}")
        grids[name] = g
    try:
        import matplotlib.pyplot as plt
    except ImportError:
        return 0
    n = args.grid_n
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for ax, (name, g) in zip(axes, grids.items()):
        ax.contour(g["u1"].reshape(n, n), g["u2"].reshape(n, n), g["log_c"].reshape(n, n), 15)
        ax.set_title(name)
        ax.set_xlabel("u_t")
        ax.set_ylabel("u_t+1")
    fig.tight_layout()
    fig.savefig(out / "density_grid.png", dpi=120)
    return 0


if __name__ == "__main__":
    sys.exit(main())
