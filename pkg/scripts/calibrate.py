"""Seeded calibration study: coverage of 90% posterior intervals over replicates.

    python scripts/calibrate.py ucsv --reps 20
    python scripts/calibrate.py regression --reps 20
    python scripts/calibrate.py skewt --reps 20 --iters 3000
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from implicit_copulas.calibration import (regression_replicate, skewt_replicate,  # noqa: E402
                                          ucsv_replicate)
from implicit_copulas.timeseries.ucsv import PARAM_NAMES  # noqa: E402

NEEDED = {"ucsv": 15, "regression": 16, "skewt": 16}


def replicate(model, seed, iters):
    if model == "ucsv":
        return ucsv_replicate(seed, iters=iters), list(PARAM_NAMES)
    if model == "regression":
        return regression_replicate(seed, iters=iters)
    return skewt_replicate(seed, iters=iters), ["gamma_1_2", "delta_1", "delta_2", "nu"]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("model", choices=sorted(NEEDED))
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--iters", type=int, default=10_000)
    ap.add_argument("--first-seed", type=int, default=0)
    args = ap.parse_args(argv)

    total, names = None, None
    t0 = time.perf_counter()
    for k in range(args.reps):
        seed = args.first_seed + k
        covers, names = replicate(args.model, seed, args.iters)
        total = covers.astype(int) if total is None else total + covers
        print(f"seed {seed:3d}  {covers.astype(int)}  {time.perf_counter() - t0:7.0f}s", flush=True)
    need = NEEDED[args.model] * args.reps / 20
    print("\ncoverage out of", args.reps)
    for name, c in zip(names, total):
        print(f"  {name:12s} {c:3d}  {'ok' if c >= need else 'LOW'}")
    return 0 if np.all(total >= need) else 1


if __name__ == "__main__":
    sys.exit(main())
