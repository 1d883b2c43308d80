"""Compare the numba kernels with their pure-numpy twins.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from girdershm import kernels
from girdershm.simulate import crh380_train


def cases(rng: np.random.Generator):
    train = crh380_train(360.0)
    offsets, weights = train.axles()
    t = np.arange(2321) / 1000.0
    positions = np.ascontiguousarray(train.speed_ms * t[:, None] - offsets[None, :])
    x = rng.standard_normal(2320)
    coef = rng.standard_normal(94)
    return {
        "moving_load (2321 steps x 32 axles)": (
            lambda: kernels.moving_load_strain(positions, weights, 8.0, 32.0, 4.0, 12.0),
            lambda: kernels.np_moving_load_strain(positions, weights, 8.0, 32.0, 4.0, 12.0),
        ),
        "lag_matrix (n=2320, m=94)": (
            lambda: kernels.lag_matrix(x, 94),
            lambda: kernels.np_lag_matrix(x, 94),
        ),
        "ar_predict (n=2320, m=94)": (
            lambda: kernels.ar_predict(x, coef),
            lambda: kernels.np_ar_predict(x, coef),
        ),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    if not kernels.HAVE_NUMBA:
        print("numba is disabled; both columns time the numpy path")
    print(f"{'kernel':40s} {'numba us':>10s} {'numpy us':>10s} {'speedup':>8s}")
    for name, (fast, ref) in cases(np.random.default_rng(0)).items():
        fast()  # compile outside the timed region
        t_fast = min(timeit.repeat(fast, number=args.repeat, repeat=3)) / args.repeat
        t_ref = min(timeit.repeat(ref, number=args.repeat, repeat=3)) / args.repeat
        print(f"{name:40s} {t_fast * 1e6:10.1f} {t_ref * 1e6:10.1f} {t_ref / t_fast:8.2f}")


if __name__ == "__main__":
    main()
