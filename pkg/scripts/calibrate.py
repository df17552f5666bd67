"""Monte Carlo size and power of the hand-rolled tests.

Prints rejection rates so they can be compared against nominal levels.
Each row takes a few seconds at the default replication count.
"""
import argparse

import numpy as np
from scipy.signal import lfilter

from nml.baseline import diebold_mariano
from nml.causality import granger_ftest
from nml.stattests import adf_test


def rate(fn, reps, seed0=0):
    return float(np.mean([fn(np.random.default_rng(seed0 + s)) for s in range(reps)]))


def main(reps: int):
    rows = {
        "granger size (n=500, lag 1, 5%)":
            lambda r: granger_ftest(r.standard_normal(500), r.standard_normal(500), 1).p_value < 0.05,
        "granger size (n=200, lag 4, 5%)":
            lambda r: granger_ftest(r.standard_normal(200), r.standard_normal(200), 4).p_value < 0.05,
        "adf size on random walk (5%)":
            lambda r: adf_test(np.cumsum(r.standard_normal(500))).p_value < 0.05,
        "adf power on white noise (5%)":
            lambda r: adf_test(r.standard_normal(500)).p_value < 0.05,
        "adf power on AR(1) 0.95 (5%)":
            lambda r: adf_test(lfilter([1.0], [1.0, -0.95], r.standard_normal(500))).p_value < 0.05,
        "dm size (n=100, 5%)":
            lambda r: diebold_mariano(r.standard_normal(100), r.standard_normal(100)).p_value < 0.05,
        "dm size (n=30, 5%)":
            lambda r: diebold_mariano(r.standard_normal(30), r.standard_normal(30)).p_value < 0.05,
        "dm power, variance 1 vs 2 (n=200, 1%)":
            lambda r: diebold_mariano(r.standard_normal(200), np.sqrt(2) * r.standard_normal(200)).p_value < 0.01,
    }
    width = max(map(len, rows))
    for name, fn in rows.items():
        print(f"{name:<{width}}  {rate(fn, reps):.4f}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--reps", type=int, default=1000)
    main(ap.parse_args().reps)
