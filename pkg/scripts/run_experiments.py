"""Run the named width sweeps and write JSON/CSV reports plus SVG plots.

    python scripts/run_experiments.py one_d_tanh variance_relu --out results/
    python scripts/run_experiments.py all --seed 7
"""

import argparse
import logging
import time
from pathlib import Path

import numpy as np

from nngp_gauge.harness import SweepConfig, persist, run_sweep
from nngp_gauge.net_sampler import InputSet, NetworkConfig
from nngp_gauge.operator_lab import Grid
from nngp_gauge.svgplot import report_svg

RELU = NetworkConfig.uniform(2, 1, 16, "relu", c_w=2.0)
TANH = NetworkConfig.uniform(2, 1, 16, "tanh", c_w=1.0)
ONE_D = ("tv", "w1", "lower", "tv_bound", "w1_bound")
X3 = InputSet(np.array([[1.0, 0.0, 0.0], [0.6, 0.8, 0.0], [-0.5, 0.5, 0.7]]))


def experiments(seed):
    w5 = (16, 32, 64, 128, 256)
    return {
        "one_d_relu": lambda: SweepConfig(RELU, w5, 200_000, ONE_D, base_seed=seed),
        "one_d_tanh": lambda: SweepConfig(TANH, w5, 200_000, ONE_D, base_seed=seed),
        "variance_relu": lambda: SweepConfig(RELU, w5, 20_000, ("var_sigma", "mean_gap"),
                                             base_seed=seed),
        "variance_tanh": lambda: SweepConfig(TANH, w5, 20_000, ("var_sigma", "mean_gap"),
                                             base_seed=seed),
        "cumulants_tanh": lambda: SweepConfig(TANH, (8, 16, 32, 64), 1_000_000,
                                              ("kappa3", "kappa4"), base_seed=seed),
        "finite_d_tanh": lambda: SweepConfig(
            NetworkConfig.uniform(2, 3, 64, "tanh", c_w=1.0), (64, 128, 256, 512, 1024),
            1_000_000, ("convex_bound_rhs", "bures_w2"), inputs=X3, base_seed=seed),
        "functional_tanh": lambda: SweepConfig(TANH, (32, 64, 128, 256, 512), 20_000,
                                               ("d2_rhs", "w2_rhs"),
                                               grid=Grid((1.0,), 0.5, 64), base_seed=seed),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("names", nargs="+", help="experiment names or 'all'")
    ap.add_argument("--out", default="results")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    table = experiments(args.seed)
    names = list(table) if args.names == ["all"] else args.names
    unknown = set(names) - set(table)
    if unknown:
        ap.error(f"unknown experiments {sorted(unknown)}; choose from {sorted(table)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in names:
        t0 = time.time()
        rep = run_sweep(table[name]())
        persist(rep, out / f"{name}.json")
        (out / f"{name}.svg").write_text(report_svg(rep, name))
        for m, f in rep.fits.items():
            slope = "n/a" if f["slope"] is None else f"{f['slope']:.3f}"
            print(f"{name:16s} {m:17s} slope {slope:>7s} target {f['target']} "
                  f"{'PASS' if f['pass'] else 'FAIL'}")
        print(f"{name}: {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
