"""Iterations to a fixed tolerance as the stepsize theta approaches its upper bound."""

import argparse
import csv

import numpy as np

from regadmm.bench import gen_lasso
from regadmm.dradmm import DrAdmmConfig, run, stepsize_bound


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="stepsize.csv")
    parser.add_argument("--rho", type=float, default=1e-5)
    parser.add_argument("--alphas", default="0,1,10")
    args = parser.parse_args()
    P = gen_lasso(50, 30, 0.1, 0)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "theta", "bound", "iterations", "cycles"])
        for alpha in [float(a) for a in args.alphas.split(",")]:
            bound = stepsize_bound(alpha)
            for theta in np.linspace(0.2, bound - 1e-3, 12):
                cert, _ = run(P, DrAdmmConfig(theta=float(theta), alpha=alpha, rho=args.rho,
                                              trace_enabled=False))
                writer.writerow([alpha, f"{theta:.4f}", f"{bound:.6f}", cert.total_iters, cert.cycles])
                print(f"alpha={alpha} theta={theta:.3f} iterations={cert.total_iters}")


if __name__ == "__main__":
    main()
