"""Feasibility map of the analysis constants over an (alpha, theta) grid."""

import argparse

import numpy as np

from regadmm.bench import region_map, write_region_csv


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="region.csv")
    parser.add_argument("--alpha-max", type=float, default=100.0)
    parser.add_argument("--num", type=int, default=41)
    args = parser.parse_args()
    alphas = np.concatenate([[0.0], np.geomspace(1e-2, args.alpha_max, args.num - 1)])
    thetas = np.linspace(0.05, 1.99, args.num)
    rows = region_map(alphas.tolist(), thetas.tolist())
    write_region_csv(rows, args.out)
    inside = [r for r in rows if r["in_domain"]]
    print(f"{len(rows)} points, {len(inside)} inside the stepsize domain")
    print(f"smallest sigma: {min(r['sigma'] for r in inside):.4f}, "
          f"largest: {max(r['sigma'] for r in inside):.4f}")


if __name__ == "__main__":
    main()
