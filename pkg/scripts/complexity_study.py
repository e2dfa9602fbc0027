"""Iterations versus tolerance on the generated families, with a log-log slope per setting."""

import argparse
import csv

from regadmm.bench import complexity_fit, gen_eq_qp, gen_fused, gen_lasso
from regadmm.dradmm import DrAdmmConfig, run

FAMILIES = {
    "eq_qp": lambda seed: gen_eq_qp(50, 50, 30, seed),
    "lasso": lambda seed: gen_lasso(50, 30, 0.1, seed),
    "fused": lambda seed: gen_fused(50, 0.1, seed),
}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="complexity.csv")
    parser.add_argument("--seeds", type=int, default=3)
    parser.add_argument("--rho", default="1e-1,1e-2,1e-3,1e-4")
    args = parser.parse_args()
    rhos = [float(r) for r in args.rho.split(",")]
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["family", "seed", "theta", "alpha", "rho", "iterations", "slope"])
        for family, make in FAMILIES.items():
            for seed in range(args.seeds):
                P = make(seed)
                for theta, alpha in [(0.5, 0.0), (1.0, 0.0), (1.6, 10.0)]:
                    points = []
                    for rho in rhos:
                        cert, _ = run(P, DrAdmmConfig(theta=theta, alpha=alpha, rho=rho,
                                                      trace_enabled=False))
                        points.append((rho, cert.total_iters))
                    slope = complexity_fit(points).slope
                    for rho, iters in points:
                        writer.writerow([family, seed, theta, alpha, rho, iters, f"{slope:.4f}"])
                    print(f"{family} seed={seed} theta={theta} alpha={alpha} "
                          f"iterations={[n for _, n in points]} slope={slope:.3f}")


if __name__ == "__main__":
    main()
