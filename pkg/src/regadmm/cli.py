"""Command line driver.

Exit codes: 0 converged / certified, 2 non-convergence, 3 certification
failure, 4 configuration error.

Default presets for every generated family: beta=1, theta=1.6, alpha=10,
R=S=0.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import bench
from .certify import certify_run
from .dradmm import DrAdmmConfig, read_trace, run, write_trace
from .errors import ConfigError, NonConvergenceError, RegAdmmError
from .objectives import SeparableProblem, kkt_residual

EXIT_OK, EXIT_NONCONVERGED, EXIT_CERT_FAIL, EXIT_CONFIG = 0, 2, 3, 4

PRESET_NOTE = ("defaults per family: beta=1, theta=1.6, alpha=10, R=S=0 "
               "(a scaled-identity R/S is available via --rs scaled:r,s)")


def parse_grid(text):
    """'0,1,2.5' or 'start:stop:num' (inclusive linspace)."""
    if ":" in text:
        start, stop, num = text.split(":")
        return [float(v) for v in np.linspace(float(start), float(stop), int(num))]
    return [float(v) for v in text.split(",") if v.strip()]


def _summary(cert, problem):
    return {"status": "converged", "iterations": cert.total_iters, "cycles": cert.cycles,
            "mu": cert.mu, "residual": cert.residual,
            "kkt_residual": kkt_residual(problem, cert.x, cert.y, cert.gamma_tilde)}


def cmd_solve(args):
    problem = SeparableProblem.load(args.instance)
    R, S = bench.parse_rs(args.rs, problem)
    cfg = DrAdmmConfig(beta=args.beta, theta=args.theta, alpha=args.alpha, rho=args.rho,
                       R=R, S=S, max_cycles=args.max_cycles,
                       max_inner_iters=args.max_inner_iters, warm_start=not args.cold_restart)
    try:
        cert, trace = run(problem, cfg)
    except NonConvergenceError as exc:
        print(json.dumps({"status": "nonconverged", "message": str(exc)}))
        return EXIT_NONCONVERGED
    out = _summary(cert, problem)
    if args.trace:
        write_trace(args.trace, problem, cfg, trace, cert)
    report = certify_run(problem, cfg, trace, cert)
    out["certified"] = report.passed
    if args.solution:
        with open(args.solution, "w") as fh:
            json.dump({"x": cert.x.tolist(), "y": cert.y.tolist(),
                       "gamma": cert.gamma_tilde.tolist()}, fh)
    print(json.dumps(out))
    return EXIT_OK if report.passed else EXIT_CERT_FAIL


def cmd_sweep(args):
    spec = bench.SweepSpec.load(args.spec)
    if args.workers is not None:
        spec.workers = args.workers
    records = bench.run_sweep(spec, args.out)
    failed = [r for r in records if r.status != "converged"]
    uncertified = [r for r in records if r.cert_passed is False]
    print(json.dumps({"runs": len(records), "failed": len(failed),
                      "uncertified": len(uncertified), "out": args.out}))
    if failed:
        return EXIT_NONCONVERGED
    return EXIT_CERT_FAIL if uncertified else EXIT_OK


def cmd_certify(args):
    problem, cfg, trace, cert = read_trace(args.trace)
    report = certify_run(problem, cfg, trace, cert, d0_bound=args.d0)
    with open(args.report, "w") as fh:
        fh.write(report.to_text())
    print(f"certification {'PASS' if report.passed else 'FAIL'}")
    return EXIT_OK if report.passed else EXIT_CERT_FAIL


def cmd_region(args):
    rows = bench.region_map(parse_grid(args.alpha_grid), parse_grid(args.theta_grid))
    bench.write_region_csv(rows, args.out)
    print(json.dumps({"points": len(rows), "in_domain": sum(r["in_domain"] for r in rows)}))
    return EXIT_OK


def cmd_generate(args):
    params = json.loads(args.params) if args.params else {}
    params.setdefault("seed", args.seed)
    problem = bench.GENERATORS[args.family](**params)
    problem.save(args.out)
    print(json.dumps({"instance": problem.name, "n": problem.n, "p": problem.p, "m": problem.m}))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="regadmm", description=__doc__.split("\n")[0],
                                     epilog=PRESET_NOTE)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one instance file", epilog=PRESET_NOTE)
    p.add_argument("--instance", required=True)
    p.add_argument("--theta", type=float, default=1.6)
    p.add_argument("--alpha", type=float, default=10.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--rho", type=float, default=1e-6)
    p.add_argument("--rs", default="zero", help="zero | scaled:r,s")
    p.add_argument("--trace", help="write the iterate trace (JSON lines)")
    p.add_argument("--solution", help="write the certified point (JSON)")
    p.add_argument("--max-cycles", type=int, default=60)
    p.add_argument("--max-inner-iters", type=int, default=10**6)
    p.add_argument("--cold-restart", action="store_true",
                   help="restart every cycle from z0 instead of the last iterate")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="run a parameter sweep from a JSON spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("certify", help="re-check a stored trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--d0", type=float, help="upper bound on the Q-distance from z0 to the solution set")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("region", help="feasibility map of the analysis constants")
    p.add_argument("--alpha-grid", required=True, help="comma list or start:stop:num")
    p.add_argument("--theta-grid", required=True, help="comma list or start:stop:num")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_region)

    p = sub.add_parser("generate", help="write a synthetic instance file")
    p.add_argument("--family", required=True, choices=sorted(bench.GENERATORS))
    p.add_argument("--params", help='JSON keyword arguments, e.g. \'{"n": 20, "m": 10, "lam": 0.1}\'')
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError, ValueError, TypeError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except RegAdmmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
