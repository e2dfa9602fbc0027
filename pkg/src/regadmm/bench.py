"""Instance generators, parameter sweeps and the complexity-scaling fit.

Every generator plants a primal-dual solution and builds the data around it,
so `known_solution` is exact up to rounding and can serve as the distance
reference for the analysis checks.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .certify import abc, certify_run, proposition_params
from .dradmm import DrAdmmConfig, run, stepsize_bound, validate_config
from .errors import ConfigError, NonConvergenceError, RegAdmmError, RegimeError
from .objectives import ProxFunction, QuadraticFunction, SeparableProblem, kkt_residual
from .operators import BlockPoint, PsdOperator

CSV_SCHEMA = "regadmm-sweep v1"
MAX_TRIES = 10

PRESETS = {
    "lasso": {"beta": 1.0, "theta": 1.6, "alpha": 10.0, "rs": "zero"},
    "fused": {"beta": 1.0, "theta": 1.6, "alpha": 10.0, "rs": "zero"},
    "eq_qp": {"beta": 1.0, "theta": 1.6, "alpha": 10.0, "rs": "zero"},
}


def _dual_slopes(rng, support, signs, size):
    """Subgradient of ||.||_1 / lambda: signs on the support, strictly inside (-1, 1) off it."""
    s = rng.uniform(-0.9, 0.9, size)
    s[support] = signs
    return s


def gen_lasso(n, m, lam, seed=0):
    """min 0.5||Dx - d||^2 + lam ||y||_1 s.t. x - y = 0, with a planted sparse solution.

    A random residual r is drawn and each column of the Gaussian D receives a
    rank-one correction so that D^T r = -lam s for a valid l1 subgradient s;
    then d = D x* - r makes (x*, x*, -lam s) an exact KKT point.
    """
    if n < 1 or m < 1:
        raise ValueError("gen_lasso needs n, m >= 1")
    for attempt in range(MAX_TRIES):
        rng = np.random.default_rng([seed, attempt])
        D = rng.standard_normal((m, n)) / math.sqrt(m)
        k = n // 10
        support = rng.choice(n, size=k, replace=False)
        x_star = np.zeros(n)
        x_star[support] = rng.choice([-1.0, 1.0], k) * rng.uniform(0.5, 2.0, k)
        s = _dual_slopes(rng, support, np.sign(x_star[support]), n)
        r = rng.standard_normal(m)
        rr = float(r @ r)
        if rr < 1e-12:
            continue
        D = D + np.outer(r, (-lam * s - D.T @ r) / rr)
        d = D @ x_star - r
        gamma_star = D.T @ (D @ x_star - d)
        f = QuadraticFunction(PsdOperator.dense(D.T @ D, check=False), -D.T @ d, 0.5 * float(d @ d))
        try:
            return SeparableProblem(f, ProxFunction.l1(lam), np.eye(n), -np.eye(n), np.zeros(n),
                                    known_solution=BlockPoint(x_star, x_star.copy(), gamma_star),
                                    name=f"lasso(n={n},m={m},lam={lam},seed={seed})")
        except ValueError:
            continue
    raise RegAdmmError(f"could not plant a LASSO solution in {MAX_TRIES} tries")


def difference_matrix(n):
    D = np.zeros((n - 1, n))
    idx = np.arange(n - 1)
    D[idx, idx] = -1.0
    D[idx, idx + 1] = 1.0
    return D


def gen_fused(n, lam, seed=0):
    """min 0.5||x - d||^2 + lam ||y||_1 s.t. Dx - y = 0, D the first-difference matrix.

    D^T D is not a scaled identity, so x is solved as a linear system and y by
    soft thresholding. x* is piecewise constant; d is set from the KKT
    conditions.
    """
    if n < 2:
        raise ValueError("gen_fused needs n >= 2")
    rng = np.random.default_rng(seed)
    D = difference_matrix(n)
    n_jumps = max(1, (n - 1) // 10)
    jumps = rng.choice(n - 1, size=n_jumps, replace=False)
    steps = np.zeros(n - 1)
    steps[jumps] = rng.choice([-1.0, 1.0], n_jumps) * rng.uniform(0.5, 2.0, n_jumps)
    x_star = np.concatenate([[rng.normal()], rng.normal() + np.cumsum(steps)])
    x_star = x_star - x_star[0] + rng.normal()
    y_star = D @ x_star
    on = np.flatnonzero(y_star != 0)
    s = _dual_slopes(rng, on, np.sign(y_star[on]), n - 1)
    gamma_star = -lam * s
    d = x_star - D.T @ gamma_star
    f = QuadraticFunction(PsdOperator.identity(n), -d, 0.5 * float(d @ d))
    return SeparableProblem(f, ProxFunction.l1(lam), D, -np.eye(n - 1), np.zeros(n - 1),
                            known_solution=BlockPoint(x_star, y_star, gamma_star),
                            name=f"fused(n={n},lam={lam},seed={seed})")


def _random_pd(rng, dim, floor=0.5):
    G = rng.standard_normal((dim, dim))
    return G.T @ G / dim + floor * np.eye(dim)


def gen_eq_qp(n, p, m, seed=0):
    """Two strictly convex quadratics coupled by a random equality constraint.

    (x*, y*, gamma*) are drawn first; q_f, q_g and b are then the unique values
    that make them a KKT point. [A B] is required to have full row rank so the
    multiplier is unique too, making the distance to the solution set exact.
    """
    if min(n, p, m) < 1:
        raise ValueError("gen_eq_qp needs n, p, m >= 1")
    for attempt in range(MAX_TRIES):
        rng = np.random.default_rng([seed, attempt])
        A = rng.standard_normal((m, n)) / math.sqrt(m)
        B = rng.standard_normal((m, p)) / math.sqrt(m)
        if np.linalg.matrix_rank(np.hstack([A, B])) < m:
            continue
        Pf, Pg = _random_pd(rng, n), _random_pd(rng, p)
        x_star, y_star, gamma_star = rng.standard_normal(n), rng.standard_normal(p), rng.standard_normal(m)
        f = QuadraticFunction(PsdOperator.dense(Pf), A.T @ gamma_star - Pf @ x_star)
        g = QuadraticFunction(PsdOperator.dense(Pg), B.T @ gamma_star - Pg @ y_star)
        b = A @ x_star + B @ y_star
        return SeparableProblem(f, g, A, B, b,
                                known_solution=BlockPoint(x_star, y_star, gamma_star),
                                name=f"eq_qp(n={n},p={p},m={m},seed={seed})")
    raise RegAdmmError(f"rank-deficient constraints in {MAX_TRIES} tries")


GENERATORS = {"lasso": gen_lasso, "fused": gen_fused, "eq_qp": gen_eq_qp}


def make_instance(spec, seed_offset=0):
    """Build a problem from {"family": ..., "params": {...}} or {"file": path}."""
    if "file" in spec:
        return SeparableProblem.load(spec["file"])
    family = spec["family"]
    params = dict(spec.get("params", {}))
    params["seed"] = params.get("seed", 0) + seed_offset
    return GENERATORS[family](**params)


def parse_rs(rs, problem):
    """'zero' or 'scaled:r,s' -> (R, S)."""
    if rs in (None, "zero"):
        return PsdOperator.zero(problem.n), PsdOperator.zero(problem.p)
    if rs.startswith("scaled:"):
        r, s = (float(t) for t in rs[len("scaled:"):].split(","))
        return PsdOperator.scaled_identity(problem.n, r), PsdOperator.scaled_identity(problem.p, s)
    raise ConfigError(f"unknown R/S strategy {rs!r}; use 'zero' or 'scaled:r,s'")


@dataclass
class SweepSpec:
    instance: dict
    rho: List[float]
    theta: List[float]
    alpha: List[float]
    beta: List[float] = field(default_factory=lambda: [1.0])
    rs: str = "zero"
    repetitions: int = 1
    seed: int = 0
    workers: int = 1
    max_inner_iters: int = 10**6
    warm_start: bool = True
    instance_id: str = ""

    def __post_init__(self):
        if self.repetitions < 0:
            raise ConfigError("repetitions must be >= 0")
        for th, al, be, rh in itertools.product(self.theta, self.alpha, self.beta, self.rho):
            if not al >= 0:
                raise ConfigError(f"alpha={al} must be >= 0")
            if not 0 < th < stepsize_bound(al):
                raise ConfigError(f"theta={th} outside (0, {stepsize_bound(al):.6f}) for alpha={al}")
            if not be > 0 or not rh > 0:
                raise ConfigError("beta and rho must be positive")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("rho", "theta", "alpha", "beta"):
            if key in d and not isinstance(d[key], list):
                d[key] = [d[key]]
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def combos(self):
        for rep in range(self.repetitions):
            for th, al, be, rh in itertools.product(self.theta, self.alpha, self.beta, self.rho):
                yield rep, th, al, be, rh


@dataclass
class RunRecord:
    instance: str
    theta: float
    alpha: float
    beta: float
    rho: float
    rep: int
    status: str
    iterations: int
    cycles: int
    wall_time: float
    residual: float
    kkt_residual: float
    cert_passed: Optional[bool]
    cert_worst_aux0: float
    message: str = ""


CSV_FIELDS = [f for f in RunRecord.__dataclass_fields__]


def run_one(problem, cfg, instance_id="", rep=0, certify=True):
    """Solve, certify and summarize one configuration. Failures become records."""
    t0 = time.perf_counter()
    try:
        validate_config(cfg, problem)
        cert, trace = run(problem, cfg)
    except NonConvergenceError as exc:
        return RunRecord(instance_id, cfg.theta, cfg.alpha, cfg.beta, cfg.rho, rep, "nonconverged",
                         exc.trace.count if exc.trace else -1, -1, time.perf_counter() - t0,
                         float("nan"), float("nan"), None, float("nan"), str(exc))
    except RegAdmmError as exc:
        return RunRecord(instance_id, cfg.theta, cfg.alpha, cfg.beta, cfg.rho, rep, "error",
                         0, 0, time.perf_counter() - t0, float("nan"), float("nan"), None,
                         float("nan"), str(exc))
    wall = time.perf_counter() - t0
    passed, worst = None, float("nan")
    if certify and trace is not None:
        report = certify_run(problem, cfg, trace, cert)
        passed = report.passed
        worst = next(c.worst for c in report.checks if c.name == "inclusion_aux0")
    return RunRecord(instance_id, cfg.theta, cfg.alpha, cfg.beta, cfg.rho, rep, "converged",
                     cert.total_iters, cert.cycles, wall, cert.residual,
                     kkt_residual(problem, cert.x, cert.y, cert.gamma_tilde), passed, worst)


def _sweep_task(args):
    spec, rep, th, al, be, rh = args
    problem = make_instance(spec.instance, spec.seed + rep)
    R, S = parse_rs(spec.rs, problem)
    cfg = DrAdmmConfig(beta=be, theta=th, alpha=al, rho=rh, R=R, S=S,
                       max_inner_iters=spec.max_inner_iters, warm_start=spec.warm_start)
    iid = spec.instance_id or problem.name
    return run_one(problem, cfg, iid, rep)


def run_sweep(spec: SweepSpec, out=None):
    """Run every combination; returns the records and writes CSV to `out` if given."""
    tasks = [(spec, *c) for c in spec.combos()]
    if spec.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            records = list(pool.map(_sweep_task, tasks))
    else:
        records = [_sweep_task(t) for t in tasks]
    if out is not None:
        write_csv(records, out)
    return records


def write_csv(records: Sequence[RunRecord], out):
    if isinstance(out, (str, bytes)) or hasattr(out, "__fspath__"):
        with open(out, "w", newline="") as fh:
            return write_csv(records, fh)
    out.write(f"# {CSV_SCHEMA}\n")
    writer = csv.DictWriter(out, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for rec in records:
        writer.writerow(asdict(rec))


def read_csv(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.DictReader(io.StringIO("".join(lines))))
    out = []
    for row in rows:
        cert = row["cert_passed"]
        out.append(RunRecord(
            row["instance"], float(row["theta"]), float(row["alpha"]), float(row["beta"]),
            float(row["rho"]), int(row["rep"]), row["status"], int(row["iterations"]),
            int(row["cycles"]), float(row["wall_time"]), float(row["residual"]),
            float(row["kkt_residual"]), None if cert == "" else cert == "True",
            float(row["cert_worst_aux0"]), row.get("message", "")))
    return out


class InsufficientDataError(ValueError):
    pass


@dataclass
class ComplexityFit:
    slope: float
    intercept: float
    n_points: int
    reference: str = "~1 up to a logarithmic factor"


def complexity_fit(records) -> ComplexityFit:
    """Least-squares slope of log(iterations) against log(1/rho).

    Accepts RunRecords or (rho, iterations) pairs. Needs at least four
    distinct rho values spanning three decades.
    """
    pts = []
    for r in records:
        if isinstance(r, RunRecord):
            if r.status != "converged":
                continue
            pts.append((r.rho, r.iterations))
        else:
            pts.append((float(r[0]), float(r[1])))
    rhos = sorted({p[0] for p in pts})
    if len(rhos) < 4 or math.log10(rhos[-1] / rhos[0]) < 3 - 1e-9:
        raise InsufficientDataError("need >= 4 distinct rho values spanning >= 3 decades")
    x = np.log([1.0 / p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    slope, intercept = np.polyfit(x, y, 1)
    return ComplexityFit(float(slope), float(intercept), len(pts))


def region_map(alpha_grid, theta_grid):
    """Feasibility of the analysis constants over an (alpha, theta) grid."""
    rows = []
    for al in alpha_grid:
        bound = stepsize_bound(al)
        for th in theta_grid:
            row = {"alpha": al, "theta": th, "bound": bound, "in_domain": 0 < th < bound,
                   "regime": "", "tau_bar": float("nan"), "sigma": float("nan"),
                   "a": float("nan"), "b": float("nan"), "c": float("nan"),
                   "ae45_tau0": False}
            a0, b0, c0 = abc(th, al, 0.0)
            row["ae45_tau0"] = bool(a0 > 0 and b0 > 0 and a0 - b0 + c0 > 0
                                    and b0 * b0 - 4 * a0 * c0 >= 0)
            if row["in_domain"]:
                try:
                    params = proposition_params(th, al)
                    row["regime"] = params.regime
                    row["sigma"] = params.sigma
                    if params.constants is not None:
                        c = params.constants
                        row.update(tau_bar=c.tau, a=c.a, b=c.b, c=c.c)
                    else:
                        row["tau_bar"] = params.tau
                except RegimeError:
                    row["regime"] = "infeasible"
            rows.append(row)
    return rows


def write_region_csv(rows, out):
    with open(out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()) if rows else ["alpha", "theta"],
                                lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
