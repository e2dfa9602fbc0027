"""Dynamic regularized ADMM with over-relaxed multiplier stepsize.

One cycle runs the ADMM recursion for a fixed regularization weight mu; the
cycle ends once the Q-norm of the step drops below rho/2. If the
regularization-corrected residual v is then below rho the run stops,
otherwise mu is halved and a new cycle starts.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import (
    ConfigDimensionError,
    ConfigError,
    NonConvergenceError,
    PenaltyError,
    ProximalFactorError,
    StepsizeError,
    ToleranceError,
)
from .objectives import SeparableProblem, solve_x_subproblem, solve_y_subproblem
from .operators import BlockPoint, PsdOperator, QMetric


def stepsize_bound(alpha):
    """Upper end of the admissible stepsize interval, (1 - a + sqrt(a^2 + 6a + 5)) / 2."""
    alpha = float(alpha)
    # sqrt(a^2+6a+5) - a, rationalized to stay accurate for large alpha
    gap = (6.0 * alpha + 5.0) / (math.sqrt(alpha * alpha + 6.0 * alpha + 5.0) + alpha)
    return 0.5 * (1.0 + gap)


@dataclass
class DrAdmmConfig:
    beta: float = 1.0
    theta: float = 1.0
    alpha: float = 0.0
    rho: float = 1e-6
    R: Optional[PsdOperator] = None
    S: Optional[PsdOperator] = None
    z0: Optional[BlockPoint] = None
    max_cycles: int = 60
    max_inner_iters: int = 10**6
    trace_enabled: bool = True
    warm_start: bool = True
    trace_limit: int = 100_000
    trace_window: int = 1000
    beta1_rule: str = "consistent"

    def resolved(self, problem):
        """Copy with R, S and z0 defaulted to zero for this problem."""
        n, p, m = problem.n, problem.p, problem.m
        return DrAdmmConfig(
            beta=self.beta, theta=self.theta, alpha=self.alpha, rho=self.rho,
            R=self.R if self.R is not None else PsdOperator.zero(n),
            S=self.S if self.S is not None else PsdOperator.zero(p),
            z0=self.z0 if self.z0 is not None else BlockPoint.zeros(n, p, m),
            max_cycles=self.max_cycles, max_inner_iters=self.max_inner_iters,
            trace_enabled=self.trace_enabled, warm_start=self.warm_start,
            trace_limit=self.trace_limit, trace_window=self.trace_window,
            beta1_rule=self.beta1_rule)

    def metric(self, problem):
        cfg = self.resolved(problem)
        return QMetric(cfg.R, cfg.S, problem.B, cfg.alpha, cfg.beta, cfg.theta)

    def to_dict(self):
        d = {"beta": self.beta, "theta": self.theta, "alpha": self.alpha, "rho": self.rho,
             "max_cycles": self.max_cycles, "max_inner_iters": self.max_inner_iters,
             "warm_start": self.warm_start, "beta1_rule": self.beta1_rule}
        if self.R is not None:
            d["R"] = self.R.to_dict()
        if self.S is not None:
            d["S"] = self.S.to_dict()
        if self.z0 is not None:
            d["z0"] = self.z0.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        kw = {k: d[k] for k in ("beta", "theta", "alpha", "rho", "max_cycles",
                                "max_inner_iters", "warm_start", "beta1_rule") if k in d}
        if "R" in d:
            kw["R"] = PsdOperator.from_dict(d["R"])
        if "S" in d:
            kw["S"] = PsdOperator.from_dict(d["S"])
        if "z0" in d:
            kw["z0"] = BlockPoint.from_dict(d["z0"])
        return cls(**kw)


def validate_config(cfg: DrAdmmConfig, problem: SeparableProblem):
    if not cfg.beta > 0:
        raise PenaltyError(f"penalty beta must be positive, got {cfg.beta}")
    if not cfg.rho > 0:
        raise ToleranceError(f"tolerance rho must be positive, got {cfg.rho}")
    if not cfg.alpha >= 0:
        raise ProximalFactorError(f"proximal factor alpha must be >= 0, got {cfg.alpha}")
    bound = stepsize_bound(cfg.alpha)
    if not 0 < cfg.theta < bound:
        raise StepsizeError(
            f"stepsize theta={cfg.theta} outside (0, {bound:.6f}) for alpha={cfg.alpha}")
    n, p, m = problem.n, problem.p, problem.m
    if cfg.R is not None and cfg.R.dim != n:
        raise ConfigDimensionError(f"R has dim {cfg.R.dim}, expected n={n}")
    if cfg.S is not None and cfg.S.dim != p:
        raise ConfigDimensionError(f"S has dim {cfg.S.dim}, expected p={p}")
    if cfg.z0 is not None and cfg.z0.dims != (n, p, m):
        raise ConfigDimensionError(f"z0 has dims {cfg.z0.dims}, expected {(n, p, m)}")
    if cfg.beta1_rule not in BETA1_RULES:
        raise ConfigError(f"beta1_rule must be one of {BETA1_RULES}, got {cfg.beta1_rule!r}")


BETA1_RULES = ("consistent", "as_printed")


def cycle_constants(beta, theta, mu, rule="consistent"):
    """Per-cycle penalties (beta1, beta2).

    The default x-penalty theta*beta/(theta+mu) is the one for which
    gamma~_k - gamma_{k-1} = -beta B dy_k - dgamma_k/theta holds, and it tends
    to the plain ADMM penalty beta as mu -> 0. ``rule="as_printed"`` uses
    beta/(theta+mu) instead; the two agree only at theta = 1 and the latter
    can make a cycle stall for theta != 1.
    """
    if rule == "consistent":
        beta1 = theta * beta / (theta + mu)
    elif rule == "as_printed":
        beta1 = beta / (theta + mu)
    else:
        raise ValueError(f"unknown beta1 rule {rule!r}")
    return beta1, beta * (1.0 + mu)


def hat_points(z_prev: BlockPoint, z0: BlockPoint, mu, theta):
    x_hat = (z_prev.x + mu * z0.x) / (1.0 + mu)
    y_hat = (z_prev.y + mu * z0.y) / (1.0 + mu)
    gamma_hat = (theta * z_prev.gamma + mu * z0.gamma) / (theta + mu)
    return x_hat, y_hat, gamma_hat


def multiplier_updates(gamma_hat, x_k, y_prev, y_k, y_hat, gamma_prev, gamma0,
                       beta1, beta2, beta, theta, mu, A, B, b):
    """Return (gamma_tilde, u, gamma) for the current iterate."""
    Ax = A @ x_k
    gamma_tilde = gamma_hat - beta1 * (Ax + B @ y_prev - b)
    u = gamma_tilde + beta2 * (Ax + B @ y_hat - b)
    gamma = gamma_prev - theta * beta * (Ax + B @ y_k - b + mu * (gamma_tilde - gamma0) / (beta * theta))
    return gamma_tilde, u, gamma


def inner_stop(dx, dy, dgamma, Q: QMetric, rho):
    return Q.norm(BlockPoint(dx, dy, dgamma)) <= rho / 2


def outer_residuals(dx, dy, dgamma, x_k, y_k, gamma_tilde, z0: BlockPoint, mu):
    """(v^x, v^y, v^gamma) as a BlockPoint."""
    d = BlockPoint(dx, dy, dgamma)
    return d - mu * (BlockPoint(x_k, y_k, gamma_tilde) - z0)


@dataclass(eq=False)
class IterRecord:
    cycle: int
    k: int
    mu: float
    beta1: float
    beta2: float
    x_hat: np.ndarray
    y_hat: np.ndarray
    gamma_hat: np.ndarray
    x: np.ndarray
    y: np.ndarray
    gamma: np.ndarray
    gamma_tilde: np.ndarray
    u: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    dgamma: np.ndarray
    wf: np.ndarray
    wg: np.ndarray
    index: int = 0
    step_norm: float = float("nan")

    @property
    def z(self):
        return BlockPoint(self.x, self.y, self.gamma)

    @property
    def z_tilde(self):
        return BlockPoint(self.x, self.y, self.gamma_tilde)

    @property
    def dz(self):
        return BlockPoint(self.dx, self.dy, self.dgamma)

    @property
    def z_prev(self):
        return BlockPoint(self.x + self.dx, self.y + self.dy, self.gamma + self.dgamma)

    _VEC = ("x_hat", "y_hat", "gamma_hat", "x", "y", "gamma", "gamma_tilde", "u",
            "dx", "dy", "dgamma", "wf", "wg")

    def to_dict(self):
        d = {"cycle": self.cycle, "k": self.k, "mu": self.mu, "beta1": self.beta1,
             "beta2": self.beta2, "index": self.index, "step_norm": self.step_norm}
        for name in self._VEC:
            d[name] = getattr(self, name).tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        kw = {k: d[k] for k in ("cycle", "k", "mu", "beta1", "beta2", "index", "step_norm")}
        for name in cls._VEC:
            kw[name] = np.asarray(d[name], dtype=float)
        return cls(**kw)


class IterateTrace:
    """Per-iteration records of one run.

    Up to `limit` records are kept in full. Past that, only a sliding window
    of the most recent `window` records plus every 100th older record survive,
    so consecutive pairs are still available near the end of the run.
    """

    SAMPLE_EVERY = 100

    def __init__(self, z0=None, limit=100_000, window=1000):
        self.z0 = z0
        self.limit = limit
        self._kept: List[IterRecord] = []
        self._recent = deque(maxlen=window)
        self.count = 0
        self.cycle_starts = {}

    def append(self, rec: IterRecord):
        rec.index = self.count
        self.count += 1
        if rec.k == 1:
            self.cycle_starts[rec.cycle] = rec.z_prev
        if self.count <= self.limit:
            self._kept.append(rec)
            return
        if len(self._recent) == self._recent.maxlen:
            old = self._recent[0]
            if old.index % self.SAMPLE_EVERY == 0:
                self._kept.append(old)
        self._recent.append(rec)

    @property
    def records(self):
        return self._kept + list(self._recent)

    @property
    def truncated(self):
        return self.count > self.limit

    def __len__(self):
        return len(self._kept) + len(self._recent)

    def __iter__(self):
        return iter(self.records)

    def consecutive_pairs(self):
        """(previous, current) pairs that belong to the same cycle and are adjacent."""
        recs = self.records
        return [(a, b) for a, b in zip(recs, recs[1:])
                if b.index == a.index + 1 and a.cycle == b.cycle]


@dataclass(eq=False)
class Certificate:
    x: np.ndarray
    y: np.ndarray
    gamma_tilde: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    vgamma: np.ndarray
    residual: float
    cycles: int
    total_iters: int
    mu: float
    cycle_iters: List[int] = field(default_factory=list)
    wf: Optional[np.ndarray] = None
    wg: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None

    @property
    def v(self):
        return BlockPoint(self.vx, self.vy, self.vgamma)

    @property
    def z_tilde(self):
        return BlockPoint(self.x, self.y, self.gamma_tilde)

    def to_dict(self):
        d = {"residual": self.residual, "cycles": self.cycles, "total_iters": self.total_iters,
             "mu": self.mu, "cycle_iters": list(self.cycle_iters)}
        for name in ("x", "y", "gamma_tilde", "vx", "vy", "vgamma", "wf", "wg", "gamma"):
            val = getattr(self, name)
            d[name] = None if val is None else val.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        kw = dict(d)
        for name in ("x", "y", "gamma_tilde", "vx", "vy", "vgamma", "wf", "wg", "gamma"):
            if kw.get(name) is not None:
                kw[name] = np.asarray(kw[name], dtype=float)
        return cls(**kw)


class DrAdmmStepper:
    """One DR-ADMM iteration as a function of (z_prev, mu, z0).

    Holds only factorization caches; all problem data is read-only.
    """

    def __init__(self, problem: SeparableProblem, cfg: DrAdmmConfig):
        self.problem = problem
        self.cfg = cfg.resolved(problem)
        self._xcache = {}
        self._ycache = {}

    def step(self, z_prev: BlockPoint, mu, z0: BlockPoint, cycle=0, k=0) -> IterRecord:
        pb, cfg = self.problem, self.cfg
        beta1, beta2 = cycle_constants(cfg.beta, cfg.theta, mu, cfg.beta1_rule)
        x_hat, y_hat, gamma_hat = hat_points(z_prev, z0, mu, cfg.theta)
        x, wf = solve_x_subproblem(pb, gamma_hat, z_prev.y, x_hat, beta1, mu, cfg.R,
                                   cache=self._xcache)
        Ax = pb.A @ x
        gamma_tilde = gamma_hat - beta1 * (Ax + pb.B @ z_prev.y - pb.b)
        u = gamma_tilde + beta2 * (Ax + pb.B @ y_hat - pb.b)
        y, wg = solve_y_subproblem(pb, u, x, y_hat, beta2, cfg.alpha, cfg.beta, cfg.S,
                                   cache=self._ycache)
        gamma = z_prev.gamma - cfg.theta * cfg.beta * (
            Ax + pb.B @ y - pb.b + mu * (gamma_tilde - z0.gamma) / (cfg.beta * cfg.theta))
        return IterRecord(cycle, k, mu, beta1, beta2, x_hat, y_hat, gamma_hat,
                          x, y, gamma, gamma_tilde, u,
                          z_prev.x - x, z_prev.y - y, z_prev.gamma - gamma, wf, wg)


class DrAdmmOracle:
    """Step oracle exposing DR-ADMM to the generic HPE driver.

    eta_fn, when given, maps (record, previous record or None) to eta_k.
    """

    def __init__(self, problem, cfg, eta_fn=None):
        self.stepper = DrAdmmStepper(problem, cfg)
        self.records: List[IterRecord] = []
        self.eta_fn = eta_fn

    def produce(self, z_prev, mu, z0):
        prev = self.records[-1] if self.records else None
        # the driver changes mu exactly when it starts a new cycle
        if prev is None:
            cycle, k = 1, 1
        elif mu != prev.mu:
            cycle, k = prev.cycle + 1, 1
        else:
            cycle, k = prev.cycle, prev.k + 1
        rec = self.stepper.step(z_prev, mu, z0, cycle, k)
        rec.index = len(self.records)
        self.records.append(rec)
        eta = 0.0
        if self.eta_fn is not None:
            eta = self.eta_fn(rec, prev if prev is not None and prev.cycle == cycle else None)
        return rec.z, rec.z_tilde, eta


def run(problem: SeparableProblem, cfg: DrAdmmConfig, callback=None):
    """Run DR-ADMM to a rho-approximate certificate.

    Returns (Certificate, IterateTrace). Raises NonConvergenceError when the
    iteration or cycle limits are hit; the partial trace rides on the error.
    """
    validate_config(cfg, problem)
    cfg = cfg.resolved(problem)
    Q = cfg.metric(problem)
    stepper = DrAdmmStepper(problem, cfg)
    z0 = cfg.z0
    trace = IterateTrace(z0, cfg.trace_limit, cfg.trace_window) if cfg.trace_enabled else None
    mu = 1.0
    z_prev = z0
    total = 0
    cycle_iters = []
    for cycle in range(1, cfg.max_cycles + 1):
        k = 0
        while True:
            k += 1
            if k > cfg.max_inner_iters:
                raise NonConvergenceError(
                    f"cycle {cycle} exceeded {cfg.max_inner_iters} inner iterations",
                    trace=trace, state=z_prev)
            rec = stepper.step(z_prev, mu, z0, cycle, k)
            total += 1
            dz = BlockPoint(rec.dx, rec.dy, rec.dgamma)
            rec.step_norm = Q.norm(dz)
            if trace is not None:
                trace.append(rec)
            if callback is not None:
                callback(rec)
            z_prev = rec.z
            if rec.step_norm <= cfg.rho / 2:
                break
        cycle_iters.append(k)
        v = outer_residuals(rec.dx, rec.dy, rec.dgamma, rec.x, rec.y, rec.gamma_tilde, z0, mu)
        residual = Q.norm(v)
        if residual <= cfg.rho:
            cert = Certificate(rec.x, rec.y, rec.gamma_tilde, v.x, v.y, v.gamma, residual,
                               cycle, total, mu, cycle_iters, rec.wf, rec.wg, rec.gamma)
            return cert, trace
        mu = mu / 2
        if not cfg.warm_start:
            z_prev = z0
    raise NonConvergenceError(f"no certificate after {cfg.max_cycles} cycles",
                              trace=trace, state=z_prev)


def write_trace(path, problem, cfg, trace, certificate=None):
    """Line-delimited JSON: a header, one line per kept iterate, then the certificate."""
    with open(path, "w") as fh:
        fh.write(json.dumps({"type": "header", "instance": problem.to_dict(),
                             "config": cfg.to_dict(), "count": trace.count if trace else 0,
                             "truncated": bool(trace and trace.truncated)}) + "\n")
        for rec in (trace or []):
            fh.write(json.dumps({"type": "iterate", **rec.to_dict()}) + "\n")
        if certificate is not None:
            fh.write(json.dumps({"type": "certificate", **certificate.to_dict()}) + "\n")


def read_trace(path):
    """Inverse of write_trace: (problem, cfg, trace, certificate or None)."""
    problem = cfg = trace = cert = None
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            kind = d.pop("type")
            if kind == "header":
                problem = SeparableProblem.from_dict(d["instance"])
                cfg = DrAdmmConfig.from_dict(d["config"])
                z0 = cfg.resolved(problem).z0
                trace = IterateTrace(z0, limit=10**12)
            elif kind == "iterate":
                rec = IterRecord.from_dict(d)
                index = rec.index
                trace.append(rec)
                rec.index = index
                trace.count = max(trace.count, index + 1)
            elif kind == "certificate":
                cert = Certificate.from_dict(d)
    if problem is None:
        raise ValueError(f"{path}: missing trace header")
    return problem, cfg, trace, cert
