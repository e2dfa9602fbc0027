"""Analysis constants and run-time verification of DR-ADMM iterates.

Nothing here is trusted by the solver. Each check re-evaluates an
inequality or inclusion that the convergence theory asserts, using only the
recorded iterates and the subgradient witnesses returned by the
subproblem solves.

Two regimes:

* theta in (0, 1): sigma = theta + (theta - 1)^2, tau = 1/2, eta = 0;
* theta in [1, bound(alpha)): (sigma_bar, tau_bar) from a dyadic grid search,
  eta_k from the Delta-gamma / Delta-y weighted formula.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .dradmm import stepsize_bound
from .errors import MissingWitnessError, RegimeError
from .operators import BlockPoint, PsdOperator, QMetric

TAU_GRID = tuple(j / 1024 for j in range(511, 0, -1))
HJ34_TOL = 1e-12
REL_TOL = 1e-8

# The S-weight coefficient in the error-condition argument is printed with a
# stray bar over theta; it is read as theta * sigma_bar, which is exactly what
# the middle lower bound on sigma_bar makes nonnegative.
S_COEFFICIENT_READING = "theta*sigma_bar"


def abc(theta, alpha, tau):
    e = (1.0 - theta) ** 2
    K = (1.0 - tau) * (1.0 + alpha) * (1.0 + theta) - alpha
    a = K - e
    b = (K - 2.0 * (1.0 - theta)) * e - alpha * tau * (1.0 - theta) + 1.0 - tau
    c = (1.0 - tau - alpha * tau * (1.0 - theta) - e) * e
    return a, b, c


def abc_tau0(theta, alpha):
    """Closed forms of a, b and a - b + c at tau = 0."""
    a = theta * (3.0 - theta + alpha)
    b = theta * ((3.0 + alpha) * (1.0 - theta) ** 2 + 2.0 - theta)
    amb = theta ** 2 * (1.0 + 2.0 * alpha + (1.0 - alpha) * theta - theta ** 2)
    return a, b, amb


def feasibility(theta, alpha, tau):
    """The four sign conditions on (a, b, c), by name."""
    a, b, c = abc(theta, alpha, tau)
    return {"a>0": a > 0, "b>0": b > 0, "a-b+c>0": a - b + c > 0,
            "b^2-4ac>=0": b * b - 4.0 * a * c >= 0}


def sigma_bar(theta, alpha, tau):
    failed = [k for k, ok in feasibility(theta, alpha, tau).items() if not ok]
    if failed:
        raise RegimeError(
            f"(theta={theta}, alpha={alpha}, tau={tau}) violates {', '.join(failed)}")
    a, b, c = abc(theta, alpha, tau)
    return (b + math.sqrt(b * b - 4.0 * a * c)) / (2.0 * a)


def hj34_terms(theta, alpha, tau):
    """The three lower bounds that sigma_bar must dominate."""
    t1 = (1.0 - theta) ** 2
    t2 = tau * (theta - 1.0) / ((1.0 - tau) * theta - tau)
    t3 = (1.0 - tau * (1.0 + alpha * (1.0 - theta))) / (
        (1.0 - tau) * (1.0 + alpha) * (1.0 + theta) - alpha)
    return t1, t2, t3


def g_matrix(sigma, theta, alpha, tau):
    g11 = ((1.0 - tau) * (sigma * (1.0 + theta) - 1.0)
           + alpha * (theta * sigma - tau * (sigma + theta + sigma * theta - 1.0)))
    g12 = (sigma + theta - 1.0) * (1.0 - theta)
    g22 = sigma - (1.0 - theta) ** 2
    return np.array([[g11, g12], [g12, g22]])


def _tau_ok(theta, alpha, tau):
    if not all(feasibility(theta, alpha, tau).values()):
        return False
    s = sigma_bar(theta, alpha, tau)
    if not 0.0 < s < 1.0:
        return False
    return max(hj34_terms(theta, alpha, tau)) <= s + HJ34_TOL


def find_tau(theta, alpha):
    """Largest tau on {j/1024 : j = 1..511} meeting every feasibility condition."""
    if not 1.0 <= theta < stepsize_bound(alpha):
        raise RegimeError(f"theta={theta} is outside [1, {stepsize_bound(alpha):.6f}) "
                          f"for alpha={alpha}")
    for tau in TAU_GRID:
        if _tau_ok(theta, alpha, tau):
            return tau
    raise RegimeError(f"no feasible tau on the grid for theta={theta}, alpha={alpha}; "
                      "this contradicts the theory inside the stepsize domain")


@dataclass(frozen=True)
class AnalysisConstants:
    theta: float
    alpha: float
    tau: float
    a: float
    b: float
    c: float
    sigma: float
    G: np.ndarray = field(repr=False)
    regime: str = "theta_ge_1"

    @property
    def s_coefficient(self):
        return self.theta * self.sigma - self.tau * (self.sigma + self.theta - 1.0) / (1.0 - self.tau)

    @property
    def hj34(self):
        return hj34_terms(self.theta, self.alpha, self.tau)

    def as_dict(self):
        return {"theta": self.theta, "alpha": self.alpha, "tau_bar": self.tau,
                "a": self.a, "b": self.b, "c": self.c, "sigma_bar": self.sigma,
                "G": self.G.tolist(), "regime": self.regime,
                "s_coefficient": self.s_coefficient,
                "s_coefficient_reading": S_COEFFICIENT_READING}


def analysis_constants(theta, alpha, tau=None) -> AnalysisConstants:
    if tau is None:
        tau = find_tau(theta, alpha)
    s = sigma_bar(theta, alpha, tau)
    a, b, c = abc(theta, alpha, tau)
    return AnalysisConstants(theta, alpha, tau, a, b, c, s, g_matrix(s, theta, alpha, tau))


@dataclass(frozen=True)
class ErrorParams:
    """(sigma, tau) for the error condition and, for theta >= 1, the constants behind eta."""

    sigma: float
    tau: float
    regime: str
    constants: Optional[AnalysisConstants] = None


def proposition_params(theta, alpha) -> ErrorParams:
    bound = stepsize_bound(alpha)
    if not 0.0 < theta < bound:
        raise RegimeError(f"theta={theta} outside (0, {bound:.6f}) for alpha={alpha}")
    if theta < 1.0:
        return ErrorParams(theta + (theta - 1.0) ** 2, 0.5, "theta_lt_1")
    const = analysis_constants(theta, alpha)
    return ErrorParams(const.sigma, const.tau, "theta_ge_1", const)


def eta0(constants: AnalysisConstants, d0_bound):
    """Initial eta from a bound on the Q-distance to the solution set.

    The distance enters squared, as eta is measured in squared Q-norm units.
    """
    th = constants.theta
    if th >= 2.0:
        raise RegimeError("eta0 needs theta < 2")
    return (4.0 * (constants.sigma + th - 1.0) * d0_bound ** 2
            / ((2.0 - th) * (1.0 - constants.tau)))


def eta_k(constants: AnalysisConstants, beta, dgamma, dy, Q):
    th, s = constants.theta, constants.sigma
    return ((s - (th - 1.0) ** 2) / (beta * th ** 3) * float(dgamma @ dgamma)
            + (s + th - 1.0) / (th * (1.0 - constants.tau)) * Q.y_weight_quad(dy))


@dataclass
class EtaSequence:
    """eta per recorded iterate (keyed by global index) and eta0 per cycle."""

    eta0: float
    values: Dict[int, float]
    cycle_eta0: Dict[int, float]
    d0_bound: Optional[float]

    def before(self, rec, prev):
        """eta_{k-1} for the record, or None when it is not available."""
        if rec.k == 1:
            return self.cycle_eta0.get(rec.cycle)
        if prev is None:
            return None
        return self.values.get(prev.index)


def eta_sequence(trace, constants: Optional[AnalysisConstants], Q, d0_bound=None) -> EtaSequence:
    """eta along a trace.

    With constants None (theta < 1) every eta is 0. Otherwise eta_k follows the
    weighted Delta formula, and eta0 of each cycle uses the bound
    d0_bound + ||z_start - z0||_Q on the distance from that cycle's start
    point to the regularized solution; on the first cycle (and with cold
    restarts) z_start = z0 and this is d0_bound itself.
    """
    recs = trace.records
    if constants is None:
        return EtaSequence(0.0, {r.index: 0.0 for r in recs},
                           {c: 0.0 for c in trace.cycle_starts}, 0.0)
    if d0_bound is not None and d0_bound < 0:
        raise ValueError("d0_bound must be nonnegative")
    values = {r.index: eta_k(constants, Q.beta, r.dgamma, r.dy, Q) for r in recs}
    cycle_eta0 = {}
    e0 = float("nan")
    if d0_bound is not None:
        e0 = eta0(constants, d0_bound)
        for cycle, start in trace.cycle_starts.items():
            dist = d0_bound + Q.norm(start - trace.z0)
            cycle_eta0[cycle] = eta0(constants, dist)
    return EtaSequence(e0, values, cycle_eta0, d0_bound)


def _block_residual(terms):
    total = sum(terms[1:], terms[0])
    return float(np.linalg.norm(total)), max(float(np.linalg.norm(t)) for t in terms)


def check_inclusion_aux0(rec, problem, Q, z0: BlockPoint):
    """Relative residual of Q dz_k in T(z~_k) + mu Q (z~_k - z0).

    Blocks are assembled from the recorded witnesses. The value is the largest
    block norm divided by 1 + the largest norm of any term entering a block.
    """
    if rec.wf is None or rec.wg is None:
        raise MissingWitnessError("iterate record carries no subgradient witnesses")
    A, B, b = problem.A, problem.B, problem.b
    lhs = Q.apply(rec.dz)
    reg = Q.apply(rec.z_tilde - z0)
    mu = rec.mu
    blocks = [
        [rec.wf, -A.T @ rec.gamma_tilde, mu * reg.x, -lhs.x],
        [rec.wg, -B.T @ rec.gamma_tilde, mu * reg.y, -lhs.y],
        [A @ rec.x, B @ rec.y, -b, mu * reg.gamma, -lhs.gamma],
    ]
    worst, scale = 0.0, 0.0
    for terms in blocks:
        r, s = _block_residual(terms)
        worst, scale = max(worst, r), max(scale, s)
    return worst / (1.0 + scale)


@dataclass
class Es2Entry:
    index: int
    cycle: int
    k: int
    lhs: float
    rhs: float

    @property
    def slack(self):
        return self.rhs - self.lhs

    def passed(self, tol=REL_TOL):
        return self.lhs <= self.rhs + tol * (1.0 + abs(self.rhs))


@dataclass
class Es2Report:
    entries: List[Es2Entry]
    skipped: int

    def passed(self, tol=REL_TOL):
        return all(e.passed(tol) for e in self.entries)

    def flags(self, tol=REL_TOL):
        return [e.passed(tol) for e in self.entries]

    @property
    def worst_relative_slack(self):
        if not self.entries:
            return float("inf")
        return min(e.slack / (1.0 + abs(e.rhs)) for e in self.entries)


def _prev_map(trace):
    recs = trace.records
    prev = {}
    for a, b in zip(recs, recs[1:]):
        if b.index == a.index + 1 and a.cycle == b.cycle:
            prev[b.index] = a
    return prev


def check_es2(trace, Q, sigma, tau, eta: EtaSequence) -> Es2Report:
    """||z_k - z~_k||^2 + eta_k <= sigma ||z_{k-1} - z~_k||^2 + (1 - tau) eta_{k-1}, per k."""
    prev = _prev_map(trace)
    entries, skipped = [], 0
    for rec in trace.records:
        e_prev = eta.before(rec, prev.get(rec.index))
        if e_prev is None or (isinstance(e_prev, float) and math.isnan(e_prev)):
            skipped += 1
            continue
        zt = rec.z_tilde
        lhs = Q.sq_norm(rec.z - zt) + eta.values[rec.index]
        rhs = sigma * Q.sq_norm(rec.z_prev - zt) + (1.0 - tau) * e_prev
        entries.append(Es2Entry(rec.index, rec.cycle, rec.k, lhs, rhs))
    return Es2Report(entries, skipped)


@dataclass
class LemmaReport:
    identity_worst: float
    identity_count: int
    monotone_worst_slack: float
    monotone_count: int
    first_step_worst_slack: Optional[float]
    first_step_count: int

    def passed(self, identity_tol=1e-9, slack_tol=REL_TOL):
        ok = self.identity_worst <= identity_tol and self.monotone_worst_slack >= -slack_tol
        if self.first_step_worst_slack is not None:
            ok = ok and self.first_step_worst_slack >= -slack_tol
        return ok


def lemma_identity_residual(rec, beta, theta, B):
    """Relative residual of gamma~_k - gamma_{k-1} + beta B dy_k + dgamma_k / theta."""
    gamma_prev = rec.gamma + rec.dgamma
    terms = [rec.gamma_tilde, -gamma_prev, beta * (B @ rec.dy), rec.dgamma / theta]
    r, s = _block_residual(terms)
    return r / (1.0 + s)


def check_lemma_deltak(trace, beta, theta, alpha, B, S, d0_bound=None, Q=None) -> LemmaReport:
    """The multiplier identity, the k >= 2 monotonicity bound and, with d0_bound, the k = 1 bound.

    Slacks are relative: (lhs - rhs) / (1 + sum of |terms|).
    """
    if Q is None:
        # only the y-block of Q is used here, so any x-block will do
        S = S if S is not None else PsdOperator.zero(B.shape[1])
        Q = QMetric(PsdOperator.zero(1), S, B, alpha, beta, theta)

    def w(dy):
        return Q.y_weight_quad(dy)

    ident = [lemma_identity_residual(r, beta, theta, B) for r in trace.records]
    prev = _prev_map(trace)
    mono = []
    for rec in trace.records:
        p = prev.get(rec.index)
        if rec.k < 2 or p is None:
            continue
        Bdy = B @ rec.dy
        terms = [2.0 * float(Bdy @ rec.dgamma),
                 -2.0 * (1.0 - theta) * float(Bdy @ p.dgamma),
                 -theta * w(rec.dy), theta * w(p.dy)]
        mono.append(sum(terms) / (1.0 + sum(abs(t) for t in terms)))
    first = []
    if d0_bound is not None and 1.0 <= theta < 2.0:
        for rec in trace.records:
            if rec.k != 1:
                continue
            start = trace.cycle_starts.get(rec.cycle, rec.z_prev)
            dist = d0_bound + Q.norm(start - trace.z0)
            Bdy = B @ rec.dy
            terms = [float(Bdy @ rec.dgamma) / theta, -0.5 * w(rec.dy),
                     2.0 * theta * dist ** 2 / (2.0 - theta)]
            first.append(sum(terms) / (1.0 + sum(abs(t) for t in terms)))
    return LemmaReport(max(ident, default=0.0), len(ident),
                       min(mono, default=float("inf")), len(mono),
                       min(first) if first else None, len(first))


def d0_upper(problem, z0: BlockPoint, Q):
    """||z0 - z*||_Q for the problem's known solution z*."""
    if problem.known_solution is None:
        raise ValueError("problem has no known solution; supply a distance bound explicitly")
    return Q.norm(z0 - problem.known_solution)


@dataclass
class A467Result:
    inclusion_residual: float
    q_norm: float

    def passed(self, rho, tol=REL_TOL):
        return self.inclusion_residual <= tol and self.q_norm <= rho


def check_inclusion_a467(cert, problem, Q) -> A467Result:
    """Q v in T(x, y, gamma~) via the final witnesses, plus the recomputed ||v||_Q."""
    if cert.wf is None or cert.wg is None:
        raise MissingWitnessError("certificate carries no subgradient witnesses")
    A, B, b = problem.A, problem.B, problem.b
    v = cert.v
    Qv = Q.apply(v)
    blocks = [
        [cert.wf, -A.T @ cert.gamma_tilde, -Qv.x],
        [cert.wg, -B.T @ cert.gamma_tilde, -Qv.y],
        [A @ cert.x, B @ cert.y, -b, -Qv.gamma],
    ]
    worst, scale = 0.0, 0.0
    for terms in blocks:
        r, s = _block_residual(terms)
        worst, scale = max(worst, r), max(scale, s)
    return A467Result(worst / (1.0 + scale), Q.norm(v))


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    detail: str = ""


@dataclass
class CertificationReport:
    checks: List[CheckResult]
    constants: Dict[str, object]

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def to_text(self):
        lines = ["# DR-ADMM certification report",
                 f"# overall: {'PASS' if self.passed else 'FAIL'}"]
        for c in self.checks:
            lines.append(f"# {c.name:<22} {'PASS' if c.passed else 'FAIL'}  "
                         f"worst={c.worst:.3e}  {c.detail}")
        lines.append("")
        lines.extend(f"{k} = {v}" for k, v in self.to_kv().items())
        return "\n".join(lines) + "\n"

    def to_kv(self):
        kv = {"overall.passed": self.passed}
        for c in self.checks:
            kv[f"check.{c.name}.passed"] = c.passed
            kv[f"check.{c.name}.worst"] = c.worst
            if c.detail:
                kv[f"check.{c.name}.detail"] = c.detail
        for k, v in self.constants.items():
            kv[f"constants.{k}"] = v
        return kv


def certify_run(problem, cfg, trace, certificate=None, d0_bound=None) -> CertificationReport:
    """Run every available check on a trace and collect a report."""
    cfg = cfg.resolved(problem)
    Q = cfg.metric(problem)
    z0 = cfg.z0
    if d0_bound is None and problem.known_solution is not None:
        d0_bound = d0_upper(problem, z0, Q)
    params = proposition_params(cfg.theta, cfg.alpha)
    checks = []

    aux = [check_inclusion_aux0(r, problem, Q, z0) for r in trace.records]
    worst = max(aux, default=0.0)
    checks.append(CheckResult("inclusion_aux0", worst <= REL_TOL, worst,
                              f"{len(aux)} iterates"))

    lem = check_lemma_deltak(trace, cfg.beta, cfg.theta, cfg.alpha, problem.B, cfg.S,
                             d0_bound=d0_bound, Q=Q)
    checks.append(CheckResult("lemma_identity", lem.identity_worst <= REL_TOL,
                              lem.identity_worst, f"{lem.identity_count} iterates"))
    checks.append(CheckResult("lemma_monotone", lem.monotone_worst_slack >= -REL_TOL,
                              lem.monotone_worst_slack, f"{lem.monotone_count} pairs"))
    if lem.first_step_worst_slack is not None:
        checks.append(CheckResult("lemma_first_step", lem.first_step_worst_slack >= -REL_TOL,
                                  lem.first_step_worst_slack, f"{lem.first_step_count} cycles"))

    eta = eta_sequence(trace, params.constants, Q, d0_bound)
    es2 = check_es2(trace, Q, params.sigma, params.tau, eta)
    checks.append(CheckResult("error_condition", es2.passed(), es2.worst_relative_slack,
                              f"{len(es2.entries)} checked, {es2.skipped} skipped"))

    constants = {"regime": params.regime, "sigma": params.sigma, "tau": params.tau,
                 "d0_bound": d0_bound, "warm_start": cfg.warm_start,
                 "trace_truncated": trace.truncated}
    if params.constants is not None:
        const = params.constants
        constants.update({k: v for k, v in const.as_dict().items() if k != "G"})
        eig = float(np.linalg.eigvalsh(const.G).min())
        checks.append(CheckResult("g_matrix_psd", eig >= -1e-10, eig))
        checks.append(CheckResult("s_coefficient", const.s_coefficient >= -1e-12,
                                  const.s_coefficient, f"reading {S_COEFFICIENT_READING}"))
        if d0_bound is not None:
            constants["eta0"] = eta.eta0

    if certificate is not None:
        res = check_inclusion_a467(certificate, problem, Q)
        checks.append(CheckResult("certificate_a467", res.passed(cfg.rho), res.inclusion_residual,
                                  f"||v||_Q={res.q_norm:.3e} rho={cfg.rho:.3e}"))
    return CertificationReport(checks, constants)
