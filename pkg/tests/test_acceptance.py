"""The eight release criteria, each printing one PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

from regadmm.bench import complexity_fit, gen_eq_qp, gen_fused, gen_lasso
from regadmm.certify import (REL_TOL, TAU_GRID, _tau_ok, check_es2, check_inclusion_a467,
                             check_inclusion_aux0, check_lemma_deltak, d0_upper, eta_sequence,
                             find_tau, g_matrix, hj34_terms, proposition_params, sigma_bar)
from regadmm.dradmm import DrAdmmConfig, DrAdmmOracle, run, stepsize_bound, validate_config
from regadmm.errors import StepsizeError
from regadmm.hpe import (AffineOperator, ExactAffineOracle, HpeParams, check_reldist, hpe_run)
from regadmm.operators import PsdOperator

RHO = 1e-6
GRID = [(theta, alpha) for theta in (0.5, 1.0, 1.6) for alpha in (0.0, 10.0)]


@pytest.fixture(scope="module")
def instances():
    return {"lasso": gen_lasso(200, 100, 0.1, 0), "fused": gen_fused(100, 0.1, 0),
            "eq_qp": gen_eq_qp(50, 50, 30, 0)}


@pytest.fixture(scope="module")
def runs(instances):
    out = []
    start = time.perf_counter()
    for name, P in instances.items():
        for theta, alpha in GRID:
            cfg = DrAdmmConfig(theta=theta, alpha=alpha, rho=RHO, trace_limit=10**7)
            cert, trace = run(P, cfg)
            out.append((name, P, cfg, cert, trace))
    return out, time.perf_counter() - start


def test_criterion_1_stepsize_domain(acceptance):
    start = time.perf_counter()
    P = gen_lasso(4, 2, 0.1, 0)
    ok = True
    for alpha in (0.0, 1.0, 100.0):
        bound = (1 - alpha + math.sqrt(alpha ** 2 + 6 * alpha + 5)) / 2
        ok &= abs(stepsize_bound(alpha) - bound) <= 1e-6
        validate_config(DrAdmmConfig(theta=bound - 1e-6, alpha=alpha), P)
        for theta in (stepsize_bound(alpha), bound + 1e-6):
            with pytest.raises(StepsizeError):
                validate_config(DrAdmmConfig(theta=theta, alpha=alpha), P)
    ok &= abs(stepsize_bound(0.0) - 1.618034) <= 1e-6
    ok &= abs(stepsize_bound(1e7) - 2.0) <= 1e-6
    elapsed = time.perf_counter() - start
    ok &= elapsed < 1.0
    assert acceptance(1, "stepsize domain", ok, f"{elapsed:.3f}s")


def test_criterion_2_analysis_constants(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    triples = []
    while len(triples) < 200:
        alpha = float(rng.choice([0.0, rng.uniform(0, 2), rng.uniform(0, 200)]))
        theta = float(rng.uniform(1.0, stepsize_bound(alpha)))
        tau_max = find_tau(theta, alpha)
        tau = float(rng.choice([t for t in TAU_GRID if t <= tau_max]))
        if _tau_ok(theta, alpha, tau):
            triples.append((theta, alpha, tau))
    worst_det = worst_eig = worst_hj = 0.0
    ok = True
    for theta, alpha, tau in triples:
        s = sigma_bar(theta, alpha, tau)
        G = g_matrix(s, theta, alpha, tau)
        ok &= 0.0 < s < 1.0
        worst_det = max(worst_det, abs(np.linalg.det(G)))
        worst_eig = min(worst_eig, np.linalg.eigvalsh(G).min())
        worst_hj = max(worst_hj, max(hj34_terms(theta, alpha, tau)) - s)
    ok &= worst_det <= 1e-9 and worst_eig >= -1e-10 and worst_hj <= 1e-10
    elapsed = time.perf_counter() - start
    ok &= elapsed < 5.0
    assert acceptance(2, "analysis constants", ok,
                      f"|det|={worst_det:.1e} min_eig={worst_eig:.1e} hj34-sigma={worst_hj:.1e} "
                      f"{elapsed:.2f}s")


def test_criterion_3_inclusion_certification(runs, acceptance):
    records, solve_time = runs
    start = time.perf_counter()
    worst_aux = worst_lemma = 0.0
    truncated = False
    for name, P, cfg, cert, trace in records:
        r = cfg.resolved(P)
        Q = cfg.metric(P)
        truncated |= trace.truncated or len(trace) != trace.count
        worst_aux = max(worst_aux, max(check_inclusion_aux0(rec, P, Q, r.z0) for rec in trace))
        lem = check_lemma_deltak(trace, cfg.beta, cfg.theta, cfg.alpha, P.B, r.S, Q=Q)
        worst_lemma = max(worst_lemma, lem.identity_worst)
    elapsed = solve_time + time.perf_counter() - start
    ok = not truncated and worst_aux <= 1e-8 and worst_lemma <= 1e-8 and elapsed < 60.0
    assert acceptance(3, "inclusion certification", ok,
                      f"aux0={worst_aux:.1e} lemma={worst_lemma:.1e} runs={len(records)} "
                      f"{elapsed:.1f}s")


def test_criterion_4_error_condition(runs, acceptance):
    records, _ = runs
    ok, checked, skipped, worst = True, 0, 0, math.inf
    for name, P, cfg, cert, trace in records:
        r = cfg.resolved(P)
        Q = cfg.metric(P)
        params = proposition_params(cfg.theta, cfg.alpha)
        if cfg.theta < 1.0:
            ok &= params.sigma == cfg.theta + (cfg.theta - 1.0) ** 2 and params.tau == 0.5
        eta = eta_sequence(trace, params.constants, Q, d0_upper(P, r.z0, Q))
        if params.constants is None:
            ok &= all(v == 0.0 for v in eta.values.values())
        rep = check_es2(trace, Q, params.sigma, params.tau, eta)
        ok &= rep.passed(REL_TOL) and rep.skipped == 0
        checked += len(rep.entries)
        skipped += rep.skipped
        worst = min(worst, rep.worst_relative_slack)
    assert acceptance(4, "error condition", ok,
                      f"checked={checked} skipped={skipped} worst_rel_slack={worst:.1e}")


def test_criterion_5_hpe_equivalence(instances, acceptance):
    worst, ok = 0.0, True
    for P in instances.values():
        for theta, alpha in GRID:
            for warm in (True, False):
                cfg = DrAdmmConfig(theta=theta, alpha=alpha, rho=1e-5, warm_start=warm)
                cert, trace = run(P, cfg)
                oracle = DrAdmmOracle(P, cfg)
                out = hpe_run(oracle, cfg.resolved(P).z0, cfg.metric(P),
                              HpeParams(rho=cfg.rho, warm_start=warm))
                ok &= out.total_iters == cert.total_iters and out.cycle_iters == cert.cycle_iters
                ok &= len(oracle.records) == trace.count
                for a, b in zip(oracle.records, trace.records):
                    for name in ("x", "y", "gamma", "gamma_tilde"):
                        worst = max(worst, float(np.abs(getattr(a, name) - getattr(b, name)).max()))
                worst = max(worst, float(np.abs(out.z_tilde.flat() - cert.z_tilde.flat()).max()))
    ok &= worst == 0.0
    assert acceptance(5, "HPE equivalence", ok, f"max_deviation={worst}")


def test_criterion_6_certificate_validity(runs, acceptance):
    records, _ = runs
    ok, worst_inc, worst_ratio = True, 0.0, 0.0
    for name, P, cfg, cert, trace in records:
        res = check_inclusion_a467(cert, P, cfg.metric(P))
        ok &= res.passed(cfg.rho)
        worst_inc = max(worst_inc, res.inclusion_residual)
        worst_ratio = max(worst_ratio, res.q_norm / cfg.rho)
    assert acceptance(6, "certificate validity", ok,
                      f"inclusion={worst_inc:.1e} max ||v||_Q/rho={worst_ratio:.3f}")


def test_criterion_7_complexity_scaling(acceptance):
    start = time.perf_counter()
    P = gen_eq_qp(50, 50, 30, 0)
    points = []
    for rho in (1e-1, 1e-2, 1e-3, 1e-4):
        cert, _ = run(P, DrAdmmConfig(theta=1.6, alpha=10.0, rho=rho, trace_enabled=False))
        points.append((rho, cert.total_iters))
    fit = complexity_fit(points)
    elapsed = time.perf_counter() - start
    ok = 0.4 <= fit.slope <= 1.4 and elapsed < 300.0
    assert acceptance(7, "complexity scaling", ok,
                      f"slope={fit.slope:.3f} iterations={[n for _, n in points]} {elapsed:.1f}s")


def test_criterion_8_proximal_point_degeneration(acceptance):
    rng = np.random.default_rng(8)

    def random_pd(dim):
        L = rng.standard_normal((dim, dim))
        skew = rng.standard_normal((dim, dim))
        return AffineOperator(L.T @ L + 0.1 * np.eye(dim) + skew - skew.T, rng.standard_normal(dim))

    worst = 0.0
    for _ in range(10):
        dim = int(rng.integers(1, 7))
        T, M = random_pd(dim), PsdOperator.identity(dim)
        out = hpe_run(ExactAffineOracle(T, M), rng.standard_normal(dim), M,
                      HpeParams(eta0=0.0, sigma=0.0, rho=1e-8), record=True)
        worst = max(worst, max(float(np.abs(s.z - s.z_tilde).max()) for s in out.history))
    reldist = 0
    for _ in range(50):
        dim = int(rng.integers(1, 8))
        M = PsdOperator.diagonal(rng.uniform(0.2, 3.0, dim))
        reldist += check_reldist(random_pd(dim), rng.standard_normal(dim), rng.uniform(1e-4, 2), M)
    ok = worst <= 1e-12 and reldist == 50
    assert acceptance(8, "proximal point degeneration", ok,
                      f"max|z-z~|={worst:.1e} reldist={reldist}/50")
