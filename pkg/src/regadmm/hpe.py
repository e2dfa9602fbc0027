"""Dynamic regularized HPE framework over an abstract step oracle.

The framework approximately solves 0 in T(z) + mu M (z - z0) for a
decreasing sequence of mu. A step oracle supplies (z_k, z~_k, eta_k); the
framework only runs the two stopping tests and the mu schedule. Whether the
oracle's claims hold is checked elsewhere (see `regadmm.certify`).

Points may be numpy vectors or `BlockPoint`s; the metric only needs a
`norm(point)` method.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Protocol

import numpy as np

from .errors import DimensionError, NonConvergenceError, SingularSystemError
from .operators import PsdOperator


class StepOracle(Protocol):
    def produce(self, z_prev, mu, z0):
        """Return (z_k, z_tilde_k, eta_k)."""


@dataclass
class HpeParams:
    eta0: float = 0.0
    sigma: float = 0.0
    tau: float = 0.5
    rho: float = 1e-6
    mu0: float = 1.0
    max_cycles: int = 60
    max_inner_iters: int = 10**6
    warm_start: bool = True

    def __post_init__(self):
        if self.eta0 < 0:
            raise ValueError("eta0 must be >= 0")
        if not 0.0 <= self.sigma < 1.0:
            raise ValueError("sigma must lie in [0, 1)")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.mu0 != 1.0:
            raise ValueError("the framework starts from mu = 1")


@dataclass
class HpeStep:
    cycle: int
    k: int
    mu: float
    z_prev: object
    z: object
    z_tilde: object
    eta: float


@dataclass
class HpeOutput:
    z_tilde: object
    v: object
    cycles: int
    total_iters: int
    cycle_iters: List[int]
    mu: float
    history: Optional[List[HpeStep]] = field(default=None, repr=False)


def hpe_run(oracle, z0, M, params: HpeParams, record=False) -> HpeOutput:
    mu = params.mu0
    z_prev = z0
    cycle_iters = []
    history = [] if record else None
    total = 0
    for cycle in range(1, params.max_cycles + 1):
        k = 0
        while True:
            k += 1
            if k > params.max_inner_iters:
                raise NonConvergenceError(
                    f"inner loop exceeded {params.max_inner_iters} iterations in cycle {cycle}",
                    trace=history)
            z, z_tilde, eta = oracle.produce(z_prev, mu, z0)
            total += 1
            if history is not None:
                history.append(HpeStep(cycle, k, mu, z_prev, z, z_tilde, eta))
            dz = z_prev - z
            z_prev = z
            if M.norm(dz) <= params.rho / 2:
                break
        cycle_iters.append(k)
        v = dz - mu * (z_tilde - z0)
        if M.norm(v) <= params.rho:
            return HpeOutput(z_tilde, v, cycle, total, cycle_iters, mu, history)
        mu = mu / 2
        if not params.warm_start:
            z_prev = z0
    raise NonConvergenceError(f"no certificate after {params.max_cycles} cycles", trace=history)


@dataclass(frozen=True, eq=False)
class AffineOperator:
    """T(z) = G z + h with G PSD (so T is maximal monotone)."""

    G: np.ndarray
    h: np.ndarray

    def __call__(self, z):
        return self.G @ z + self.h

    @property
    def dim(self):
        return self.h.shape[0]


def _as_matrix(M, dim):
    if isinstance(M, PsdOperator):
        return M.to_dense()
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return M if M.shape == (dim, dim) else np.eye(dim) * M.item()


def _solve(H, rhs):
    try:
        cond = np.linalg.cond(H)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularSystemError(f"system is singular (cond={cond:.3e})")
    return np.linalg.solve(H, rhs)


class ExactAffineOracle:
    """Exact proximal step on T + mu M(. - z0): z = z~ and eta = 0."""

    def __init__(self, T: AffineOperator, M):
        self.T = T
        self.Mmat = _as_matrix(M, T.dim)

    def produce(self, z_prev, mu, z0):
        H = self.T.G + (1.0 + mu) * self.Mmat
        z = _solve(H, self.Mmat @ z_prev + mu * (self.Mmat @ z0) - self.T.h)
        return z, z.copy(), 0.0


def regularized_solution_affine(T: AffineOperator, z0, mu, M):
    """The unique solution of 0 = T(z) + mu M (z - z0)."""
    Mmat = _as_matrix(M, T.dim)
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (T.dim,):
        raise DimensionError(f"z0 has shape {z0.shape}, operator dim is {T.dim}")
    return _solve(T.G + mu * Mmat, mu * (Mmat @ z0) - T.h)


def _metric_norm(Mmat, v):
    return float(np.sqrt(max(v @ (Mmat @ v), 0.0)))


def check_reldist(T: AffineOperator, z0, mu, M, tol=1e-10):
    """||z0 - zbar_mu||_M <= ||z0 - zbar||_M for the regularized and plain zeros of T."""
    Mmat = _as_matrix(M, T.dim)
    z0 = np.asarray(z0, dtype=float)
    z_mu = regularized_solution_affine(T, z0, mu, Mmat)
    # zero of T nearest to z0 in the Euclidean sense; unique when G is nonsingular
    step, *_ = np.linalg.lstsq(T.G, -T.h - T.G @ z0, rcond=None)
    z_bar = z0 + step
    if np.linalg.norm(T(z_bar)) > 1e-8 * (1.0 + np.linalg.norm(T.h)):
        raise SingularSystemError("T has no zero")
    return _metric_norm(Mmat, z0 - z_mu) <= _metric_norm(Mmat, z0 - z_bar) + tol
