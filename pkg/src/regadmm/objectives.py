"""Problem model: min f(x) + g(y) s.t. Ax + By = b, and the two subproblem solves.

Subproblems are solved exactly by one of two closed-form strategies:

* quadratic: f (resp. g) is a quadratic, so the subproblem is an SPD
  linear system;
* prox: f is prox-capable, A^T A = nu I and R = r I, so the subproblem is
  a single prox evaluation.

Every solve also returns the subgradient it certifies, so downstream
verification never has to re-derive one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Union

import numpy as np
import scipy.linalg

from .errors import (
    DimensionError,
    SingularSystemError,
    StrategyError,
    UnsupportedFunctionError,
)
from .operators import BlockPoint, PsdOperator

SCALED_IDENTITY_TOL = 1e-10
KKT_CONSTRUCTION_TOL = 1e-8

PROX_KINDS = ("l1", "sq_l2", "box", "zero")


@dataclass(frozen=True, eq=False)
class ProxFunction:
    """A prox-capable convex function.

    kinds:
      l1      weight * ||v||_1
      sq_l2   (weight / 2) * ||v - center||^2
      box     indicator of {lower <= v <= upper}
      zero    the zero function
    """

    kind: str
    weight: float = 0.0
    center: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in PROX_KINDS:
            raise UnsupportedFunctionError(f"unknown prox function kind {self.kind!r}")
        if self.weight < 0:
            raise ValueError("weight must be nonnegative")
        for name in ("center", "lower", "upper"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, np.asarray(val, dtype=float))
        if self.kind == "box" and np.any(self.lower > self.upper):
            raise ValueError("box needs lower <= upper")

    @classmethod
    def l1(cls, weight=1.0):
        return cls("l1", weight=float(weight))

    @classmethod
    def sq_l2(cls, weight, center):
        return cls("sq_l2", weight=float(weight), center=center)

    @classmethod
    def box(cls, lower, upper):
        return cls("box", lower=lower, upper=upper)

    @classmethod
    def zero(cls):
        return cls("zero")

    def _center(self, v):
        return np.zeros_like(v) if self.center is None else np.broadcast_to(self.center, v.shape)

    def value(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "l1":
            return self.weight * float(np.abs(v).sum())
        if self.kind == "sq_l2":
            d = v - self._center(v)
            return 0.5 * self.weight * float(d @ d)
        if self.kind == "box":
            inside = np.all(v >= self.lower) and np.all(v <= self.upper)
            return 0.0 if inside else np.inf
        return 0.0

    def prox(self, v, t):
        """argmin_u f(u) + ||u - v||^2 / (2t)."""
        if t <= 0:
            raise ValueError("prox step must be positive")
        v = np.asarray(v, dtype=float)
        if self.kind == "l1":
            return np.sign(v) * np.maximum(np.abs(v) - t * self.weight, 0.0)
        if self.kind == "sq_l2":
            c = self._center(v)
            return (v + t * self.weight * c) / (1.0 + t * self.weight)
        if self.kind == "box":
            return np.clip(v, self.lower, self.upper)
        return v.copy()

    def subgradient_distance(self, x, w):
        """Euclidean distance from w to the subdifferential at x."""
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        if self.kind == "l1":
            lam = self.weight
            d = np.where(x != 0, np.abs(w - lam * np.sign(x)), np.maximum(np.abs(w) - lam, 0.0))
        elif self.kind == "sq_l2":
            d = w - self.weight * (x - self._center(x))
        elif self.kind == "box":
            lo = np.broadcast_to(self.lower, x.shape)
            hi = np.broadcast_to(self.upper, x.shape)
            if np.any(x < lo) or np.any(x > hi):
                return np.inf
            at_lo = x == lo
            at_hi = x == hi
            d = np.where(at_lo & at_hi, 0.0,
                         np.where(at_lo, np.maximum(w, 0.0),
                                  np.where(at_hi, np.maximum(-w, 0.0), np.abs(w))))
        else:
            d = w
        return float(np.linalg.norm(d))

    def as_quadratic(self, dim):
        """Equivalent QuadraticFunction for the smooth kinds, else None."""
        if self.kind == "zero":
            return QuadraticFunction(PsdOperator.zero(dim), np.zeros(dim), 0.0)
        if self.kind == "sq_l2":
            c = self._center(np.zeros(dim))
            return QuadraticFunction(PsdOperator.scaled_identity(dim, self.weight),
                                     -self.weight * c, 0.5 * self.weight * float(c @ c))
        return None

    def to_dict(self):
        params = {}
        if self.kind in ("l1", "sq_l2"):
            params["weight"] = self.weight
        if self.kind == "sq_l2" and self.center is not None:
            params["center"] = np.broadcast_to(self.center, self.center.shape).tolist()
        if self.kind == "box":
            params["lower"] = np.asarray(self.lower).tolist()
            params["upper"] = np.asarray(self.upper).tolist()
        return {"kind": self.kind, "params": params}


@dataclass(frozen=True, eq=False)
class QuadraticFunction:
    """0.5 x^T P x + q^T x + r."""

    P: PsdOperator
    q: np.ndarray
    r: float = 0.0

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.shape != (self.P.dim,):
            raise DimensionError("q must match the dimension of P")
        object.__setattr__(self, "q", q)

    kind = "quadratic"

    @property
    def dim(self):
        return self.P.dim

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * self.P.quad(x) + float(self.q @ x) + self.r

    def grad(self, x):
        return self.P.apply(x) + self.q

    def subgradient_distance(self, x, w):
        return float(np.linalg.norm(np.asarray(w, dtype=float) - self.grad(x)))

    def as_quadratic(self, dim):
        return self

    def to_dict(self):
        return {"kind": "quadratic",
                "params": {"P": self.P.to_dense().tolist(), "q": self.q.tolist(), "r": self.r}}


Function = Union[ProxFunction, QuadraticFunction]


def function_from_dict(d, dim) -> Function:
    kind = d["kind"]
    params = d.get("params", {})
    if kind == "quadratic":
        if "P_diag" in params:
            P = PsdOperator.diagonal(params["P_diag"])
        else:
            P = PsdOperator.dense(params["P"])
        q = params.get("q", np.zeros(dim))
        return QuadraticFunction(P, q, float(params.get("r", 0.0)))
    if kind == "l1":
        return ProxFunction.l1(params.get("weight", 1.0))
    if kind == "sq_l2":
        return ProxFunction.sq_l2(params.get("weight", 1.0), params.get("center", np.zeros(dim)))
    if kind == "box":
        return ProxFunction.box(params["lower"], params["upper"])
    if kind == "zero":
        return ProxFunction.zero()
    raise UnsupportedFunctionError(f"unknown function kind {kind!r}")


def _identity_scale(M, tol=SCALED_IDENTITY_TOL):
    """nu if M^T M == nu I to max-entry tolerance, else None."""
    G = M.T @ M
    nu = float(np.trace(G)) / G.shape[0]
    return nu if np.abs(G - nu * np.eye(G.shape[0])).max(initial=0.0) <= tol else None


@dataclass(frozen=True, eq=False)
class SeparableProblem:
    f: Function
    g: Function
    A: np.ndarray
    B: np.ndarray
    b: np.ndarray
    known_solution: Optional[BlockPoint] = None
    name: str = ""

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        B = np.array(self.B, dtype=float)
        b = np.array(self.b, dtype=float)
        if A.ndim != 2 or B.ndim != 2 or b.ndim != 1:
            raise DimensionError("A, B must be matrices and b a vector")
        if not (A.shape[0] == B.shape[0] == b.shape[0]):
            raise DimensionError(f"row mismatch: A {A.shape}, B {B.shape}, b {b.shape}")
        for arr in (A, B, b):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "b", b)
        for fun, dim, name in ((self.f, self.n, "f"), (self.g, self.p, "g")):
            if isinstance(fun, QuadraticFunction) and fun.dim != dim:
                raise DimensionError(f"{name} has dim {fun.dim}, expected {dim}")
        if self.known_solution is not None:
            if self.known_solution.dims != (self.n, self.p, self.m):
                raise DimensionError("known_solution dims do not match the problem")
            zs = self.known_solution
            res = kkt_residual(self, zs.x, zs.y, zs.gamma)
            if res > KKT_CONSTRUCTION_TOL * (1.0 + zs.max_abs()):
                raise ValueError(f"known_solution has KKT residual {res:.3e}")

    @property
    def n(self):
        return self.A.shape[1]

    @property
    def p(self):
        return self.B.shape[1]

    @property
    def m(self):
        return self.A.shape[0]

    @cached_property
    def AtA(self):
        return self.A.T @ self.A

    @cached_property
    def BtB(self):
        return self.B.T @ self.B

    @cached_property
    def A_scale(self):
        return _identity_scale(self.A)

    @cached_property
    def B_scale(self):
        return _identity_scale(self.B)

    def objective(self, x, y):
        return self.f.value(x) + self.g.value(y)

    def to_dict(self):
        d = {"n": self.n, "p": self.p, "m": self.m,
             "f": self.f.to_dict(), "g": self.g.to_dict(),
             "A": self.A.tolist(), "B": self.B.tolist(), "b": self.b.tolist()}
        if self.name:
            d["name"] = self.name
        if self.known_solution is not None:
            d["known_solution"] = self.known_solution.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        n, p, m = int(d["n"]), int(d["p"]), int(d["m"])
        A = np.asarray(d["A"], dtype=float).reshape(m, n)
        B = np.asarray(d["B"], dtype=float).reshape(m, p)
        ks = d.get("known_solution")
        return cls(function_from_dict(d["f"], n), function_from_dict(d["g"], p), A, B,
                   np.asarray(d["b"], dtype=float),
                   known_solution=BlockPoint.from_dict(ks) if ks else None,
                   name=d.get("name", ""))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _spd_solve(H, rhs, cache=None, key=None):
    if cache is not None and key is not None and cache.get("key") == key:
        factor = cache["factor"]
    else:
        try:
            factor = scipy.linalg.cho_factor(H, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(f"subproblem system is not positive definite: {exc}") from exc
        if not np.all(np.isfinite(factor[0])):
            raise SingularSystemError("subproblem factorization is not finite")
        if cache is not None and key is not None:
            cache["key"] = key
            cache["factor"] = factor
    return scipy.linalg.cho_solve(factor, rhs, check_finite=False)


def solve_x_subproblem(problem, gamma_hat, y_prev, x_hat, beta1, mu, R, cache=None):
    """Minimize f(x) - <gamma_hat, Ax> + beta1/2 ||Ax + B y_prev - b||^2
    + (1+mu)/2 ||x - x_hat||_R^2.

    Returns (x, w) with w in the subdifferential of f at x.
    """
    if beta1 <= 0 or mu <= 0:
        raise ValueError("beta1 and mu must be positive")
    A = problem.A
    c = problem.B @ y_prev - problem.b
    lin = A.T @ gamma_hat - beta1 * (A.T @ c) + (1.0 + mu) * R.apply(x_hat)
    quad = problem.f.as_quadratic(problem.n)
    if quad is not None:
        H = quad.P.to_dense() + beta1 * problem.AtA + (1.0 + mu) * R.to_dense()
        x = _spd_solve(H, lin - quad.q, cache, ("x", beta1, mu))
        return x, quad.grad(x)
    nu = problem.A_scale
    r = R.identity_scale()
    if nu is None or r is None:
        raise StrategyError(
            "prox strategy for the x-subproblem needs A^T A = nu I and R = r I "
            f"(A^T A scaled identity: {nu is not None}, R scaled identity: {r is not None}); "
            "use a quadratic f or choose R accordingly")
    kappa = beta1 * nu + (1.0 + mu) * r
    if kappa <= 0:
        raise SingularSystemError("x-subproblem has no curvature (A = 0 and R = 0)")
    t = 1.0 / kappa
    v = t * lin
    x = problem.f.prox(v, t)
    return x, (v - x) / t


def solve_y_subproblem(problem, u, x, y_hat, beta2, alpha, beta, S, cache=None):
    """Minimize g(y) - <u, By> + beta2/2 [||Ax + By - b||^2
    + alpha ||B(y - y_hat)||^2 + ||y - y_hat||_S^2 / beta].

    Returns (y, w) with w in the subdifferential of g at y.
    """
    if beta2 <= 0:
        raise ValueError("beta2 must be positive")
    B = problem.B
    c = problem.A @ x - problem.b
    lin = (B.T @ u - beta2 * (B.T @ c) + beta2 * alpha * (problem.BtB @ y_hat)
           + (beta2 / beta) * S.apply(y_hat))
    quad = problem.g.as_quadratic(problem.p)
    if quad is not None:
        H = quad.P.to_dense() + beta2 * (1.0 + alpha) * problem.BtB + (beta2 / beta) * S.to_dense()
        y = _spd_solve(H, lin - quad.q, cache, ("y", beta2, alpha, beta))
        return y, quad.grad(y)
    nu = problem.B_scale
    s = S.identity_scale()
    if nu is None or s is None:
        raise StrategyError(
            "prox strategy for the y-subproblem needs B^T B = nu I and S = s I "
            f"(B^T B scaled identity: {nu is not None}, S scaled identity: {s is not None}); "
            "use a quadratic g or choose S accordingly")
    kappa = beta2 * (1.0 + alpha) * nu + (beta2 / beta) * s
    if kappa <= 0:
        raise SingularSystemError("y-subproblem has no curvature (B = 0 and S = 0)")
    t = 1.0 / kappa
    v = t * lin
    y = problem.g.prox(v, t)
    return y, (v - y) / t


def kkt_residual(problem, x, y, gamma):
    """max of dist(A^T gamma, df(x)), dist(B^T gamma, dg(y)), ||Ax + By - b||."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if x.shape != (problem.n,) or y.shape != (problem.p,) or gamma.shape != (problem.m,):
        raise DimensionError("point dimensions do not match the problem")
    rf = problem.f.subgradient_distance(x, problem.A.T @ gamma)
    rg = problem.g.subgradient_distance(y, problem.B.T @ gamma)
    rc = float(np.linalg.norm(problem.A @ x + problem.B @ y - problem.b))
    return max(rf, rg, rc)
