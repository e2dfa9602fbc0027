"""PSD operator algebra, block points and the block-diagonal metric Q.

Q acts on z = (x, y, gamma) as

    Q z = (R x, ((1 + alpha) beta B^T B + S) y, gamma / (theta beta)),

and every stopping test and certificate in the package is measured in the
seminorm it induces.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .errors import DimensionError, PsdViolationError

PSD_TOL = 1e-12
GRAM_CACHE_MAX_DIM = 2000

_KINDS = ("zero", "identity", "diagonal", "dense", "gram")


def _as_vector(v, dim=None, name="vector"):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be 1-d, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise DimensionError(f"{name} has length {v.shape[0]}, expected {dim}")
    return v


@dataclass(frozen=True, eq=False)
class PsdOperator:
    """Symmetric positive semidefinite linear operator on R^dim.

    Use the constructors (`zero`, `scaled_identity`, `diagonal`, `dense`,
    `gram`) rather than instantiating directly.
    """

    kind: str
    dim: int
    scale: float = 0.0
    diag: Optional[np.ndarray] = None
    matrix: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if self.dim < 1:
            raise DimensionError("operator dimension must be positive")

    @classmethod
    def zero(cls, dim):
        return cls("zero", int(dim))

    @classmethod
    def scaled_identity(cls, dim, c=1.0):
        if c < 0:
            raise PsdViolationError(f"scaled identity needs c >= 0, got {c}")
        if c == 0:
            return cls.zero(dim)
        return cls("identity", int(dim), scale=float(c))

    @classmethod
    def identity(cls, dim):
        return cls.scaled_identity(dim, 1.0)

    @classmethod
    def diagonal(cls, d):
        d = _as_vector(d, name="diagonal")
        if np.any(d < 0):
            raise PsdViolationError("diagonal operator needs nonnegative entries")
        d = d.copy()
        d.setflags(write=False)
        return cls("diagonal", d.shape[0], diag=d)

    @classmethod
    def dense(cls, H, check=True):
        H = np.array(H, dtype=float)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise DimensionError(f"dense operator must be square, got {H.shape}")
        scale = 1.0 + np.abs(H).max(initial=0.0)
        if check:
            if np.abs(H - H.T).max(initial=0.0) > 1e-10 * scale:
                raise PsdViolationError("dense operator is not symmetric")
            if np.linalg.eigvalsh(0.5 * (H + H.T)).min() < -1e-10 * scale:
                raise PsdViolationError("dense operator is not PSD")
        H = 0.5 * (H + H.T)
        H.setflags(write=False)
        return cls("dense", H.shape[0], matrix=H)

    @classmethod
    def gram(cls, M, c=1.0):
        """The operator c * M^T M for a stored (k x dim) matrix M."""
        if c < 0:
            raise PsdViolationError(f"Gram scale must be >= 0, got {c}")
        M = np.array(M, dtype=float)
        if M.ndim != 2:
            raise DimensionError("Gram factor must be a matrix")
        M.setflags(write=False)
        return cls("gram", M.shape[1], scale=float(c), matrix=M)

    @cached_property
    def _gram_cache(self):
        if self.kind == "gram" and self.dim <= GRAM_CACHE_MAX_DIM:
            G = self.scale * (self.matrix.T @ self.matrix)
            G.setflags(write=False)
            return G
        return None

    def apply(self, v):
        v = _as_vector(v, self.dim)
        if self.kind == "zero":
            return np.zeros(self.dim)
        if self.kind == "identity":
            return self.scale * v
        if self.kind == "diagonal":
            return self.diag * v
        if self.kind == "dense":
            return self.matrix @ v
        if self._gram_cache is not None:
            return self._gram_cache @ v
        return self.scale * (self.matrix.T @ (self.matrix @ v))

    __call__ = apply

    def quad(self, v):
        """v . H v, evaluated in the representation's most accurate form."""
        v = _as_vector(v, self.dim)
        if self.kind == "zero":
            return 0.0
        if self.kind == "identity":
            return self.scale * float(v @ v)
        if self.kind == "diagonal":
            return float(self.diag @ (v * v))
        if self.kind == "gram":
            Mv = self.matrix @ v
            return self.scale * float(Mv @ Mv)
        return float(v @ (self.matrix @ v))

    def norm(self, v):
        return seminorm(self, v)

    def to_dense(self):
        if self.kind == "zero":
            return np.zeros((self.dim, self.dim))
        if self.kind == "identity":
            return self.scale * np.eye(self.dim)
        if self.kind == "diagonal":
            return np.diag(self.diag)
        if self.kind == "dense":
            return np.array(self.matrix)
        return self.scale * (self.matrix.T @ self.matrix)

    def identity_scale(self, tol=1e-10):
        """Return c if the operator equals c*I (max-entry tolerance), else None."""
        if self.kind == "zero":
            return 0.0
        if self.kind == "identity":
            return self.scale
        if self.kind == "diagonal":
            c = float(self.diag.mean())
            return c if np.abs(self.diag - c).max() <= tol else None
        H = self.to_dense()
        c = float(np.trace(H)) / self.dim
        return c if np.abs(H - c * np.eye(self.dim)).max() <= tol else None

    def __add__(self, other):
        if not isinstance(other, PsdOperator):
            return NotImplemented
        if other.dim != self.dim:
            raise DimensionError("operator dimensions differ")
        if self.kind == "zero":
            return other
        if other.kind == "zero":
            return self
        if self.kind == other.kind == "identity":
            return PsdOperator.scaled_identity(self.dim, self.scale + other.scale)
        return PsdOperator.dense(self.to_dense() + other.to_dense(), check=False)

    def scaled(self, c):
        if c < 0:
            raise PsdViolationError("PSD operators can only be scaled by c >= 0")
        if c == 0 or self.kind == "zero":
            return PsdOperator.zero(self.dim)
        if self.kind == "identity":
            return PsdOperator.scaled_identity(self.dim, c * self.scale)
        if self.kind == "diagonal":
            return PsdOperator.diagonal(c * self.diag)
        if self.kind == "gram":
            return PsdOperator.gram(self.matrix, c * self.scale)
        return PsdOperator.dense(c * self.matrix, check=False)

    def to_dict(self):
        if self.kind == "zero":
            return {"kind": "zero", "dim": self.dim}
        if self.kind == "identity":
            return {"kind": "identity", "dim": self.dim, "scale": self.scale}
        if self.kind == "diagonal":
            return {"kind": "diagonal", "diag": self.diag.tolist()}
        if self.kind == "dense":
            return {"kind": "dense", "matrix": self.matrix.tolist()}
        return {"kind": "gram", "scale": self.scale, "matrix": self.matrix.tolist()}

    @classmethod
    def from_dict(cls, d):
        kind = d["kind"]
        if kind == "zero":
            return cls.zero(d["dim"])
        if kind == "identity":
            return cls.scaled_identity(d["dim"], d["scale"])
        if kind == "diagonal":
            return cls.diagonal(d["diag"])
        if kind == "dense":
            return cls.dense(d["matrix"])
        if kind == "gram":
            return cls.gram(d["matrix"], d.get("scale", 1.0))
        raise ValueError(f"unknown operator kind {kind!r}")


def seminorm(H: PsdOperator, v) -> float:
    """sqrt(v . H v); raises if the radicand is meaningfully negative."""
    v = _as_vector(v, H.dim)
    r = H.quad(v)
    if r < 0:
        if r < -PSD_TOL * max(1.0, float(v @ v)):
            raise PsdViolationError(f"negative radicand {r:.3e} in seminorm")
        return 0.0
    return float(np.sqrt(r))


@dataclass(frozen=True, eq=False)
class BlockPoint:
    """A triple (x, y, gamma) with componentwise vector-space arithmetic."""

    x: np.ndarray
    y: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        for name in ("x", "y", "gamma"):
            object.__setattr__(self, name, _as_vector(getattr(self, name), name=name))

    @classmethod
    def zeros(cls, n, p, m):
        return cls(np.zeros(n), np.zeros(p), np.zeros(m))

    @property
    def dims(self):
        return (self.x.shape[0], self.y.shape[0], self.gamma.shape[0])

    def __add__(self, other):
        return BlockPoint(self.x + other.x, self.y + other.y, self.gamma + other.gamma)

    def __sub__(self, other):
        return BlockPoint(self.x - other.x, self.y - other.y, self.gamma - other.gamma)

    def __mul__(self, c):
        return BlockPoint(c * self.x, c * self.y, c * self.gamma)

    __rmul__ = __mul__

    def __neg__(self):
        return BlockPoint(-self.x, -self.y, -self.gamma)

    def dot(self, other):
        return float(self.x @ other.x + self.y @ other.y + self.gamma @ other.gamma)

    def flat(self):
        return np.concatenate([self.x, self.y, self.gamma])

    @classmethod
    def from_flat(cls, v, n, p, m):
        v = np.asarray(v, dtype=float)
        return cls(v[:n], v[n:n + p], v[n + p:n + p + m])

    def max_abs(self):
        return float(max(np.abs(self.x).max(initial=0.0),
                         np.abs(self.y).max(initial=0.0),
                         np.abs(self.gamma).max(initial=0.0)))

    def allclose(self, other, atol=0.0, rtol=0.0):
        return all(np.allclose(a, b, atol=atol, rtol=rtol)
                   for a, b in zip((self.x, self.y, self.gamma),
                                   (other.x, other.y, other.gamma)))

    def to_dict(self):
        return {"x": self.x.tolist(), "y": self.y.tolist(), "gamma": self.gamma.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["x"], d["y"], d["gamma"])


@dataclass(frozen=True, eq=False)
class QMetric:
    """Block-diagonal metric diag(R, (1+alpha) beta B^T B + S, I/(theta beta)).

    Stored structurally; nothing is assembled unless `to_dense` is called.
    """

    R: PsdOperator
    S: PsdOperator
    B: np.ndarray
    alpha: float
    beta: float
    theta: float
    _BtB: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        B = np.array(self.B, dtype=float)
        if B.ndim != 2:
            raise DimensionError("B must be a matrix")
        if B.shape[1] != self.S.dim:
            raise DimensionError(f"S has dim {self.S.dim} but B has {B.shape[1]} columns")
        if self.alpha < 0 or self.beta <= 0 or self.theta <= 0:
            raise ValueError("QMetric needs alpha >= 0, beta > 0, theta > 0")
        B.setflags(write=False)
        object.__setattr__(self, "B", B)
        if B.shape[1] <= GRAM_CACHE_MAX_DIM:
            BtB = B.T @ B
            BtB.setflags(write=False)
            object.__setattr__(self, "_BtB", BtB)

    @property
    def dims(self):
        return (self.R.dim, self.S.dim, self.B.shape[0])

    @property
    def gamma_weight(self):
        return 1.0 / (self.theta * self.beta)

    def _check(self, z):
        if z.dims != self.dims:
            raise DimensionError(f"point dims {z.dims} do not match metric dims {self.dims}")

    def btb(self, y):
        if self._BtB is not None:
            return self._BtB @ y
        return self.B.T @ (self.B @ y)

    def apply(self, z: BlockPoint) -> BlockPoint:
        self._check(z)
        yb = (1.0 + self.alpha) * self.beta * self.btb(z.y) + self.S.apply(z.y)
        return BlockPoint(self.R.apply(z.x), yb, self.gamma_weight * z.gamma)

    __call__ = apply

    def sq_norm(self, z: BlockPoint) -> float:
        self._check(z)
        By = self.B @ z.y
        return (self.R.quad(z.x) + (1.0 + self.alpha) * self.beta * float(By @ By)
                + self.S.quad(z.y) + self.gamma_weight * float(z.gamma @ z.gamma))

    def norm(self, z: BlockPoint) -> float:
        return float(np.sqrt(max(self.sq_norm(z), 0.0)))

    def y_weight_quad(self, dy):
        """||dy||^2 in the operator alpha beta B^T B + S."""
        Bd = self.B @ dy
        return self.alpha * self.beta * float(Bd @ Bd) + self.S.quad(dy)

    def to_dense(self):
        n, p, m = self.dims
        Q = np.zeros((n + p + m, n + p + m))
        Q[:n, :n] = self.R.to_dense()
        Q[n:n + p, n:n + p] = (1.0 + self.alpha) * self.beta * (self.B.T @ self.B) + self.S.to_dense()
        Q[n + p:, n + p:] = self.gamma_weight * np.eye(m)
        return Q


def q_apply(Q: QMetric, z: BlockPoint) -> BlockPoint:
    return Q.apply(z)


def q_norm(Q: QMetric, z: BlockPoint) -> float:
    return Q.norm(z)
