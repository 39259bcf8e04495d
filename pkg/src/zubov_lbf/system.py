"""Autonomous system with obstacles: safe set, proper indicator, scaled field.

Obstacles are ``U_i = {h_i >= 1}``; the safe set is ``{h < 1}`` with
``h = max_i h_i`` and ``gamma = 1 - h``. The proper indicator is
``omega = |x|^2 / (lam * gamma^k)`` and the scaled field is
``f_tilde = lam * gamma^k * f``, which vanishes on obstacle boundaries while
keeping the safe domain of attraction unchanged.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .interval import Box, Interval
from .transform import BetaFamily

NO_OBSTACLE = -1e300


class SystemSpecError(ValueError):
    pass


class UnsafePoint(ValueError):
    pass


class NotHurwitz(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class SystemSpec:
    f: tuple
    obstacles: tuple
    roi: Box
    lam: float = 0.1
    k: int = 1
    beta: BetaFamily = field(default_factory=BetaFamily)
    origin_tolerance: float = 1e-9
    gamma_mode: str = "max"
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "f", tuple(self.f))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        n = len(self.f)
        if n < 1:
            raise SystemSpecError("the vector field needs at least one component")
        if self.roi.is_stack or self.roi.n != n:
            raise SystemSpecError(f"roi must be a single box of dimension {n}")
        for label, exprs in (("f", self.f), ("obstacles", self.obstacles)):
            for j, e in enumerate(exprs):
                if e.max_var() >= n:
                    raise SystemSpecError(f"{label}[{j}] uses x{e.max_var() + 1} but n = {n}")
        if not self.lam > 0:
            raise SystemSpecError(f"lam must be > 0, got {self.lam!r}")
        if not (isinstance(self.k, int) and self.k >= 1):
            raise SystemSpecError(f"k must be an integer >= 1, got {self.k!r}")
        if self.gamma_mode not in ("max", "product"):
            raise SystemSpecError(f"gamma_mode must be 'max' or 'product', got {self.gamma_mode!r}")
        if any(e.has_minmax() for e in self.f):
            raise SystemSpecError("f must be differentiable (no min/max)")
        zero = np.zeros(n)
        f0 = np.array([ex.evaluate(e, zero) for e in self.f])
        if np.linalg.norm(f0) > self.origin_tolerance:
            raise SystemSpecError(f"origin is not an equilibrium: |f(0)| = {np.linalg.norm(f0):.3g}")
        if not h_max(self, zero) < 1.0:
            raise SystemSpecError("origin must be safe: h(0) < 1")
        if not (np.all(self.roi.lo < 0) and np.all(self.roi.hi > 0)):
            raise SystemSpecError("roi must strictly contain the origin")

    @classmethod
    def from_strings(cls, f, obstacles=(), roi=None, **kw) -> SystemSpec:
        n = len(f)
        fx = tuple(ex.parse(s, n) for s in f)
        hx = tuple(ex.parse(s, n) for s in obstacles)
        return cls(f=fx, obstacles=hx, roi=Box.from_bounds(roi), **kw)

    @property
    def n(self) -> int:
        return len(self.f)

    @functools.cached_property
    def h_expr(self) -> ex.Expr:
        """``max_i h_i`` as one expression (constant -1e300 without obstacles)."""
        if not self.obstacles:
            return ex.Const(NO_OBSTACLE)
        e = self.obstacles[0]
        for h in self.obstacles[1:]:
            e = ex.Max(e, h)
        return e

    @functools.cached_property
    def jacobian_exprs(self) -> tuple:
        return tuple(tuple(ex.diff(fi, j) for j in range(self.n)) for fi in self.f)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "f": [str(e) for e in self.f],
            "obstacles": [str(e) for e in self.obstacles],
            "roi": np.column_stack([self.roi.lo, self.roi.hi]).tolist(),
            "lam": self.lam,
            "k": self.k,
            "beta": self.beta.to_dict(),
            "origin_tolerance": self.origin_tolerance,
            "gamma_mode": self.gamma_mode,
        }


def _points(x):
    X = np.asarray(x, dtype=float)
    return X, X.ndim == 1


def field_eval(s: SystemSpec, x) -> np.ndarray:
    """The original vector field ``f`` at a point or a batch of points."""
    X = np.asarray(x, dtype=float)
    return np.stack([np.broadcast_to(np.asarray(e._ev(X), dtype=float), X.shape[:-1]) for e in s.f], axis=-1)


def h_max(s: SystemSpec, x):
    X, single = _points(x)
    if not s.obstacles:
        out = np.full(X.shape[:-1], NO_OBSTACLE)
    else:
        out = np.asarray(s.obstacles[0]._ev(X), dtype=float)
        for h in s.obstacles[1:]:
            out = np.maximum(out, h._ev(X))
        out = np.broadcast_to(out, X.shape[:-1])
    return float(out) if single else np.array(out)


def gamma(s: SystemSpec, x):
    """``1 - h`` (default), or ``prod_i (1 - h_i)`` in product mode."""
    X, single = _points(x)
    if s.gamma_mode == "product" and s.obstacles:
        out = np.ones(X.shape[:-1])
        for h in s.obstacles:
            out = out * (1.0 - np.asarray(h._ev(X)))
        return float(out) if single else out
    return 1.0 - h_max(s, X)


def omega(s: SystemSpec, x):
    X, single = _points(x)
    g = np.asarray(gamma(s, X))
    if np.any(g <= 0):
        raise UnsafePoint("omega is only defined on the safe set (gamma > 0)")
    out = np.sum(X * X, axis=-1) / (s.lam * g**s.k)
    return float(out) if single else out


def scaling(s: SystemSpec, x):
    """Positive factor ``lam * gamma^k`` relating ``f_tilde`` to ``f`` on the safe set."""
    g = np.asarray(gamma(s, x))
    out = s.lam * g**s.k
    return float(out) if out.ndim == 0 else out


def scaled_field(s: SystemSpec, x) -> np.ndarray:
    X, single = _points(x)
    return np.asarray(scaling(s, X))[..., None] * field_eval(s, X)


def jacobian(s: SystemSpec, x) -> np.ndarray:
    """Jacobian of ``f`` at a point, shape (n, n)."""
    x = np.asarray(x, dtype=float)
    return np.array([[ex.evaluate(d, x) for d in row] for row in s.jacobian_exprs])


def jacobian_at_origin(s: SystemSpec) -> np.ndarray:
    return jacobian(s, np.zeros(s.n))


def scaled_jacobian_at_origin(s: SystemSpec) -> np.ndarray:
    """``D f_tilde(0) = lam * gamma(0)^k * A`` (product rule with ``f(0) = 0``)."""
    return scaling(s, np.zeros(s.n)) * jacobian_at_origin(s)


def is_hurwitz(A, tol: float = 1e-9) -> bool:
    return bool(np.all(np.linalg.eigvals(np.asarray(A, dtype=float)).real < -tol))


def solve_lyapunov(A, Q=None) -> np.ndarray:
    """Solve ``A^T P + P A = -Q`` for symmetric ``P``.

    Dense solve on the n(n+1)/2 upper-triangular unknowns; raises
    :class:`NotHurwitz` if that system is singular or ``P`` is not positive definite.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    Q = np.eye(n) if Q is None else np.asarray(Q, dtype=float)
    iu = np.triu_indices(n)
    m = len(iu[0])
    M = np.empty((m, m))
    for u, (k, l) in enumerate(zip(*iu)):
        E = np.zeros((n, n))
        E[k, l] = E[l, k] = 1.0
        M[:, u] = (A.T @ E + E @ A)[iu]
    try:
        p = np.linalg.solve(M, -Q[iu])
    except np.linalg.LinAlgError as err:
        raise NotHurwitz(f"Lyapunov equation is singular: {err}") from None
    P = np.zeros((n, n))
    P[iu] = p
    P = P + np.triu(P, 1).T
    if not np.all(np.linalg.eigvalsh(P) > 0):
        raise NotHurwitz("Lyapunov solution is not positive definite; A is not Hurwitz")
    return P


@dataclass(frozen=True, eq=False)
class Linearization:
    A: np.ndarray
    P: np.ndarray
    Q: np.ndarray

    @property
    def residual(self) -> float:
        return float(np.linalg.norm(self.A.T @ self.P + self.P @ self.A + self.Q))


def linearize(s: SystemSpec, Q=None, hurwitz_tol: float = 1e-9) -> Linearization:
    A = jacobian_at_origin(s)
    if not is_hurwitz(A, hurwitz_tol):
        raise NotHurwitz(f"Jacobian at the origin is not Hurwitz: eig = {np.linalg.eigvals(A)}")
    Q = np.eye(s.n) if Q is None else np.asarray(Q, dtype=float)
    return Linearization(A=A, P=solve_lyapunov(A, Q), Q=Q)


def interval_jacobian(s: SystemSpec, b: Box) -> list[list[Interval]]:
    """Entrywise enclosure of the Jacobian of ``f`` over ``b`` (or a box stack)."""
    return [[ex.interval_eval(d, b) for d in row] for row in s.jacobian_exprs]


def interval_field(s: SystemSpec, b: Box) -> list[Interval]:
    return [ex.interval_eval(e, b) for e in s.f]


def interval_h(s: SystemSpec, b: Box) -> Interval:
    return ex.interval_eval(s.h_expr, b)
