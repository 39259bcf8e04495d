"""Outward-widened interval arithmetic and axis-aligned boxes.

Intervals hold ``lo``/``hi`` as numpy arrays (0-d for a scalar interval), so one
object can carry a whole stack of enclosures; every operation is elementwise.

There is no directed hardware rounding. Instead every result is widened outward
by a relative slack ``eta`` plus an absolute ``1e-300``. Each elementary float
operation is correctly rounded (or within a few ulp for the transcendental
functions), so a relative widening of ``1e-12`` covers the rounding error with a
wide margin. The slack is process-global and can be changed with
:func:`set_slack` or the :func:`slack` context manager.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass

import numpy as np

DEFAULT_SLACK = 1e-12
ABS_SLACK = 1e-300

_slack = DEFAULT_SLACK


class IntervalDomainError(ArithmeticError):
    """An interval provably lies outside the domain of a function."""


def get_slack() -> float:
    return _slack


def set_slack(eta: float) -> None:
    global _slack
    if not eta >= 0.0:
        raise ValueError(f"slack must be >= 0, got {eta!r}")
    _slack = float(eta)


@contextlib.contextmanager
def slack(eta: float):
    old = get_slack()
    set_slack(eta)
    try:
        yield
    finally:
        set_slack(old)


def _widen(lo, hi):
    eta = _slack
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    with np.errstate(invalid="ignore", over="ignore"):
        lo = lo - (eta * np.abs(lo) + ABS_SLACK)
        hi = hi + (eta * np.abs(hi) + ABS_SLACK)
    # inf - inf style products come out as nan; the sound answer is unbounded
    lo = np.where(np.isnan(lo), -np.inf, lo)
    hi = np.where(np.isnan(hi), np.inf, hi)
    return lo, hi


class Interval:
    """Closed interval ``[lo, hi]``, possibly a stack of them.

    Construction does not widen; arithmetic results do.
    """

    __slots__ = ("lo", "hi")
    __array_priority__ = 1000  # make ndarray <op> Interval defer to us

    def __init__(self, lo, hi=None):
        lo = np.asarray(lo, dtype=float)
        hi = lo if hi is None else np.asarray(hi, dtype=float)
        lo, hi = np.broadcast_arrays(lo, hi)
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("interval endpoints must not be nan")
        if np.any(lo > hi):
            raise ValueError(f"interval with lo > hi: [{lo}, {hi}]")
        self.lo = lo
        self.hi = hi

    @classmethod
    def _wide(cls, lo, hi) -> Interval:
        lo, hi = _widen(lo, hi)
        obj = cls.__new__(cls)
        obj.lo, obj.hi = np.broadcast_arrays(lo, hi)
        return obj

    @classmethod
    def point(cls, x) -> Interval:
        return cls(x, x)

    @classmethod
    def entire(cls, shape=()) -> Interval:
        return cls(np.full(shape, -np.inf), np.full(shape, np.inf))

    # -- queries -----------------------------------------------------------

    @property
    def shape(self):
        return self.lo.shape

    @property
    def width(self):
        return self.hi - self.lo

    @property
    def mid(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def mag(self):
        """Largest absolute value in the interval."""
        return np.maximum(np.abs(self.lo), np.abs(self.hi))

    def contains(self, x, tol: float = 0.0):
        x = np.asarray(x, dtype=float)
        return (self.lo - tol <= x) & (x <= self.hi + tol)

    def subset_of(self, other: Interval, tol: float = 0.0):
        return (other.lo - tol <= self.lo) & (self.hi <= other.hi + tol)

    def hull(self, other: Interval) -> Interval:
        return Interval(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    def intersect(self, other: Interval) -> Interval:
        """Intersection; callers must know the two enclosures overlap."""
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        return Interval(np.minimum(lo, hi), np.maximum(lo, hi))

    def __getitem__(self, idx) -> Interval:
        return Interval(self.lo[idx], self.hi[idx])

    def __len__(self):
        return len(self.lo)

    def __repr__(self):
        if self.lo.ndim == 0:
            return f"Interval({float(self.lo)!r}, {float(self.hi)!r})"
        return f"Interval(lo={self.lo!r}, hi={self.hi!r})"

    def __eq__(self, other):
        if not isinstance(other, Interval):
            return NotImplemented
        return bool(np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi))

    __hash__ = None

    # -- arithmetic --------------------------------------------------------

    @staticmethod
    def _coerce(other) -> Interval:
        if isinstance(other, Interval):
            return other
        return Interval(other, other)

    def __neg__(self):
        # negation is exact
        return Interval(-self.hi, -self.lo)

    def __pos__(self):
        return self

    def __add__(self, other):
        o = self._coerce(other)
        return Interval._wide(self.lo + o.lo, self.hi + o.hi)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        return Interval._wide(self.lo - o.hi, self.hi - o.lo)

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        o = self._coerce(other)
        with np.errstate(invalid="ignore"):
            p = np.stack(np.broadcast_arrays(
                self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi))
        # 0 * inf comes out nan; treating it as unbounded stays sound
        bad = np.isnan(p).any(axis=0)
        lo = np.where(bad, -np.inf, p.min(axis=0))
        hi = np.where(bad, np.inf, p.max(axis=0))
        return Interval._wide(lo, hi)

    __rmul__ = __mul__

    def reciprocal(self) -> Interval:
        lo, hi = self.lo, self.hi
        if np.any((lo == 0.0) & (hi == 0.0)):
            raise IntervalDomainError("reciprocal of [0, 0]")
        straddles = (lo <= 0.0) & (hi >= 0.0)
        with np.errstate(divide="ignore"):
            rlo = np.where(straddles, -np.inf, 1.0 / hi)
            rhi = np.where(straddles, np.inf, 1.0 / lo)
        return Interval._wide(rlo, rhi)

    def __truediv__(self, other):
        o = self._coerce(other)
        return self * o.reciprocal()

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, k):
        if not isinstance(k, (int, np.integer)) or k < 0:
            raise TypeError("only nonnegative integer powers are supported")
        k = int(k)
        if k == 0:
            return Interval(np.ones_like(self.lo))
        if k == 1:
            return self
        with np.errstate(over="ignore"):
            plo = self.lo**k
            phi = self.hi**k
        if k % 2 == 1:
            return Interval._wide(plo, phi)
        crosses = (self.lo <= 0.0) & (self.hi >= 0.0)
        lo = np.where(crosses, 0.0, np.minimum(plo, phi))
        hi = np.maximum(plo, phi)
        return Interval._wide(lo, hi)

    # -- elementary functions ---------------------------------------------

    def exp(self) -> Interval:
        with np.errstate(over="ignore"):
            return Interval._wide(np.exp(self.lo), np.exp(self.hi))

    def tanh(self) -> Interval:
        lo, hi = _widen(np.tanh(self.lo), np.tanh(self.hi))
        return Interval(np.maximum(lo, -1.0), np.minimum(hi, 1.0))

    def log(self) -> Interval:
        if np.any(self.hi <= 0.0):
            raise IntervalDomainError("log of an interval with hi <= 0")
        with np.errstate(divide="ignore", invalid="ignore"):
            lo = np.where(self.lo > 0.0, np.log(np.maximum(self.lo, 0.0)), -np.inf)
        return Interval._wide(lo, np.log(self.hi))

    def sqrt(self) -> Interval:
        if np.any(self.hi < 0.0):
            raise IntervalDomainError("sqrt of an interval with hi < 0")
        lo = np.sqrt(np.maximum(self.lo, 0.0))
        lo, hi = _widen(lo, np.sqrt(self.hi))
        return Interval(np.maximum(lo, 0.0), hi)

    def sin(self) -> Interval:
        return _periodic_range(np.sin, self, peak=0.5 * math.pi, trough=-0.5 * math.pi)

    def cos(self) -> Interval:
        return _periodic_range(np.cos, self, peak=0.0, trough=math.pi)

    def maximum(self, other) -> Interval:
        o = self._coerce(other)
        return Interval(np.maximum(self.lo, o.lo), np.maximum(self.hi, o.hi))

    def minimum(self, other) -> Interval:
        o = self._coerce(other)
        return Interval(np.minimum(self.lo, o.lo), np.minimum(self.hi, o.hi))

    def matmul_const(self, M) -> Interval:
        """Enclosure of ``x @ M`` for a constant matrix ``M`` (midpoint-radius form).

        ``self`` has shape (..., p), ``M`` has shape (p, q).
        """
        M = np.asarray(M, dtype=float)
        c = self.mid
        r = 0.5 * self.width
        absM = np.abs(M)
        cm = c @ M
        rm = r @ absM
        # rounding in the dot products is bounded relative to sum |terms|
        scale = np.abs(c) @ absM + rm
        err = 4.0 * _slack * scale
        return Interval._wide(cm - rm - err, cm + rm + err)


def _periodic_range(fn, x: Interval, peak: float, trough: float) -> Interval:
    """Range of sin/cos over ``x``: endpoint images plus any interior extrema."""
    two_pi = 2.0 * math.pi
    lo, hi = x.lo, x.hi
    flo, fhi = fn(lo), fn(hi)
    rlo = np.minimum(flo, fhi)
    rhi = np.maximum(flo, fhi)
    finite = np.isfinite(lo) & np.isfinite(hi)
    wide = ~finite | (hi - lo >= two_pi)
    with np.errstate(invalid="ignore"):
        k_peak = np.ceil((lo - peak) / two_pi)
        has_peak = peak + two_pi * k_peak <= hi
        k_trough = np.ceil((lo - trough) / two_pi)
        has_trough = trough + two_pi * k_trough <= hi
    rhi = np.where(has_peak | wide, 1.0, rhi)
    rlo = np.where(has_trough | wide, -1.0, rlo)
    wlo, whi = _widen(rlo, rhi)
    # a critical point sitting just outside [lo, hi] after rounding is absorbed
    # by the flatness of sin/cos there; the clip keeps the range in [-1, 1]
    return Interval(np.maximum(wlo, -1.0), np.minimum(whi, 1.0))


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box ``[lo_1, hi_1] x ... x [lo_n, hi_n]``.

    ``lo`` and ``hi`` have shape (n,) for a single box or (m, n) for a stack of
    ``m`` boxes processed together.
    """

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lo, dtype=float)
        hi = np.array(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim not in (1, 2):
            raise ValueError(f"box bounds must share shape (n,) or (m, n); got {lo.shape}, {hi.shape}")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo > hi):
            raise ValueError("box needs lo <= hi in every coordinate")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_bounds(cls, bounds) -> Box:
        """``[(lo1, hi1), (lo2, hi2), ...]`` -> single box."""
        b = np.asarray(bounds, dtype=float)
        return cls(b[:, 0], b[:, 1])

    @classmethod
    def stack(cls, boxes) -> Box:
        return cls(np.vstack([np.atleast_2d(b.lo) for b in boxes]),
                   np.vstack([np.atleast_2d(b.hi) for b in boxes]))

    @property
    def n(self) -> int:
        return self.lo.shape[-1]

    @property
    def is_stack(self) -> bool:
        return self.lo.ndim == 2

    def __len__(self):
        return self.lo.shape[0] if self.is_stack else 1

    def __getitem__(self, idx) -> Box:
        if not self.is_stack:
            raise TypeError("indexing needs a stack of boxes")
        return Box(self.lo[idx], self.hi[idx])

    @property
    def dims(self) -> list[Interval]:
        return [Interval(self.lo[..., i], self.hi[..., i]) for i in range(self.n)]

    def width(self, i: int | None = None):
        w = self.hi - self.lo
        return w if i is None else w[..., i]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def max_width(self):
        return np.max(self.hi - self.lo, axis=-1)

    def widest(self):
        return np.argmax(self.hi - self.lo, axis=-1)

    def contains(self, x, tol: float = 0.0):
        x = np.asarray(x, dtype=float)
        return np.all((self.lo - tol <= x) & (x <= self.hi + tol), axis=-1)

    def contains_box(self, other: Box):
        return np.all((self.lo <= other.lo) & (other.hi <= self.hi), axis=-1)

    def bisect(self) -> Box:
        """Split every box along its widest coordinate.

        Children are ordered ``[left_0, right_0, left_1, right_1, ...]``.
        """
        lo = np.atleast_2d(self.lo)
        hi = np.atleast_2d(self.hi)
        m = lo.shape[0]
        k = np.argmax(hi - lo, axis=1)
        rows = np.arange(m)
        mid = 0.5 * (lo[rows, k] + hi[rows, k])
        left_hi = hi.copy()
        left_hi[rows, k] = mid
        right_lo = lo.copy()
        right_lo[rows, k] = mid
        new_lo = np.empty((2 * m, lo.shape[1]))
        new_hi = np.empty_like(new_lo)
        new_lo[0::2], new_hi[0::2] = lo, left_hi
        new_lo[1::2], new_hi[1::2] = right_lo, hi
        return Box(new_lo, new_hi)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Uniform samples from a single box, shape (count, n)."""
        if self.is_stack:
            raise TypeError("sample needs a single box")
        return self.lo + (self.hi - self.lo) * rng.random((count, self.n))

    def volume(self):
        return np.prod(self.hi - self.lo, axis=-1)

    def __repr__(self):
        return f"Box(lo={self.lo.tolist()}, hi={self.hi.tolist()})"
