"""Trajectory oracle for the Zubov value function.

Integrates the scaled field ``f_tilde`` from many initial states at once, with
per-trajectory step-size control, and stops each trajectory at the first of

* unsafe entry   ``h(x) >= 1 - unsafe_margin``  -> ``ExitedUnsafe``
* leaving the ROI box                            -> ``ExitedROI``
* ``|x| <= r_conv``                              -> ``Converged``
* accumulated cost above ``v_cap``               -> ``CapReached``
* ``t >= t_max``                                 -> ``Inconclusive``

Event times are located by bisection on the step length. The cost
``V = int |x(t)|^2 dt`` is integrated as an extra state component by the same
Runge-Kutta scheme, and converged trajectories get the exact tail of the
linearised scaled flow, ``x^T P~ x``.

Every operation is elementwise over trajectories, so a trajectory's result does
not depend on which other trajectories share its batch.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import system as sysm
from .system import SystemSpec
from .transform import beta, v_cap_for


class Status(str, Enum):
    CONVERGED = "Converged"
    EXITED_UNSAFE = "ExitedUnsafe"
    EXITED_ROI = "ExitedROI"
    CAP_REACHED = "CapReached"
    INCONCLUSIVE = "Inconclusive"


# internal integer codes; RUNNING and REACHED_T never leave this module
_RUNNING, _CONV, _UNSAFE, _ROI, _CAP, _TIME, _UNDERFLOW = range(7)
_CODE_TO_STATUS = {
    _CONV: Status.CONVERGED,
    _UNSAFE: Status.EXITED_UNSAFE,
    _ROI: Status.EXITED_ROI,
    _CAP: Status.CAP_REACHED,
    _TIME: Status.INCONCLUSIVE,
    _UNDERFLOW: Status.INCONCLUSIVE,
}


class StepSizeUnderflow(ArithmeticError):
    pass


@dataclass(frozen=True)
class IntegratorOptions:
    method: str = "rk45"
    dt: float = 0.01
    rtol: float = 1e-8
    atol: float = 1e-10
    t_max: float = 500.0
    r_conv: float = 1e-3
    v_cap: float | None = None
    unsafe_margin: float = 1e-6
    event_tol: float = 1e-9
    max_steps: int = 200_000

    def __post_init__(self):
        if self.method not in ("rk45", "rk4"):
            raise ValueError(f"method must be 'rk45' or 'rk4', got {self.method!r}")
        for name in ("t_max", "r_conv", "rtol", "atol", "dt", "event_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.v_cap is not None and not self.v_cap > 0:
            raise ValueError("v_cap must be > 0")
        if self.unsafe_margin < 0:
            raise ValueError("unsafe_margin must be >= 0")

    def cap(self, s: SystemSpec) -> float:
        return self.v_cap if self.v_cap is not None else v_cap_for(s.beta)


@dataclass
class OracleLabel:
    x: np.ndarray
    v_value: float
    w_value: float
    status: Status
    t_elapsed: float


# Dormand-Prince 5(4)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


class _Guards:
    """Stopping guards evaluated on state arrays of shape (m, n)."""

    def __init__(self, s, r_conv, unsafe_level, stop_unsafe):
        self.s = s
        self.r_conv = r_conv
        self.unsafe_level = unsafe_level
        self.stop_unsafe = stop_unsafe
        self.lo = s.roi.lo
        self.hi = s.roi.hi

    def codes(self, x):
        """Triggered guard per row (priority unsafe > roi > conv), 0 if none."""
        out = np.zeros(len(x), dtype=np.int64)
        if self.r_conv is not None:
            conv = np.sqrt(np.sum(x * x, axis=1)) <= self.r_conv
            out[conv] = _CONV
        roi = np.any((x < self.lo) | (x > self.hi), axis=1)
        out[roi] = _ROI
        if self.stop_unsafe and self.s.obstacles:
            unsafe = sysm.h_max(self.s, x) >= self.unsafe_level
            out[unsafe] = _UNSAFE
        return out


@dataclass
class _Run:
    """Raw result of a batched integration."""

    x: np.ndarray
    cost: np.ndarray
    t: np.ndarray
    code: np.ndarray
    min_gamma: np.ndarray
    steps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def _propagate(s: SystemSpec, X0, opts: IntegratorOptions, *, scaled: bool = True,
               t_stop: float | None = None, r_conv: float | None = -1.0,
               stop_unsafe: bool = True, unsafe_margin: float | None = None,
               cap: float | None = None) -> _Run:
    """Integrate a batch of initial states; see module docstring for the stop rules.

    ``r_conv=-1`` means "use opts.r_conv", ``None`` disables the convergence stop.
    ``cap=None`` disables the cost cap.
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    N, n = X0.shape
    t_stop = opts.t_max if t_stop is None else float(t_stop)
    r_conv = opts.r_conv if r_conv == -1.0 else r_conv
    margin = opts.unsafe_margin if unsafe_margin is None else unsafe_margin
    guards = _Guards(s, r_conv, 1.0 - margin, stop_unsafe)

    def rhs(y):
        x = y[:, :n]
        fx = sysm.scaled_field(s, x) if scaled else sysm.field_eval(s, x)
        return np.column_stack([fx, np.sum(x * x, axis=1)])

    def gamma_of(x):
        return sysm.gamma(s, x) if s.obstacles else np.full(len(x), np.inf)

    y = np.column_stack([X0, np.zeros(N)])
    t = np.zeros(N)
    code = guards.codes(X0)
    min_gamma = gamma_of(X0)
    steps = np.zeros(N, dtype=np.int64)
    if t_stop <= 0:
        code[code == _RUNNING] = _TIME

    active = np.flatnonzero(code == _RUNNING)
    if active.size == 0:
        return _Run(y[:, :n].copy(), y[:, n].copy(), t, code, min_gamma, steps)

    k1 = np.zeros_like(y)
    k1[active] = rhs(y[active])
    h = np.zeros(N)
    if opts.method == "rk4":
        h[active] = opts.dt
    else:
        sc = opts.atol + opts.rtol * np.abs(y[active])
        d0 = np.sqrt(np.mean((y[active] / sc) ** 2, axis=1))
        d1 = np.sqrt(np.mean((k1[active] / sc) ** 2, axis=1))
        h0 = np.where((d0 > 1e-5) & (d1 > 1e-5), 0.01 * d0 / np.maximum(d1, 1e-300), 1e-6)
        h[active] = np.minimum(h0, t_stop)

    while active.size:
        ya, ta, k1a = y[active], t[active], k1[active]
        ha = np.minimum(h[active], t_stop - ta)
        if opts.method == "rk4":
            y_new, k_last = _rk4_step(rhs, ya, ha, k1a)
            accept = np.ones(len(active), dtype=bool)
            factor = np.ones(len(active))
        else:
            y_new, k_last, err = _dp_step(rhs, ya, ha, k1a, with_error=True)
            sc = opts.atol + opts.rtol * np.maximum(np.abs(ya), np.abs(y_new))
            enorm = np.sqrt(np.mean((err / sc) ** 2, axis=1))
            accept = enorm <= 1.0
            with np.errstate(divide="ignore"):
                factor = np.clip(0.9 * enorm ** -0.2, 0.2, 5.0)
            factor = np.where(accept, factor, np.minimum(factor, 1.0))

        acc = active[accept]
        if acc.size:
            yn = y_new[accept]
            tn = ta[accept] + ha[accept]
            steps[acc] += 1
            trig = guards.codes(yn[:, :n])
            if cap is not None:
                trig[(trig == _RUNNING) & (yn[:, n] > cap)] = _CAP
            hit = np.flatnonzero((trig != _RUNNING) & (trig != _CAP))
            if hit.size:
                rows = acc[hit]
                x_ev, c_ev, dt_ev, code_ev = _locate_event(
                    rhs, y[rows], ha[accept][hit], k1[rows], guards, opts)
                yn[hit, :n] = x_ev
                yn[hit, n] = c_ev
                tn[hit] = t[rows] + dt_ev
                trig[hit] = code_ev
            y[acc] = yn
            t[acc] = tn
            k1[acc] = k_last[accept]
            min_gamma[acc] = np.minimum(min_gamma[acc], gamma_of(yn[:, :n]))
            done_time = (trig == _RUNNING) & (tn >= t_stop * (1 - 1e-15))
            trig[done_time] = _TIME
            trig[(trig == _RUNNING) & (steps[acc] >= opts.max_steps)] = _UNDERFLOW
            code[acc] = trig

        h[active] = ha * factor
        if opts.method == "rk45":
            tiny = h[active] < 1e-14 * np.maximum(1.0, np.abs(t[active]))
            under = active[tiny & (code[active] == _RUNNING)]
            code[under] = _UNDERFLOW
        active = active[code[active] == _RUNNING]

    return _Run(y[:, :n].copy(), y[:, n].copy(), t, code, min_gamma, steps)


def _dp_step(rhs, y, h, k1, with_error=False):
    hh = h[:, None]
    ks = [k1]
    for i in range(1, 7):
        yi = y + hh * sum(a * k for a, k in zip(_A[i], ks) if a != 0.0)
        ks.append(rhs(yi))
    y_new = y + hh * sum(b * k for b, k in zip(_B5, ks) if b != 0.0)
    if not with_error:
        return y_new, ks[-1]
    err = hh * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
    return y_new, ks[-1], err


def _rk4_step(rhs, y, h, k1):
    hh = h[:, None]
    k2 = rhs(y + 0.5 * hh * k1)
    k3 = rhs(y + 0.5 * hh * k2)
    k4 = rhs(y + hh * k3)
    y_new = y + hh / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y_new, rhs(y_new)


def _locate_event(rhs, y0, h, k1, guards, opts):
    """Bisect the step length until the first guard crossing is bracketed to event_tol."""
    n = y0.shape[1] - 1
    step = _rk4_step if opts.method == "rk4" else _dp_step
    lo = np.zeros(len(y0))
    hi = h.copy()
    while np.any(hi - lo > opts.event_tol):
        mid = 0.5 * (lo + hi)
        ym, _ = step(rhs, y0, mid, k1)
        trig = guards.codes(ym[:, :n]) != _RUNNING
        hi = np.where(trig, mid, hi)
        lo = np.where(trig, lo, mid)
    y_ev, _ = step(rhs, y0, hi, k1)
    codes = guards.codes(y_ev[:, :n])
    # the end of the accepted step did trigger; keep its code if rounding lost it
    codes = np.where(codes == _RUNNING, guards.codes(step(rhs, y0, h, k1)[0][:, :n]), codes)
    return y_ev[:, :n], y_ev[:, n], hi, codes


# -- value function ---------------------------------------------------------------

def tail_matrix(s: SystemSpec) -> np.ndarray:
    """``P~`` solving ``A~^T P~ + P~ A~ = -I`` for the scaled Jacobian ``A~``."""
    return sysm.solve_lyapunov(sysm.scaled_jacobian_at_origin(s), np.eye(s.n))


def _values(s, X0, opts, workers=1):
    """V, W, status codes and times for a batch (no dropping)."""
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    if workers > 1 and len(X0) > 1:
        chunks = np.array_split(np.arange(len(X0)), workers)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_values, [s] * len(chunks), [X0[c] for c in chunks],
                                  [opts] * len(chunks)))
        return tuple(np.concatenate([p[i] for p in parts]) for i in range(4))
    run = _propagate(s, X0, opts, cap=opts.cap(s))
    V = np.full(len(X0), np.inf)
    conv = run.code == _CONV
    if np.any(conv):
        P = tail_matrix(s)
        xc = run.x[conv]
        V[conv] = run.cost[conv] + np.einsum("ij,jk,ik->i", xc, P, xc)
    W = np.ones(len(X0))
    W[conv] = beta(s.beta, V[conv])
    return V, W, run.code, run.t


def zubov_value(s: SystemSpec, x0, opts: IntegratorOptions | None = None) -> OracleLabel:
    opts = opts or IntegratorOptions()
    x0 = np.asarray(x0, dtype=float)
    V, W, code, t = _values(s, x0[None, :], opts)
    return OracleLabel(x=x0.copy(), v_value=float(V[0]), w_value=float(W[0]),
                       status=_CODE_TO_STATUS[int(code[0])], t_elapsed=float(t[0]))


def label_points(s: SystemSpec, X, opts: IntegratorOptions | None = None, workers: int = 1):
    """Oracle labels for many points: arrays ``V, W`` and a list of statuses, and times."""
    opts = opts or IntegratorOptions()
    V, W, code, t = _values(s, X, opts, workers)
    return V, W, [_CODE_TO_STATUS[int(c)] for c in code], t


@dataclass
class Trajectory:
    t: float
    x: np.ndarray
    cost: float
    status: Status


def integrate(s: SystemSpec, x0, opts: IntegratorOptions | None = None) -> Trajectory:
    """Integrate the scaled flow from one state until its first event.

    Raises :class:`StepSizeUnderflow` if the step controller gives up.
    """
    opts = opts or IntegratorOptions()
    run = _propagate(s, np.asarray(x0, dtype=float)[None, :], opts, cap=None)
    if run.code[0] == _UNDERFLOW:
        raise StepSizeUnderflow(f"step size underflow at t = {run.t[0]:.6g}")
    return Trajectory(t=float(run.t[0]), x=run.x[0], cost=float(run.cost[0]),
                      status=_CODE_TO_STATUS[int(run.code[0])])


def dpp_residuals(s: SystemSpec, X0, t: float, opts: IntegratorOptions | None = None):
    """``|V(x) - (int_0^t' |psi|^2 + V(psi(t')))|`` with ``t' = min(t, event time)``."""
    opts = opts or IntegratorOptions()
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    V0, _, code0, _ = _values(s, X0, opts)
    if not np.all(np.isfinite(V0)):
        raise ValueError("dpp_residual needs initial states with a finite value")
    if t <= 0:
        return np.zeros(len(X0))
    run = _propagate(s, X0, opts, t_stop=t, cap=None)
    Vt = np.empty(len(X0))
    conv = run.code == _CONV
    if np.any(conv):
        P = tail_matrix(s)
        xc = run.x[conv]
        Vt[conv] = np.einsum("ij,jk,ik->i", xc, P, xc)
    rest = ~conv
    if np.any(rest):
        Vt[rest] = _values(s, run.x[rest], opts)[0]
    return np.abs(V0 - (run.cost + Vt))


def dpp_residual(s: SystemSpec, x0, t: float, opts: IntegratorOptions | None = None) -> float:
    return float(dpp_residuals(s, np.asarray(x0, dtype=float)[None, :], t, opts)[0])


# -- datasets ---------------------------------------------------------------------

@dataclass
class Dataset:
    labels: list
    counts: dict
    n: int

    @property
    def X(self) -> np.ndarray:
        return np.array([lab.x for lab in self.labels]).reshape(-1, self.n)

    @property
    def V(self) -> np.ndarray:
        return np.array([lab.v_value for lab in self.labels])

    @property
    def W(self) -> np.ndarray:
        return np.array([lab.w_value for lab in self.labels])

    def __len__(self):
        return len(self.labels)


def grid_points(box, per_axis: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in zip(box.lo, box.hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def generate_dataset(s: SystemSpec, count: int, strategy: str = "uniform-roi", seed: int = 0,
                     opts: IntegratorOptions | None = None, region=None,
                     workers: int = 1) -> Dataset:
    """Label ``count`` states of ``region`` (default: the ROI).

    ``grid`` uses ``round(count ** (1/n))`` points per axis. Points starting
    inside an obstacle are labelled ``ExitedUnsafe`` with ``V = inf, W = 1``;
    inconclusive points are dropped and only counted.
    """
    opts = opts or IntegratorOptions()
    region = s.roi if region is None else region
    counts = {st.value: 0 for st in Status}
    if count <= 0:
        return Dataset([], counts, s.n)
    if strategy == "uniform-roi":
        X = region.sample(np.random.default_rng(seed), count)
    elif strategy == "grid":
        X = grid_points(region, max(1, round(count ** (1.0 / s.n))))
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    V, W, statuses, t = label_points(s, X, opts, workers)
    labels = []
    for i, st in enumerate(statuses):
        counts[st.value] += 1
        if st is Status.INCONCLUSIVE:
            continue
        labels.append(OracleLabel(X[i].copy(), float(V[i]), float(W[i]), st, float(t[i])))
    return Dataset(labels, counts, s.n)


def write_dataset_csv(path, data: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(data.n)] + ["V", "W", "status", "t_elapsed"])
        for lab in data.labels:
            w.writerow([repr(float(v)) for v in lab.x]
                       + [_num(lab.v_value), repr(lab.w_value), lab.status.value, repr(lab.t_elapsed)])


def read_dataset_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    n = header.index("V")
    labels = []
    counts = {st.value: 0 for st in Status}
    for r in rows[1:]:
        st = Status(r[n + 2])
        counts[st.value] += 1
        labels.append(OracleLabel(np.array([float(v) for v in r[:n]]), float(r[n]),
                                  float(r[n + 1]), st, float(r[n + 3])))
    return Dataset(labels, counts, n)


def _num(v: float) -> str:
    return "inf" if math.isinf(v) else repr(float(v))


# -- simulation under the original field ---------------------------------------------

@dataclass
class SimulationResult:
    x_final: np.ndarray
    t_final: np.ndarray
    final_norm: np.ndarray
    min_clearance: np.ndarray
    status: list


def simulate(s: SystemSpec, X0, T: float, opts: IntegratorOptions | None = None, *,
             goal_radius: float | None = None, stop_unsafe: bool = False) -> SimulationResult:
    """Integrate the ORIGINAL field ``f`` for time ``T``.

    ``min_clearance`` is the smallest ``gamma = 1 - h`` seen at accepted steps and
    events (negative once a trajectory entered an obstacle). Trajectories stop on
    leaving the ROI; with ``goal_radius`` they also stop at ``|x| <= goal_radius``
    (status ``Converged``), and with ``stop_unsafe`` on obstacle entry.
    """
    opts = opts or IntegratorOptions()
    run = _propagate(s, X0, opts, scaled=False, t_stop=T, r_conv=goal_radius,
                     stop_unsafe=stop_unsafe, unsafe_margin=0.0, cap=None)
    status = []
    for c in run.code:
        status.append("Reached" if c == _TIME else _CODE_TO_STATUS[int(c)].value)
    return SimulationResult(run.x, run.t, np.linalg.norm(run.x, axis=1), run.min_gamma, status)
