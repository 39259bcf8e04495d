"""Interval branch-and-bound certification of a trained Zubov network.

The certificate has three parts:

1. a quadratic region ``{x^T P x <= rho}`` that is forward invariant, safe and
   attracted to the origin: an inner ball (linearization plus an interval bound
   on the Jacobian), enlarged by branch and bound on ``x^T P f(x)`` when possible,
2. a bridge level ``c1`` with ``{W <= c1}`` inside that region,
3. an outer level ``c2 > c1`` such that ``grad W . f <= -delta`` on
   ``{c1 <= W <= c2}`` outside the quadratic region and ``{W <= c2}`` keeps clear of the obstacles and of
   the boundary of the region of interest.

Every "certified" answer is sound up to the outward slack of the interval
arithmetic (``eta``) and the decrease margin ``delta``; no directed rounding is used.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields
from enum import Enum

import numpy as np

from . import net as nn
from .interval import Box, Interval, get_slack
from .system import (Linearization, SystemSpec, field_eval, h_max, interval_field, interval_h,
                     interval_jacobian)


class Outcome(str, Enum):
    CertifiedEmpty = "CertifiedEmpty"
    Violated = "Violated"
    ResourceExhausted = "ResourceExhausted"


class ReportStatus(str, Enum):
    Certified = "Certified"
    Failed = "Failed"
    ResourceExhausted = "ResourceExhausted"


@dataclass(frozen=True)
class VerifyConfig:
    delta: float = 1e-4
    min_box_width: float = 1e-3
    max_boxes: int = 400_000
    chunk: int = 4096
    bisection_tol: float = 2e-3
    inner_radius: float = 0.1
    unsafe_clearance: float = 1e-3
    c1_start: float = 1e-3
    falsify_samples: int = 20_000
    seed: int = 0
    record_wall_time: bool = False

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be > 0")
        if not self.min_box_width > 0:
            raise ValueError("min_box_width must be > 0")
        if not self.inner_radius > 0:
            raise ValueError("inner_radius must be > 0")
        if self.max_boxes < 1 or self.chunk < 1:
            raise ValueError("max_boxes and chunk must be positive")
        if not 0 < self.bisection_tol < 1:
            raise ValueError("bisection_tol must lie in (0, 1)")
        if self.unsafe_clearance < 0:
            raise ValueError("unsafe_clearance must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> VerifyConfig:
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown verify option(s): {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BBResult:
    outcome: Outcome
    boxes: int
    box: Box | None = None
    point: np.ndarray | None = None
    predicate: str = ""

    @property
    def certified(self) -> bool:
        return self.outcome is Outcome.CertifiedEmpty

    def counterexample(self) -> dict | None:
        if self.outcome is Outcome.CertifiedEmpty:
            return None
        out = {"predicate": self.predicate, "outcome": self.outcome.value}
        if self.point is not None:
            out["point"] = [float(v) for v in self.point]
        if self.box is not None:
            out["box"] = {"lo": self.box.lo.tolist(), "hi": self.box.hi.tolist()}
        return out


def branch_and_bound(pred, root: Box, cfg: VerifyConfig | None = None, *, name: str = "",
                     vectorized: bool = True) -> BBResult:
    """Refute a violation predicate over ``root`` (a box or a stack of boxes).

    ``pred`` returns True where the box is refuted (provably contains no violating
    point). With ``vectorized=True`` it receives a stack of boxes and returns a
    boolean array, otherwise it is called once per box. Unknown boxes are split
    along their widest side and processed breadth first in a fixed order, so the
    outcome and the box count are reproducible.
    """
    cfg = cfg or VerifyConfig()
    lo = np.atleast_2d(root.lo).astype(float)
    hi = np.atleast_2d(root.hi).astype(float)
    processed = 0
    while len(lo):
        take = min(cfg.chunk, len(lo))
        if processed + take > cfg.max_boxes:
            return BBResult(Outcome.ResourceExhausted, processed, Box(lo[0], hi[0]), None, name)
        blo, bhi = lo[:take], hi[:take]
        lo, hi = lo[take:], hi[take:]
        batch = Box(blo, bhi)
        if vectorized:
            refuted = np.asarray(pred(batch), dtype=bool).reshape(take)
        else:
            refuted = np.array([bool(pred(Box(blo[i], bhi[i]))) for i in range(take)])
        processed += take
        keep = ~refuted
        if not keep.any():
            continue
        ulo, uhi = blo[keep], bhi[keep]
        small = np.max(uhi - ulo, axis=1) <= cfg.min_box_width
        if small.any():
            i = int(np.argmax(small))
            b = Box(ulo[i], uhi[i])
            return BBResult(Outcome.Violated, processed, b, b.center, name)
        kids = Box(ulo, uhi).bisect()
        lo = np.concatenate([lo, np.atleast_2d(kids.lo)])
        hi = np.concatenate([hi, np.atleast_2d(kids.hi)])
    return BBResult(Outcome.CertifiedEmpty, processed, None, None, name)


# -- helpers ---------------------------------------------------------------------

def _quad_interval(P, b: Box) -> Interval:
    """Enclosure of ``x^T P x`` over a box stack (squares handled exactly)."""
    d = b.dims
    n = len(d)
    acc = None
    for i in range(n):
        term = d[i] ** 2 * float(P[i, i])
        for j in range(i + 1, n):
            if P[i, j] != 0:
                term = term + (d[i] * d[j]) * float(2.0 * P[i, j])
        acc = term if acc is None else acc + term
    return acc


def _stack(b: Box) -> Box:
    return b if b.is_stack else Box(b.lo[None, :], b.hi[None, :])


def _lie_interval(grad: Interval, F: list) -> Interval:
    acc = None
    for i, fi in enumerate(F):
        t = grad[:, i] * fi
        acc = t if acc is None else acc + t
    return acc


def shell_boxes(roi: Box, depth: float) -> Box:
    """Slabs of the given depth along every face of ``roi``."""
    los, his = [], []
    for i in range(roi.n):
        for side in (0, 1):
            lo, hi = roi.lo.copy(), roi.hi.copy()
            if side == 0:
                hi[i] = min(roi.lo[i] + depth, roi.hi[i])
            else:
                lo[i] = max(roi.hi[i] - depth, roi.lo[i])
            los.append(lo)
            his.append(hi)
    return Box(np.array(los), np.array(his))


def _sample_in(root: Box, count: int, rng) -> np.ndarray:
    r = _stack(root)
    vol = np.prod(r.hi - r.lo, axis=1)
    if count <= 0 or vol.sum() <= 0:
        return np.zeros((0, r.n))
    which = np.sort(rng.choice(len(vol), size=count, p=vol / vol.sum()))
    return r.lo[which] + (r.hi[which] - r.lo[which]) * rng.random((count, r.n))


def _falsify(violates, root: Box, cfg: VerifyConfig, name: str, salt: int) -> BBResult | None:
    """Cheap pointwise search for a genuine violation before running the interval search."""
    if cfg.falsify_samples <= 0:
        return None
    rng = np.random.default_rng([cfg.seed, salt])
    X = _sample_in(root, cfg.falsify_samples, rng)
    if not len(X):
        return None
    bad = np.asarray(violates(X), dtype=bool)
    if bad.any():
        return BBResult(Outcome.Violated, 0, None, X[int(np.argmax(bad))], name)
    return None


# -- inner quadratic certificate -------------------------------------------------------

@dataclass
class InnerResult:
    certified: bool
    mu: float
    C: float
    rho: float
    r0: float
    message: str = ""


def verify_inner_quadratic(s: SystemSpec, lin: Linearization, r0: float) -> InnerResult:
    """Check ``lambda_max(A^T P + P A) + 2 |P|_2 C <= -mu < 0`` on the sup-norm ball of radius ``r0``.

    ``C`` bounds ``|J_f(x) - A|_2`` over the ball by the Frobenius norm of the entrywise
    magnitude of the interval enclosure of ``J_f - A``. The ball must also be safe and
    inside the region of interest.
    """
    A, P = lin.A, lin.P
    n = s.n
    ball = Box(np.full(n, -r0), np.full(n, r0))
    J = interval_jacobian(s, ball)
    M = np.array([[float((J[i][j] - float(A[i, j])).mag) for j in range(n)] for i in range(n)])
    C = float(np.linalg.norm(M, "fro"))
    lam_max = float(np.max(np.linalg.eigvalsh(A.T @ P + P @ A)))
    P_norm = float(np.max(np.linalg.eigvalsh(P)))
    bound = lam_max + 2.0 * P_norm * C
    rho = r0 * r0 * float(np.min(np.linalg.eigvalsh(P)))
    if not np.isfinite(bound) or bound >= 0:
        return InnerResult(False, -bound, C, rho, r0,
                           f"lambda_max + 2|P|C = {lam_max:.6g} + 2*{P_norm:.6g}*{C:.6g} = {bound:.6g} >= 0")
    if not (np.all(s.roi.lo < -r0) and np.all(s.roi.hi > r0)):
        return InnerResult(False, -bound, C, rho, r0, "inner ball is not inside the region of interest")
    if s.obstacles and not float(interval_h(s, ball).hi) < 1.0:
        return InnerResult(False, -bound, C, rho, r0, "inner ball may touch an obstacle")
    return InnerResult(True, -bound, C, rho, r0)


# -- the three refutations ---------------------------------------------------------------

def _net_enclosures(p, B):
    w, g = nn.interval_value_and_gradient(p, _stack(B))
    return w, g


def verify_bridge(p: nn.MLPParams, s: SystemSpec, lin: Linearization, c1: float, rho: float,
                  cfg: VerifyConfig | None = None) -> BBResult:
    """Refute ``exists x in roi: W(x) <= c1 and x^T P x >= rho``."""
    cfg = cfg or VerifyConfig()
    P = lin.P
    name = f"bridge: W <= {c1!r} and x'Px >= {rho!r}"

    def violates(X):
        return (nn.forward(p, X) <= c1) & (np.einsum("ij,jk,ik->i", X, P, X) >= rho)

    def pred(B):
        w, _ = _net_enclosures(p, B)
        q = _quad_interval(P, B)
        return (w.lo > c1) | (q.hi < rho)

    return _falsify(violates, s.roi, cfg, name, 1) or branch_and_bound(pred, s.roi, cfg, name=name)


def verify_decrease(p: nn.MLPParams, s: SystemSpec, c1: float, c2: float,
                    cfg: VerifyConfig | None = None, quad: tuple | None = None) -> BBResult:
    """Refute ``exists x in roi: c1 <= W(x) <= c2 and grad W(x) . f(x) >= -delta`` (original ``f``).

    With ``quad = (P, rho)`` points of the certified quadratic region ``x^T P x < rho``
    are exempt: trajectories entering it stay there and converge anyway.
    """
    cfg = cfg or VerifyConfig()
    delta = cfg.delta
    name = f"decrease: {c1!r} <= W <= {c2!r} and grad W . f >= -{delta!r}"
    if c2 <= c1:
        # no annulus: {W <= c1} already sits in the quadratic region
        return BBResult(Outcome.CertifiedEmpty, 0, None, None, name)
    P, rho = quad if quad is not None else (None, 0.0)

    def violates(X):
        w, g = nn.value_and_gradient(p, X)
        lie = np.sum(g * field_eval(s, X), axis=1)
        bad = (w >= c1) & (w <= c2) & (lie >= -delta)
        if P is not None:
            bad &= np.einsum("ij,jk,ik->i", X, P, X) >= rho
        return bad

    def pred(B):
        w, g = _net_enclosures(p, B)
        lie = _lie_interval(g, interval_field(s, B))
        out = (w.hi < c1) | (w.lo > c2) | (lie.hi < -delta)
        if P is not None:
            out |= _quad_interval(P, B).hi < rho
        return out

    return _falsify(violates, s.roi, cfg, name, 2) or branch_and_bound(pred, s.roi, cfg, name=name)


def verify_separation(p: nn.MLPParams, s: SystemSpec, c2: float,
                      cfg: VerifyConfig | None = None) -> BBResult:
    """Refute (a) ``W <= c2`` near an obstacle and (b) ``W <= c2`` in the outer shell of the roi."""
    cfg = cfg or VerifyConfig()
    thr = 1.0 - cfg.unsafe_clearance
    total = 0
    if s.obstacles:
        name = f"separation: W <= {c2!r} and h >= {thr!r}"

        def violates_a(X):
            return (nn.forward(p, X) <= c2) & (h_max(s, X) >= thr)

        def pred_a(B):
            w, _ = _net_enclosures(p, B)
            return (w.lo > c2) | (interval_h(s, B).hi < thr)

        r = _falsify(violates_a, s.roi, cfg, name, 3) or branch_and_bound(pred_a, s.roi, cfg, name=name)
        total += r.boxes
        if not r.certified:
            return r
    shell = shell_boxes(s.roi, 4.0 * cfg.min_box_width)
    name = f"separation: W <= {c2!r} in the outer shell"

    def violates_b(X):
        return nn.forward(p, X) <= c2

    def pred_b(B):
        w, _ = _net_enclosures(p, B)
        return w.lo > c2

    r = _falsify(violates_b, shell, cfg, name, 4) or branch_and_bound(pred_b, shell, cfg, name=name)
    r.boxes += total
    return r


# -- level search ----------------------------------------------------------------------

@dataclass
class CertificationReport:
    status: ReportStatus
    rho_quad: float
    c1: float
    c2: float
    delta: float
    eta: float
    boxes: dict = field(default_factory=lambda: {"bridge": 0, "decrease": 0, "separation": 0})
    counterexample: dict | None = None
    wall_time_s: float | None = None
    rho_q: float | None = None
    inner: dict | None = None
    note: str = ("certified up to outward interval slack eta and decrease margin delta; "
                 "floating point without directed rounding")

    @property
    def certified(self) -> bool:
        return self.status is ReportStatus.Certified

    def to_dict(self) -> dict:
        d = asdict(self)
        d["status"] = self.status.value
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> CertificationReport:
        d = dict(d)
        d["status"] = ReportStatus(d["status"])
        return cls(**d)


def _c1_search(p, s, lin, rho, cfg, counts):
    """Largest bridge level found by halving/doubling then bisection (relative tolerance)."""
    last = None

    def ok(c):
        nonlocal last
        r = verify_bridge(p, s, lin, c, rho, cfg)
        counts["bridge"] += r.boxes
        if not r.certified:
            last = r
        return r.certified

    c = cfg.c1_start
    if ok(c):
        good, bad = c, None
        while good < 0.5:
            if ok(2 * good):
                good *= 2
            else:
                bad = 2 * good
                break
        if bad is None:
            bad = min(1.0, 2 * good)
    else:
        bad, good = c, None
        while bad > 1e-9:
            if ok(bad / 2):
                good = bad / 2
                break
            bad /= 2
        if good is None:
            return None, last
    while bad - good > cfg.bisection_tol * good:
        mid = 0.5 * (good + bad)
        if ok(mid):
            good = mid
        else:
            bad = mid
    return good, last


def _outer_ok(p, s, c1, c2, cfg, counts, quad=None):
    r = verify_decrease(p, s, c1, c2, cfg, quad)
    counts["decrease"] += r.boxes
    if not r.certified:
        return r
    r = verify_separation(p, s, c2, cfg)
    counts["separation"] += r.boxes
    return r


def bisect_levels(p: nn.MLPParams, s: SystemSpec, lin: Linearization,
                  cfg: VerifyConfig | None = None, *, baseline: bool = True) -> CertificationReport:
    """Largest certifiable ``c1`` (bridge) then largest ``c2`` in ``(c1, 1)``."""
    cfg = cfg or VerifyConfig()
    t0 = time.perf_counter()
    counts = {"bridge": 0, "decrease": 0, "separation": 0}
    eta = get_slack()

    inner = verify_inner_quadratic(s, lin, cfg.inner_radius)
    rq = quadratic_baseline(s, lin, cfg) if (baseline and inner.certified) else None

    def report(status, rho=0.0, c1=0.0, c2=0.0, cex=None):
        return CertificationReport(
            status=status, rho_quad=rho, c1=c1, c2=c2, delta=cfg.delta, eta=eta, boxes=counts,
            counterexample=cex, rho_q=rq,
            inner={"r0": inner.r0, "mu": inner.mu, "C": inner.C, "rho": inner.rho},
            wall_time_s=round(time.perf_counter() - t0, 3) if cfg.record_wall_time else None)

    if not inner.certified:
        return report(ReportStatus.Failed, cex={"predicate": "inner quadratic: " + inner.message})
    # any certified quadratic level works as the bridge target: the baseline one is
    # forward invariant, safe and attracted to the origin just like the inner ball
    rho = max(inner.rho, rq or 0.0)
    c1, fail = _c1_search(p, s, lin, rho, cfg, counts)
    if c1 is None:
        status = (ReportStatus.ResourceExhausted if fail.outcome is Outcome.ResourceExhausted
                  else ReportStatus.Failed)
        return report(status, rho, cex=fail.counterexample())

    good, bad = c1, 1.0
    last_fail = None
    while bad - good > cfg.bisection_tol:
        mid = 0.5 * (good + bad)
        r = _outer_ok(p, s, c1, mid, cfg, counts, (lin.P, rho))
        if r.certified:
            good = mid
        else:
            bad = mid
            last_fail = r
    if good > c1:
        return report(ReportStatus.Certified, rho, c1, good)
    status = ReportStatus.Failed
    if last_fail is not None and last_fail.outcome is Outcome.ResourceExhausted:
        status = ReportStatus.ResourceExhausted
    return report(status, rho, c1, c1, cex=None if last_fail is None else last_fail.counterexample())


def verify_levels(p: nn.MLPParams, s: SystemSpec, lin: Linearization, c1: float, c2: float,
                  rho: float, cfg: VerifyConfig | None = None) -> bool:
    """Re-check one fixed triple of levels (bridge, decrease, separation)."""
    cfg = cfg or VerifyConfig()
    counts = {"bridge": 0, "decrease": 0, "separation": 0}
    if not verify_bridge(p, s, lin, c1, rho, cfg).certified:
        return False
    return _outer_ok(p, s, c1, c2, cfg, counts, (lin.P, rho)).certified


# -- quadratic baseline ---------------------------------------------------------------

def _quadratic_ok(s, lin, r0, rho_q, cfg) -> bool:
    P = lin.P
    delta = cfg.delta
    thr = 1.0 - cfg.unsafe_clearance

    def v_dec(X):
        q = np.einsum("ij,jk,ik->i", X, P, X)
        lie = 2.0 * np.einsum("ij,jk,ik->i", X, P, field_eval(s, X))
        outside = np.max(np.abs(X), axis=1) >= r0
        return outside & (q <= rho_q) & (lie >= -delta)

    def p_dec(B):
        inside = np.all((B.lo >= -r0) & (B.hi <= r0), axis=1)
        q = _quad_interval(P, B)
        F = interval_field(s, B)
        d = B.dims
        lie = None
        for i in range(s.n):
            Pf = None
            for j in range(s.n):
                if P[i, j] != 0:
                    t = F[j] * float(2.0 * P[i, j])
                    Pf = t if Pf is None else Pf + t
            if Pf is None:
                continue
            t = d[i] * Pf
            lie = t if lie is None else lie + t
        return inside | (q.lo > rho_q) | (lie.hi < -delta)

    if _falsify(v_dec, s.roi, cfg, "quad decrease", 5) is not None:
        return False
    if not branch_and_bound(p_dec, s.roi, cfg).certified:
        return False
    if s.obstacles:
        def v_sep(X):
            return (np.einsum("ij,jk,ik->i", X, P, X) <= rho_q) & (h_max(s, X) >= thr)

        def p_sep(B):
            return (_quad_interval(P, B).lo > rho_q) | (interval_h(s, B).hi < thr)

        if _falsify(v_sep, s.roi, cfg, "quad separation", 6) is not None:
            return False
        if not branch_and_bound(p_sep, s.roi, cfg).certified:
            return False
    return True


def quadratic_support_bound(s: SystemSpec, P) -> float:
    """Largest ``rho`` with the ellipse ``{x^T P x <= rho}`` inside the region of interest."""
    Pinv_diag = np.diag(np.linalg.inv(P))
    bound = np.minimum(-s.roi.lo, s.roi.hi)
    return float(np.min(bound**2 / Pinv_diag))


def quadratic_baseline(s: SystemSpec, lin: Linearization, cfg: VerifyConfig | None = None) -> float | None:
    """Largest certified level ``rho_q`` of the quadratic Lyapunov function ``x^T P x``.

    Returns ``None`` when even the inner ball fails.
    """
    cfg = cfg or VerifyConfig()
    inner = verify_inner_quadratic(s, lin, cfg.inner_radius)
    if not inner.certified:
        return None
    r0 = cfg.inner_radius
    # stay a shell depth away from the boundary, like the neural certificate
    depth = 4.0 * cfg.min_box_width
    Pinv_diag = np.diag(np.linalg.inv(lin.P))
    room = np.minimum(-s.roi.lo, s.roi.hi) - depth
    hi_bound = float(np.min(room**2 / Pinv_diag))
    good = inner.rho
    if _quadratic_ok(s, lin, r0, hi_bound, cfg):
        return hi_bound
    bad = hi_bound
    while bad - good > cfg.bisection_tol * max(good, 1e-12):
        mid = 0.5 * (good + bad)
        if _quadratic_ok(s, lin, r0, mid, cfg):
            good = mid
        else:
            bad = mid
    return good
