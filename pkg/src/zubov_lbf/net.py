"""Fully connected tanh network used as the Lyapunov-barrier candidate.

Hidden layers are ``z = tanh(W z_prev + b)``, the output layer is affine and
scalar. Besides the value this module provides

* exact input gradients (reverse accumulation),
* exact parameter gradients of losses that contain the directional derivative
  ``grad_x W . v`` (forward tangents pushed through the network, then one reverse
  sweep over the primal+tangent graph),
* sound interval enclosures of ``W`` and ``grad_x W`` over boxes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .interval import Box, Interval, _widen
from .transform import BetaFamily, dphi_dw, phi_of_w

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(eq=False)
class MLPParams:
    widths: tuple
    weights: list
    biases: list
    seed: int = 0
    activation: str = "tanh"

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        _check_widths(self.widths)
        self.weights = [np.asarray(W, dtype=float) for W in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        if len(self.weights) != len(self.widths) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("need one weight matrix and bias per layer")
        for ell, (W, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.widths[ell + 1], self.widths[ell])
            if W.shape != shape or b.shape != (shape[0],):
                raise ValueError(f"layer {ell}: expected W{shape}, b({shape[0]},), got {W.shape}, {b.shape}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {ell} has non-finite parameters")

    @property
    def n(self) -> int:
        return self.widths[0]

    @property
    def num_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def copy(self) -> MLPParams:
        return MLPParams(self.widths, [W.copy() for W in self.weights],
                         [b.copy() for b in self.biases], self.seed, self.activation)

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(self.weights, self.biases)])

    def with_flat(self, theta) -> MLPParams:
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.num_params:
            raise ValueError(f"expected {self.num_params} parameters, got {theta.size}")
        Ws, bs, k = [], [], 0
        for W, b in zip(self.weights, self.biases):
            Ws.append(theta[k:k + W.size].reshape(W.shape))
            k += W.size
            bs.append(theta[k:k + b.size].copy())
            k += b.size
        return MLPParams(self.widths, Ws, bs, self.seed, self.activation)

    def same_as(self, other: MLPParams) -> bool:
        """Bitwise equality of architecture and parameters."""
        return (self.widths == other.widths and self.seed == other.seed
                and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
                and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases)))


def _check_widths(widths):
    if len(widths) < 2 or widths[-1] != 1 or any(w < 1 for w in widths):
        raise ValueError(f"widths must look like [n, w1, ..., 1], got {list(widths)}")


def init_params(widths, seed: int = 0) -> MLPParams:
    """Uniform Glorot init, zero biases; deterministic in ``seed``."""
    widths = tuple(int(w) for w in widths)
    _check_widths(widths)
    rng = np.random.default_rng(seed)
    Ws, bs = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        Ws.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return MLPParams(widths, Ws, bs, seed)


def _as_batch(x, n):
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != n:
        raise ValueError(f"expected points of dimension {n}, got {X.shape[1]}")
    return X, single


def _hidden(p: MLPParams, X):
    zs = [X]
    for W, b in zip(p.weights[:-1], p.biases[:-1]):
        zs.append(np.tanh(zs[-1] @ W.T + b))
    return zs


def forward(p: MLPParams, x):
    X, single = _as_batch(x, p.n)
    zs = _hidden(p, X)
    y = zs[-1] @ p.weights[-1][0] + p.biases[-1][0]
    return float(y[0]) if single else y


def input_gradient(p: MLPParams, x):
    X, single = _as_batch(x, p.n)
    zs = _hidden(p, X)
    g = np.broadcast_to(p.weights[-1], (len(X), p.widths[-2]))
    for ell in range(len(p.weights) - 2, -1, -1):
        g = (g * (1.0 - zs[ell + 1] ** 2)) @ p.weights[ell]
    return g[0].copy() if single else g


def value_and_gradient(p: MLPParams, x):
    X, single = _as_batch(x, p.n)
    zs = _hidden(p, X)
    y = zs[-1] @ p.weights[-1][0] + p.biases[-1][0]
    g = np.broadcast_to(p.weights[-1], (len(X), p.widths[-2]))
    for ell in range(len(p.weights) - 2, -1, -1):
        g = (g * (1.0 - zs[ell + 1] ** 2)) @ p.weights[ell]
    if single:
        return float(y[0]), g[0].copy()
    return y, g


def tangent_forward(p: MLPParams, X, V):
    """Value ``y`` for every row and ``ydot = grad_x y . v`` for the first ``len(V)`` rows.

    Rows beyond ``len(V)`` carry no tangent, which saves work for loss terms that
    only need values. Returns ``(y, ydot, cache)``.
    """
    nt = len(V)
    zs, dzs, ss, das = [X], [V], [], []
    for W, b in zip(p.weights[:-1], p.biases[:-1]):
        z = np.tanh(zs[-1] @ W.T + b)
        s = 1.0 - z * z
        da = dzs[-1] @ W.T
        zs.append(z)
        ss.append(s)
        das.append(da)
        dzs.append(s[:nt] * da)
    w_o = p.weights[-1][0]
    y = zs[-1] @ w_o + p.biases[-1][0]
    ydot = dzs[-1] @ w_o
    return y, ydot, (zs, dzs, ss, das)


def tangent_backward(p: MLPParams, cache, ybar, ydotbar) -> np.ndarray:
    """Flat parameter gradient of ``sum(ybar * y) + sum(ydotbar * ydot)``."""
    zs, dzs, ss, das = cache
    nt = len(ydotbar)
    L = len(p.weights) - 1
    gW = [None] * (L + 1)
    gb = [None] * (L + 1)
    w_o = p.weights[-1]
    gW[L] = (ybar @ zs[-1] + ydotbar @ dzs[-1])[None, :]
    gb[L] = np.array([ybar.sum()])
    zbar = ybar[:, None] * w_o
    dzbar = ydotbar[:, None] * w_o
    for ell in range(L - 1, -1, -1):
        z, s, da = zs[ell + 1], ss[ell], das[ell]
        dabar = dzbar * s[:nt]
        zbar[:nt] += (dzbar * da) * (-2.0 * z[:nt])
        abar = zbar * s
        W = p.weights[ell]
        gW[ell] = abar.T @ zs[ell] + dabar.T @ dzs[ell]
        gb[ell] = abar.sum(axis=0)
        if ell > 0:
            zbar = abar @ W
            dzbar = dabar @ W
    return np.concatenate([np.concatenate([g.ravel(), b]) for g, b in zip(gW, gb)])


# -- composite PINN loss ------------------------------------------------------------

@dataclass(frozen=True)
class LossWeights:
    res: float = 1.0
    bc: float = 1.0
    zero: float = 1.0
    data: float = 1.0

    def __post_init__(self):
        if min(self.res, self.bc, self.zero, self.data) < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass
class Batch:
    """Training points. ``f_tilde`` holds the scaled field at the collocation points."""

    collocation: np.ndarray
    f_tilde: np.ndarray
    boundary: np.ndarray
    origin: np.ndarray
    data_x: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))
    data_w: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n(self):
        return self.collocation.shape[1]


LOSS_KEYS = ("res", "bc", "zero", "data")


def loss_and_param_gradient(p: MLPParams, batch: Batch, weights: LossWeights, beta: BetaFamily,
                            need_grad: bool = True):
    """Composite loss, its components and (optionally) its exact parameter gradient.

    ``total = res * mean(r^2) + bc * mean((W - 1)^2) + zero * W(0)^2 + data * mean((W - W_label)^2)``
    with ``r = grad W . f_tilde + phi(W) (1 - W) |x|^2`` on the collocation points.
    """
    n = p.n
    parts = [batch.collocation, batch.boundary, batch.origin.reshape(1, n),
             batch.data_x.reshape(-1, n)]
    sizes = [len(a) for a in parts]
    X = np.concatenate(parts)
    y, ydot, cache = tangent_forward(p, X, batch.f_tilde.reshape(-1, n))

    i0, i1, i2 = sizes[0], sizes[0] + sizes[1], sizes[0] + sizes[1] + 1
    ybar = np.zeros_like(y)
    ydotbar = np.zeros_like(ydot)
    comps = dict.fromkeys(LOSS_KEYS, 0.0)

    if sizes[0]:
        yc = y[:i0]
        sq = np.sum(batch.collocation**2, axis=1)
        phi = phi_of_w(beta, yc, check=False)
        r = ydot + phi * (1.0 - yc) * sq
        comps["res"] = float(np.mean(r * r))
        coef = weights.res * 2.0 * r / sizes[0]
        ydotbar[:] = coef
        ybar[:i0] = coef * (dphi_dw(beta, yc) * (1.0 - yc) - phi) * sq
    if sizes[1]:
        e = y[i0:i1] - 1.0
        comps["bc"] = float(np.mean(e * e))
        ybar[i0:i1] = weights.bc * 2.0 * e / sizes[1]
    comps["zero"] = float(y[i1] ** 2)
    ybar[i1] = weights.zero * 2.0 * y[i1]
    if sizes[3]:
        e = y[i2:] - batch.data_w
        comps["data"] = float(np.mean(e * e))
        ybar[i2:] = weights.data * 2.0 * e / sizes[3]

    total = (weights.res * comps["res"] + weights.bc * comps["bc"]
             + weights.zero * comps["zero"] + weights.data * comps["data"])
    if not need_grad:
        return total, comps, None
    return total, comps, tangent_backward(p, cache, ybar, ydotbar)


def loss_param_gradient(p: MLPParams, batch: Batch, weights: LossWeights, beta: BetaFamily) -> np.ndarray:
    return loss_and_param_gradient(p, batch, weights, beta)[2]


# -- interval passes -------------------------------------------------------------

def _box_interval(b: Box) -> Interval:
    return Interval(np.atleast_2d(b.lo), np.atleast_2d(b.hi))


def _sech2(a: Interval) -> Interval:
    """Enclosure of ``1 - tanh(a)^2`` (even, decreasing in |a|)."""
    lo_abs = np.where((a.lo <= 0) & (a.hi >= 0), 0.0, np.minimum(np.abs(a.lo), np.abs(a.hi)))
    hi_abs = np.maximum(np.abs(a.lo), np.abs(a.hi))
    t_small = np.tanh(lo_abs)
    t_big = np.tanh(hi_abs)
    lo, hi = _widen(1.0 - t_big * t_big, 1.0 - t_small * t_small)
    return Interval(np.clip(lo, 0.0, 1.0), np.clip(hi, 0.0, 1.0))


def _interval_hidden(p: MLPParams, b: Box):
    z = _box_interval(b)
    pre = []
    zs = [z]
    for W, bias in zip(p.weights[:-1], p.biases[:-1]):
        a = z.matmul_const(W.T) + bias
        pre.append(a)
        z = a.tanh()
        zs.append(z)
    return zs, pre


def _squeeze(iv: Interval, b: Box) -> Interval:
    return iv if b.is_stack else iv[0]


def interval_forward(p: MLPParams, b: Box) -> Interval:
    """Sound enclosure of the network output over a box (or each box of a stack)."""
    zs, _ = _interval_hidden(p, b)
    out = zs[-1].matmul_const(p.weights[-1].T) + p.biases[-1]
    return _squeeze(out[:, 0], b)


def interval_input_gradient(p: MLPParams, b: Box) -> Interval:
    """Sound enclosure of ``grad_x W`` over a box; shape (n,) or (m, n)."""
    _, pre = _interval_hidden(p, b)
    m = len(pre[0]) if pre else np.atleast_2d(b.lo).shape[0]
    w_o = np.broadcast_to(p.weights[-1], (m, p.widths[-2]))
    g = Interval(w_o, w_o)
    for ell in range(len(p.weights) - 2, -1, -1):
        g = (g * _sech2(pre[ell])).matmul_const(p.weights[ell])
    return _squeeze(g, b)


def interval_value_and_gradient(p: MLPParams, b: Box):
    """Both enclosures from one forward sweep; the value is tightened by the mean-value form."""
    zs, pre = _interval_hidden(p, b)
    val = (zs[-1].matmul_const(p.weights[-1].T) + p.biases[-1])[:, 0]
    m = len(val)
    w_o = np.broadcast_to(p.weights[-1], (m, p.widths[-2]))
    g = Interval(w_o, w_o)
    for ell in range(len(p.weights) - 2, -1, -1):
        g = (g * _sech2(pre[ell])).matmul_const(p.weights[ell])
    lo = np.atleast_2d(b.lo)
    hi = np.atleast_2d(b.hi)
    c = 0.5 * (lo + hi)
    # centre value as a (widened) point interval, then W(x) in W(c) + G (x - c)
    wc = forward(p, c)
    mv = Interval._wide(wc, wc)
    for i in range(p.n):
        mv = mv + g[:, i] * Interval(lo[:, i] - c[:, i], hi[:, i] - c[:, i])
    val = val.intersect(mv)
    return _squeeze(val, b), _squeeze(g, b)


# -- checkpoints ------------------------------------------------------------------

def _num(v: float) -> str:
    return format(float(v), ".17g")


def _nested(a) -> str:
    a = np.asarray(a)
    if a.ndim == 1:
        return "[" + ", ".join(_num(v) for v in a) + "]"
    return "[" + ", ".join(_nested(row) for row in a) + "]"


def dumps(p: MLPParams) -> str:
    lines = [
        "{",
        f'  "version": {FORMAT_VERSION},',
        f'  "widths": {json.dumps(list(p.widths))},',
        f'  "activation": "{p.activation}",',
        f'  "seed": {int(p.seed)},',
        '  "weights": [' + ", ".join(_nested(W) for W in p.weights) + "],",
        '  "biases": [' + ", ".join(_nested(b) for b in p.biases) + "]",
        "}",
    ]
    return "\n".join(lines) + "\n"


def loads(text: str, n: int | None = None) -> MLPParams:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as err:
        raise CheckpointError(f"corrupt checkpoint: {err}") from None
    if not isinstance(obj, dict) or obj.get("version") != FORMAT_VERSION:
        got = obj.get("version") if isinstance(obj, dict) else None
        raise CheckpointError(f"unsupported checkpoint version {got!r} (expected {FORMAT_VERSION})")
    try:
        p = MLPParams(obj["widths"], [np.array(W, dtype=float) for W in obj["weights"]],
                      [np.array(b, dtype=float) for b in obj["biases"]], int(obj["seed"]),
                      obj.get("activation", "tanh"))
    except (KeyError, ValueError, TypeError) as err:
        raise CheckpointError(f"corrupt checkpoint: {err}") from None
    if n is not None and p.n != n:
        raise CheckpointError(f"checkpoint expects dimension {p.n}, system has {n}")
    return p


def save(p: MLPParams, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(p))


def load(path, n: int | None = None) -> MLPParams:
    with open(path) as fh:
        return loads(fh.read(), n)
