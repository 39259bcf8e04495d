"""Physics-informed training of the Zubov network with Adam."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import net as nn
from .oracle import Dataset
from .system import SystemSpec, scaled_field
from .transform import BetaFamily

LOG_COLUMNS = ("epoch", "total", "res", "bc", "zero", "data", "grad_norm", "wall_time_s")


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch, component, value):
        super().__init__(f"non-finite {component} at epoch {epoch}: {value!r}")
        self.epoch = epoch
        self.component = component


@dataclass(frozen=True)
class TrainConfig:
    widths: tuple | None = None
    n_collocation: int = 3000
    n_boundary: int = 600
    n_data: int = 3000
    c_res: float = 1.0
    c_bc: float = 1.0
    c_zero: float = 1.0
    c_data: float = 1.0
    learning_rate: float = 1e-3
    lr_decay: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 30000
    batch_size: int | None = None
    seed: int = 0
    resample_every: int = 100

    def __post_init__(self):
        if self.widths is not None:
            object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if min(self.c_res, self.c_bc, self.c_zero, self.c_data) < 0:
            raise ValueError("loss weights must be >= 0")
        for weight, count in (("c_res", "n_collocation"), ("c_bc", "n_boundary"), ("c_data", "n_data")):
            if getattr(self, weight) > 0 and getattr(self, count) <= 0:
                raise ValueError(f"{count} must be > 0 while {weight} > 0")
        if self.epochs < 0 or self.resample_every < 1:
            raise ValueError("epochs must be >= 0 and resample_every >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    @property
    def loss_weights(self) -> nn.LossWeights:
        return nn.LossWeights(self.c_res, self.c_bc, self.c_zero, self.c_data)

    def widths_for(self, n: int) -> tuple:
        return self.widths if self.widths is not None else (n, 30, 30, 1)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train option(s): {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        if self.widths is not None:
            out["widths"] = list(self.widths)
        return out


def sample_boundary(box, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples on the faces of a box; a face is picked with probability proportional to its area."""
    lo, hi = box.lo, box.hi
    n = len(lo)
    w = hi - lo
    if n == 1:
        side = rng.integers(0, 2, size=count)
        return np.where(side == 0, lo[0], hi[0])[:, None].astype(float)
    areas = np.array([np.prod(np.delete(w, i)) for i in range(n)])
    probs = np.repeat(areas, 2) / (2 * areas.sum())
    face = rng.choice(2 * n, size=count, p=probs)
    X = lo + w * rng.random((count, n))
    dim = face // 2
    rows = np.arange(count)
    X[rows, dim] = np.where(face % 2 == 0, lo[dim], hi[dim])
    return X


def face_probabilities(box) -> np.ndarray:
    """Probabilities of the faces (lo_1, hi_1, lo_2, hi_2, ...) under :func:`sample_boundary`."""
    w = box.hi - box.lo
    n = len(w)
    if n == 1:
        return np.array([0.5, 0.5])
    areas = np.array([np.prod(np.delete(w, i)) for i in range(n)])
    return np.repeat(areas, 2) / (2 * areas.sum())


def sample_batch(s: SystemSpec, cfg: TrainConfig, rng: np.random.Generator,
                 dataset: Dataset | None = None) -> nn.Batch:
    n = s.n
    colloc = s.roi.sample(rng, cfg.n_collocation if cfg.c_res > 0 else 0)
    boundary = sample_boundary(s.roi, cfg.n_boundary if cfg.c_bc > 0 else 0, rng)
    data_x = np.zeros((0, n))
    data_w = np.zeros(0)
    if cfg.c_data > 0:
        if dataset is None or len(dataset.labels) == 0:
            raise ValueError("c_data > 0 needs a labelled dataset")
        X, W = dataset.X, dataset.W
        if len(X) > cfg.n_data:
            idx = np.sort(rng.choice(len(X), size=cfg.n_data, replace=False))
            X, W = X[idx], W[idx]
        data_x, data_w = X, W
    f_t = scaled_field(s, colloc) if len(colloc) else np.zeros((0, n))
    return nn.Batch(collocation=colloc, f_tilde=f_t, boundary=boundary, origin=np.zeros(n),
                    data_x=data_x, data_w=data_w)


def pinn_loss(p: nn.MLPParams, batch: nn.Batch, cfg: TrainConfig, s: SystemSpec | None = None,
              beta: BetaFamily | None = None):
    """Composite loss and its components (``res``, ``bc``, ``zero``, ``data``)."""
    beta = beta if beta is not None else s.beta
    total, comps, _ = nn.loss_and_param_gradient(p, batch, cfg.loss_weights, beta, need_grad=False)
    return total, comps


def _minibatches(batch: nn.Batch, size: int | None, rng):
    if size is None or size >= len(batch.collocation):
        yield batch
        return
    nc = len(batch.collocation)
    nd = len(batch.data_x)
    order = rng.permutation(nc)
    chunks = math.ceil(nc / size)
    dorder = rng.permutation(nd)
    for c in range(chunks):
        ci = np.sort(order[c * size:(c + 1) * size])
        di = np.sort(dorder[c * nd // chunks:(c + 1) * nd // chunks])
        yield nn.Batch(batch.collocation[ci], batch.f_tilde[ci], batch.boundary, batch.origin,
                       batch.data_x[di], batch.data_w[di])


@dataclass
class History:
    rows: list = field(default_factory=list)

    def append(self, **row):
        self.rows.append(row)

    def column(self, key) -> np.ndarray:
        return np.array([r[key] for r in self.rows])

    def __len__(self):
        return len(self.rows)

    @property
    def final(self) -> dict:
        return self.rows[-1] if self.rows else {}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_COLUMNS)
            for r in self.rows:
                w.writerow([r["epoch"]] + [repr(float(r[k])) for k in LOG_COLUMNS[1:]])


def train(p0: nn.MLPParams, s: SystemSpec, cfg: TrainConfig, dataset: Dataset | None = None,
          callback=None):
    """Adam on the composite loss. Returns ``(p_final, history)``.

    The collocation, boundary and data subsets are redrawn every ``resample_every``
    epochs from a generator seeded by ``cfg.seed``, so runs are bit-reproducible.
    ``callback(epoch, row)`` is called after every epoch when given.
    """
    if p0.n != s.n:
        raise ValueError(f"network input dimension {p0.n} does not match system dimension {s.n}")
    rng = np.random.default_rng(cfg.seed)
    theta = p0.flat()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    weights = cfg.loss_weights
    history = History()
    t0 = time.perf_counter()
    step = 0
    batch = None
    p = p0.copy()
    for epoch in range(cfg.epochs):
        if epoch % cfg.resample_every == 0:
            batch = sample_batch(s, cfg, rng, dataset)
        lr = cfg.learning_rate * cfg.lr_decay ** (epoch / 1000.0)
        sums = dict.fromkeys(nn.LOSS_KEYS, 0.0)
        total_sum = 0.0
        gnorm = 0.0
        parts = list(_minibatches(batch, cfg.batch_size, rng))
        for mb in parts:
            total, comps, g = nn.loss_and_param_gradient(p, mb, weights, s.beta)
            for key, val in comps.items():
                if not math.isfinite(val):
                    raise TrainingDiverged(epoch, key, val)
                sums[key] += val / len(parts)
            if not np.all(np.isfinite(g)):
                raise TrainingDiverged(epoch, "gradient", float("nan"))
            total_sum += total / len(parts)
            gnorm = max(gnorm, float(np.linalg.norm(g)))
            step += 1
            m = cfg.beta1 * m + (1 - cfg.beta1) * g
            v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
            mhat = m / (1 - cfg.beta1**step)
            vhat = v / (1 - cfg.beta2**step)
            theta = theta - lr * mhat / (np.sqrt(vhat) + cfg.epsilon)
            p = p.with_flat(theta)
        row = dict(epoch=epoch, total=total_sum, **sums, grad_norm=gnorm,
                   wall_time_s=time.perf_counter() - t0)
        history.append(**row)
        if callback is not None:
            callback(epoch, row)
    return p, history
