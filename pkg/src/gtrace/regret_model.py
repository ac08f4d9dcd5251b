"""Regret predictor: one-hidden-layer leaky-ReLU MLP trained with L1 loss.

Everything runs in float64 numpy so gradients can be checked against finite
differences and seeded training is bit-reproducible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

N_IN = 40
N_HIDDEN = 2048
LEAKY_SLOPE = 0.01


@dataclass(frozen=True)
class MlpParams:
    W1: np.ndarray  # (hidden, n_in)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (1, hidden)
    b2: np.ndarray  # (1,)

    @classmethod
    def init(cls, rng, n_in=N_IN, hidden=N_HIDDEN) -> "MlpParams":
        """Uniform ``+-1/sqrt(fan_in)`` initialization."""
        a1, a2 = 1 / np.sqrt(n_in), 1 / np.sqrt(hidden)
        return cls(rng.uniform(-a1, a1, (hidden, n_in)), rng.uniform(-a1, a1, hidden),
                   rng.uniform(-a2, a2, (1, hidden)), rng.uniform(-a2, a2, 1))

    @classmethod
    def zeros(cls, n_in=N_IN, hidden=N_HIDDEN) -> "MlpParams":
        return cls(np.zeros((hidden, n_in)), np.zeros(hidden), np.zeros((1, hidden)), np.zeros(1))

    def arrays(self):
        return self.W1, self.b1, self.W2, self.b2

    def map(self, fn, *others) -> "MlpParams":
        return MlpParams(*(fn(*xs) for xs in zip(self.arrays(), *(o.arrays() for o in others))))

    @property
    def n_in(self) -> int:
        return self.W1.shape[1]


def forward(params: MlpParams, x, slope=LEAKY_SLOPE):
    """Predicted regret for one feature vector or a batch of them."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.n_in:
        raise ValueError(f"expected {params.n_in} features, got {x.shape[-1]}")
    z = x @ params.W1.T + params.b1
    h = np.where(z >= 0, z, slope * z)
    y = h @ params.W2[0] + params.b2[0]
    return float(y) if x.ndim == 1 else y


def l1_loss(params, x, y, slope=LEAKY_SLOPE) -> float:
    return float(np.mean(np.abs(forward(params, x, slope) - y)))


def backward(params: MlpParams, x, y, slope=LEAKY_SLOPE):
    """Mean-L1 loss and its gradient over a batch.

    The subgradient at a zero residual is 0, and the leaky ReLU uses its
    positive branch at exactly 0.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    z = x @ params.W1.T + params.b1
    pos = z >= 0
    h = np.where(pos, z, slope * z)
    r = h @ params.W2[0] + params.b2[0] - y
    g = np.sign(r) / n
    dz = np.outer(g, params.W2[0]) * np.where(pos, 1.0, slope)
    grads = MlpParams(dz.T @ x, dz.sum(axis=0), (g @ h)[None, :], np.array([g.sum()]))
    return float(np.mean(np.abs(r))), grads


@dataclass(frozen=True)
class AdamState:
    m: MlpParams
    v: MlpParams
    t: int = 0

    @classmethod
    def zeros_like(cls, params: MlpParams) -> "AdamState":
        z = params.map(np.zeros_like)
        return cls(z, z, 0)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns ``(params, state)``."""
    t = state.t + 1
    m = state.m.map(lambda m, g: beta1 * m + (1 - beta1) * g, grads)
    v = state.v.map(lambda v, g: beta2 * v + (1 - beta2) * g * g, grads)
    c1, c2 = 1 - beta1 ** t, 1 - beta2 ** t
    new = params.map(lambda p, m, v: p - lr * (m / c1) / (np.sqrt(v / c2) + eps), m, v)
    return new, AdamState(m, v, t)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.005
    batch: int = 1024
    epochs: int = 2000
    plateau_patience: int = 10
    lr_factor: float = 0.1
    leaky_slope: float = LEAKY_SLOPE
    val_fraction: float = 0.1
    seed: int = 0
    hidden: int = N_HIDDEN
    min_delta: float = 1e-6

    def __post_init__(self):
        if self.lr0 <= 0 or self.batch < 1 or self.plateau_patience < 1 or self.epochs < 1:
            raise ValueError("need lr0 > 0, batch >= 1, patience >= 1, epochs >= 1")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must be in [0, 1)")


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_l1: float
    val_l1: float
    lr: float


def train(features, targets, config=TrainConfig()):
    """Fit the MLP; returns ``(best_params, curves)``.

    A seeded shuffle holds out ``val_fraction`` of the samples.  The learning
    rate is cut by ``lr_factor`` once validation loss has not improved for
    ``plateau_patience`` epochs, and the parameters with the lowest
    validation loss are returned.  Without a validation split the training
    loss plays its role.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if x.shape[0] == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(x.shape[0])
    n_val = int(round(config.val_fraction * x.shape[0]))
    if n_val >= x.shape[0]:
        n_val = x.shape[0] - 1
    val_idx, tr_idx = order[:n_val], order[n_val:]
    xt, yt = x[tr_idx], y[tr_idx]
    xv, yv = x[val_idx], y[val_idx]
    batch = min(config.batch, len(tr_idx))
    slope = config.leaky_slope

    params = MlpParams.init(rng, x.shape[1], config.hidden)
    state = AdamState.zeros_like(params)
    lr = config.lr0
    best, best_loss = params, np.inf
    sched_best, stale = np.inf, 0
    curves = []
    for epoch in range(config.epochs):
        perm = rng.permutation(len(tr_idx))
        for i in range(0, len(perm), batch):
            b = perm[i:i + batch]
            _, g = backward(params, xt[b], yt[b], slope)
            params, state = adam_step(params, g, state, lr)
        train_l1 = l1_loss(params, xt, yt, slope)
        val_l1 = l1_loss(params, xv, yv, slope) if n_val else train_l1
        curves.append(EpochLog(epoch, train_l1, val_l1, lr))
        if val_l1 < best_loss:
            best, best_loss = params, val_l1
        if val_l1 < sched_best - config.min_delta:
            sched_best, stale = val_l1, 0
        else:
            stale += 1
            if stale >= config.plateau_patience:
                lr *= config.lr_factor
                stale = 0
    return best, curves


def save_model(path, params: MlpParams, slope=LEAKY_SLOPE):
    hidden, n_in = params.W1.shape
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"{n_in} {hidden} 1 {slope!r}\n")
        for row in params.W1:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        for arr in (params.b1, params.W2[0], params.b2):
            fh.write(" ".join(repr(float(v)) for v in arr) + "\n")


def load_model(path):
    """Returns ``(params, slope)``."""
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    head = lines[0].split()
    if len(head) != 4 or head[2] != "1":
        raise ValueError(f"{path}: bad model header")
    n_in, hidden, slope = int(head[0]), int(head[1]), float(head[3])
    rows = [np.array(line.split(), dtype=np.float64) for line in lines[1:hidden + 4]]
    W1 = np.stack(rows[:hidden])
    if W1.shape != (hidden, n_in):
        raise ValueError(f"{path}: W1 has shape {W1.shape}")
    return MlpParams(W1, rows[hidden], rows[hidden + 1][None, :], rows[hidden + 2]), slope


def save_curves(path, curves):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_l1", "val_l1", "lr"])
        for c in curves:
            w.writerow([c.epoch, repr(float(c.train_l1)), repr(float(c.val_l1)), repr(float(c.lr))])
