"""Two-layer bias-free deep linear network trained by full-batch gradient descent.

Losses follow ``l_i = 0.5 * ||y_i - W2 W1 x_i||^2`` and the training objective
is the weighted *sum* ``L = sum_i w_i l_i``. Every flattened parameter vector
uses one layout: ``w1`` row-major followed by ``w2`` row-major.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dataset import DataWeighting, HierarchicalDataset

__all__ = [
    "LinearNet",
    "TrainConfig",
    "TrainTrace",
    "TrainingDivergedError",
    "init_network",
    "train",
    "fit",
    "per_sample_losses",
    "per_sample_gradient",
    "total_gradient",
    "hessian",
    "gauss_newton",
    "jacobians",
    "hidden_reps",
    "checkpoint_epochs",
    "MAX_DENSE_PARAMS",
]

MAX_DENSE_PARAMS = 5000


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch: int):
        super().__init__(f"training diverged: non-finite loss at epoch {epoch}; lower the learning rate")
        self.epoch = epoch


@dataclass(frozen=True)
class LinearNet:
    w1: np.ndarray  # (hid, N)
    w2: np.ndarray  # (O, hid)

    @property
    def hid(self) -> int:
        return self.w1.shape[0]

    @property
    def n_params(self) -> int:
        return self.w1.size + self.w2.size

    @property
    def end_to_end(self) -> np.ndarray:
        return self.w2 @ self.w1

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.w2.ravel()])

    def with_flat(self, theta: np.ndarray) -> "LinearNet":
        k = self.w1.size
        return LinearNet(theta[:k].reshape(self.w1.shape).copy(), theta[k:].reshape(self.w2.shape).copy())

    @classmethod
    def zeros_like(cls, net: "LinearNet") -> "LinearNet":
        return cls(np.zeros_like(net.w1), np.zeros_like(net.w2))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-3
    epochs: int = 10_000
    init_sigma: float = 1e-3
    seed: int = 0
    checkpoint_every: int = 50
    hidden: int = 50

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not self.init_sigma > 0:
            raise ValueError(f"init_sigma must be > 0, got {self.init_sigma}")
        if self.checkpoint_every < 1:
            raise ValueError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        if self.hidden < 1:
            raise ValueError(f"hidden must be >= 1, got {self.hidden}")


@dataclass(frozen=True)
class TrainTrace:
    """Result of a training run.

    ``per_sample_loss[t]`` holds the unweighted losses after ``t`` updates,
    so row 0 is the initialization. ``total_loss`` is their plain sum and
    ``objective`` the weighted sum that gradient descent actually minimizes.
    """

    checkpoints: dict[int, LinearNet]
    per_sample_loss: np.ndarray
    total_loss: np.ndarray
    objective: np.ndarray
    config: TrainConfig | None = None
    meta: dict = field(default_factory=dict)

    @property
    def epochs(self) -> list[int]:
        return sorted(self.checkpoints)

    @property
    def final(self) -> LinearNet:
        return self.checkpoints[max(self.checkpoints)]


def init_network(ds: HierarchicalDataset, hid: int = 50, sigma: float = 1e-3, seed: int = 0) -> LinearNet:
    """I.i.d. ``Normal(0, sigma**2)`` weights; ``w1`` is drawn before ``w2``."""
    if hid < 1:
        raise ValueError(f"hid must be >= 1, got {hid}")
    rng = np.random.default_rng(seed)
    w1 = rng.normal(0.0, sigma, size=(hid, ds.input.shape[1]))
    w2 = rng.normal(0.0, sigma, size=(ds.output.shape[1], hid))
    return LinearNet(w1, w2)


def _residuals(w1: np.ndarray, w2: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # rows are samples: r_i = W x_i - y_i
    return x @ (w2 @ w1).T - y


def per_sample_losses(net: LinearNet, ds: HierarchicalDataset) -> np.ndarray:
    r = _residuals(net.w1, net.w2, ds.input, ds.output)
    return 0.5 * np.einsum("ij,ij->i", r, r)


def _layer_grads(w1, w2, x, y, weights):
    r = _residuals(w1, w2, x, y)
    dw = (r * weights[:, None]).T @ x  # dL/dW, (O, N)
    return w2.T @ dw, dw @ w1.T, r


def total_gradient(net: LinearNet, ds: HierarchicalDataset, w: DataWeighting | None = None) -> np.ndarray:
    weights = np.ones(ds.n_items) if w is None else w.weights
    g1, g2, _ = _layer_grads(net.w1, net.w2, ds.input, ds.output, weights)
    return np.concatenate([g1.ravel(), g2.ravel()])


def per_sample_gradient(net: LinearNet, ds: HierarchicalDataset, i: int) -> np.ndarray:
    """Gradient of ``l_i`` flattened as (w1, w2), both row-major."""
    weights = np.zeros(ds.n_items)
    weights[i] = 1.0
    return total_gradient(net, ds, DataWeighting(weights, "custom"))


def checkpoint_epochs(epochs: int, every: int) -> list[int]:
    """Default checkpoint schedule: every ``every`` epochs plus 0 and the final epoch."""
    marks = set(range(0, epochs + 1, every))
    marks.update({0, epochs})
    return sorted(marks)


def train(
    net: LinearNet,
    ds: HierarchicalDataset,
    w: DataWeighting | None,
    cfg: TrainConfig,
    *,
    schedule: Callable[[int], np.ndarray] | None = None,
    checkpoints: list[int] | None = None,
    eval_ds: HierarchicalDataset | None = None,
    start_epoch: int = 0,
) -> TrainTrace:
    """Full-batch gradient descent on the weighted sum of per-sample losses.

    Parameters
    ----------
    net : LinearNet
        Initial parameters (not modified).
    ds : HierarchicalDataset
        Training data.
    w : DataWeighting or None
        Per-sample weights; ``None`` means all ones.
    cfg : TrainConfig
        Learning rate, epoch count and checkpoint density.
    schedule : callable, optional
        ``schedule(epoch) -> weights`` overriding ``w`` for the update taken at
        ``epoch`` (the update that produces epoch ``epoch + 1``).
    checkpoints : list of int, optional
        Explicit checkpoint epochs; defaults to :func:`checkpoint_epochs`.
    eval_ds : HierarchicalDataset, optional
        Dataset the recorded per-sample losses are measured on; defaults to
        ``ds``.
    start_epoch : int
        Epoch label of ``net``; training runs until ``cfg.epochs``.

    Raises
    ------
    TrainingDivergedError
        If any recorded loss becomes non-finite.
    """
    weights = np.ones(ds.n_items) if w is None else np.asarray(w.weights, dtype=float)
    ev = ds if eval_ds is None else eval_ds
    marks = set(checkpoint_epochs(cfg.epochs, cfg.checkpoint_every) if checkpoints is None else checkpoints)
    marks = {m for m in marks if start_epoch <= m <= cfg.epochs}

    w1 = net.w1.copy()
    w2 = net.w2.copy()
    x, y = ds.input, ds.output
    n_rows = cfg.epochs - start_epoch + 1
    losses = np.empty((n_rows, ds.n_items))
    objective = np.empty(n_rows)
    saved: dict[int, LinearNet] = {}

    for t in range(start_epoch, cfg.epochs + 1):
        wt = weights if schedule is None else schedule(t)
        g1, g2, r = _layer_grads(w1, w2, x, y, wt)
        if ev is ds:
            row = 0.5 * np.einsum("ij,ij->i", r, r)
        else:
            re = _residuals(w1, w2, ev.input, ev.output)
            row = 0.5 * np.einsum("ij,ij->i", re, re)
        if not np.all(np.isfinite(row)):
            raise TrainingDivergedError(t)
        losses[t - start_epoch] = row
        objective[t - start_epoch] = float(np.dot(weights, 0.5 * np.einsum("ij,ij->i", r, r)))
        if t in marks:
            saved[t] = LinearNet(w1.copy(), w2.copy())
        if t == cfg.epochs:
            break
        w1 = w1 - cfg.lr * g1
        w2 = w2 - cfg.lr * g2

    return TrainTrace(
        checkpoints=saved,
        per_sample_loss=losses,
        total_loss=losses.sum(axis=1),
        objective=objective,
        config=cfg,
        meta={"start_epoch": start_epoch},
    )


def fit(ds: HierarchicalDataset, cfg: TrainConfig, w: DataWeighting | None = None, **kwargs) -> TrainTrace:
    """Initialize from ``cfg.seed`` and train."""
    net = init_network(ds, cfg.hidden, cfg.init_sigma, cfg.seed)
    return train(net, ds, w, cfg, **kwargs)


def jacobians(net: LinearNet, ds: HierarchicalDataset) -> np.ndarray:
    """Per-sample Jacobians of the network output, shape (N, O, P)."""
    hid, n_in = net.w1.shape
    n_out = net.w2.shape[0]
    x = ds.input
    h = x @ net.w1.T  # (N, hid)
    # d out_o / d W1[h, n] = W2[o, h] x_n
    j1 = np.einsum("oh,in->iohn", net.w2, x).reshape(x.shape[0], n_out, hid * n_in)
    # d out_o / d W2[o', h] = [o == o'] h_h
    eye = np.eye(n_out)
    j2 = np.einsum("op,ih->ioph", eye, h).reshape(x.shape[0], n_out, n_out * hid)
    return np.concatenate([j1, j2], axis=2)


def _size_guard(net: LinearNet) -> None:
    if net.n_params > MAX_DENSE_PARAMS:
        raise ValueError(f"dense curvature needs P <= {MAX_DENSE_PARAMS}, network has P = {net.n_params}")


def gauss_newton(net: LinearNet, ds: HierarchicalDataset, w: DataWeighting | None = None) -> np.ndarray:
    """``sum_i w_i J_i^T J_i`` (the output-space Hessian of the squared loss is the identity)."""
    _size_guard(net)
    weights = np.ones(ds.n_items) if w is None else w.weights
    j = jacobians(net, ds) * np.sqrt(np.abs(weights))[:, None, None]
    flat = j.reshape(-1, j.shape[2])
    g = flat.T @ flat
    if np.any(weights < 0):
        neg = (weights < 0).repeat(j.shape[1])
        g -= 2.0 * flat[neg].T @ flat[neg]
    return 0.5 * (g + g.T)


def hessian(net: LinearNet, ds: HierarchicalDataset, w: DataWeighting | None = None) -> np.ndarray:
    """Exact Hessian of the weighted total loss.

    The loss is quadratic in the end-to-end map, so the Hessian is the
    Gauss-Newton term plus the residual coupling between the two layers:
    ``d^2 L / dW2[o,h] dW1[h,n] = (dL/dW)[o,n]``.
    """
    weights = np.ones(ds.n_items) if w is None else w.weights
    h = gauss_newton(net, ds, w)
    hid, n_in = net.w1.shape
    n_out = net.w2.shape[0]
    r = _residuals(net.w1, net.w2, ds.input, ds.output)
    dw = (r * weights[:, None]).T @ ds.input  # (O, N)
    # cross[(h, n), (o, h')] = dw[o, n] * [h == h']
    cross = np.einsum("on,hk->hnok", dw, np.eye(hid)).reshape(hid * n_in, n_out * hid)
    k = hid * n_in
    h[:k, k:] += cross
    h[k:, :k] += cross.T
    return h


def hidden_reps(net: LinearNet, ds: HierarchicalDataset) -> np.ndarray:
    """Row ``i`` is the hidden representation ``W1 x_i``."""
    return ds.input @ net.w1.T
