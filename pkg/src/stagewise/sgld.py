"""RMSProp-preconditioned SGLD around a checkpoint.

Each chain restarts at the checkpoint ``w*`` and targets the localized,
tempered posterior ``exp(-beta * n/m * sum_batch l_k - gamma/2 ||w - w*||^2)``.
Per step it first records the per-sample losses (training samples in ``L``,
observables in ``Phi``) and then moves::

    V      <- b V + (1 - b) g**2            g = unscaled batch-sum gradient
    eps_t  <- eps / (sqrt(V / (1 - b**t)) + alpha)
    w      <- w - eps_t/2 * (beta n/m g + gamma (w - w*)) + sqrt(eps_t) * N(0, 1)

Chains are advanced together as stacked arrays; each one draws noise and
minibatches from its own random stream, so results do not depend on how
many chains run side by side.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import HierarchicalDataset
from .linnet import LinearNet

__all__ = [
    "SGLDConfig",
    "TraceMatrix",
    "SGLDDivergedError",
    "run_chains",
    "gradient_for_sgld",
    "chain_streams",
]


class SGLDDivergedError(FloatingPointError):
    def __init__(self, chain: int, step: int):
        super().__init__(f"SGLD diverged in chain {chain} at step {step}; reduce the step size")
        self.chain = chain
        self.step = step


@dataclass(frozen=True)
class SGLDConfig:
    """Sampler hyperparameters.

    With the batch-sum loss the preconditioner ``sqrt(V)`` is small near a
    trained checkpoint, so the stability constant sets the effective step
    ``eps / alpha``. The update is only stable when roughly
    ``eps / alpha * (beta * lambda_max + gamma) < 4``; the default ``alpha``
    keeps the toy model's chains in the stable, diffusive regime at
    ``eps = 1e-3, gamma = 5e3, beta = 1e3``.
    """

    step: float = 1e-3
    inv_temp: float = 1000.0
    localization: float = 5e3
    batch: int = 8
    chains: int = 8
    steps_per_chain: int = 200
    decay: float = 0.9
    stability: float = 1000.0
    burn_in: int = 0
    seed: int = 0

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"step must be > 0, got {self.step}")
        if not self.inv_temp > 0:
            raise ValueError(f"inv_temp must be > 0, got {self.inv_temp}")
        if not self.localization >= 0:
            raise ValueError(f"localization must be >= 0, got {self.localization}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if self.chains < 1:
            raise ValueError(f"chains must be >= 1, got {self.chains}")
        if not 0 < self.decay < 1:
            raise ValueError(f"decay must lie in (0, 1), got {self.decay}")
        if not self.stability > 0:
            raise ValueError(f"stability must be > 0, got {self.stability}")
        if not 0 <= self.burn_in < self.steps_per_chain:
            raise ValueError(
                f"burn_in must satisfy 0 <= burn_in < steps_per_chain, got {self.burn_in} / {self.steps_per_chain}"
            )

    @property
    def draws_per_chain(self) -> int:
        return self.steps_per_chain - self.burn_in

    @property
    def n_draws(self) -> int:
        return self.chains * self.draws_per_chain


@dataclass(frozen=True)
class TraceMatrix:
    """Per-draw values, one row per sample/observable and one column per draw.

    ``draw_index[k] = (chain, step)`` for column ``k``; columns are grouped
    chain by chain. ``displacement[k]`` is ``||w - w*||`` at that draw.
    """

    values: np.ndarray
    row_labels: tuple
    draw_index: np.ndarray
    displacement: np.ndarray | None = None

    @property
    def chains(self) -> np.ndarray:
        return self.draw_index[:, 0]


def gradient_for_sgld(net: LinearNet, batch, ds: HierarchicalDataset) -> np.ndarray:
    """Unscaled sum of per-sample loss gradients over ``batch`` (flattened)."""
    idx = np.asarray(batch, dtype=int)
    if idx.size == 0:
        raise ValueError("batch must be nonempty")
    x, y = ds.input[idx], ds.output[idx]
    r = x @ (net.w2 @ net.w1).T - y
    dw = r.T @ x
    return np.concatenate([(net.w2.T @ dw).ravel(), (dw @ net.w1.T).ravel()])


def chain_streams(seed: int, chains: int) -> list[np.random.Generator]:
    """One independent generator per chain, spawned from ``seed``."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(chains)]


def _losses(w1, w2, x, y):
    # w1: (C, hid, N), w2: (C, O, hid) -> per-chain per-sample losses (C, n)
    r = np.einsum("ij,cjk->cik", x, np.transpose(w2 @ w1, (0, 2, 1))) - y[None]
    return 0.5 * np.einsum("cik,cik->ci", r, r)


def run_chains(
    w_star: LinearNet,
    ds: HierarchicalDataset,
    loss_set,
    observable_set,
    cfg: SGLDConfig,
    *,
    observable_ds: HierarchicalDataset | None = None,
    streams: list[np.random.Generator] | None = None,
) -> tuple[TraceMatrix, TraceMatrix]:
    """Sample around ``w_star`` and record loss traces.

    Parameters
    ----------
    w_star : LinearNet
        Checkpoint the chains start from and are localized to.
    ds : HierarchicalDataset
        Training samples; the only source of gradients.
    loss_set, observable_set : sequence of int
        Rows of ``ds`` (or of ``observable_ds`` for observables) whose losses
        are recorded in ``L`` and ``Phi`` respectively. Observables never
        contribute gradients.
    cfg : SGLDConfig
    observable_ds : HierarchicalDataset, optional
        Data used for observables; defaults to ``ds``.
    streams : list of Generator, optional
        Explicit per-chain random streams (``cfg.seed`` is ignored then).

    Returns
    -------
    L, Phi : TraceMatrix
        Shapes ``(len(loss_set), C*(T - burn_in))`` and
        ``(len(observable_set), C*(T - burn_in))``.
    """
    n = ds.n_items
    if cfg.batch > n:
        raise ValueError(f"batch {cfg.batch} exceeds the number of training samples {n}")
    loss_idx = np.asarray(list(loss_set), dtype=int)
    obs_idx = np.asarray(list(observable_set), dtype=int)
    ods = ds if observable_ds is None else observable_ds
    rngs = chain_streams(cfg.seed, cfg.chains) if streams is None else list(streams)
    n_chains = len(rngs)
    full_batch = cfg.batch == n

    x, y = ds.input, ds.output
    xl, yl = x[loss_idx], y[loss_idx]
    xo, yo = ods.input[obs_idx], ods.output[obs_idx]

    w1_star = np.broadcast_to(w_star.w1, (n_chains,) + w_star.w1.shape)
    w2_star = np.broadcast_to(w_star.w2, (n_chains,) + w_star.w2.shape)
    w1 = w1_star.copy()
    w2 = w2_star.copy()
    v1 = np.zeros_like(w1)
    v2 = np.zeros_like(w2)
    scale = cfg.inv_temp * n / cfg.batch

    t_keep = cfg.draws_per_chain
    big_l = np.empty((n_chains, loss_idx.size, t_keep))
    big_phi = np.empty((n_chains, obs_idx.size, t_keep))
    disp = np.empty((n_chains, t_keep))

    for t in range(1, cfg.steps_per_chain + 1):
        if t > cfg.burn_in:
            col = t - 1 - cfg.burn_in
            big_l[:, :, col] = _losses(w1, w2, xl, yl)
            big_phi[:, :, col] = _losses(w1, w2, xo, yo)
            disp[:, col] = np.sqrt(((w1 - w1_star) ** 2).sum(axis=(1, 2)) + ((w2 - w2_star) ** 2).sum(axis=(1, 2)))
        if t == cfg.steps_per_chain:
            break

        if full_batch:
            r = np.einsum("ij,cjk->cik", x, np.transpose(w2 @ w1, (0, 2, 1))) - y[None]
            dw = np.einsum("cio,ij->coj", r, x)
        else:
            dw = np.empty((n_chains, y.shape[1], x.shape[1]))
            for c, rng in enumerate(rngs):
                b = rng.choice(n, size=cfg.batch, replace=False)
                rb = x[b] @ (w2[c] @ w1[c]).T - y[b]
                dw[c] = rb.T @ x[b]
        g1 = np.transpose(w2, (0, 2, 1)) @ dw
        g2 = dw @ np.transpose(w1, (0, 2, 1))

        d1 = scale * g1 + cfg.localization * (w1 - w1_star)
        d2 = scale * g2 + cfg.localization * (w2 - w2_star)
        v1 = cfg.decay * v1 + (1.0 - cfg.decay) * g1 * g1
        v2 = cfg.decay * v2 + (1.0 - cfg.decay) * g2 * g2
        corr = 1.0 - cfg.decay**t
        e1 = cfg.step / (np.sqrt(v1 / corr) + cfg.stability)
        e2 = cfg.step / (np.sqrt(v2 / corr) + cfg.stability)

        noise1 = np.stack([rng.standard_normal(w1.shape[1:]) for rng in rngs])
        noise2 = np.stack([rng.standard_normal(w2.shape[1:]) for rng in rngs])
        w1 = w1 - 0.5 * e1 * d1 + np.sqrt(e1) * noise1
        w2 = w2 - 0.5 * e2 * d2 + np.sqrt(e2) * noise2

        bad = ~(np.isfinite(w1).all(axis=(1, 2)) & np.isfinite(w2).all(axis=(1, 2)))
        if bad.any():
            raise SGLDDivergedError(int(np.argmax(bad)), t)

    draw_index = np.array([(c, s) for c in range(n_chains) for s in range(cfg.burn_in, cfg.steps_per_chain)])
    l_vals = big_l.transpose(1, 0, 2).reshape(loss_idx.size, -1)
    p_vals = big_phi.transpose(1, 0, 2).reshape(obs_idx.size, -1)
    if not (np.all(np.isfinite(l_vals)) and np.all(np.isfinite(p_vals))):
        c = int(np.argmax(~np.isfinite(big_l).all(axis=(1, 2))))
        raise SGLDDivergedError(c, cfg.steps_per_chain)
    return (
        TraceMatrix(l_vals, tuple(int(i) for i in loss_idx), draw_index, disp.ravel()),
        TraceMatrix(p_vals, tuple(int(j) for j in obs_idx), draw_index, disp.ravel()),
    )
