"""Bayesian influence from SGLD loss traces.

The BIF of training sample ``i`` on observable ``j`` is minus the posterior
covariance of their losses. Every public function here returns that negated
value; pass ``raw_covariance=True`` to get the covariance itself.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Literal, Mapping

import numpy as np

from .dataset import HierarchicalDataset
from .linnet import LinearNet
from .sgld import SGLDConfig, TraceMatrix, run_chains

__all__ = [
    "BIFMatrix",
    "InfluenceTrajectory",
    "METHODS",
    "bif_from_traces",
    "normalized_bif",
    "bif_matrices",
    "trajectory",
    "group_influence",
]

METHODS = ("bif", "classical_h", "classical_gnh", "analytic", "loo")


@dataclass(frozen=True)
class BIFMatrix:
    values: np.ndarray
    normalized: bool = False
    checkpoint_epoch: int | None = None
    row_labels: tuple = ()
    col_labels: tuple = ()
    zero_variance: np.ndarray | None = None


@dataclass(frozen=True)
class InfluenceTrajectory:
    epochs: np.ndarray
    values: np.ndarray
    method: str
    source: int
    query: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        epochs = np.asarray(self.epochs, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if epochs.shape != values.shape or epochs.ndim != 1:
            raise ValueError("epochs and values must be 1-D arrays of equal length")
        if epochs.size > 1 and np.any(np.diff(epochs) <= 0):
            raise ValueError("epochs must be strictly increasing")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        object.__setattr__(self, "epochs", epochs)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.epochs.size

    def peak_epoch(self, sign: Literal["abs", "pos", "neg"] = "abs") -> float:
        v = {"abs": np.abs(self.values), "pos": self.values, "neg": -self.values}[sign]
        return float(self.epochs[int(np.argmax(v))])


def _centered(values: np.ndarray, chains: np.ndarray | None, centering: str) -> np.ndarray:
    if centering == "global":
        return values - values.mean(axis=1, keepdims=True)
    if centering == "per_chain":
        out = np.empty_like(values)
        for c in np.unique(chains):
            m = chains == c
            out[:, m] = values[:, m] - values[:, m].mean(axis=1, keepdims=True)
        return out
    raise ValueError(f"unknown centering {centering!r}")


def bif_from_traces(
    big_l: TraceMatrix,
    big_phi: TraceMatrix,
    *,
    centering: Literal["global", "per_chain"] = "global",
    raw_covariance: bool = False,
    checkpoint_epoch: int | None = None,
) -> BIFMatrix:
    """``B[i, j] = -Cov(L_i, Phi_j)`` over all draws, with denominator ``draws - 1``."""
    lv, pv = np.asarray(big_l.values, float), np.asarray(big_phi.values, float)
    if lv.shape[1] != pv.shape[1]:
        raise ValueError(f"trace column counts differ: {lv.shape[1]} vs {pv.shape[1]}")
    n_draws = lv.shape[1]
    if n_draws < 2:
        raise ValueError("need at least 2 draws to estimate a covariance")
    lc = _centered(lv, big_l.chains, centering)
    pc = lc if pv is lv else _centered(pv, big_phi.chains, centering)
    cov = lc @ pc.T / (n_draws - 1)
    return BIFMatrix(
        cov if raw_covariance else -cov,
        normalized=False,
        checkpoint_epoch=checkpoint_epoch,
        row_labels=big_l.row_labels,
        col_labels=big_phi.row_labels,
    )


def normalized_bif(
    big_l: TraceMatrix,
    big_phi: TraceMatrix,
    *,
    centering: Literal["global", "per_chain"] = "global",
    checkpoint_epoch: int | None = None,
) -> BIFMatrix:
    """Minus the Pearson correlation between loss and observable traces.

    Rows with zero variance get 0 and are reported in ``zero_variance``
    (with a warning) instead of producing NaN.
    """
    cov = bif_from_traces(big_l, big_phi, centering=centering, raw_covariance=True).values
    lc = _centered(np.asarray(big_l.values, float), big_l.chains, centering)
    pc = _centered(np.asarray(big_phi.values, float), big_phi.chains, centering)
    n = lc.shape[1] - 1
    sl = np.sqrt(np.einsum("ij,ij->i", lc, lc) / n)
    sp = np.sqrt(np.einsum("ij,ij->i", pc, pc) / n)
    denom = np.outer(sl, sp)
    flat = denom == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = np.where(flat, 0.0, cov / np.where(flat, 1.0, denom))
    corr = np.clip(corr, -1.0, 1.0)
    if flat.any():
        warnings.warn(f"{int(flat.sum())} BIF entries involve zero-variance traces; set to 0", RuntimeWarning)
    return BIFMatrix(
        -corr,
        normalized=True,
        checkpoint_epoch=checkpoint_epoch,
        row_labels=big_l.row_labels,
        col_labels=big_phi.row_labels,
        zero_variance=flat,
    )


def _checkpoint_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def bif_matrices(
    checkpoints: Mapping[int, LinearNet],
    ds: HierarchicalDataset,
    cfg: SGLDConfig,
    *,
    normalized: bool = False,
    centering: Literal["global", "per_chain"] = "global",
    epochs: Iterable[int] | None = None,
) -> dict[int, BIFMatrix]:
    """Full ``n x n`` BIF matrix (training losses as observables) per checkpoint.

    Each checkpoint gets its own seed derived from ``(cfg.seed, epoch)`` so
    adding or removing checkpoints does not change the others.
    """
    from dataclasses import replace

    idx = range(ds.n_items)
    out = {}
    for e in sorted(checkpoints if epochs is None else epochs):
        c = replace(cfg, seed=_checkpoint_seed(cfg.seed, e))
        big_l, big_phi = run_chains(checkpoints[e], ds, idx, idx, c)
        if normalized:
            out[e] = normalized_bif(big_l, big_phi, centering=centering, checkpoint_epoch=e)
        else:
            out[e] = bif_from_traces(big_l, big_phi, centering=centering, checkpoint_epoch=e)
    return out


def trajectory(
    checkpoints: Mapping[int, LinearNet],
    ds: HierarchicalDataset,
    i: int,
    j: int,
    cfg: SGLDConfig,
    *,
    normalized: bool = False,
    centering: Literal["global", "per_chain"] = "global",
    matrices: Mapping[int, BIFMatrix] | None = None,
) -> InfluenceTrajectory:
    """BIF of sample ``i`` on the loss of sample ``j`` at every checkpoint."""
    if not checkpoints:
        raise ValueError("no checkpoints given")
    mats = matrices if matrices is not None else bif_matrices(
        checkpoints, ds, cfg, normalized=normalized, centering=centering
    )
    epochs = sorted(mats)
    vals = [mats[e].values[i, j] for e in epochs]
    return InfluenceTrajectory(np.array(epochs), np.array(vals), "bif", i, j, {"normalized": normalized})


def group_influence(b: BIFMatrix, rows: Iterable[int], cols: Iterable[int], *, drop_same: bool = True) -> float:
    """Mean influence from ``rows`` onto ``cols``, skipping ``i == j`` pairs if ``drop_same``."""
    rows, cols = list(rows), list(cols)
    vals = [b.values[i, j] for i in rows for j in cols if not (drop_same and i == j)]
    if not vals:
        raise ValueError("no pairs left to average")
    return float(np.mean(vals))
