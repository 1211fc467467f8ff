"""Retraining oracles: leave-one-out traces and brief, windowed ablations."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Literal

import numpy as np

from .bif import InfluenceTrajectory
from .dataset import HierarchicalDataset, ablate
from .linnet import TrainConfig, TrainTrace, fit, init_network, train

__all__ = [
    "LOOTrace",
    "WindowedAblation",
    "loo_trace",
    "windowed_ablation",
    "window_sweep",
    "trace_correlation",
    "loo_trajectory",
]


@dataclass(frozen=True)
class LOOTrace:
    """``delta[t, j] = l_j(full run, t) - l_j(run without i, t)`` for every epoch ``t``."""

    ablated: int
    delta: np.ndarray
    baseline_seed: int
    loo_seed: int
    evaluate: str = "masked"
    meta: dict = field(default_factory=dict)

    @property
    def epochs(self) -> np.ndarray:
        return np.arange(self.delta.shape[0])

    def trajectory(self, j: int, epochs: Iterable[int] | None = None) -> InfluenceTrajectory:
        return loo_trajectory(self, j, epochs)


@dataclass(frozen=True)
class WindowedAblation:
    ablated: int
    t_start: int
    duration: int
    integrated_delta: np.ndarray


def loo_trace(
    ds: HierarchicalDataset,
    i: int,
    cfg: TrainConfig,
    *,
    baseline: TrainTrace | None = None,
    evaluate: Literal["masked", "original"] = "masked",
) -> LOOTrace:
    """Train with and without sample ``i`` from the same initialization.

    Sample ``i`` is removed by zeroing its input and target rows. With
    ``evaluate="masked"`` the ablated run's losses are measured on that masked
    data, so its loss on ``i`` is identically 0; ``"original"`` measures
    every sample against its real target instead. Rows ``j != i`` agree
    between the two.
    """
    if evaluate not in ("masked", "original"):
        raise ValueError(f"evaluate must be 'masked' or 'original', got {evaluate!r}")
    masked = ablate(ds, i)
    if baseline is None:
        baseline = fit(ds, cfg, checkpoints=[0])
    net0 = init_network(ds, cfg.hidden, cfg.init_sigma, cfg.seed)
    run = train(net0, masked, None, cfg, checkpoints=[0], eval_ds=None if evaluate == "masked" else ds)
    if baseline.per_sample_loss.shape != run.per_sample_loss.shape:
        raise ValueError("baseline run does not match the training configuration")
    return LOOTrace(i, baseline.per_sample_loss - run.per_sample_loss, cfg.seed, cfg.seed, evaluate)


def windowed_ablation(
    ds: HierarchicalDataset,
    i: int,
    t_start: int,
    duration: int,
    cfg: TrainConfig,
    *,
    baseline: TrainTrace | None = None,
) -> WindowedAblation:
    """Drop sample ``i`` for the updates at epochs ``[t_start, t_start + duration)``.

    Both runs share every update before ``t_start``. The loss difference
    (baseline minus ablated, measured on the original data) is summed over
    the ``duration`` epochs ``t_start + 1 .. t_start + duration`` that follow
    the ablated updates.

    Parameters
    ----------
    baseline : TrainTrace, optional
        Full-data run with a checkpoint at ``t_start`` and per-epoch losses
        from epoch 0; trained here when omitted.
    """
    if duration < 0 or t_start < 0 or t_start + duration > cfg.epochs:
        raise ValueError(
            f"window [{t_start}, {t_start + duration}) does not fit in training of {cfg.epochs} epochs"
        )
    if baseline is None:
        baseline = fit(ds, cfg, checkpoints=[t_start])
    if duration == 0:
        return WindowedAblation(i, t_start, 0, np.zeros(ds.n_items))
    if t_start not in baseline.checkpoints:
        raise ValueError(f"baseline has no checkpoint at epoch {t_start}")
    start = baseline.meta.get("start_epoch", 0)
    off = np.ones(ds.n_items)
    off[i] = 0.0
    on = np.ones(ds.n_items)
    end = t_start + duration

    def schedule(t: int) -> np.ndarray:
        return off if t < end else on

    run = train(
        baseline.checkpoints[t_start],
        ds,
        None,
        replace(cfg, epochs=end),
        schedule=schedule,
        checkpoints=[],
        start_epoch=t_start,
    )
    base = baseline.per_sample_loss[t_start + 1 - start : end + 1 - start]
    diff = base - run.per_sample_loss[1:]
    return WindowedAblation(i, t_start, duration, diff.sum(axis=0))


def window_sweep(
    ds: HierarchicalDataset,
    i: int,
    cfg: TrainConfig,
    *,
    duration: int = 100,
    every: int = 200,
    baseline: TrainTrace | None = None,
) -> list[WindowedAblation]:
    """:func:`windowed_ablation` for window starts ``0, every, 2*every, ...``."""
    starts = [t for t in range(0, cfg.epochs - duration + 1, every)]
    if baseline is None or not set(starts) <= set(baseline.checkpoints):
        baseline = fit(ds, cfg, checkpoints=starts)
    return [windowed_ablation(ds, i, t, duration, cfg, baseline=baseline) for t in starts]


def loo_trajectory(trace: LOOTrace, j: int, epochs: Iterable[int] | None = None) -> InfluenceTrajectory:
    marks = trace.epochs if epochs is None else np.asarray(sorted(epochs), dtype=int)
    return InfluenceTrajectory(
        marks, trace.delta[marks, j], "loo", trace.ablated, j, {"evaluate": trace.evaluate}
    )


def trace_correlation(a: InfluenceTrajectory, b: InfluenceTrajectory) -> float:
    """Pearson correlation after interpolating both traces onto their merged epochs.

    The merged grid keeps every epoch of either trace inside the range they
    both cover. Returns NaN (with a warning) when either trace is constant.
    """
    lo = max(a.epochs[0], b.epochs[0])
    hi = min(a.epochs[-1], b.epochs[-1])
    grid = np.union1d(a.epochs, b.epochs)
    grid = grid[(grid >= lo) & (grid <= hi)]
    if grid.size < 3:
        raise ValueError(f"only {grid.size} common epochs; need at least 3")
    x = np.interp(grid, a.epochs, a.values)
    y = np.interp(grid, b.epochs, b.values)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        warnings.warn("constant trajectory; correlation undefined", RuntimeWarning)
        return float("nan")
    return float(np.corrcoef(x, y)[0, 1])
