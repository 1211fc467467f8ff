"""End-to-end experiments: method comparison report and hyperparameter sweep.

Work items (checkpoints, grid points) are independent. With ``threads > 1``
they run in a process pool; results are always collected in input order, so
output never depends on scheduling.
"""
from __future__ import annotations

import itertools
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .analytic import analytic_trajectory, calibrate_mode_state
from .bif import BIFMatrix, InfluenceTrajectory, bif_matrices
from .classical_if import DampingSpec, classical_trajectory
from .config import ExperimentConfig
from .dataset import HierarchicalDataset, build_hierarchy_dataset
from .linnet import LinearNet, TrainTrace, checkpoint_epochs, fit
from .loo import LOOTrace, loo_trace, loo_trajectory, trace_correlation
from .mds import BranchEvent, detect_branches, embed_checkpoints
from .sgld import SGLDConfig

__all__ = [
    "build_dataset",
    "parallel_map",
    "bif_matrices_parallel",
    "bif_pair_trajectories",
    "sign_change_epoch",
    "resolve_pairs",
    "run_report",
    "run_sweep",
    "corner_rank",
]


def build_dataset(cfg: ExperimentConfig) -> HierarchicalDataset:
    return build_hierarchy_dataset(cfg.depth, encoding=cfg.encoding)


def parallel_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally in a process pool; order is preserved."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


class _BIFJob:
    # picklable closure for the process pool
    def __init__(self, checkpoints, ds, cfg):
        self.checkpoints, self.ds, self.cfg = checkpoints, ds, cfg

    def __call__(self, epoch):
        return bif_matrices({epoch: self.checkpoints[epoch]}, self.ds, self.cfg)[epoch]


def bif_matrices_parallel(
    checkpoints: dict[int, LinearNet],
    ds: HierarchicalDataset,
    cfg: SGLDConfig,
    epochs: Iterable[int] | None = None,
    threads: int = 1,
) -> dict[int, BIFMatrix]:
    marks = sorted(checkpoints if epochs is None else epochs)
    sub = {e: checkpoints[e] for e in marks}
    mats = parallel_map(_BIFJob(sub, ds, cfg), marks, threads)
    return dict(zip(marks, mats))


def bif_pair_trajectories(mats: dict[int, BIFMatrix], pairs: Sequence[tuple[int, int]]) -> list[InfluenceTrajectory]:
    epochs = sorted(mats)
    return [
        InfluenceTrajectory(np.array(epochs), np.array([mats[e].values[i, j] for e in epochs]), "bif", i, j)
        for i, j in pairs
    ]


def sign_change_epoch(traj: InfluenceTrajectory) -> float:
    """Epoch where the trace switches between its negative and positive extremes.

    Looks between the most negative and the most positive sample (in time
    order) for the last sample still carrying the first extreme's sign and
    interpolates the zero crossing after it. NaN when the trace is single-signed.
    """
    v, e = traj.values, traj.epochs
    if v.size < 2 or not (v.min() < 0 < v.max()):
        return float("nan")
    k1, k2 = sorted((int(np.argmin(v)), int(np.argmax(v))))
    s0 = np.sign(v[k1])
    k0 = k1 + np.nonzero(np.sign(v[k1:k2]) == s0)[0][-1]
    a, b = v[k0], v[k0 + 1]
    return float(e[k0] + (e[k0 + 1] - e[k0]) * a / (a - b))


def resolve_pairs(ds: HierarchicalDataset, pairs) -> list[tuple[int, int]]:
    return [(ds.index(a), ds.index(b)) for a, b in pairs]


def run_report(
    cfg: ExperimentConfig,
    *,
    ds: HierarchicalDataset | None = None,
    trace: TrainTrace | None = None,
    with_branches: bool = True,
) -> dict:
    """Trajectories, pairwise correlations, peaks and sign changes per method.

    Methods are isolated: if one fails its error is recorded under
    ``errors`` and the rest still run.
    """
    ds = build_dataset(cfg) if ds is None else ds
    pairs = resolve_pairs(ds, cfg.pairs)
    tcfg = cfg.train
    if trace is None:
        trace = fit(ds, tcfg)
    epochs = sorted(trace.checkpoints)
    trajs: dict[str, list[InfluenceTrajectory]] = {}
    errors: dict[str, str] = {}

    for method in cfg.methods:
        try:
            if method == "bif":
                mats = bif_matrices_parallel(trace.checkpoints, ds, cfg.sgld, threads=cfg.threads)
                trajs[method] = bif_pair_trajectories(mats, pairs)
            elif method in ("classical_h", "classical_gnh"):
                spec = DampingSpec(cfg.gamma_rel, "hessian" if method == "classical_h" else "gnh")
                trajs[method] = [classical_trajectory(trace.checkpoints, ds, i, j, spec) for i, j in pairs]
            elif method == "analytic":
                ms, _ = calibrate_mode_state(ds, tcfg)
                trajs[method] = [
                    analytic_trajectory(ms, ds, i, j, epochs, epsilon=cfg.epsilon, gap_tol=cfg.gap_tol)
                    for i, j in pairs
                ]
            elif method == "loo":
                cache: dict[int, LOOTrace] = {}
                out = []
                for i, j in pairs:
                    if i not in cache:
                        cache[i] = loo_trace(ds, i, tcfg, baseline=trace, evaluate=cfg.loo_evaluate)
                    out.append(loo_trajectory(cache[i], j, epochs))
                trajs[method] = out
        except Exception as exc:  # noqa: BLE001 - isolate per method
            errors[method] = f"{type(exc).__name__}: {exc}"

    names = ds.item_names
    corr, peaks, flips = {}, {}, {}
    for n, (i, j) in enumerate(pairs):
        key = f"{names[i]}->{names[j]}"
        per = {m: trajs[m][n] for m in trajs}
        peaks[key] = {m: {"abs": t.peak_epoch("abs"), "pos": t.peak_epoch("pos"), "neg": t.peak_epoch("neg")} for m, t in per.items()}
        flips[key] = {m: sign_change_epoch(t) for m, t in per.items()}
        corr[key] = {
            f"{a}|{b}": trace_correlation(per[a], per[b]) for a, b in itertools.combinations(sorted(per), 2)
        }

    report = {
        "pairs": [f"{names[i]}->{names[j]}" for i, j in pairs],
        "methods": list(cfg.methods),
        "correlations": corr,
        "peak_epochs": peaks,
        "sign_change_epochs": flips,
        "errors": errors,
        "trajectories": [t for m in sorted(trajs) for t in trajs[m]],
    }
    if with_branches:
        frames = embed_checkpoints(trace.checkpoints, ds, 2**cfg.depth - 1)
        events = detect_branches(frames, ds, cfg.branch_threshold)
        report["branches"] = [
            {"node": ev.node, "label": ev.label, "level": ev.level, "epoch": ev.epoch} for ev in events
        ]
        report["branch_alignment"] = _branch_alignment(events, trajs, pairs, names)
    return report


def _branch_alignment(events: Sequence[BranchEvent], trajs, pairs, names) -> list[dict]:
    rows = []
    for ev in events:
        for m, ts in sorted(trajs.items()):
            for (i, j), t in zip(pairs, ts):
                p = t.peak_epoch("pos")
                rows.append(
                    {
                        "branch": ev.label,
                        "branch_epoch": ev.epoch,
                        "method": m,
                        "pair": f"{names[i]}->{names[j]}",
                        "peak_epoch": p,
                        "offset": p - ev.epoch,
                    }
                )
    return rows


class _SweepJob:
    def __init__(self, checkpoints, ds, base: SGLDConfig, pairs, loo_trajs):
        self.checkpoints, self.ds, self.base, self.pairs, self.loo = checkpoints, ds, base, pairs, loo_trajs

    def __call__(self, point):
        beta, gamma, eps = point
        row = {"inv_temp": beta, "localization": gamma, "step": eps}
        try:
            cfg = replace(self.base, inv_temp=beta, localization=gamma, step=eps)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                mats = bif_matrices(self.checkpoints, self.ds, cfg)
                corrs = [trace_correlation(b, l) for b, l in zip(bif_pair_trajectories(mats, self.pairs), self.loo)]
            row["correlations"] = corrs
            row["score"] = float(np.mean(corrs))
            row["error"] = "" if np.isfinite(row["score"]) else "undefined correlation"
        except (FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
            row["correlations"] = [float("nan")] * len(self.pairs)
            row["score"] = float("nan")
            row["error"] = f"{type(exc).__name__}: {exc}"
        return row


def run_sweep(
    cfg: ExperimentConfig,
    *,
    ds: HierarchicalDataset | None = None,
    trace: TrainTrace | None = None,
) -> dict:
    """BIF-LOO trace correlation over the ``(inv_temp, localization, step)`` grid.

    BIF is computed on a coarser checkpoint grid (``sweep_checkpoint_every``
    up to ``sweep_max_epoch``) to keep the sweep affordable. The score of a
    grid point is its correlation averaged over the configured pairs; points
    that diverge or give undefined correlations are kept with an error
    message and excluded from the argmax.
    """
    ds = build_dataset(cfg) if ds is None else ds
    pairs = resolve_pairs(ds, cfg.pairs)
    tcfg = cfg.train
    marks = [e for e in checkpoint_epochs(tcfg.epochs, cfg.sweep_checkpoint_every) if e <= cfg.sweep_max_epoch]
    if trace is None or not set(marks) <= set(trace.checkpoints):
        trace = fit(ds, tcfg, checkpoints=marks)
    ckpts = {e: trace.checkpoints[e] for e in marks}
    loos: dict[int, LOOTrace] = {}
    loo_trajs = []
    for i, j in pairs:
        if i not in loos:
            loos[i] = loo_trace(ds, i, tcfg, baseline=trace, evaluate=cfg.loo_evaluate)
        loo_trajs.append(loo_trajectory(loos[i], j, marks))
    grid = cfg.sweep_grid
    rows = parallel_map(_SweepJob(ckpts, ds, cfg.sgld, pairs, loo_trajs), grid, cfg.threads)
    ok = [r for r in rows if np.isfinite(r["score"])]
    best = max(ok, key=lambda r: r["score"]) if ok else None
    names = ds.item_names
    return {
        "pairs": [f"{names[i]}->{names[j]}" for i, j in pairs],
        "epochs": marks,
        "rows": rows,
        "best": best,
    }


def corner_rank(value: float, axis: Sequence[float], *, descending: bool) -> int:
    """Rank of ``value`` along a grid axis counted from the preferred end (0 = best)."""
    order = sorted(set(axis), reverse=descending)
    return order.index(min(order, key=lambda x: abs(np.log(x) - np.log(value))))
