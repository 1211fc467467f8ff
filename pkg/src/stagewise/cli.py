"""Command-line entry point: ``stagewise <subcommand> [options]``.

Exit codes: 0 on success, 1 for invalid input or configuration, 2 for
runtime or numerical failures (divergence, singular systems).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .analytic import analytic_trajectory, calibrate_mode_state
from .bif import bif_from_traces, bif_matrices, normalized_bif
from .classical_if import DampingSpec, classical_trajectory
from .config import ConfigError, ExperimentConfig, load_config
from .experiments import (
    bif_matrices_parallel,
    bif_pair_trajectories,
    build_dataset,
    resolve_pairs,
    run_report,
    run_sweep,
)
from .linnet import fit
from .loo import loo_trace, window_sweep
from .mds import detect_branches, embed_checkpoints
from .phases import MixturePosterior, PhasePair, between_peak, total_covariance, transition_point
from .sgld import run_chains

log = logging.getLogger("stagewise")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="INI config file")
    p.add_argument("--out", type=Path, help="output directory (overrides config and STAGEWISE_OUT)")
    p.add_argument("--seed", type=int, help="seed for initialization and sampling")
    p.add_argument("--threads", type=int, help="worker processes")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="stagewise", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    sub.add_parser("gen-data", parents=[common], help="write the hierarchical dataset")
    sub.add_parser("train", parents=[common], help="train the network and save checkpoints")

    p = sub.add_parser("bif", parents=[common], help="BIF trajectories, or traces at one checkpoint")
    p.add_argument("--checkpoint", type=Path, help="single checkpoint (.npz); writes traces and the BIF matrix")
    p.add_argument("--normalized", action="store_true", help="Pearson-normalized BIF")

    p = sub.add_parser("classical", parents=[common], help="damped classical influence trajectories")
    p.add_argument("--gamma", type=float, help="relative damping (overrides config)")
    p.add_argument("--kind", choices=("hessian", "gnh"), help="curvature matrix (overrides config)")

    sub.add_parser("analytic", parents=[common], help="closed-form influence trajectories")

    p = sub.add_parser("loo", parents=[common], help="leave-one-out loss-difference traces")
    p.add_argument("--item", action="append", help="sample to ablate (repeatable); defaults to pair sources")

    p = sub.add_parser("window", parents=[common], help="windowed ablations")
    p.add_argument("--item", action="append", help="sample to ablate (repeatable); defaults to pair sources")

    sub.add_parser("sweep", parents=[common], help="BIF-LOO correlation over the hyperparameter grid")

    p = sub.add_parser("phases", parents=[common], help="two-phase covariance decomposition and transition point")
    p.add_argument("--delta-L", type=float, default=-0.01, help="loss gap L(V) - L(U) (default -0.01)")
    p.add_argument("--delta-lambda", type=float, default=1.0, help="complexity gap (default 1)")
    p.add_argument("--dmu", type=float, nargs=2, default=(2.0, 3.0), metavar=("I", "J"), help="mean loss gaps")
    p.add_argument("--var", type=float, default=1.0, help="within-phase loss variance")
    p.add_argument("--cov-u", type=float, default=0.0, help="within-phase covariance in U")
    p.add_argument("--cov-v", type=float, default=0.0, help="within-phase covariance in V")
    p.add_argument("--steps", type=int, default=101, help="number of pi values in [0, 1]")

    sub.add_parser("mds", parents=[common], help="MDS trajectory of hidden representations and branch events")
    sub.add_parser("report", parents=[common], help="three-way comparison report")
    return parser


def _config(args) -> ExperimentConfig:
    over = {"seed": args.seed, "threads": args.threads}
    if args.out is not None:
        over["output_dir"] = str(args.out)
    return load_config(args.config, overrides=over)


def _items(ds, args, cfg) -> list[int]:
    if args.item:
        return [ds.index(int(x) if x.isdigit() else x) for x in args.item]
    return sorted({i for i, _ in resolve_pairs(ds, cfg.pairs)})


def cmd_gen_data(cfg, args, out: Path) -> None:
    ds = build_dataset(cfg)
    io.write_dataset(ds, out)


def cmd_train(cfg, args, out: Path) -> None:
    ds = build_dataset(cfg)
    tr = fit(ds, cfg.train)
    io.write_loss_trace(tr, ds, out / "loss_trace.csv")
    for e, net in sorted(tr.checkpoints.items()):
        io.save_checkpoint(net, out / "checkpoints" / f"epoch_{e:06d}", {"epoch": e, "lr": cfg.train.lr, "seed": cfg.train.seed})


def cmd_bif(cfg, args, out: Path) -> None:
    ds = build_dataset(cfg)
    names = ds.item_names
    if args.checkpoint is not None:
        net = io.load_checkpoint(args.checkpoint)
        idx = range(ds.n_items)
        big_l, big_phi = run_chains(net, ds, idx, idx, cfg.sgld)
        io.write_trace_matrix(big_l, names, out / "trace_L.csv")
        io.write_trace_matrix(big_phi, names, out / "trace_Phi.csv")
        b = normalized_bif(big_l, big_phi) if args.normalized else bif_from_traces(big_l, big_phi)
        io.write_bif_matrix(b, names, out / "bif-matrix.csv")
        return
    tr = fit(ds, cfg.train)
    if args.normalized:
        mats = bif_matrices(tr.checkpoints, ds, cfg.sgld, normalized=True)
    else:
        mats = bif_matrices_parallel(tr.checkpoints, ds, cfg.sgld, threads=cfg.threads)
    trajs = bif_pair_trajectories(mats, resolve_pairs(ds, cfg.pairs))
    io.write_trajectories(trajs, names, out / "trajectory.csv")
    io.write_bif_matrix(mats[max(mats)], names, out / "bif-matrix.csv")


def cmd_classical(cfg, args, out: Path) -> None:
    ds = build_dataset(cfg)
    spec = DampingSpec(args.gamma if args.gamma is not None else cfg.gamma_rel, args.kind or cfg.classical_kind)
    tr = fit(ds, cfg.train)
    trajs = [classical_trajectory(tr.checkpoints, ds, i, j, spec) for i, j in resolve_pairs(ds, cfg.pairs)]
    io.write_trajectories(trajs, ds.item_names, out / "trajectory.csv")


def cmd_analytic(cfg, args, out: Path) -> None:
    ds = build_dataset(cfg)
    ms, tr = calibrate_mode_state(ds, cfg.train)
    epochs = sorted(e for e in tr.checkpoints if e % cfg.train.checkpoint_every == 0 or e == cfg.train.epochs)
    trajs = [
        analytic_trajectory(ms, ds, i, j, epochs, epsilon=cfg.epsilon, gap_tol=cfg.gap_tol)
        for i, j in resolve_pairs(ds, cfg.pairs)
    ]
    io.write_trajectories(trajs, ds.item_names, out / "trajectory.csv")
    io.write_json({"s": ms.s, "g0": ms.g0, "tau": ms.tau}, out / "modes.json")


def cmd_loo(cfg, args, out: Path) -> None:
    ds = build_dataset(cfg)
    base = fit(ds, cfg.train, checkpoints=[0])
    for i in _items(ds, args, cfg):
        lt = loo_trace(ds, i, cfg.train, baseline=base, evaluate=cfg.loo_evaluate)
        io.write_loo_trace(lt, ds.item_names, out / f"loo_trace_{ds.item_names[i]}.csv")


def cmd_window(cfg, args, out: Path) -> None:
    ds = build_dataset(cfg)
    for i in _items(ds, args, cfg):
        ws = window_sweep(ds, i, cfg.train, duration=cfg.window_duration, every=cfg.window_every)
        io.write_windows(ws, ds.item_names, out / f"window_{ds.item_names[i]}.csv")


def cmd_sweep(cfg, args, out: Path) -> None:
    rep = run_sweep(cfg)
    pairs = rep["pairs"]
    rows = (
        [r["inv_temp"], r["localization"], r["step"], *r["correlations"], r["score"], r["error"]] for r in rep["rows"]
    )
    io.write_csv(out / "sweep.csv", ["inv_temp", "localization", "step", *pairs, "score", "error"], rows)
    io.write_json(rep, out / "sweep.json")


def cmd_phases(cfg, args, out: Path) -> None:
    if args.steps < 2:
        raise ValueError(f"--steps must be >= 2, got {args.steps}")
    dmu_i, dmu_j = args.dmu
    mix = MixturePosterior(
        0.5,
        np.zeros(2),
        np.array([dmu_i, dmu_j]),
        np.array([[args.var, args.cov_u], [args.cov_u, args.var]]),
        np.array([[args.var, args.cov_v], [args.cov_v, args.var]]),
    )
    pis = np.linspace(0.0, 1.0, args.steps)
    rows = []
    for p in pis:
        tot, within, between = total_covariance(mix.with_pi(float(p)), 0, 1)
        rows.append([p, within, between, tot])
    io.write_csv(out / "phases.csv", ["pi", "within", "between", "total"], rows)
    tp = transition_point(PhasePair(args.delta_L, args.delta_lambda))
    io.write_json(
        {
            "delta_L": args.delta_L,
            "delta_lambda": args.delta_lambda,
            "n_star": tp.n,
            "status": tp.status,
            "between_peak_pi": between_peak(dmu_i, dmu_j, pis),
        },
        out / "transition.json",
    )


def cmd_mds(cfg, args, out: Path) -> None:
    ds = build_dataset(cfg)
    tr = fit(ds, cfg.train)
    frames = embed_checkpoints(tr.checkpoints, ds, cfg.mds_dims)
    io.write_mds(frames, ds.item_names, out / "mds_trajectory.csv")
    # branch events need every separating direction, not just the plotted ones
    full = embed_checkpoints(tr.checkpoints, ds, 2**cfg.depth - 1)
    events = detect_branches(full, ds, cfg.branch_threshold)
    io.write_json({"threshold": cfg.branch_threshold, "events": events}, out / "branches.json")


def cmd_report(cfg, args, out: Path) -> None:
    if len(cfg.methods) < 1:
        raise ConfigError("report needs at least one method")
    ds = build_dataset(cfg)
    rep = run_report(cfg, ds=ds)
    trajs = rep.pop("trajectories")
    io.write_trajectories(trajs, ds.item_names, out / "trajectory.csv")
    rows = [
        [pair, *key.split("|"), val]
        for pair, d in sorted(rep["correlations"].items())
        for key, val in sorted(d.items())
    ]
    io.write_csv(out / "correlations.csv", ["pair", "method_a", "method_b", "pearson"], rows)
    io.write_json(rep, out / "report.json")
    if rep["errors"]:
        for m, msg in rep["errors"].items():
            log.error("method %s failed: %s", m, msg)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "bif": cmd_bif,
    "classical": cmd_classical,
    "analytic": cmd_analytic,
    "loo": cmd_loo,
    "window": cmd_window,
    "sweep": cmd_sweep,
    "phases": cmd_phases,
    "mds": cmd_mds,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = _config(args)
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, args, out)
    # LinAlgError subclasses ValueError, so runtime failures are caught first
    except (FloatingPointError, np.linalg.LinAlgError, ArithmeticError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError, KeyError, IndexError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    log.info("wrote results to %s", out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
