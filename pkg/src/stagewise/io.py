"""Stable on-disk formats.

Every CSV starts with a ``# schema_version: N`` comment line followed by a
header row. JSON is written with sorted keys so reruns produce identical
bytes.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, is_dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .bif import BIFMatrix, InfluenceTrajectory
from .dataset import HierarchicalDataset
from .linnet import LinearNet, TrainTrace
from .loo import LOOTrace, WindowedAblation
from .mds import Embedding
from .sgld import TraceMatrix

SCHEMA_VERSION = 1

__all__ = [
    "SCHEMA_VERSION",
    "write_csv",
    "read_csv",
    "write_json",
    "write_dataset",
    "save_checkpoint",
    "load_checkpoint",
    "write_loss_trace",
    "write_trace_matrix",
    "write_bif_matrix",
    "write_trajectories",
    "read_trajectories",
    "write_loo_trace",
    "write_windows",
    "write_mds",
]


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def write_csv(path: Path | str, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# schema_version: {SCHEMA_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return path


def read_csv(path: Path | str) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def _jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def write_json(obj, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"schema_version": SCHEMA_VERSION, **_jsonable(obj)} if isinstance(obj, dict) else _jsonable(obj)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def write_dataset(ds: HierarchicalDataset, out: Path | str) -> list[Path]:
    out = Path(out)
    names = list(ds.item_names)
    feats = [ds.node_label(n) for n in ds.node_ids]
    return [
        write_csv(out / "input.csv", ["item", *names], ([nm, *row] for nm, row in zip(names, ds.input))),
        write_csv(out / "output.csv", ["item", *feats], ([nm, *row] for nm, row in zip(names, ds.output))),
        write_csv(
            out / "items.csv",
            ["index", "item", "leaf"],
            ([k, nm, ds.leaf_ids[k] or "root"] for k, nm in enumerate(names)),
        ),
    ]


def save_checkpoint(net: LinearNet, path: Path | str, meta: dict | None = None) -> Path:
    """Write ``path`` (``.npz`` with ``w1``, ``w2``) and a ``.json`` sidecar."""
    path = Path(path).with_suffix(".npz")
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, w1=net.w1, w2=net.w2)
    side = {"w1_shape": list(net.w1.shape), "w2_shape": list(net.w2.shape), **(meta or {})}
    write_json(side, path.with_suffix(".json"))
    return path


def load_checkpoint(path: Path | str) -> LinearNet:
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(".npz")
    with np.load(path) as f:
        return LinearNet(f["w1"].copy(), f["w2"].copy())


def write_loss_trace(trace: TrainTrace, ds: HierarchicalDataset, path: Path | str) -> Path:
    start = trace.meta.get("start_epoch", 0)
    rows = (
        [start + t, *trace.per_sample_loss[t], trace.total_loss[t], trace.objective[t]]
        for t in range(trace.per_sample_loss.shape[0])
    )
    return write_csv(path, ["epoch", *ds.item_names, "total", "objective"], rows)


def write_trace_matrix(tm: TraceMatrix, names: Sequence[str], path: Path | str) -> Path:
    cols = [f"c{c}s{s}" for c, s in tm.draw_index]
    rows = ([names[k], *row] for k, row in zip(tm.row_labels, tm.values))
    return write_csv(path, ["sample", *cols], rows)


def write_bif_matrix(b: BIFMatrix, names: Sequence[str], path: Path | str) -> Path:
    cols = [names[j] for j in b.col_labels] if b.col_labels else list(names)
    rows_l = [names[i] for i in b.row_labels] if b.row_labels else list(names)
    return write_csv(path, ["source", *cols], ([nm, *row] for nm, row in zip(rows_l, b.values)))


def write_trajectories(trajs: Sequence[InfluenceTrajectory], names: Sequence[str], path: Path | str) -> Path:
    def rows():
        for tr in trajs:
            for e, v in zip(tr.epochs, tr.values):
                yield [int(e) if float(e).is_integer() else e, tr.method, names[tr.source], names[tr.query], v]

    return write_csv(path, ["epoch", "method", "source", "query", "value"], rows())


def read_trajectories(path: Path | str, names: Sequence[str]) -> list[InfluenceTrajectory]:
    _, rows = read_csv(path)
    groups: dict[tuple, list] = {}
    for e, m, s, q, v in rows:
        groups.setdefault((m, s, q), []).append((float(e), float(v)))
    out = []
    for (m, s, q), pts in groups.items():
        pts.sort()
        out.append(
            InfluenceTrajectory(
                np.array([p[0] for p in pts]), np.array([p[1] for p in pts]), m, names.index(s), names.index(q)
            )
        )
    return out


def write_loo_trace(lt: LOOTrace, names: Sequence[str], path: Path | str, epochs: Sequence[int] | None = None) -> Path:
    marks = lt.epochs if epochs is None else epochs
    # the ablated sample's own column depends on the masking convention
    cols = [f"{nm}*" if k == lt.ablated else nm for k, nm in enumerate(names)]
    return write_csv(path, ["epoch", *cols], ([int(e), *lt.delta[e]] for e in marks))


def write_windows(ws: Sequence[WindowedAblation], names: Sequence[str], path: Path | str) -> Path:
    def rows():
        for w in ws:
            for j, v in enumerate(w.integrated_delta):
                yield [w.t_start, names[j], v]

    return write_csv(path, ["t_start", "query", "integrated_delta"], rows())


def write_mds(frames: Sequence[Embedding], names: Sequence[str], path: Path | str) -> Path:
    def rows():
        for f in frames:
            c = np.zeros((f.coords.shape[0], 2))
            c[:, : min(2, f.coords.shape[1])] = f.coords[:, :2]
            for k, nm in enumerate(names):
                yield [f.epoch, nm, c[k, 0], c[k, 1]]

    return write_csv(path, ["epoch", "item", "coord1", "coord2"], rows())
