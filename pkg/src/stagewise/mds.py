"""Classical MDS of hidden representations and detection of hierarchy branching."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import orthogonal_procrustes
from scipy.spatial.distance import pdist, squareform

from .dataset import HierarchicalDataset
from .linnet import LinearNet, hidden_reps

__all__ = [
    "Embedding",
    "BranchEvent",
    "classical_mds",
    "align_sequence",
    "embed_checkpoints",
    "child_separation",
    "detect_branches",
]


@dataclass(frozen=True)
class Embedding:
    coords: np.ndarray
    epoch: int | None = None
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass(frozen=True)
class BranchEvent:
    level: int
    epoch: int
    group_pair: tuple[tuple[int, ...], tuple[int, ...]]
    node: str = ""
    label: str = ""


def classical_mds(reps: np.ndarray, k: int = 2, *, epoch: int | None = None) -> Embedding:
    """Torgerson MDS: top-``k`` eigenpairs of the double-centred squared distances.

    Eigenvector signs are fixed so that each column's largest-magnitude entry
    is positive. Negative eigenvalues (non-Euclidean noise) are clipped to 0;
    if fewer than ``k`` positive ones remain, fewer columns are returned.
    """
    reps = np.asarray(reps, dtype=float)
    n = reps.shape[0]
    if not 1 <= k <= max(n - 1, 1):
        raise ValueError(f"k must lie in [1, {n - 1}], got {k}")
    d2 = squareform(pdist(reps, "sqeuclidean")) if n > 1 else np.zeros((1, 1))
    j = np.eye(n) - 1.0 / n
    b = -0.5 * j @ d2 @ j
    lam, vec = np.linalg.eigh(0.5 * (b + b.T))
    order = np.argsort(lam)[::-1]
    lam, vec = lam[order], vec[:, order]
    scale = max(abs(lam[0]), 1.0) if lam.size else 1.0
    if np.any(lam < -1e-9 * scale):
        warnings.warn("negative MDS eigenvalues clipped to zero", RuntimeWarning)
    lam = np.where(lam > 1e-12 * scale, lam, 0.0)
    n_pos = int(np.sum(lam > 0))
    if n_pos == 0:
        # all points coincide
        return Embedding(np.zeros((n, k)), epoch, np.zeros(k))
    if n_pos < k:
        warnings.warn(f"only {n_pos} positive eigenvalues; returning {n_pos} coordinates", RuntimeWarning)
    use = min(k, n_pos)
    vec = vec[:, :use]
    for c in range(use):
        if vec[np.argmax(np.abs(vec[:, c])), c] < 0:
            vec[:, c] = -vec[:, c]
    coords = vec * np.sqrt(lam[:use])
    return Embedding(coords, epoch, lam[:use].copy())


def align_sequence(embeddings: Sequence[Embedding]) -> list[Embedding]:
    """Rotate/reflect each frame onto its (already aligned) predecessor."""
    out: list[Embedding] = []
    for emb in embeddings:
        if not out:
            out.append(emb)
            continue
        prev = out[-1].coords
        cur = emb.coords
        if cur.shape[0] != prev.shape[0]:
            raise ValueError("all embeddings must have the same number of points")
        kk = max(cur.shape[1], prev.shape[1])
        a = np.zeros((cur.shape[0], kk))
        p = np.zeros((prev.shape[0], kk))
        a[:, : cur.shape[1]] = cur
        p[:, : prev.shape[1]] = prev
        r, _ = orthogonal_procrustes(a, p)
        out.append(Embedding(a @ r, emb.epoch, emb.eigenvalues))
    return out


def embed_checkpoints(
    checkpoints: Mapping[int, LinearNet], ds: HierarchicalDataset, k: int = 2, *, align: bool = True
) -> list[Embedding]:
    """MDS of ``W1 x_i`` at every checkpoint, in epoch order."""
    frames = [classical_mds(hidden_reps(checkpoints[e], ds), k, epoch=e) for e in sorted(checkpoints)]
    return align_sequence(frames) if align else frames


def child_separation(frame: Embedding, ds: HierarchicalDataset, node: str) -> float:
    """Distance between the centroids of the two child groups of ``node``."""
    left, right = ds.tree[node]
    a = frame.coords[ds.leaves_under(left)].mean(axis=0)
    b = frame.coords[ds.leaves_under(right)].mean(axis=0)
    return float(np.linalg.norm(a - b))


def detect_branches(
    aligned: Sequence[Embedding], ds: HierarchicalDataset, threshold: float = 0.5
) -> list[BranchEvent]:
    """First epoch at which each internal node's children separate.

    A node branches when the distance between its children's centroids first
    exceeds ``threshold`` times that distance in the final frame. Nodes whose
    children never separate are skipped with a warning. Events are returned
    in preorder of the tree.
    """
    if not aligned:
        raise ValueError("no embeddings given")
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    events = []
    for node in ds.node_ids:
        if node not in ds.tree:
            continue
        sep = np.array([child_separation(f, ds, node) for f in aligned])
        final = sep[-1]
        if final <= 0:
            warnings.warn(f"children of {ds.node_label(node)} never separate; no branch event", RuntimeWarning)
            continue
        hit = np.nonzero(sep >= threshold * final)[0]
        left, right = ds.tree[node]
        events.append(
            BranchEvent(
                level=len(node) + 1,
                epoch=int(aligned[hit[0]].epoch) if aligned[hit[0]].epoch is not None else int(hit[0]),
                group_pair=(tuple(ds.leaves_under(left)), tuple(ds.leaves_under(right))),
                node=node,
                label=f"{ds.node_label(left)}/{ds.node_label(right)}",
            )
        )
    return events
