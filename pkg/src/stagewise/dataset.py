"""Hierarchical semantic dataset and data reweighting.

Items are the leaves of a complete binary tree. Each item is presented as a
one-hot input and must be mapped to a feature vector with one entry per tree
node (root included), ordered by a preorder walk of the tree. With the default
0/1 encoding a feature is on exactly when its node lies on the item's
root-to-leaf path, so two items share ``d + 1`` features when their lowest
common ancestor sits at depth ``d``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

__all__ = [
    "HierarchicalDataset",
    "DataWeighting",
    "build_hierarchy_dataset",
    "correlation",
    "svd_of_correlation",
    "ablate",
    "MAX_DEPTH",
    "DEFAULT_ITEM_NAMES",
]

MAX_DEPTH = 10

DEFAULT_ITEM_NAMES = ("dog", "cat", "sparrow", "penguin", "rose", "daisy", "pine", "oak")
_DEPTH3_NODE_NAMES = {
    "": "living_thing",
    "0": "animal",
    "1": "plant",
    "00": "mammal",
    "01": "bird",
    "10": "flower",
    "11": "tree",
}


@dataclass(frozen=True)
class HierarchicalDataset:
    """One-hot inputs paired with binary-tree feature outputs.

    Attributes
    ----------
    input : (N, N) array
        Row ``i`` is the input of item ``i``.
    output : (N, O) array
        Row ``i`` is the feature vector of item ``i``; columns follow ``node_ids``.
    item_names : tuple of str
        Item labels in row order.
    tree : dict
        Maps every internal node id to its two children. Node ids are binary
        path strings, the root being ``""``.
    node_ids : tuple of str
        All node ids in preorder (the output column order).
    """

    depth: int
    input: np.ndarray
    output: np.ndarray
    item_names: tuple[str, ...]
    tree: dict[str, tuple[str, str]]
    node_ids: tuple[str, ...]
    item_leaves: tuple[str, ...] = ()
    node_names: dict[str, str] = field(default_factory=dict)
    encoding: str = "binary"

    @property
    def n_items(self) -> int:
        return self.input.shape[0]

    @property
    def n_features(self) -> int:
        return self.output.shape[1]

    @property
    def leaf_ids(self) -> tuple[str, ...]:
        """Leaf node id of each item row."""
        return self.item_leaves

    def index(self, item: str | int) -> int:
        """Resolve an item name (or pass through an integer index)."""
        if isinstance(item, (int, np.integer)):
            if not 0 <= item < self.n_items:
                raise IndexError(f"item index {item} out of range [0, {self.n_items})")
            return int(item)
        try:
            return self.item_names.index(item)
        except ValueError:
            raise KeyError(f"unknown item {item!r}; known items: {list(self.item_names)}") from None

    def leaves_under(self, node: str) -> list[int]:
        """Indices of the items whose root-to-leaf path passes through ``node``."""
        return [k for k, leaf in enumerate(self.leaf_ids) if leaf.startswith(node)]

    def node_label(self, node: str) -> str:
        return self.node_names.get(node, f"node_{node or 'root'}")

    def item_path(self, i: int) -> list[str]:
        leaf = self.leaf_ids[i]
        return [leaf[:d] for d in range(self.depth + 1)]


@dataclass(frozen=True)
class DataWeighting:
    """Per-sample importance weights for the training objective."""

    weights: np.ndarray
    kind: Literal["full", "loo", "upweight", "custom"] = "full"
    index: int | None = None
    epsilon: float = 0.0

    @classmethod
    def full(cls, n: int) -> "DataWeighting":
        return cls(np.ones(n), "full")

    @classmethod
    def loo(cls, n: int, i: int) -> "DataWeighting":
        _check_index(i, n)
        w = np.ones(n)
        w[i] = 0.0
        return cls(w, "loo", i)

    @classmethod
    def upweight(cls, n: int, i: int, epsilon: float) -> "DataWeighting":
        _check_index(i, n)
        w = np.ones(n)
        w[i] = 1.0 + epsilon
        return cls(w, "upweight", i, float(epsilon))


def _check_index(i: int, n: int) -> None:
    if not 0 <= i < n:
        raise IndexError(f"sample index {i} out of range [0, {n})")


def _preorder(depth: int) -> list[str]:
    out: list[str] = []

    def walk(node: str) -> None:
        out.append(node)
        if len(node) < depth:
            walk(node + "0")
            walk(node + "1")

    walk("")
    return out


def build_hierarchy_dataset(
    depth: int = 3,
    seed: int | None = None,
    encoding: Literal["binary", "signed"] = "binary",
) -> HierarchicalDataset:
    """Build the hierarchical dataset with ``2**depth`` items.

    Parameters
    ----------
    depth : int
        Hierarchy depth ``H``; gives ``N = 2**H`` items and ``2**(H+1) - 1``
        features.
    seed : int, optional
        When given, item rows are shuffled with this seed. ``None`` keeps tree
        order, which is what every experiment uses.
    encoding : {"binary", "signed"}
        ``"binary"`` puts 1 on path nodes and 0 elsewhere; ``"signed"`` uses
        +1/-1 instead.
    """
    if depth < 0:
        raise ValueError(f"depth must be >= 0, got {depth}")
    if depth > MAX_DEPTH:
        raise ValueError(f"depth {depth} exceeds the guard of {MAX_DEPTH}")
    if encoding not in ("binary", "signed"):
        raise ValueError(f"unknown encoding {encoding!r}")

    nodes = _preorder(depth)
    leaves = [n for n in nodes if len(n) == depth]
    col = {n: k for k, n in enumerate(nodes)}
    n_items = len(leaves)

    off = 0.0 if encoding == "binary" else -1.0
    y = np.full((n_items, len(nodes)), off)
    for i, leaf in enumerate(leaves):
        for d in range(depth + 1):
            y[i, col[leaf[:d]]] = 1.0

    if depth == 3:
        names = DEFAULT_ITEM_NAMES
        node_names = dict(_DEPTH3_NODE_NAMES)
    else:
        names = tuple(f"item_{i}" for i in range(n_items))
        node_names = {}
    for i, leaf in enumerate(leaves):
        node_names[leaf] = names[i]

    x = np.eye(n_items)
    if seed is not None:
        perm = np.random.default_rng(seed).permutation(n_items)
        y = y[perm]
        names = tuple(names[p] for p in perm)
        leaves = [leaves[p] for p in perm]

    tree = {n: (n + "0", n + "1") for n in nodes if len(n) < depth}
    return HierarchicalDataset(
        depth=depth,
        input=x,
        output=y,
        item_names=tuple(names),
        tree=tree,
        node_ids=tuple(nodes),
        item_leaves=tuple(leaves),
        node_names=node_names,
        encoding=encoding,
    )


def correlation(ds: HierarchicalDataset, w: DataWeighting | None = None) -> np.ndarray:
    """Weighted input-output correlation ``sum_i w_i y_i x_i^T`` (shape O x N)."""
    weights = np.ones(ds.n_items) if w is None else np.asarray(w.weights, dtype=float)
    return ds.output.T @ (weights[:, None] * ds.input)


def svd_of_correlation(c: np.ndarray, rtol: float = 1e-12) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD truncated at numerical rank.

    Returns ``(U, S, V)`` with ``U`` of shape (O, r), ``S`` of shape (r,) and
    ``V`` of shape (N, r) such that ``U @ diag(S) @ V.T`` reconstructs ``c``.
    Singular values below ``rtol * max(S)`` are dropped.
    """
    c = np.asarray(c, dtype=float)
    if not np.all(np.isfinite(c)):
        raise ValueError("correlation matrix has non-finite entries")
    u, s, vt = np.linalg.svd(c, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return u[:, :0], s[:0], vt[:0].T
    r = int(np.sum(s > rtol * s[0]))
    return u[:, :r], s[:r], vt[:r].T


def ablate(ds: HierarchicalDataset, i: int) -> HierarchicalDataset:
    """Zero the input and output rows of item ``i``."""
    _check_index(i, ds.n_items)
    x = ds.input.copy()
    y = ds.output.copy()
    x[i] = 0.0
    y[i] = 0.0
    return replace(ds, input=x, output=y)
