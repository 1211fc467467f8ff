"""Damped classical influence functions along a training trajectory.

At a checkpoint ``w_t`` the damped influence of sample ``i`` on the loss of
sample ``j`` is::

    IF_t = -grad l_j^T (M + gamma* I)^{-1} grad l_i,     gamma* = gamma_rel * alpha

where ``M`` is the Hessian (or Gauss-Newton matrix) of the total loss and
``alpha`` bounds ``|eig(M)|``. Damping is relative so a single ``gamma_rel``
means the same thing early in training, when curvature is tiny, and late,
when it is large.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Literal, Mapping

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .bif import InfluenceTrajectory
from .dataset import HierarchicalDataset
from .linnet import LinearNet, gauss_newton, hessian, per_sample_gradient

__all__ = [
    "DampingSpec",
    "SingularDampingError",
    "spectral_bound",
    "DampedSystem",
    "factor_damped",
    "damped_system",
    "influence_from_gradients",
    "damped_if",
    "classical_trajectory",
]


class SingularDampingError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class DampingSpec:
    gamma_rel: float = 0.1
    kind: Literal["hessian", "gnh"] = "gnh"

    def __post_init__(self):
        if self.kind not in ("hessian", "gnh"):
            raise ValueError(f"kind must be 'hessian' or 'gnh', got {self.kind!r}")
        if self.kind == "hessian" and not self.gamma_rel > 0:
            raise ValueError(f"gamma_rel must be > 0 for the indefinite Hessian, got {self.gamma_rel}")
        if not self.gamma_rel >= 0:
            raise ValueError(f"gamma_rel must be >= 0, got {self.gamma_rel}")

    @property
    def method(self) -> str:
        return "classical_h" if self.kind == "hessian" else "classical_gnh"


def spectral_bound(m: np.ndarray, *, rtol: float = 1e-6, max_iter: int = 10_000, seed: int = 0) -> float:
    """Largest ``|eig(m)|`` of a symmetric matrix by power iteration.

    Iterates on ``m @ m`` so that a pair of eigenvalues ``+-a`` does not
    stall the iteration.
    """
    m = np.asarray(m, dtype=float)
    x = np.random.default_rng(seed).standard_normal(m.shape[0])
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = m @ (m @ x)
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        new = float(np.sqrt(norm))
        x = y / norm
        if abs(new - lam) <= rtol * new:
            return new
        lam = new
    return lam


@dataclass(frozen=True)
class DampedSystem:
    """Cholesky factor of ``M + gamma* I``, reusable across sample pairs."""

    factor: tuple
    alpha: float
    gamma_star: float
    matrix: np.ndarray

    def solve(self, g: np.ndarray) -> np.ndarray:
        x = cho_solve(self.factor, g)
        res = np.linalg.norm(self.matrix @ x - g)
        if res > 1e-8 * max(np.linalg.norm(g), np.finfo(float).tiny):
            raise SingularDampingError(
                f"damped solve residual {res:.3e} too large; use a larger gamma_rel"
            )
        return x


def factor_damped(m: np.ndarray, gamma_rel: float) -> DampedSystem:
    """Factor ``m + gamma* I`` with ``gamma* = gamma_rel * max|eig(m)|``."""
    m = np.asarray(m, dtype=float)
    alpha = spectral_bound(m)
    gamma_star = gamma_rel * alpha
    a = m + gamma_star * np.eye(m.shape[0])
    if alpha == 0.0 or gamma_star <= 1e-14 * alpha:
        # nothing to regularize with; only a zero network gets here with alpha == 0
        if alpha == 0.0:
            a = np.eye(m.shape[0])
        elif np.linalg.eigvalsh(a).min() <= 1e-14 * alpha:
            raise SingularDampingError(
                f"M + gamma* I is numerically singular (gamma* = {gamma_star:.3e}, alpha = {alpha:.3e}); "
                "use a larger gamma_rel"
            )
    try:
        factor = cho_factor(a, lower=True, check_finite=True)
    except LinAlgError:
        raise SingularDampingError(
            f"M + gamma* I is not positive definite at gamma_rel = {gamma_rel}; use a larger gamma_rel"
        ) from None
    diag = np.diag(factor[0])
    if np.min(diag) ** 2 <= 1e-14 * max(alpha, 1.0):
        raise SingularDampingError(
            f"M + gamma* I is numerically singular at gamma_rel = {gamma_rel}; use a larger gamma_rel"
        )
    return DampedSystem(factor, alpha, gamma_star, a)


def damped_system(net: LinearNet, ds: HierarchicalDataset, spec: DampingSpec) -> DampedSystem:
    """Build and factor ``M + gamma* I`` at ``net``."""
    m = hessian(net, ds) if spec.kind == "hessian" else gauss_newton(net, ds)
    return factor_damped(m, spec.gamma_rel)


def influence_from_gradients(gi: np.ndarray, gj: np.ndarray, system: DampedSystem) -> float:
    """``-gj^T (M + gamma* I)^{-1} gi``; 0 when either gradient vanishes."""
    if not np.any(gi) or not np.any(gj):
        return 0.0
    return float(-np.asarray(gj) @ system.solve(np.asarray(gi, dtype=float)))


def damped_if(
    net: LinearNet,
    ds: HierarchicalDataset,
    i: int,
    j: int,
    spec: DampingSpec,
    *,
    system: DampedSystem | None = None,
) -> float:
    """Damped influence of sample ``i`` on the loss of sample ``j`` at ``net``.

    Positive values mean upweighting ``i`` would raise ``l_j`` (harmful),
    matching the BIF and LOO conventions.
    """
    gi = per_sample_gradient(net, ds, i)
    gj = per_sample_gradient(net, ds, j)
    if not gi.any() or not gj.any():
        return 0.0
    return influence_from_gradients(gi, gj, damped_system(net, ds, spec) if system is None else system)


def classical_trajectory(
    checkpoints: Mapping[int, LinearNet],
    ds: HierarchicalDataset,
    i: int,
    j: int,
    spec: DampingSpec,
    *,
    epochs: Iterable[int] | None = None,
) -> InfluenceTrajectory:
    """One damped IF per checkpoint, in epoch order."""
    if not checkpoints:
        raise ValueError("no checkpoints given")
    marks = sorted(checkpoints if epochs is None else epochs)
    vals = [damped_if(checkpoints[e], ds, i, j, spec) for e in marks]
    return InfluenceTrajectory(
        np.array(marks), np.array(vals), spec.method, i, j, {"gamma_rel": spec.gamma_rel}
    )
