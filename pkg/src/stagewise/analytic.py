"""Closed-form influence dynamics of the two-layer linear network.

From a small, nearly balanced initialization the end-to-end map stays aligned
with the data's singular modes, ``W(t) = U G(t) V^T``, and each diagonal
entry of ``G`` follows a logistic curve that saturates at the corresponding
singular value ``s``. Upweighting sample ``p`` by ``eps`` perturbs the
input-output correlation by ``eps * y_p x_p^T``; propagating that through
the SVD and the mode dynamics gives the first-order change of ``W(t)`` and
of any per-sample loss.

Conventions
-----------
The perturbed modes are written ``U (I + eps A)`` and ``(I + eps B) V^T``
with ``A``, ``B`` skew, so ``dW/deps = U (A G + G' + G B) V^T``. Residuals
are ``r = W x - y``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .bif import InfluenceTrajectory
from .dataset import HierarchicalDataset, correlation, svd_of_correlation
from .linnet import LinearNet, TrainConfig, TrainTrace, fit

__all__ = [
    "ModeState",
    "SvdResponse",
    "ModeCoords",
    "mode_strength",
    "mode_strength_ds",
    "degenerate_blocks",
    "svd_response",
    "first_order_svd",
    "analytic_influence_map",
    "analytic_influence_loss",
    "loss_difference_prediction",
    "mode_coords",
    "mode_state_from_data",
    "measured_mode_strengths",
    "calibrate_mode_state",
    "alignment_error",
    "analytic_trajectory",
]


@dataclass(frozen=True)
class ModeState:
    """Singular modes of the data plus per-mode initial strengths.

    Attributes
    ----------
    u : (O, r) array
    s : (r,) array
        Nonincreasing, strictly positive.
    v : (N, r) array
    g0 : (r,) array
        Strength of each mode at ``t = 0``.
    tau : float
        Time constant; ``1 / lr`` for gradient descent on the summed loss.
    """

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray
    g0: np.ndarray
    tau: float

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        g0 = np.broadcast_to(np.asarray(self.g0, dtype=float), s.shape).copy()
        if self.u.shape[1] != s.size or self.v.shape[1] != s.size:
            raise ValueError("u, s and v disagree on the number of modes")
        if np.any(s <= 0) or np.any(np.diff(s) > 1e-12 * max(s.max(initial=0.0), 1.0)):
            raise ValueError("singular values must be positive and nonincreasing")
        if np.any(g0 <= 0):
            raise ValueError("initial mode strengths must be positive")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "g0", g0)

    @property
    def rank(self) -> int:
        return self.s.size

    def strengths(self, t: float) -> np.ndarray:
        return mode_strength(self.s, self.g0, self.tau, t)

    def end_to_end(self, t: float) -> np.ndarray:
        return (self.u * self.strengths(t)) @ self.v.T


@dataclass(frozen=True)
class SvdResponse:
    """First-order response of the SVD to ``C -> C + eps C'``.

    ``u`` and ``v`` are the mode bases the response is expressed in; inside a
    degenerate block they are the input bases rotated by that block's ``R``.
    ``blocks`` lists ``(indices, R, splits)`` for every block of size > 1.
    """

    s_prime: np.ndarray
    a: np.ndarray
    b: np.ndarray
    blocks: list = field(default_factory=list)
    u: np.ndarray | None = None
    v: np.ndarray | None = None


@dataclass(frozen=True)
class ModeCoords:
    gamma_p: np.ndarray
    eta_p: np.ndarray
    residual_p: np.ndarray


def mode_strength(s, g0, tau: float, t):
    """Logistic mode strength ``s / (1 + (s/g0 - 1) exp(-2 s t / tau))``."""
    s, g0, t = np.asarray(s, float), np.asarray(g0, float), np.asarray(t, float)
    out = s / (1.0 + (s / g0 - 1.0) * np.exp(-2.0 * s * t / tau))
    return out if out.ndim else float(out)


def mode_strength_ds(s, g0, tau: float, t):
    """Derivative of :func:`mode_strength` in ``s`` at fixed ``g0``, ``tau`` and ``t``."""
    s, g0, t = np.asarray(s, float), np.asarray(g0, float), np.asarray(t, float)
    e = np.exp(-2.0 * s * t / tau)
    d = 1.0 + (s / g0 - 1.0) * e
    dd = e / g0 - (s / g0 - 1.0) * e * 2.0 * t / tau
    out = 1.0 / d - s * dd / d**2
    return out if out.ndim else float(out)


def degenerate_blocks(s: np.ndarray, gap_tol: float = 1e-6) -> list[list[int]]:
    """Group consecutive singular values whose gap is within ``gap_tol * max(s)``."""
    s = np.asarray(s, dtype=float)
    if s.size == 0:
        return []
    tol = gap_tol * s.max()
    blocks = [[0]]
    for k in range(1, s.size):
        if abs(s[k - 1] - s[k]) <= tol:
            blocks[-1].append(k)
        else:
            blocks.append([k])
    return blocks


def svd_response(ms: ModeState, c_prime: np.ndarray, gap_tol: float = 1e-6) -> SvdResponse:
    """First-order change of the singular triplets under ``C + eps C'``.

    Between distinct singular values ``s_j != s_k``::

        A_jk = ((Q_jk + Q_kj) / (s_k - s_j) + (Q_jk - Q_kj) / (s_k + s_j)) / 2
        B_jk = ((Q_jk - Q_kj) / (s_k + s_j) - (Q_jk + Q_kj) / (s_k - s_j)) / 2

    with ``Q = U^T C' V``. Inside a degenerate block the symmetric part of
    ``Q`` is diagonalized (fixing the basis and giving the splits) and the
    skew part is shared evenly: ``A = B = K / (2 s_b)``.
    """
    if not gap_tol > 0:
        raise ValueError(f"gap_tol must be > 0, got {gap_tol}")
    u, v, s = ms.u.copy(), ms.v.copy(), ms.s
    blocks = degenerate_blocks(s, gap_tol)
    info = []
    for blk in blocks:
        if len(blk) == 1:
            continue
        spread = (s[blk].max() - s[blk].min()) / s[blk].max()
        if spread > 0.1:
            warnings.warn(
                f"degenerate block {blk} spans a relative spread of {spread:.2f}; "
                "first-order block theory is unreliable",
                RuntimeWarning,
            )
        qb = u[:, blk].T @ c_prime @ v[:, blk]
        lam, vecs = np.linalg.eigh(0.5 * (qb + qb.T))
        order = np.argsort(lam)[::-1]
        lam, vecs = lam[order], vecs[:, order]
        u[:, blk] = u[:, blk] @ vecs
        v[:, blk] = v[:, blk] @ vecs
        info.append((list(blk), vecs.T, lam))

    q = u.T @ c_prime @ v
    r = s.size
    a = np.zeros((r, r))
    b = np.zeros((r, r))
    label = np.empty(r, dtype=int)
    for n, blk in enumerate(blocks):
        label[blk] = n
    sym = q + q.T
    skw = q - q.T
    for j in range(r):
        for k in range(r):
            if j == k:
                continue
            if label[j] == label[k]:
                sb = s[blocks[label[j]]].mean()
                a[j, k] = b[j, k] = skw[j, k] / (4.0 * sb)
            else:
                p = sym[j, k] / (s[k] - s[j])
                m = skw[j, k] / (s[k] + s[j])
                a[j, k] = 0.5 * (p + m)
                b[j, k] = 0.5 * (m - p)
    return SvdResponse(np.diag(q).copy(), a, b, info, u, v)


def first_order_svd(ms: ModeState, resp: SvdResponse, eps: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """First-order singular triplets of ``C + eps C'``: ``U (I + eps A)``, ``S + eps S'``, ``V (I + eps B)^T``.

    Only the component of the left vectors inside ``span(U)`` is modelled; when
    ``C'`` has columns outside that span the left vectors also tilt out of it.
    """
    r = ms.rank
    return (
        resp.u @ (np.eye(r) + eps * resp.a),
        ms.s + eps * resp.s_prime,
        resp.v @ (np.eye(r) + eps * resp.b).T,
    )


def _block_g0(ms: ModeState, resp: SvdResponse) -> np.ndarray:
    # rotating inside a block is only harmless when the block shares one g0
    g0 = ms.g0.copy()
    for blk, _, _ in resp.blocks:
        g0[blk] = g0[blk].mean()
    return g0


def analytic_influence_map(ms: ModeState, resp: SvdResponse, t: float) -> np.ndarray:
    """``dW(t)/deps = U (A G + G' + G B) V^T`` with ``G' = diag(dg/ds * S')``."""
    g0 = _block_g0(ms, resp)
    g = mode_strength(ms.s, g0, ms.tau, t)
    gp = mode_strength_ds(ms.s, g0, ms.tau, t) * resp.s_prime
    inner = resp.a * g[None, :] + np.diag(gp) + g[:, None] * resp.b
    return resp.u @ inner @ resp.v.T


def mode_coords(ms: ModeState, resp: SvdResponse | None, ds: HierarchicalDataset, j: int, t: float) -> ModeCoords:
    """Coordinates of sample ``j`` in the (possibly rotated) mode basis at time ``t``."""
    u = ms.u if resp is None else resp.u
    v = ms.v if resp is None else resp.v
    g0 = ms.g0 if resp is None else _block_g0(ms, resp)
    gam = v.T @ ds.input[j]
    eta = u.T @ ds.output[j]
    g = mode_strength(ms.s, g0, ms.tau, t)
    return ModeCoords(gam, eta, g * gam - eta)


def analytic_influence_loss(ms: ModeState, resp: SvdResponse, t: float, query: ModeCoords) -> float:
    """``d l_j / d eps = r_j^T (dW/deps) x_j`` with ``r_j = U phi_j``.

    ``x_j`` is rebuilt from its mode coordinates, which is exact for the
    one-hot inputs of the hierarchy dataset (``V`` spans the input space).
    """
    r = resp.u @ query.residual_p
    x = resp.v @ query.gamma_p
    return float(r @ analytic_influence_map(ms, resp, t) @ x)


def loss_difference_prediction(
    ms: ModeState, resp: SvdResponse, t: float, query: ModeCoords, epsilon: float
) -> float:
    """First-order ``l_j(eps) - l_j(0)``."""
    if abs(epsilon) > 0.5:
        raise ValueError(f"|epsilon| must be <= 0.5 for a first-order prediction, got {epsilon}")
    return epsilon * analytic_influence_loss(ms, resp, t, query)


def mode_state_from_data(ds: HierarchicalDataset, tau: float, g0=1e-6) -> ModeState:
    u, s, v = svd_of_correlation(correlation(ds))
    return ModeState(u, s, v, g0, tau)


def _init_rotation(ms: ModeState, net0: LinearNet, gap_tol: float) -> tuple[np.ndarray, np.ndarray]:
    # inside a degenerate block any rotation is a valid SVD; pick the one that
    # diagonalizes the initial overlap so each rotated mode grows on its own
    u, v = ms.u.copy(), ms.v.copy()
    for blk in degenerate_blocks(ms.s, gap_tol):
        if len(blk) == 1:
            continue
        p = net0.w1 @ v[:, blk] + net0.w2.T @ u[:, blk]
        _, vecs = np.linalg.eigh(p.T @ p)
        u[:, blk] = u[:, blk] @ vecs
        v[:, blk] = v[:, blk] @ vecs
    return u, v


def measured_mode_strengths(trace: TrainTrace, ms: ModeState) -> tuple[np.ndarray, np.ndarray]:
    """``diag(U^T W(t) V)`` at every checkpoint of ``trace``; returns (epochs, strengths)."""
    epochs = np.array(trace.epochs)
    g = np.stack([np.einsum("ok,on,nk->k", ms.u, trace.checkpoints[e].end_to_end, ms.v) for e in epochs])
    return epochs, g


def alignment_error(trace: TrainTrace, ms: ModeState) -> tuple[np.ndarray, np.ndarray]:
    """Off-diagonal over diagonal energy of ``U^T W(t) V`` per checkpoint."""
    epochs = np.array(trace.epochs)
    out = np.empty(epochs.size)
    for n, e in enumerate(epochs):
        m = ms.u.T @ trace.checkpoints[e].end_to_end @ ms.v
        d = np.sum(np.diag(m) ** 2)
        out[n] = (np.sum(m**2) - d) / d if d > 0 else np.inf
    return epochs, out


def calibrate_mode_state(
    ds: HierarchicalDataset,
    cfg: TrainConfig,
    *,
    trace: TrainTrace | None = None,
    window: tuple[float, float] = (0.01, 0.05),
    gap_tol: float = 1e-6,
) -> tuple[ModeState, TrainTrace]:
    """Fit each mode's ``g0`` to a gradient-descent run.

    The logistic is linear in ``log(g / (s - g))``, so ``g0`` follows from the
    median intercept over the early window ``window[0] * s <= g < window[1] * s``,
    before the mode takes off. Degenerate blocks are first rotated to
    diagonalize the initial weights' overlap with them.

    Parameters
    ----------
    trace : TrainTrace, optional
        A run with a checkpoint at every epoch; trained here when omitted.
    """
    if trace is None:
        trace = fit(ds, replace(cfg, checkpoint_every=1))
    base = mode_state_from_data(ds, 1.0 / cfg.lr)
    u, v = _init_rotation(base, trace.checkpoints[min(trace.checkpoints)], gap_tol)
    ms = replace(base, u=u, v=v)
    epochs, g = measured_mode_strengths(trace, ms)
    lo, hi = window
    g0 = np.empty(ms.rank)
    for k, s in enumerate(ms.s):
        m = g[:, k]
        above = np.nonzero(m >= hi * s)[0]
        onset = epochs[above[0]] if above.size else np.inf
        sel = (m >= lo * s) & (m < hi * s) & (epochs < onset)
        if not sel.any():
            # run too short to reach the window: use every positive pre-onset sample
            sel = (m > 0) & (m < hi * s) & (epochs < onset)
        if not sel.any():
            raise ValueError(f"mode {k} (s={s:.4g}) never has positive strength; cannot fit g0")
        z = np.log(m[sel] / (s - m[sel])) - 2.0 * s * epochs[sel] / ms.tau
        c = float(np.median(z))
        g0[k] = s / (1.0 + np.exp(-c))
    return replace(ms, g0=g0), trace


def analytic_trajectory(
    ms: ModeState,
    ds: HierarchicalDataset,
    i: int,
    j: int,
    epochs: Sequence[float] | Iterable[float],
    *,
    epsilon: float = -0.1,
    gap_tol: float = 1e-6,
) -> InfluenceTrajectory:
    """Predicted loss difference of sample ``j`` when sample ``i`` is reweighted by ``1 + epsilon``.

    Values follow the leave-one-out convention, ``l_j(full) - l_j(reweighted)``,
    so with ``epsilon < 0`` positive values mean sample ``i`` hurts ``j``.
    """
    c_prime = np.outer(ds.output[i], ds.input[i])
    resp = svd_response(ms, c_prime, gap_tol)
    epochs = np.asarray(list(epochs), dtype=float)
    vals = np.array(
        [-loss_difference_prediction(ms, resp, t, mode_coords(ms, resp, ds, j, t), epsilon) for t in epochs]
    )
    return InfluenceTrajectory(epochs, vals, "analytic", i, j, {"epsilon": epsilon})
