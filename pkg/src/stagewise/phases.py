"""Two-phase posterior model of influence and the log-odds transition point.

When the posterior splits its mass between two phases ``U`` and ``V``, the
covariance of two losses decomposes into a within-phase part and a
between-phase part::

    Cov(l_i, l_j) = pi_U Cov_U(i, j) + pi_V Cov_V(i, j)
                    + pi_U pi_V (mu_iU - mu_iV) (mu_jU - mu_jV)

The between-phase term peaks at ``pi_U = 1/2``, which is why influence
spikes at a phase transition. Within each phase losses are modelled as
Gaussian.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .bif import InfluenceTrajectory

__all__ = [
    "MixturePosterior",
    "PhasePair",
    "TransitionResult",
    "total_covariance",
    "between_curve",
    "between_peak",
    "transition_point",
    "sample_mixture",
    "simulate_bif_through_transition",
]


def _check_psd(name: str, m: np.ndarray) -> None:
    if not np.allclose(m, m.T, rtol=0, atol=1e-12 * max(1.0, np.abs(m).max())):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(0.5 * (m + m.T)).min() < -1e-10 * max(1.0, np.abs(m).max()):
        raise ValueError(f"{name} must be positive semidefinite")


@dataclass(frozen=True)
class MixturePosterior:
    pi_u: float
    mu_u: np.ndarray
    mu_v: np.ndarray
    cov_u: np.ndarray
    cov_v: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.pi_u <= 1.0:
            raise ValueError(f"pi_u must lie in [0, 1], got {self.pi_u}")
        mu_u = np.asarray(self.mu_u, float)
        mu_v = np.asarray(self.mu_v, float)
        cov_u = np.asarray(self.cov_u, float)
        cov_v = np.asarray(self.cov_v, float)
        n = mu_u.size
        if mu_v.shape != (n,) or cov_u.shape != (n, n) or cov_v.shape != (n, n):
            raise ValueError("means must be length-n vectors and covariances n x n")
        _check_psd("cov_u", cov_u)
        _check_psd("cov_v", cov_v)
        for k, val in (("mu_u", mu_u), ("mu_v", mu_v), ("cov_u", cov_u), ("cov_v", cov_v)):
            object.__setattr__(self, k, val)

    @property
    def pi_v(self) -> float:
        return 1.0 - self.pi_u

    @property
    def n(self) -> int:
        return self.mu_u.size

    def with_pi(self, pi_u: float) -> "MixturePosterior":
        return MixturePosterior(pi_u, self.mu_u, self.mu_v, self.cov_u, self.cov_v)


@dataclass(frozen=True)
class PhasePair:
    """Loss gap ``L(V) - L(U)`` and complexity gap ``lambda(V) - lambda(U)``."""

    delta_L: float
    delta_lambda: float

    def __post_init__(self):
        if not (math.isfinite(self.delta_L) and math.isfinite(self.delta_lambda)):
            raise ValueError("delta_L and delta_lambda must be finite")


@dataclass(frozen=True)
class TransitionResult:
    """Sample size at which the posterior prefers the complex phase.

    ``status`` is ``"ok"`` for a regular crossing, ``"degenerate"`` when
    ``delta_lambda == 0`` (the better fit wins immediately, ``n`` is the
    bracket minimum 2), ``"already_transitioned"`` when the crossing lies
    below the bracket, and ``"never"`` when there is no crossing
    (``n = inf``).
    """

    n: float
    status: str

    def __float__(self) -> float:
        return self.n


def total_covariance(mix: MixturePosterior, i: int, j: int) -> tuple[float, float, float]:
    """Return ``(total, within, between)`` for losses ``i`` and ``j``."""
    for k in (i, j):
        if not 0 <= k < mix.n:
            raise IndexError(f"index {k} out of range [0, {mix.n})")
    within = mix.pi_u * mix.cov_u[i, j] + mix.pi_v * mix.cov_v[i, j]
    between = mix.pi_u * mix.pi_v * (mix.mu_u[i] - mix.mu_v[i]) * (mix.mu_u[j] - mix.mu_v[j])
    return within + between, within, between


def between_curve(dmu_i: float, dmu_j: float, pis: Sequence[float]) -> np.ndarray:
    pis = np.asarray(pis, dtype=float)
    return pis * (1.0 - pis) * dmu_i * dmu_j


def between_peak(dmu_i: float, dmu_j: float, pis: Sequence[float] | None = None) -> float:
    """``pi_U`` maximizing ``|between|`` on ``pis``; NaN when the term vanishes identically."""
    pis = np.linspace(0.0, 1.0, 101) if pis is None else np.asarray(pis, dtype=float)
    curve = np.abs(between_curve(dmu_i, dmu_j, pis))
    if not np.any(curve > 0):
        return float("nan")
    return float(pis[int(np.argmax(curve))])


def transition_point(pp: PhasePair) -> TransitionResult:
    """Solve ``n * delta_L + delta_lambda * log(n) = 0`` for the crossing ``n* >= 2``.

    The left side starts positive when complexity dominates and turns
    negative once the loss advantage has accumulated; the returned root is
    where that happens. The ``log log n`` correction is ignored.
    """
    dl, dlam = pp.delta_L, pp.delta_lambda
    if not dl < 0 or dlam < 0:
        raise ValueError(
            f"need delta_L < 0 and delta_lambda >= 0 (complex phase fits better), got {dl}, {dlam}"
        )
    if dlam == 0:
        return TransitionResult(2.0, "degenerate")

    def f(n: float) -> float:
        return n * dl + dlam * math.log(n)

    # f is concave with its maximum at n = dlam / |dl|; the crossing we want is past it
    lo = max(2.0, dlam / -dl)
    if f(lo) <= 0:
        return TransitionResult(2.0, "already_transitioned")
    hi = 2.0 * lo
    while f(hi) > 0:
        hi *= 2.0
        if not math.isfinite(hi):
            return TransitionResult(math.inf, "never")
    root = brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    return TransitionResult(float(root), "ok")


def sample_mixture(mix: MixturePosterior, size: int, seed: int = 0) -> np.ndarray:
    """Draw ``size`` loss vectors; returns shape ``(size, n)``."""
    rng = np.random.default_rng(seed)
    from_u = rng.random(size) < mix.pi_u
    out = np.empty((size, mix.n))
    k = int(from_u.sum())
    out[from_u] = rng.multivariate_normal(mix.mu_u, mix.cov_u, size=k, method="cholesky" if _pd(mix.cov_u) else "eigh")
    out[~from_u] = rng.multivariate_normal(mix.mu_v, mix.cov_v, size=size - k, method="cholesky" if _pd(mix.cov_v) else "eigh")
    return out


def _pd(m: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(m)
        return True
    except np.linalg.LinAlgError:
        return False


def simulate_bif_through_transition(
    mix: MixturePosterior, pi_schedule: Sequence[float], i: int, j: int
) -> InfluenceTrajectory:
    """BIF (minus total covariance) of ``i`` on ``j`` as ``pi_U`` follows ``pi_schedule``.

    Steps are indexed 0, 1, 2, ... in place of epochs.
    """
    pis = np.asarray(pi_schedule, dtype=float)
    vals = np.array([-total_covariance(mix.with_pi(p), i, j)[0] for p in pis])
    return InfluenceTrajectory(np.arange(pis.size, dtype=float), vals, "bif", i, j, {"pi_schedule": pis})
