"""Discretised closed Brownian paths and the analytic covariances they obey.

A loop of winding ``q`` is a Brownian bridge X on [0, q] pinned at both ends,
with per-component covariance q[min(t/q, s/q) - t s / q^2].  Paths are stored
on the grid tau_j = j/M, j = 0..qM, as arrays of shape (qM + 1, 3); batches add
a leading sample axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .scales import DomainError


@dataclass(frozen=True)
class LoopShape:
    q: int
    M: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.q < 1 or self.M < 2:
            raise DomainError("LoopShape needs q >= 1 and M >= 2")
        if self.values.shape != (self.q * self.M + 1, 3):
            raise DomainError(f"values must have shape {(self.q * self.M + 1, 3)}")

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.q * self.M + 1) / self.M

    @property
    def dtau(self) -> float:
        return 1.0 / self.M


@dataclass(frozen=True)
class Loop:
    """A loop placed in space: position(tau) = anchor + lam * X(tau).

    ``lam`` is the thermal de Broglie length of the species (same length unit as
    ``anchor``); ``charge`` is carried for Gibbs-weight assembly.
    """

    anchor: np.ndarray
    shape: LoopShape
    lam: float = 0.0
    species: str = ""
    charge: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=float).reshape(3))
        if self.lam < 0:
            raise DomainError("lam must be non-negative")

    @property
    def q(self) -> int:
        return self.shape.q

    @property
    def M(self) -> int:
        return self.shape.M

    def positions(self) -> np.ndarray:
        return self.anchor + self.lam * self.shape.values


@dataclass(frozen=True)
class Filament(Loop):
    """A q = 1 loop: one particle."""

    def __post_init__(self):
        super().__post_init__()
        if self.shape.q != 1:
            raise DomainError("a filament has winding q = 1")


def frozen_shape(q: int, M: int) -> LoopShape:
    """The degenerate loop X = 0 (a classical point particle)."""
    return LoopShape(q, M, np.zeros((q * M + 1, 3)))


def sample_bridges(q: int, M: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` independent bridges; returns an array of shape (n, qM + 1, 3).

    Free increments of variance 1/M are summed and the linear drift (tau/q)W(q)
    removed, which reproduces the bridge covariance exactly on the grid.
    """
    if q < 1 or M < 2:
        raise DomainError("sample_bridges needs q >= 1 and M >= 2")
    K = q * M
    inc = rng.standard_normal((n, K, 3)) * np.sqrt(1.0 / M)
    w = np.zeros((n, K + 1, 3))
    np.cumsum(inc, axis=1, out=w[:, 1:])
    frac = np.arange(K + 1) / K
    w -= frac[None, :, None] * w[:, -1:, :]
    w[:, -1] = 0.0
    return w


def sample_bridge(q: int, M: int, seed) -> LoopShape:
    rng = np.random.default_rng(seed)
    return LoopShape(q, M, sample_bridges(q, M, 1, rng)[0])


def _check_times(q, *taus):
    for t in taus:
        t = np.asarray(t)
        if np.any((t < 0) | (t > q)):
            raise DomainError(f"times must lie in [0, {q}]")


def covariance_oracle(q, tau, taup):
    """Per-component covariance <X(tau) X(tau')> of a winding-q bridge."""
    _check_times(q, tau, taup)
    tau = np.asarray(tau, dtype=float)
    taup = np.asarray(taup, dtype=float)
    v = q * (np.minimum(tau / q, taup / q) - tau * taup / (q * q))
    return v if v.ndim else float(v)


def diff_covariance_oracle(q, tau, taup, kind: str = "dX.X"):
    """Covariance density of path differentials as (regular part, delta weight).

    ``kind="dX.X"``: <dX(tau) X(tau')> / dtau = theta(tau' - tau) - tau'/q, with
    theta = 1/2 at coincident times; no delta atom.
    ``kind="dX.dX"``: <dX(tau) dX(tau')> = [delta(tau - tau') - 1/q] dtau dtau'.
    """
    _check_times(q, tau, taup)
    tau = np.asarray(tau, dtype=float)
    taup = np.asarray(taup, dtype=float)
    if kind == "dX.X":
        theta = np.where(taup > tau, 1.0, np.where(taup < tau, 0.0, 0.5))
        reg = theta - taup / q
        w = np.zeros_like(reg)
    elif kind == "dX.dX":
        reg = np.full(np.broadcast(tau, taup).shape, -1.0 / q)
        w = np.where(tau == taup, 1.0, 0.0)
    else:
        raise DomainError(f"unknown kind {kind!r}")
    if reg.ndim == 0:
        return float(reg), float(w)
    return reg, w


def increment_covariance(q: int, M: int) -> np.ndarray:
    """Exact <dX_i dX_j> on the grid: the delta atom becomes 1/dtau on the diagonal cell."""
    d = 1.0 / M
    K = q * M
    return d * np.eye(K) - d * d / q * np.ones((K, K))


def bridge_covariance_matrix(q: int, M: int) -> np.ndarray:
    """Per-component covariance of the interior grid values X(tau_1..tau_{qM-1})."""
    t = np.arange(1, q * M) / M
    return covariance_oracle(q, t[:, None], t[None, :])


def line_integral_midpoint(shape, f: Callable[[np.ndarray], np.ndarray]):
    """Midpoint-rule line integral sum_j dX_j . f((X_j + X_{j+1})/2).

    ``shape`` is a :class:`LoopShape` or an array (..., K + 1, 3); ``f`` maps
    points (..., 3) to vectors (..., 3).  Returns one value per path.
    """
    x = shape.values if isinstance(shape, LoopShape) else np.asarray(shape, dtype=float)
    dx = np.diff(x, axis=-2)
    mid = 0.5 * (x[..., 1:, :] + x[..., :-1, :])
    v = np.einsum("...jm,...jm->...", dx, f(mid))
    return v if np.ndim(v) else float(v)


def signed_area_field(x: np.ndarray) -> np.ndarray:
    """(-x2, x1, 0)/2; its line integral is the signed area in the 1-2 plane."""
    out = np.zeros_like(x)
    out[..., 0] = -0.5 * x[..., 1]
    out[..., 1] = 0.5 * x[..., 0]
    return out


def signed_area_variance(q: int, M: int | None = None) -> float:
    """Variance of the signed-area line integral over a winding-q bridge.

    With ``M=None`` the continuum value follows from Wick's theorem with the
    differential covariances: the two auto-contractions of
    (1/4)<(x1 dx2 - x2 dx1)^2> each give q^2/12 and the cross term
    -2 <x1 dx1><x2 dx2> gives +2 q^2/12, so the total is q^2/12.
    With an integer ``M`` the exact discrete value tr(K C K^T C) for the
    midpoint rule is returned, where A = X1^T K X2.
    """
    if M is None:
        return q * q / 12.0
    K = q * M
    n = K + 1
    D = np.zeros((K, n))
    S = np.zeros((K, n))
    i = np.arange(K)
    D[i, i], D[i, i + 1] = -1.0, 1.0
    S[i, i], S[i, i + 1] = 0.5, 0.5
    A = 0.5 * (S.T @ D - D.T @ S)
    C = np.zeros((n, n))
    C[1:-1, 1:-1] = bridge_covariance_matrix(q, M)
    return float(np.trace(A @ C @ A.T @ C))
