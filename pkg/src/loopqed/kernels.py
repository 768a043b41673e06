"""Photon-field covariances and the quantum kernel Q.

Dimensionless conventions: ``x = beta*hbar*omega_k = lam_ph*k`` for a single
mode, ``tau`` is imaginary time in units of beta*hbar.  All functions broadcast
over numpy arrays.

The even covariance is normalised so that Q = x*C_even, which integrates to one
over a period and reduces to 1 in the classical limit x -> 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import zeta

from .scales import DomainError

SMALL_U = 1e-4


def _h(tau):
    """tau^2 - |tau| + 1/6, the second-order coefficient of Q on [-1, 1]."""
    a = np.abs(tau)
    return a * a - a + 1.0 / 6.0


def _reduce(tau):
    """Map tau to [0, 1) using evenness and unit period."""
    return np.mod(np.abs(np.asarray(tau, dtype=float)), 1.0)


def _out(v):
    v = np.asarray(v)
    return v if v.ndim else float(v)


def planck_occupation(x):
    """Bose occupation 1/(e^x - 1) for x = beta*hbar*omega > 0."""
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError("planck_occupation needs x > 0")
    small = x < SMALL_U
    xs = np.where(small, x, 1.0)
    series = 1.0 / xs - 0.5 + xs / 12.0 - xs**3 / 720.0
    xl = np.where(small, 1.0, x)
    return _out(np.where(small, series, np.exp(-xl) / -np.expm1(-xl)))


def photon_covariance(k, dtau, beta, hbar=1.0, c=1.0, periodic=False):
    """Thermal covariance of one transverse mode at imaginary-time lag ``dtau``.

    e^{-x dtau} (n + 1) for dtau > 0, e^{-x dtau} n for dtau < 0 and n at
    dtau = 0, with x = beta*hbar*c*k.  With ``periodic`` the lag is first
    reduced to (-1, 1] using the unit period.
    """
    x = beta * hbar * c * np.asarray(k, dtype=float)
    d = np.asarray(dtau, dtype=float)
    if periodic:
        d = d - np.ceil(d - 1.0)  # into (0, 1]
        d = np.where(d == 1.0, 0.0, d)
    elif np.any(np.abs(d) > 1.0):
        raise DomainError("|tau - tau'| must be <= 1 unless periodic=True")
    n = planck_occupation(x)
    one_minus = -np.expm1(-x)
    pos = np.exp(-x * np.abs(d)) / one_minus  # (n + 1) e^{-x|d|}
    neg = np.exp(-x * (1.0 - np.abs(d))) / one_minus  # n e^{x|d|}
    return _out(np.where(d > 0, pos, np.where(d < 0, neg, n)))


def covariance_even(x, tau, continuous=True):
    """Even part of the mode covariance, cosh[x(|tau|-1/2)] / (2 sinh(x/2)).

    At tau = 0 the continuous extension (default) is n + 1/2; with
    ``continuous=False`` the equal-time value n is returned instead.
    """
    x = np.asarray(x, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError("covariance_even needs x > 0")
    if np.any(np.abs(tau) > 1.0):
        raise DomainError("covariance_even needs |tau| <= 1")
    a = np.abs(tau)
    val = (np.exp(x * (a - 1.0)) + np.exp(-x * a)) / (-2.0 * np.expm1(-x))
    if not continuous:
        val = np.where(tau == 0, planck_occupation(x), val)
    return _out(val)


def q_kernel(u, tau):
    """Q(u, tau) = (u/2) cosh[u(|tau| - 1/2)] / sinh(u/2), extended with unit period.

    ``u = lam_ph*k``; Q = 1 exactly at u = 0, with a series branch below 1e-4.
    """
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise DomainError("q_kernel needs u >= 0")
    t = _reduce(tau)
    small = u < SMALL_U
    us = np.where(small, u, 0.0)
    series = 1.0 + 0.5 * us * us * _h(t)
    ul = np.where(small, 1.0, u)
    full = 0.5 * ul * (np.exp(ul * (t - 1.0)) + np.exp(-ul * t)) / (-np.expm1(-ul))
    return _out(np.where(small, series, full))


def q_kernel_small_k(u, tau):
    """Second-order expansion 1 + (u^2/2)(tau^2 - |tau| + 1/6), valid for |tau| <= 1."""
    u = np.asarray(u, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(np.abs(tau) > 1.0):
        raise DomainError("q_kernel_small_k needs |tau| <= 1")
    return _out(1.0 + 0.5 * u * u * _h(tau))


def q_kernel_antiderivative(u, tau):
    """Integral of Q(u, s) over s in [0, tau] for tau in [0, 1]; equals 1 at tau = 1."""
    u = np.asarray(u, dtype=float)
    t = np.asarray(tau, dtype=float)
    if np.any((t < 0) | (t > 1)):
        raise DomainError("q_kernel_antiderivative needs 0 <= tau <= 1")
    small = u < SMALL_U
    us = np.where(small, u, 0.0)
    series = t + 0.5 * us * us * (t**3 / 3.0 - t * t / 2.0 + t / 6.0)
    ul = np.where(small, 1.0, u)
    full = 0.5 * (np.exp(ul * (t - 1.0)) - np.exp(-ul) - np.expm1(-ul * t)) / (-np.expm1(-ul))
    return _out(np.where(small, series, full))


@dataclass(frozen=True)
class KernelEval:
    """Kernel values at one (x, tau) point; ``x = lam_ph*k``."""

    x: float
    tau: float
    n_k: float
    C: float
    C_even: float
    Q: float
    regime: str

    def __post_init__(self):
        if self.n_k < 0:
            raise DomainError("negative occupation")


def evaluate_kernels(x: float, tau: float) -> KernelEval:
    x, tau = float(x), float(tau)
    return KernelEval(
        x=x,
        tau=tau,
        n_k=planck_occupation(x),
        C=photon_covariance(x, tau, 1.0),
        C_even=covariance_even(x, tau),
        Q=q_kernel(x, tau),
        regime="classical" if x < SMALL_U else ("quantum" if x > 1.0 else "crossover"),
    )


# ---------------------------------------------------------------------------
# Dipole-limit lag kernels.
#
# For point-like loops (lam_mat << r) the transverse propagator dressed with Q
#   int d^3k/(2pi)^3 e^{ik.r} (4 pi / k^2) (delta - k k / k^2) Q(k, tau)
# equals (kappa_delta(tau) * delta + kappa_rr(tau) * rhat rhat) / r and depends
# on r only through x = lam_ph / r.  Two independent evaluations are provided.
# ---------------------------------------------------------------------------


def _dipole_matsubara(x, t, nmax=None):
    h = _h(t)
    kd = 0.5 - 0.5 * x * x * h
    kr = 0.5 + 1.5 * x * x * h
    if nmax is None:
        nmax = int(math.ceil(45.0 * x / (2.0 * math.pi))) + 1
    for n in range(1, nmax + 1):
        mu = 2.0 * math.pi * n / x
        e = math.exp(-mu)
        if e == 0.0:
            break
        c = 2.0 * np.cos(2.0 * math.pi * n * t)
        kd = kd + c * e * (1.0 + (mu + 1.0) / (mu * mu))
        kr = kr - c * e * (mu * mu + 3.0 * mu + 3.0) / (mu * mu)
    return kd, kr


def laplace_p(t):
    """1 - t*arccot(t), with its inverse-power series for large t."""
    t = np.asarray(t, dtype=float)
    big = t > 4.0
    tb = np.where(big, t, 8.0)
    s = np.zeros_like(tb)
    inv2 = 1.0 / (tb * tb)
    term = np.ones_like(tb)
    for j in range(1, 24):
        term = term * inv2
        s = s + (-1.0) ** (j + 1) * term / (2 * j + 1)
    ts = np.where(big, 0.0, t)
    direct = 1.0 - ts * (0.5 * np.pi - np.arctan(ts))
    return np.where(big, s, direct)


def laplace_profiles(t):
    """Laplace transforms in t of q*a(q) and q*b(q), the angular moments of the
    transverse projector against exp(iq cos(theta)): a multiplies delta and b
    multiplies rhat rhat.  Returns (L0 - P, 3P - L0) with L0 = 1/(1 + t^2)."""
    l0 = 1.0 / (1.0 + t * t)
    p = laplace_p(t)
    return l0 - p, 3.0 * p - l0


# inverse-power coefficients of the two profiles, t^-2 .. t^-8
_TAIL_A = {2: 2.0 / 3.0, 4: -4.0 / 5.0, 6: 6.0 / 7.0, 8: -8.0 / 9.0}
_TAIL_B = {4: 2.0 / 5.0, 6: -4.0 / 7.0, 8: 2.0 / 3.0}


def _dipole_laplace(x, t):
    nmax = max(4, int(math.ceil(30.0 / x)))
    n = np.arange(nmax + 1, dtype=float)
    t = np.asarray(t, dtype=float)
    arg1 = x * (n[:, None] + 1.0 - t.ravel()[None, :])
    arg2 = x * (n[:, None] + t.ravel()[None, :])
    a1, b1 = laplace_profiles(arg1)
    a2, b2 = laplace_profiles(arg2)
    sa = (a1 + a2).sum(axis=0)
    sb = (b1 + b2).sum(axis=0)
    tr = t.ravel()
    for coeffs, acc in ((_TAIL_A, sa), (_TAIL_B, sb)):
        for p, cf in coeffs.items():
            acc += cf * x**-p * (zeta(p, nmax + 2.0 - tr) + zeta(p, nmax + 1.0 + tr))
    kd = (x / math.pi) * sa
    kr = (x / math.pi) * sb
    return kd.reshape(t.shape), kr.reshape(t.shape)


def dipole_lag_kernels(x: float, tau, method: str = "auto"):
    """Return (kappa_delta, kappa_rr) at lag ``tau`` for ``x = lam_ph/r``.

    ``method`` is ``"matsubara"`` (frequency sum, fast for x <= 1),
    ``"laplace"`` (image sum over inverse-power profiles, fast for x > 1) or
    ``"auto"``.  As x -> 0 both kernels tend to 1/2 (the static transverse
    propagator (delta + rhat rhat)/(2r)).
    """
    if not x > 0:
        raise DomainError("dipole_lag_kernels needs x = lam_ph/r > 0")
    t = _reduce(tau)
    if method == "auto":
        method = "matsubara" if x <= 1.0 else "laplace"
    if method == "matsubara":
        kd, kr = _dipole_matsubara(x, t)
    elif method == "laplace":
        kd, kr = _dipole_laplace(x, t)
    else:
        raise DomainError(f"unknown method {method!r}")
    return _out(kd), _out(kr)
