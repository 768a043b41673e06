"""Monte Carlo estimators over independent filament pairs.

Lengths are in units of the pair separation r (the separation vector is the
unit z axis).  Sampling is split into fixed-size chunks; chunk ``c`` of stream
``s`` draws from ``SeedSequence([seed, s, c])``, so results do not depend on
the worker count or the order in which chunks finish.  Chunk outputs are
concatenated in chunk order before any reduction.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import asymptotics
from ..paths import sample_bridges
from ..potentials import PairContext, QuadratureError, dipolar_tail, w_magnetic, w_magnetic_dipole
from ..scales import BEYOND_PHOTON, PairRatios, RegimeThresholds, regime_classify
from .config import ConfigError, ExperimentConfig

WORKERS_ENV = "LOOPQED_WORKERS"
AXIS = np.array([0.0, 0.0, 1.0])
MAX_FAILURE_FRACTION = 0.01
ROUNDOFF_FACTOR = 8.0


class NumericFailure(RuntimeError):
    """An estimator could not produce a trustworthy number."""


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return min(8, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return n


def chunk_rng(seed: int, stream: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, chunk]))


def chunked_samples(
    fn: Callable[[np.random.Generator, int], np.ndarray],
    n: int,
    seed: int,
    chunk: int,
    stream: int = 0,
    workers: int | None = None,
) -> np.ndarray:
    """Evaluate ``fn(rng, size)`` on every chunk and stack the results in chunk order."""
    sizes = [min(chunk, n - i) for i in range(0, n, chunk)]
    workers = workers or worker_count()

    def job(c):
        return np.asarray(fn(chunk_rng(seed, stream, c), sizes[c]))

    if workers == 1 or len(sizes) == 1:
        parts = [job(c) for c in range(len(sizes))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(job, range(len(sizes))))
    return np.concatenate(parts, axis=0)


@dataclass(frozen=True)
class EstimateRecord:
    quantity: str
    value: float
    se: float
    N: int
    M: int
    seed: int
    fingerprint: str
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.se >= 0:
            raise ValueError("standard error must be non-negative")

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("quantity", "value", "se", "N", "M", "seed", "fingerprint")}
        d.update(self.extras)
        return d


def mean_se(v: np.ndarray) -> tuple[float, float]:
    v = np.asarray(v, dtype=float)
    if v.size < 2:
        return float(v.mean()), 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def ratio_se(num: np.ndarray, den: np.ndarray) -> tuple[float, float]:
    """Ratio of sample means with a delta-method standard error."""
    n = num.size
    a, b = num.mean(), den.mean()
    ratio = a / b
    if n < 2:
        return float(ratio), 0.0
    cov = np.cov(np.vstack([num, den]), ddof=1)
    var = (cov[0, 0] / b**2 - 2 * a * cov[0, 1] / b**3 + a * a * cov[1, 1] / b**4) / n
    return float(ratio), float(math.sqrt(max(var, 0.0)))


def _pairs(rng, size, M):
    xa = sample_bridges(1, M, size, rng)
    xb = sample_bridges(1, M, size, rng)
    return xa, xb


def _chunk_for(config: ExperimentConfig, M: int) -> int:
    """Chunk size capped so one chunk of 2M-slice pairs stays near 100 MB."""
    return max(1, min(config.chunk, 2**22 // (2 * M + 1)))


def _two_level(values: np.ndarray):
    """Split stacked (M, 2M) columns into means, SE and the discretisation estimate."""
    coarse, fine = values[:, 0], values[:, 1]
    mean, se = mean_se(coarse)
    return mean, se, abs(float(fine.mean()) - mean)


def slices_for(config: ExperimentConfig, x: float) -> int:
    """Slice count resolving the lag kernels: at least 16 x, rounded up to a power of two."""
    if config.option("auto_slices", "yes").lower() in ("no", "false", "0"):
        return config.slices
    need = 2 ** math.ceil(math.log2(max(16.0 * x, 2.0)))
    return max(config.slices, need)


def estimate_wc_sq(config: ExperimentConfig, stream: int = 0) -> EstimateRecord:
    """MC mean of the squared dipolar Coulomb tail over independent filament pairs.

    Pairs are drawn at 2M slices; every other point gives an exact M-slice
    bridge, so the M vs 2M discretisation estimate uses the same paths.
    """
    M, la, lb = config.slices, config.lam_a, config.lam_b

    def fn(rng, size):
        xa, xb = _pairs(rng, size, 2 * M)
        fine = dipolar_tail(xa, xb, la, lb, AXIS) ** 2
        coarse = dipolar_tail(xa[:, ::2], xb[:, ::2], la, lb, AXIS) ** 2
        return np.stack([coarse, fine], axis=-1)

    v = chunked_samples(fn, config.samples, config.seed, _chunk_for(config, M), stream)
    mean, se, disc = _two_level(v)
    oracle = asymptotics.wc_sq_prediction(1.0, la, lb)
    return EstimateRecord(
        "wc_sq", mean, se, config.samples, M, config.seed, config.fingerprint(),
        {"oracle": oracle, "discretization": disc, "tolerance": disc + 3 * se},
    )


def _wm_full(config: ExperimentConfig, lam_ph: float, M: int):
    la, lb = config.lam_a, config.lam_b

    def fn(rng, size):
        xa, xb = _pairs(rng, size, M)
        out = np.empty((size, 3))
        for i in range(size):
            ctx = PairContext(xa[i], xb[i], M, AXIS, la, lb, lam_ph, form_factor=config.form_factor, quad=config.quad)
            try:
                out[i, 0] = w_magnetic(ctx).value
            except QuadratureError:
                out[i, 0] = np.nan
        out[:, 1] = dipolar_tail(xa, xb, la, lb, AXIS)
        out[:, 2] = out[:, 0]
        return out

    return fn


def _wm_dipole(config: ExperimentConfig, lam_ph: float, M: int):
    la, lb = config.lam_a, config.lam_b

    def fn(rng, size):
        xa, xb = _pairs(rng, size, 2 * M)
        fine = w_magnetic_dipole(xa, xb, la, lb, lam_ph, AXIS)
        xa, xb = xa[:, ::2], xb[:, ::2]
        wm = w_magnetic_dipole(xa, xb, la, lb, lam_ph, AXIS)
        wc = dipolar_tail(xa, xb, la, lb, AXIS)
        return np.stack([wm, wc, fine], axis=-1)

    return fn


def estimate_wm_sq(config: ExperimentConfig, r_over_lph: float | None = None, stream: int = 0) -> EstimateRecord:
    """MC mean of the squared magnetic potential, with W_c^2 on the same pairs.

    ``route`` option: ``dipole`` (default) evaluates point-like loops through the
    lag kernels, which is exact as lam/r -> 0, and estimates the discretisation
    error from the same pairs at 2M; ``full`` runs the k-space quadrature per
    pair at M only and counts quadrature failures.  Extras carry the
    deterministic sub-photon value coupling^2 F(x) / r^2, the ratio to W_c^2
    and the scaling prediction 120 A (r/lam_ph)^3.
    """
    lam_ph = config.lam_ph if r_over_lph is None else 1.0 / r_over_lph
    x = lam_ph
    M = slices_for(config, x)
    route = config.option("route", "dipole")
    if route == "dipole":
        fn = _wm_dipole(config, lam_ph, M)
    elif route == "full":
        fn = _wm_full(config, lam_ph, M)
    else:
        raise ConfigError(f"unknown route {route!r}")
    v = chunked_samples(fn, config.samples, config.seed, _chunk_for(config, M), stream)
    bad = ~np.isfinite(v[:, 0])
    failures = int(bad.sum())
    if failures > MAX_FAILURE_FRACTION * len(v):
        raise NumericFailure(f"{failures} of {len(v)} magnetic quadratures failed")
    v = v[~bad]
    wm2, wc2 = v[:, 0] ** 2, v[:, 1] ** 2
    mean, se = mean_se(wm2)
    disc = abs(float(np.mean(v[:, 2] ** 2)) - mean)
    ratio, rse = ratio_se(wm2, wc2)
    coupling = config.lam_a * config.lam_b / lam_ph**2
    deterministic = coupling**2 * asymptotics.f_function(x)
    A = asymptotics.constant_a(config.quad).value
    return EstimateRecord(
        "wm_sq", mean, se, int(len(v)), M, config.seed, config.fingerprint(),
        {
            "r_over_lph": 1.0 / x,
            "lam_ph": lam_ph,
            "deterministic": deterministic,
            "wc_sq": float(wc2.mean()),
            "ratio": ratio,
            "ratio_se": rse,
            "ratio_prediction": 120.0 * A / x**3,
            "failures": failures,
            "route": route,
            "discretization": disc,
            "tolerance": disc + 3 * se,
        },
    )


def run_cancellation_scan(config: ExperimentConfig) -> list[asymptotics.TailReport]:
    """Dipolar bookkeeping along the r/lam_ph grid.

    At each point the pair sample is shared by W_c, the quantum correction and
    the point-loop magnetic potential.  Coefficients are sample means of
    W * r^3 / (lam_a lam_b) projected on sign(W_c), so the W_c coefficient is
    <|W_c|> and the residual is the signed mean of (W_c + correction).
    ``ratio`` is rms(W_m) / rms(W_c); ``error`` is the residual budget relative
    to the W_c coefficient, see :func:`residual_budget`.
    """
    if not config.r_grid:
        raise ConfigError("cancellation-scan needs a [grid] r_over_lph list")
    la, lb = config.lam_a, config.lam_b
    if la == 0 or lb == 0:
        raise ConfigError("cancellation-scan needs non-zero lam_a and lam_b")
    thresholds = RegimeThresholds(config.threshold_ratio)
    reports = []
    for s, rho in enumerate(config.r_grid):
        lam_ph = 1.0 / rho
        M = slices_for(config, lam_ph)

        def fn(rng, size, lam_ph=lam_ph, M=M):
            xa, xb = _pairs(rng, size, M)
            wc = dipolar_tail(xa, xb, la, lb, AXIS)
            corr = asymptotics.quantum_correction_batch(xa, xb, la, lb, AXIS)
            wm = w_magnetic_dipole(xa, xb, la, lb, lam_ph, AXIS)
            return np.stack([wc, corr, wm], axis=-1)

        v = chunked_samples(fn, config.samples, config.seed, _chunk_for(config, M), s)
        wc, corr, wm = v[:, 0], v[:, 1], v[:, 2]
        sign = np.sign(wc)
        scale = 1.0 / (la * lb)
        wc_coeff = float(np.mean(np.abs(wc))) * scale
        wm_coeff = float(np.mean(corr * sign)) * scale
        # the grid identity is exact, so the budget is roundoff in the O(M) lag sums
        budget = 2 * ROUNDOFF_FACTOR * np.finfo(float).eps * M
        regime = regime_classify(1.0, PairRatios(la, lb, lam_ph), thresholds)
        rep = asymptotics.TailReport.build(rho, regime, wc_coeff, wm_coeff, budget)
        ratio = float(np.sqrt(np.mean(wm**2) / np.mean(wc**2)))
        reports.append(
            asymptotics.TailReport(rep.r, rep.regime, rep.wc_coeff, rep.wm_coeff, rep.residual, ratio, rep.error)
        )
    return reports


def residual_budget(xi_a, xi_b, lam_a: float, lam_b: float, r) -> np.ndarray:
    """Per-sample roundoff tolerance for W_c + correction = 0.

    Scaled by the size of the summands, lam_a lam_b rms|xi_a| rms|xi_b| |T| / r^3
    with |T| the Frobenius norm of 3 rhat rhat - 1, not by the result, which can
    cancel internally for individual pairs.
    """
    xa = np.asarray(xi_a, dtype=float)
    xb = np.asarray(xi_b, dtype=float)
    M = xa.shape[-2] - 1
    d = float(np.linalg.norm(r))
    ra = np.sqrt(np.mean(np.sum(xa * xa, axis=-1), axis=-1))
    rb = np.sqrt(np.mean(np.sum(xb * xb, axis=-1), axis=-1))
    scale = abs(lam_a * lam_b) * ra * rb * math.sqrt(6.0) / d**3
    return ROUNDOFF_FACTOR * np.finfo(float).eps * M * scale


def fit_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def beyond_photon(report: asymptotics.TailReport) -> bool:
    return report.regime == BEYOND_PHOTON
