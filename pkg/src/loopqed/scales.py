"""Physical constants, species data and the thermal length-scale hierarchy.

All downstream modules work in dimensionless groups: lengths are measured in
units of the pair separation ``r`` and the relevant inputs are the ratios
``lam_a/r``, ``lam_b/r``, ``lam_ph/r`` and ``lam_cut/r``.  This module converts
physical inputs (any consistent unit system) into those groups.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Mapping, NamedTuple

import numpy as np


class DomainError(ValueError):
    """Raised when an input lies outside the mathematical domain of an operation."""


class Constants(NamedTuple):
    hbar: float
    c: float
    k_B: float


NATURAL = Constants(hbar=1.0, c=1.0, k_B=1.0)
# CODATA 2018 exact / recommended values
SI = Constants(hbar=1.054571817e-34, c=299792458.0, k_B=1.380649e-23)

BEYOND_PHOTON = "beyond_photon"
SUB_PHOTON = "sub_photon"
NON_ASYMPTOTIC = "non_asymptotic"


@dataclass(frozen=True)
class Species:
    label: str
    mass: float
    charge: float

    def __post_init__(self):
        if not self.mass > 0:
            raise DomainError(f"species {self.label!r}: mass must be positive, got {self.mass}")


@dataclass(frozen=True)
class ScaleSet:
    """Thermal lengths of a set of species at inverse temperature ``beta``.

    ``lam_mat`` maps species label to the de Broglie length hbar*sqrt(beta/m);
    ``lam_ph = beta*hbar*c`` and ``lam_cut = hbar/(m_ref*c)``; ``rel`` is the
    relativistic parameter beta*m_ref*c^2.
    """

    beta: float
    constants: Constants
    species: Mapping[str, Species]
    lam_mat: Mapping[str, float]
    lam_ph: float
    lam_cut: float
    rel: float
    ref_mass: float

    def coupling(self, a: str, b: str) -> float:
        """1/(beta*sqrt(m_a m_b)*c^2), the magnetic-potential prefactor."""
        ma, mb = self.species[a].mass, self.species[b].mass
        return 1.0 / (self.beta * math.sqrt(ma * mb) * self.constants.c**2)

    def pair_ratios(self, a: str, b: str, r: float) -> "PairRatios":
        if not r > 0:
            raise DomainError("separation must be positive")
        return PairRatios(
            lam_a=self.lam_mat[a] / r,
            lam_b=self.lam_mat[b] / r,
            lam_ph=self.lam_ph / r,
            lam_cut=self.lam_cut / r,
        )


@dataclass(frozen=True)
class PairRatios:
    """Lengths of one species pair in units of their separation."""

    lam_a: float
    lam_b: float
    lam_ph: float
    lam_cut: float = 0.0

    def __post_init__(self):
        for name in ("lam_a", "lam_b", "lam_ph", "lam_cut"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be non-negative")

    @property
    def coupling(self) -> float:
        """Prefactor 1/(beta sqrt(m_a m_b) c^2), obtained as lam_a*lam_b/lam_ph^2."""
        return self.lam_a * self.lam_b / self.lam_ph**2


def derive_scales(
    species_list: Iterable[Species],
    beta: float,
    reference_mass: float | str | None = None,
    constants: Constants = NATURAL,
) -> ScaleSet:
    """Compute the length-scale hierarchy for ``species_list``.

    ``reference_mass`` is the typical mass entering the UV cutoff length; it may
    be a number, a species label, or None (lightest species).
    """
    if not beta > 0:
        raise DomainError(f"beta must be positive, got {beta}")
    species = {}
    for s in species_list:
        if s.label in species:
            raise DomainError(f"duplicate species label {s.label!r}")
        species[s.label] = s
    if not species:
        raise DomainError("at least one species is required")

    if reference_mass is None:
        m_ref = min(s.mass for s in species.values())
    elif isinstance(reference_mass, str):
        m_ref = species[reference_mass].mass
    else:
        m_ref = float(reference_mass)
    if not m_ref > 0:
        raise DomainError("reference mass must be positive")

    hbar, c = constants.hbar, constants.c
    lam_mat = {k: hbar * math.sqrt(beta / s.mass) for k, s in species.items()}
    return ScaleSet(
        beta=beta,
        constants=constants,
        species=MappingProxyType(species),
        lam_mat=MappingProxyType(lam_mat),
        lam_ph=beta * hbar * c,
        lam_cut=hbar / (m_ref * c),
        rel=beta * m_ref * c**2,
        ref_mass=m_ref,
    )


@dataclass(frozen=True)
class FormFactor:
    """Ultraviolet form factor g(k).

    ``gaussian``: g(k) = exp(-k^2 / (2 k_cut^2)); ``sharp``: indicator of k <= k_cut.
    ``k_cut = inf`` switches the cutoff off (g = 1).
    """

    kind: str = "gaussian"
    k_cut: float = math.inf

    def __post_init__(self):
        if self.kind not in ("gaussian", "sharp"):
            raise DomainError(f"unknown form factor kind {self.kind!r}")
        if not self.k_cut > 0:
            raise DomainError("k_cut must be positive")

    def __call__(self, k):
        return form_factor(self, k)

    @property
    def support(self) -> float:
        """Wave number beyond which g^2 is negligible (or exactly zero)."""
        if self.kind == "sharp":
            return self.k_cut
        return 8.0 * self.k_cut


def form_factor(g: FormFactor, k):
    k = np.asarray(k, dtype=float)
    if np.any(k < 0):
        raise DomainError("form factor needs k >= 0")
    if math.isinf(g.k_cut):
        out = np.ones_like(k)
    elif g.kind == "gaussian":
        out = np.exp(-0.5 * (k / g.k_cut) ** 2)
    else:
        out = np.where(k <= g.k_cut, 1.0, 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class RegimeThresholds:
    """Ratio that stands in for "much less than" when classifying regimes."""

    ratio: float = 10.0


def regime_classify(
    r: float,
    scales: ScaleSet | PairRatios,
    thresholds: RegimeThresholds | None = None,
) -> str:
    """Tag the separation ``r`` as beyond_photon, sub_photon or non_asymptotic.

    With a :class:`PairRatios` argument ``r`` should be 1 (ratios are already in
    units of the separation); the largest matter length is used.
    """
    if thresholds is None:
        thresholds = RegimeThresholds()
    if not r > 0:
        raise DomainError("r must be positive")
    if isinstance(scales, PairRatios):
        lam_mat = max(scales.lam_a, scales.lam_b)
    else:
        lam_mat = max(scales.lam_mat.values())
    lam_ph = scales.lam_ph
    t = thresholds.ratio
    if lam_mat * t <= lam_ph and lam_ph * t <= r:
        return BEYOND_PHOTON
    if lam_mat * t <= r and r * t <= lam_ph:
        return SUB_PHOTON
    return NON_ASYMPTOTIC
