"""INI-style experiment configuration.

Example::

    [run]
    seed = 12345
    samples = 100000
    slices = 64

    [ratios]            ; lengths in units of the pair separation
    lam_a = 1e-3
    lam_b = 1e-3
    lam_ph = 100

    [grid]              ; separations in units of lam_ph
    r_over_lph = 1e-3, 1e-2, 1e-1

    [quad]
    n_polar = 32

    [form_factor]
    kind = gaussian
    k_cut = 8

Physical inputs may replace ``[ratios]``: a ``[physical]`` section with
``beta``, optional ``hbar``/``c``, ``pair = a, b`` and ``r``, plus one
``[species.<label>]`` section per species with ``mass`` and ``charge``.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

from ..potentials import QuadSpec
from ..scales import Constants, DomainError, FormFactor, Species, derive_scales

EXPERIMENTS = (
    "kernels-suite",
    "bridge-suite",
    "wc2",
    "wm2",
    "cancellation-scan",
    "constant-A",
    "normal-order",
)


class ConfigError(ValueError):
    """Invalid or unparseable configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int = 0
    samples: int = 10000
    slices: int = 64
    lam_a: float = 1e-3
    lam_b: float = 1e-3
    lam_ph: float = 100.0
    r_grid: tuple[float, ...] = ()
    threshold_ratio: float = 10.0
    chunk: int = 2048
    form_factor: FormFactor = FormFactor("gaussian", 8.0)
    quad: QuadSpec = QuadSpec()
    species: tuple[Species, ...] = ()
    beta: float = 1.0
    out_dir: str = "results"
    options: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if self.samples < 1:
            raise ConfigError("samples must be >= 1")
        if self.slices < 2:
            raise ConfigError("slices must be >= 2")
        if self.chunk < 1:
            raise ConfigError("chunk must be >= 1")
        if min(self.lam_a, self.lam_b) < 0 or not self.lam_ph > 0:
            raise ConfigError("lam_a, lam_b must be >= 0 and lam_ph > 0")
        g = self.r_grid
        if any(not v > 0 for v in g) or any(b <= a for a, b in zip(g, g[1:])):
            raise ConfigError("r grid must be strictly positive and strictly increasing")

    def option(self, key: str, default=None):
        return dict(self.options).get(key, default)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("out_dir")
        d["form_factor"] = {"kind": self.form_factor.kind, "k_cut": _num(self.form_factor.k_cut)}
        d["species"] = [dataclasses.asdict(s) for s in self.species]
        d["options"] = dict(self.options)
        d["r_grid"] = list(self.r_grid)
        return d

    def fingerprint(self) -> str:
        """Hash of the canonical (key-sorted) configuration, output directory excluded."""
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        try:
            return dataclasses.replace(self, **kw)
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc


def _num(v: float):
    return "inf" if math.isinf(v) else v


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(";", ",").split(",") if t.strip())


_QUAD_TYPES = {f.name: f.type for f in dataclasses.fields(QuadSpec)}


def _quad_from(section) -> QuadSpec:
    kw = {}
    for key, raw in section.items():
        if key not in _QUAD_TYPES:
            raise ConfigError(f"unknown [quad] key {key!r}")
        t = str(_QUAD_TYPES[key])
        if "bool" in t:
            kw[key] = section.getboolean(key)
        elif "int" in t and "float" not in t:
            kw[key] = int(raw)
        elif raw.strip().lower() == "none":
            kw[key] = None
        else:
            kw[key] = float(raw)
    return QuadSpec(**kw)


def parse_config(text: str, experiment: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    kw: dict = {"experiment": experiment}
    try:
        if cp.has_section("run"):
            run = cp["run"]
            for key in ("seed", "samples", "slices", "chunk"):
                if key in run:
                    kw[key] = int(run[key])
            if "out" in run:
                kw["out_dir"] = run["out"]
            if "threshold_ratio" in run:
                kw["threshold_ratio"] = float(run["threshold_ratio"])
        if cp.has_section("ratios") and cp.has_section("physical"):
            raise ConfigError("give either [ratios] or [physical], not both")
        if cp.has_section("ratios"):
            sec = cp["ratios"]
            for key in ("lam_a", "lam_b", "lam_ph"):
                if key in sec:
                    kw[key] = float(sec[key])
        species = []
        for name in cp.sections():
            if name.startswith("species."):
                sec = cp[name]
                species.append(Species(name.split(".", 1)[1], float(sec["mass"]), float(sec.get("charge", "1"))))
        kw["species"] = tuple(species)
        if cp.has_section("physical"):
            ph = cp["physical"]
            beta = float(ph["beta"])
            consts = Constants(float(ph.get("hbar", "1")), float(ph.get("c", "1")), 1.0)
            ref = ph.get("reference_mass")
            sc = derive_scales(species, beta, ref if ref is None or ref in {s.label for s in species} else float(ref), consts)
            a, b = [t.strip() for t in ph["pair"].split(",")]
            ratios = sc.pair_ratios(a, b, float(ph["r"]))
            kw.update(lam_a=ratios.lam_a, lam_b=ratios.lam_b, lam_ph=ratios.lam_ph, beta=beta)
        if cp.has_section("grid"):
            kw["r_grid"] = _floats(cp["grid"]["r_over_lph"])
        if cp.has_section("form_factor"):
            ff = cp["form_factor"]
            kw["form_factor"] = FormFactor(ff.get("kind", "gaussian"), float(ff.get("k_cut", "inf")))
        if cp.has_section("quad"):
            kw["quad"] = _quad_from(cp["quad"])
        if cp.has_section(experiment):
            kw["options"] = tuple(sorted(cp[experiment].items()))
        known = {"run", "ratios", "physical", "grid", "form_factor", "quad", *EXPERIMENTS}
        unknown = [s for s in cp.sections() if s not in known and not s.startswith("species.")]
        if unknown:
            raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
        return ExperimentConfig(**kw)
    except ConfigError:
        raise
    except (KeyError, ValueError, DomainError, TypeError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path: str | Path, experiment: str) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, experiment)
