"""Run configuration: one JSON document, validated before any compute."""
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional, Tuple

from scalemix_sim.copula import CopulaSpec, Variant
from scalemix_sim.errors import ConfigurationError, ScaleMixError
from scalemix_sim.kernels import SpatialFamily, TemporalFamily
from scalemix_sim.nn.estimator import ParamBox
from scalemix_sim.nn.network import NetworkConfig
from scalemix_sim.tail import GridConfig

logger = logging.getLogger('scalemix_sim')


@dataclass
class CopulaConfig:
    variant: str = "M1"
    delta: float = 0.577
    phi: float = 0.874
    psi1: float = 9.107
    psi2: float = 0.328
    nu: float = 1.0
    temporal_family: str = TemporalFamily.EXPONENTIAL.value
    spatial_family: str = SpatialFamily.CAUCHY.value

    def to_spec(self, variant=None):
        return CopulaSpec(Variant.parse(variant or self.variant), self.delta, self.phi, self.psi1, self.psi2,
                          self.nu, TemporalFamily(self.temporal_family), SpatialFamily(self.spatial_family))

    def spec_kwargs(self):
        return {"nu": self.nu, "temporal_family": TemporalFamily(self.temporal_family),
                "spatial_family": SpatialFamily(self.spatial_family)}


@dataclass
class MarginalConfig:
    p: float = 0.90
    tau: float = 0.90
    # Used when simulating data-scale panels: constant tail and threshold plane b0 + b1*x + b2*y
    sigma: float = 46.34
    xi: float = 0.114
    threshold_plane: Tuple[float, float, float] = (20.0, 0.1, 0.05)


@dataclass
class Budgets:
    K: int = 30000
    B: int = 400
    folds: int = 50
    n_mc: int = 500
    verify_pairs: int = 10 ** 6
    year_block_reps: int = 200
    chi_star_draws: int = 1000
    box_chi_draws: int = 20
    storm_max_points: int = 250000


@dataclass
class LayoutConfig:
    n_years: int = 20
    n_days: int = 92
    # None selects the bundled station file
    stations: Optional[str] = None
    holdout_years: int = 5
    storm_spacing_km: float = 2.0
    storm_days: int = 4


BUDGET_MINIMUMS = {"K": 100, "B": 1, "folds": 1, "n_mc": 1, "verify_pairs": 1000, "year_block_reps": 1,
                   "chi_star_draws": 1, "box_chi_draws": 1, "storm_max_points": 1}


@dataclass
class RunConfig:
    copula: CopulaConfig = field(default_factory=CopulaConfig)
    marginal: MarginalConfig = field(default_factory=MarginalConfig)
    box: ParamBox = field(default_factory=ParamBox)
    grid: GridConfig = field(default_factory=GridConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    budgets: Budgets = field(default_factory=Budgets)
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    candidates: Tuple[str, ...] = ("M1", "M3")
    seed: int = 0
    n_jobs: int = 1
    output_dir: str = "output"

    def validate(self):
        for name, minimum in BUDGET_MINIMUMS.items():
            value = getattr(self.budgets, name)
            if value < minimum:
                raise ConfigurationError("Budget %s=%d is below the minimum %d" % (name, value, minimum))
        p = self.marginal.p
        # p = 0 marks copula-scale data with no censoring
        if not 0.0 <= p < 1.0 or not 0.0 < self.marginal.tau < 1.0:
            raise ConfigurationError("Marginal p must lie in [0, 1) and tau in (0, 1)")
        if any(u < p for u in self.grid.levels):
            raise ConfigurationError("Every chi-grid level must be at or above the threshold probability p=%g" % p)
        if self.seed < 0:
            raise ConfigurationError("seed must be a non-negative integer")
        if self.n_jobs == 0:
            raise ConfigurationError("n_jobs must be non-zero")
        if self.layout.n_years < 1 or self.layout.n_days < 2:
            raise ConfigurationError("Layout needs at least one year of two days")
        if self.layout.storm_spacing_km <= 0 or self.layout.storm_days < 1:
            raise ConfigurationError("Storm lattice spacing and day count must be positive")
        try:
            self.copula.to_spec()
            for variant in self.candidates:
                Variant.parse(variant)
        except (ScaleMixError, ValueError) as exc:
            raise ConfigurationError("Invalid copula configuration: " + str(exc)) from exc
        return self

    def to_dict(self):
        d = {
            "copula": asdict(self.copula),
            "marginal": asdict(self.marginal),
            "box": self.box.to_dict(),
            "grid": self.grid.to_dict(),
            "network": self.network.to_dict(),
            "budgets": asdict(self.budgets),
            "layout": asdict(self.layout),
            "candidates": list(self.candidates),
            "seed": self.seed,
            "n_jobs": self.n_jobs,
            "output_dir": self.output_dir,
        }
        d["marginal"]["threshold_plane"] = list(self.marginal.threshold_plane)
        return d

    def with_overrides(self, **overrides):
        """Copy with top-level fields replaced; None values are ignored."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def _section(cls, values, name):
    if not isinstance(values, dict):
        raise ConfigurationError("Config section %r must be an object" % name)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError("Unknown key(s) in config section %r: %s" % (name, ", ".join(unknown)))
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigurationError("Invalid config section %r: %s" % (name, exc)) from exc


def config_from_dict(d):
    unknown = sorted(set(d) - {f.name for f in fields(RunConfig)})
    if unknown:
        raise ConfigurationError("Unknown config key(s): " + ", ".join(unknown))
    kwargs = {}
    sections = {"copula": CopulaConfig, "marginal": MarginalConfig, "budgets": Budgets, "layout": LayoutConfig,
                "network": NetworkConfig, "box": ParamBox}
    for name, cls in sections.items():
        if name in d:
            kwargs[name] = _section(cls, d[name], name)
    if "grid" in d:
        _section(GridConfig, d["grid"], "grid")
        kwargs["grid"] = GridConfig.from_dict(d["grid"])
    for name in ("seed", "n_jobs", "output_dir"):
        if name in d:
            kwargs[name] = d[name]
    if "candidates" in d:
        kwargs["candidates"] = tuple(d["candidates"])
    if "marginal" in d and "threshold_plane" in d["marginal"]:
        kwargs["marginal"].threshold_plane = tuple(d["marginal"]["threshold_plane"])
    return RunConfig(**kwargs)


def load_config(path=None):
    if path is None:
        return RunConfig().validate()
    try:
        with open(path) as f:
            d = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError("Cannot read config %s: %s" % (path, exc)) from exc
    logger.info("Loaded configuration from %s", path)
    return config_from_dict(d).validate()
