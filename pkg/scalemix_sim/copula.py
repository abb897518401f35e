"""Random scale mixture X(s,t) = R^delta * W(s,t)^(1-delta) and its marginal law.

Variants 1-4 index R by time, variants 5-8 index R by space; within each group the
(R, W) latent classes run (Gaussian, Student-t), (Student-t, Gaussian),
(Gaussian, Gaussian), (Student-t, Student-t).
"""
import logging
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from scalemix_sim.errors import DomainError, NumericalError
from scalemix_sim.fields import (FieldSimulator, FieldSpec, GaussianProcess, StudentTProcess,
                                 log_pareto_values, pareto_values)
from scalemix_sim.kernels import (SeparableSTKernel, SpatialFamily, SpatialKernel, TemporalFamily,
                                  TemporalKernel)
from scalemix_sim.rng import Purpose, stream

logger = logging.getLogger('scalemix_sim')

# |delta - 0.5| below this uses the delta = 0.5 branch of the marginal CDF
HALF_SWITCH = 1e-6
U_CEILING = np.nextafter(1.0, 0.0)


class Variant(IntEnum):
    M1 = 1
    M2 = 2
    M3 = 3
    M4 = 4
    M5 = 5
    M6 = 6
    M7 = 7
    M8 = 8

    @property
    def r_indexed_by_space(self):
        return self >= Variant.M5

    @property
    def r_is_student_t(self):
        return (self - 1) % 4 in (1, 3)

    @property
    def w_is_student_t(self):
        return (self - 1) % 4 in (0, 3)

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        text = str(value).upper()
        if text.startswith("M"):
            text = text[1:]
        try:
            return cls(int(text))
        except ValueError:
            raise DomainError("Unknown model variant " + repr(value)) from None


class Dependence(Enum):
    AD = "AD"
    AI = "AI"


@dataclass(frozen=True)
class DependenceClass:
    in_space: Dependence
    in_time: Dependence
    in_space_time: Dependence
    eta_hint: Optional[float] = None

    def for_mode(self, mode):
        return {"space": self.in_space, "time": self.in_time, "spacetime": self.in_space_time}[mode]


PARAMETER_NAMES = ("delta", "phi", "psi1", "psi2")


@dataclass(frozen=True)
class CopulaSpec:
    variant: Variant
    delta: float
    phi: float
    psi1: float
    psi2: float
    nu: float = 1.0
    temporal_family: TemporalFamily = TemporalFamily.EXPONENTIAL
    spatial_family: SpatialFamily = SpatialFamily.CAUCHY

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if not 0.0 <= self.delta <= 1.0:
            raise DomainError("delta must lie in [0, 1], got " + repr(self.delta))
        for name in ("phi", "psi1", "psi2", "nu"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise DomainError(name + " must be positive, got " + repr(value))

    @property
    def theta(self):
        return np.array([self.delta, self.phi, self.psi1, self.psi2])

    @classmethod
    def from_theta(cls, variant, theta, **kwargs):
        delta, phi, psi1, psi2 = (float(v) for v in theta)
        return cls(variant, delta, phi, psi1, psi2, **kwargs)

    def r_process(self):
        return StudentTProcess(self.nu) if self.variant.r_is_student_t else GaussianProcess()

    def w_process(self):
        return StudentTProcess(self.nu) if self.variant.w_is_student_t else GaussianProcess()

    def r_kernel(self):
        # R(t) keeps the exponential kernel in time; R(s) of variants 5-8 is Cauchy in space
        if self.variant.r_indexed_by_space:
            return SpatialKernel(self.spatial_family, self.phi)
        return TemporalKernel(TemporalFamily.EXPONENTIAL, self.phi)

    def w_kernel(self):
        return SeparableSTKernel(SpatialKernel(self.spatial_family, self.psi1),
                                 TemporalKernel(self.temporal_family, self.psi2))

    def to_dict(self):
        return {"variant": "M%d" % int(self.variant), "delta": self.delta, "phi": self.phi,
                "psi1": self.psi1, "psi2": self.psi2, "nu": self.nu,
                "temporal_family": self.temporal_family.value,
                "spatial_family": self.spatial_family.value}

    @classmethod
    def from_dict(cls, d):
        return cls(Variant.parse(d["variant"]), float(d["delta"]), float(d["phi"]),
                   float(d["psi1"]), float(d["psi2"]), float(d.get("nu", 1.0)),
                   TemporalFamily(d.get("temporal_family", "exponential")),
                   SpatialFamily(d.get("spatial_family", "cauchy")))


def _survival_log(y, delta):
    """Pr(log X > y) for y >= 0: survival of the hypo-exponential delta*E1 + (1-delta)*E2."""
    y = np.asarray(y, dtype=float)
    if delta <= 0.0 or delta >= 1.0:
        return np.exp(-y)
    if abs(delta - 0.5) < HALF_SWITCH:
        return np.exp(-2.0 * y) * (2.0 * y + 1.0)
    a = delta / (2.0 * delta - 1.0) * np.exp(-y / delta)
    b = (1.0 - delta) / (2.0 * delta - 1.0) * np.exp(-y / (1.0 - delta))
    return np.clip(a - b, 0.0, 1.0)


def _check_delta(delta):
    if not 0.0 <= delta <= 1.0:
        raise DomainError("delta must lie in [0, 1], got " + repr(delta))


def marginal_cdf_log(y, delta):
    """G evaluated at x = exp(y), for y = log x >= 0."""
    _check_delta(delta)
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise DomainError("marginal_cdf needs x >= 1")
    result = 1.0 - _survival_log(y, delta)
    return float(result) if result.ndim == 0 else result


def marginal_cdf(x, delta):
    x = np.asarray(x, dtype=float)
    if np.any(np.isnan(x)) or np.any(x < 1.0):
        raise DomainError("marginal_cdf needs x >= 1")
    return marginal_cdf_log(np.log(x), delta)


def marginal_quantile(u, delta, max_iter=200):
    """Inverse of marginal_cdf, solved on log x by Brent's bracketed method."""
    _check_delta(delta)
    if not 0.0 <= u < 1.0:
        raise DomainError("marginal_quantile needs 0 <= u < 1, got " + repr(u))
    if u == 0.0:
        return 1.0
    target = 1.0 - u

    def gap(y):
        return _survival_log(y, delta) - target

    hi = 1.0
    while gap(hi) > 0:
        hi *= 2.0
        if hi > 1e4:
            raise NumericalError("marginal_quantile could not bracket u=" + repr(u))
    try:
        y, info = brentq(gap, 0.0, hi, xtol=1e-14, rtol=8.9e-16, maxiter=max_iter,
                         full_output=True, disp=False)
    except RuntimeError as exc:
        raise NumericalError("marginal_quantile did not converge: " + str(exc)) from exc
    if not info.converged:
        raise NumericalError("marginal_quantile did not converge in %d iterations" % max_iter)
    return float(np.exp(y))


# (in_space, in_time, in_space_time) for delta > 0.5, delta = 0.5, delta < 0.5
_AD_ALL = ("AD", "AD", "AD")
_AI_ALL = ("AI", "AI", "AI")
DEPENDENCE_TABLE = {
    Variant.M1: (("AD", "AI", "AI"), ("AD", "AI", "AI"), _AD_ALL),
    Variant.M2: (_AD_ALL, _AI_ALL, _AI_ALL),
    Variant.M3: (("AD", "AI", "AI"), _AI_ALL, _AI_ALL),
    Variant.M4: (_AD_ALL, _AD_ALL, _AD_ALL),
    Variant.M5: (("AI", "AD", "AI"), ("AI", "AD", "AI"), _AD_ALL),
    Variant.M6: (_AD_ALL, _AI_ALL, _AI_ALL),
    Variant.M7: (("AI", "AD", "AI"), _AI_ALL, _AI_ALL),
    Variant.M8: (_AD_ALL, _AD_ALL, _AD_ALL),
}


def classify_dependence(spec):
    above, at, below = DEPENDENCE_TABLE[spec.variant]
    if spec.delta > 0.5:
        row = above
    elif spec.delta == 0.5:
        row = at
    else:
        row = below
    return DependenceClass(*(Dependence(v) for v in row))


@dataclass
class CopulaSimulator:
    """Pre-factored R and W simulators for one CopulaSpec on one layout."""
    spec: CopulaSpec
    layout: object
    method: str = "kronecker"
    r_sim: FieldSimulator = field(init=False)
    w_sim: FieldSimulator = field(init=False)

    def __post_init__(self):
        self.r_sim = FieldSimulator(FieldSpec(self.spec.r_process(), self.spec.r_kernel(), self.layout),
                                    self.method)
        self.w_sim = FieldSimulator(FieldSpec(self.spec.w_process(), self.spec.w_kernel(), self.layout),
                                    self.method)

    def latent_year(self, seed, year):
        """(R*, W*) latent draws of one year, R* broadcastable to sites x times."""
        r_star = self.r_sim.draw(stream(seed, year, Purpose.R_FIELD))
        w_star = self.w_sim.draw(stream(seed, year, Purpose.W_FIELD))
        return r_star, w_star

    def log_x_year(self, seed, year):
        """log X = delta * log R + (1 - delta) * log W, sites x times."""
        r_star, w_star = self.latent_year(seed, year)
        delta = self.spec.delta
        r_log = log_pareto_values(r_star, self.spec.r_process())
        w_log = log_pareto_values(w_star, self.spec.w_process())
        return delta * r_log + (1.0 - delta) * w_log

    def x_year_direct(self, seed, year):
        """X = R^delta * W^(1-delta) on the Pareto scale, plus the clamped count."""
        r_star, w_star = self.latent_year(seed, year)
        r, r_clamped = pareto_values(r_star, self.spec.r_process())
        w, w_clamped = pareto_values(w_star, self.spec.w_process())
        delta = self.spec.delta
        return (r ** delta) * (w ** (1.0 - delta)), r_clamped + w_clamped

    def uniform_year(self, seed, year):
        u = marginal_cdf_log(self.log_x_year(seed, year), self.spec.delta)
        return np.minimum(np.atleast_2d(u), U_CEILING)


def simulate_copula_x(spec, layout, n_years, seed, log_scale=True):
    """X on the Pareto scale, shaped years x sites x times."""
    sim = CopulaSimulator(spec, layout)
    years = []
    for year in range(n_years):
        if log_scale:
            years.append(np.exp(sim.log_x_year(seed, year)))
        else:
            years.append(sim.x_year_direct(seed, year)[0])
    return np.stack(years)


def simulate_copula(spec, layout, n_years, seed, site_ids=None, simulator=None):
    """Uniform-scale PanelDataset (N x T x n) drawn from the copula; years use fresh substreams."""
    from scalemix_sim.panel import PanelDataset, Scale
    if n_years < 1:
        raise DomainError("n_years must be at least 1")
    sim = simulator or CopulaSimulator(spec, layout)
    values = np.empty((n_years, layout.n_times, layout.n_sites))
    for year in range(n_years):
        values[year] = sim.uniform_year(seed, year).T
    if site_ids is None:
        site_ids = ["S%03d" % (i + 1) for i in range(layout.n_sites)]
    return PanelDataset(site_ids=list(site_ids), coords=layout.sites, values=values,
                        scale=Scale.UNIFORM, days=layout.times)
