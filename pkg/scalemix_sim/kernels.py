# Correlation functions for the latent Gaussian building blocks
import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial.distance import cdist

from scalemix_sim.errors import DomainError, LayoutError

logger = logging.getLogger('scalemix_sim')


class TemporalFamily(Enum):
    EXPONENTIAL = "exponential"
    SQUARED_EXPONENTIAL = "squared_exponential"


class SpatialFamily(Enum):
    CAUCHY = "cauchy"


def _check_scale(scale):
    if not np.isfinite(scale) or scale <= 0:
        raise DomainError("Kernel scale must be finite and positive, got " + repr(scale))


def _as_lags(values, what):
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("Non-finite " + what + " passed to a correlation function")
    if np.any(arr < 0):
        raise DomainError("Negative " + what + " passed to a correlation function")
    return arr


@dataclass(frozen=True)
class TemporalKernel:
    """Stationary correlation in time; scale is in days."""
    family: TemporalFamily
    scale: float

    def __post_init__(self):
        _check_scale(self.scale)

    def __call__(self, lag):
        k = _as_lags(lag, "lag") / self.scale
        if self.family is TemporalFamily.EXPONENTIAL:
            return np.exp(-k)
        return np.exp(-k * k)

    def to_dict(self):
        return {"family": self.family.value, "scale": float(self.scale)}

    @classmethod
    def from_dict(cls, d):
        return cls(TemporalFamily(d["family"]), float(d["scale"]))


@dataclass(frozen=True)
class SpatialKernel:
    """Isotropic Cauchy correlation [1 + (h/scale)^2]^-1; scale is in km."""
    family: SpatialFamily
    scale: float

    def __post_init__(self):
        _check_scale(self.scale)

    def __call__(self, dist):
        h = _as_lags(dist, "distance") / self.scale
        return 1.0 / (1.0 + h * h)

    def to_dict(self):
        return {"family": self.family.value, "scale": float(self.scale)}

    @classmethod
    def from_dict(cls, d):
        return cls(SpatialFamily(d["family"]), float(d["scale"]))


@dataclass(frozen=True)
class SeparableSTKernel:
    spatial: SpatialKernel
    temporal: TemporalKernel

    def __call__(self, dist, lag):
        return self.spatial(dist) * self.temporal(lag)

    def to_dict(self):
        return {"spatial": self.spatial.to_dict(), "temporal": self.temporal.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(SpatialKernel.from_dict(d["spatial"]), TemporalKernel.from_dict(d["temporal"]))


def temporal_corr(kernel, lag):
    value = kernel(lag)
    return float(value) if np.ndim(value) == 0 else value


def spatial_corr(kernel, dist):
    value = kernel(dist)
    return float(value) if np.ndim(value) == 0 else value


@dataclass
class SpaceTimeCovariance:
    """Kronecker-factored correlation of a field observed at n sites and T times.

    The full matrix is indexed time-outer, site-inner: entry j*n + i is site i at
    time j, so full() == kron(temporal, spatial).
    """
    spatial: np.ndarray
    temporal: np.ndarray

    @property
    def n_sites(self):
        return self.spatial.shape[0]

    @property
    def n_times(self):
        return self.temporal.shape[0]

    def full(self):
        return np.kron(self.temporal, self.spatial)

    def index(self, site, time):
        return time * self.n_sites + site


def check_sites(sites):
    coords = np.atleast_2d(np.asarray(sites, dtype=float))
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise LayoutError("Site coordinates must be an (n, 2) array")
    if not np.all(np.isfinite(coords)):
        raise LayoutError("Site coordinates must be finite")
    if len(np.unique(coords, axis=0)) != len(coords):
        raise LayoutError("Duplicate site coordinates in layout")
    return coords


def check_times(times):
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if t.ndim != 1 or not np.all(np.isfinite(t)):
        raise LayoutError("Times must be a finite 1-d sequence")
    if np.any(np.diff(t) <= 0):
        raise LayoutError("Times must be strictly increasing (duplicate or unordered time)")
    return t


def spatial_matrix(kernel, sites):
    coords = check_sites(sites)
    return kernel(cdist(coords, coords))


def temporal_matrix(kernel, times):
    t = check_times(times)
    return kernel(np.abs(t[:, None] - t[None, :]))


def build_covariance(kernel, sites, times):
    return SpaceTimeCovariance(spatial=spatial_matrix(kernel.spatial, sites),
                               temporal=temporal_matrix(kernel.temporal, times))


def kernel_from_dict(d):
    if "spatial" in d:
        return SeparableSTKernel.from_dict(d)
    if d["family"] in {f.value for f in SpatialFamily}:
        return SpatialKernel.from_dict(d)
    return TemporalKernel.from_dict(d)
