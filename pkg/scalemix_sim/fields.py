"""Gaussian and Student-t random fields on a sites x times layout.

Fields are simulated exactly through the Cholesky factors of the separable correlation:
for Sigma = kron(T, S) the factor is kron(chol T, chol S), so a field is
L_T @ Z @ L_S.T for a T x n matrix Z of standard normals and never needs the
(nT) x (nT) matrix.
"""
import abc
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import stats

from scalemix_sim import kernels
from scalemix_sim.errors import DomainError, NumericalError
from scalemix_sim.kernels import SeparableSTKernel, SpatialKernel, TemporalKernel
from scalemix_sim.rng import stream

logger = logging.getLogger('scalemix_sim')

JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
# Smallest survival probability kept by the Pareto transform, 1 - F >= 2^-53
PARETO_SF_FLOOR = 2.0 ** -53


class LatentProcess(abc.ABC):
    """Marginal law of a unit-variance latent field (R* or W*)."""

    # Asymptotic tail dependence class of the field after the Pareto transform
    dependence = None

    @abc.abstractmethod
    def mixing_scale(self, rng):
        """Scalar that multiplies the whole Gaussian field of one replicate."""

    @abc.abstractmethod
    def cdf(self, v):
        return

    @abc.abstractmethod
    def sf(self, v):
        return

    @abc.abstractmethod
    def logsf(self, v):
        return

    @abc.abstractmethod
    def to_dict(self):
        return


class GaussianProcess(LatentProcess):
    dependence = "AI"

    def mixing_scale(self, rng):
        return 1.0

    def cdf(self, v):
        return stats.norm.cdf(v)

    def sf(self, v):
        return stats.norm.sf(v)

    def logsf(self, v):
        return stats.norm.logsf(v)

    def to_dict(self):
        return {"class": "gaussian"}

    def __eq__(self, other):
        return isinstance(other, GaussianProcess)

    def __hash__(self):
        return hash("gaussian")

    def __repr__(self):
        return "GaussianProcess()"


class StudentTProcess(LatentProcess):
    """Gaussian field divided by sqrt(g), one g ~ Gamma(nu/2, rate nu/2) per replicate."""
    dependence = "AD"

    def __init__(self, nu=1.0):
        if not np.isfinite(nu) or nu <= 0:
            raise DomainError("Student-t degrees of freedom must be positive, got " + repr(nu))
        self.nu = float(nu)

    def mixing_scale(self, rng):
        g = rng.gamma(shape=self.nu / 2.0, scale=2.0 / self.nu)
        return 1.0 / np.sqrt(g)

    def cdf(self, v):
        return stats.t.cdf(v, self.nu)

    def sf(self, v):
        return stats.t.sf(v, self.nu)

    def logsf(self, v):
        return stats.t.logsf(v, self.nu)

    def to_dict(self):
        return {"class": "student_t", "nu": self.nu}

    def __eq__(self, other):
        return isinstance(other, StudentTProcess) and other.nu == self.nu

    def __hash__(self):
        return hash(("student_t", self.nu))

    def __repr__(self):
        return "StudentTProcess(nu=" + repr(self.nu) + ")"


def process_from_dict(d):
    if d["class"] == "gaussian":
        return GaussianProcess()
    if d["class"] == "student_t":
        return StudentTProcess(d.get("nu", 1.0))
    raise DomainError("Unknown process class " + repr(d["class"]))


@dataclass(frozen=True)
class Layout:
    """Observation layout: site coordinates (km) and integer day indices."""
    sites: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sites", kernels.check_sites(self.sites))
        object.__setattr__(self, "times", kernels.check_times(self.times))

    @property
    def n_sites(self):
        return self.sites.shape[0]

    @property
    def n_times(self):
        return self.times.shape[0]

    @classmethod
    def regular(cls, sites, n_times):
        return cls(np.asarray(sites, dtype=float), np.arange(n_times, dtype=float))


@dataclass(frozen=True)
class FieldSpec:
    """A latent process with its correlation kernel on a layout.

    A TemporalKernel gives a 1 x T field (R(t)), a SpatialKernel an n x 1 field (R(s)),
    and a SeparableSTKernel an n x T field (W(s,t)).
    """
    process: LatentProcess
    kernel: object
    layout: Layout

    @property
    def shape(self):
        if isinstance(self.kernel, TemporalKernel):
            return 1, self.layout.n_times
        if isinstance(self.kernel, SpatialKernel):
            return self.layout.n_sites, 1
        return self.layout.n_sites, self.layout.n_times

    def factors(self):
        """(spatial, temporal) correlation factors, 1 x 1 for an absent axis."""
        one = np.ones((1, 1))
        if isinstance(self.kernel, TemporalKernel):
            return one, kernels.temporal_matrix(self.kernel, self.layout.times)
        if isinstance(self.kernel, SpatialKernel):
            return kernels.spatial_matrix(self.kernel, self.layout.sites), one
        if isinstance(self.kernel, SeparableSTKernel):
            cov = kernels.build_covariance(self.kernel, self.layout.sites, self.layout.times)
            return cov.spatial, cov.temporal
        raise DomainError("Unsupported kernel " + repr(self.kernel))


@dataclass
class FieldSample:
    values: np.ndarray
    rng_seed: int
    clamped: int = field(default=0)

    def as_panel(self, layout, site_ids=None, scale=None):
        """One-year PanelDataset (T x n) holding these values."""
        from scalemix_sim.panel import PanelDataset, Scale
        n, t = self.values.shape
        if site_ids is None:
            site_ids = ["S%03d" % (i + 1) for i in range(n)]
        return PanelDataset(site_ids=list(site_ids), coords=layout.sites,
                            values=self.values.T[None, :, :].copy(),
                            scale=scale or Scale.DATA)


def cholesky_jittered(matrix, name):
    """Lower Cholesky factor, escalating diagonal jitter up to 1e-6 before giving up."""
    eye = np.eye(matrix.shape[0])
    for jitter in JITTER_LADDER:
        try:
            factor = scipy.linalg.cholesky(matrix + jitter * eye, lower=True)
        except np.linalg.LinAlgError:
            continue
        if jitter > 0:
            logger.debug("Cholesky of %s factor needed jitter %g", name, jitter)
        return factor
    raise NumericalError("Cholesky factorization of the " + name + " correlation factor failed "
                         "after jitter " + repr(JITTER_LADDER[-1]))


class FieldSimulator:
    """Pre-factors a FieldSpec so that many replicates share one decomposition."""

    def __init__(self, spec, method="kronecker"):
        self.spec = spec
        self.method = method
        spatial, temporal = spec.factors()
        if method == "kronecker":
            self.chol_spatial = cholesky_jittered(spatial, "spatial")
            self.chol_temporal = cholesky_jittered(temporal, "temporal")
        elif method == "dense":
            self.chol_full = cholesky_jittered(np.kron(temporal, spatial), "full space-time")
        else:
            raise DomainError("Unknown simulation method " + repr(method))

    def gaussian(self, rng):
        n, t = self.spec.shape
        z = rng.standard_normal((t, n))
        if self.method == "kronecker":
            x = self.chol_temporal @ z @ self.chol_spatial.T
        else:
            x = (self.chol_full @ z.reshape(-1)).reshape(t, n)
        return x.T

    def draw(self, rng):
        """One replicate of the latent field, shaped sites x times."""
        x = self.gaussian(rng)
        return x * self.spec.process.mixing_scale(rng)


def simulate_gaussian(spec, seed, method="kronecker"):
    rng = stream(seed)
    return FieldSample(values=FieldSimulator(spec, method).gaussian(rng), rng_seed=seed)


def simulate_student_t(spec, seed, method="kronecker"):
    if not isinstance(spec.process, StudentTProcess):
        raise DomainError("simulate_student_t needs a Student-t FieldSpec")
    rng = stream(seed)
    return FieldSample(values=FieldSimulator(spec, method).draw(rng), rng_seed=seed)


def simulate_field(spec, seed, method="kronecker"):
    rng = stream(seed)
    return FieldSample(values=FieldSimulator(spec, method).draw(rng), rng_seed=seed)


def pareto_values(values, process):
    """1 / (1 - F(v)) with the survival probability floored at 2^-53.

    Returns the transformed array and the number of clamped entries.
    """
    v = np.asarray(values, dtype=float)
    if np.any(np.isnan(v)):
        raise DomainError("NaN value passed to the standard Pareto transform")
    sf = process.sf(v)
    clamped = sf < PARETO_SF_FLOOR
    n_clamped = int(np.count_nonzero(clamped))
    if n_clamped:
        logger.warning("Pareto transform clamped %d value(s) at 2^53", n_clamped)
    return 1.0 / np.maximum(sf, PARETO_SF_FLOOR), n_clamped


def log_pareto_values(values, process):
    """log of the standard Pareto transform, -log(1 - F(v)): standard exponential margins."""
    v = np.asarray(values, dtype=float)
    if np.any(np.isnan(v)):
        raise DomainError("NaN value passed to the log-Pareto transform")
    return -process.logsf(v)


def to_standard_pareto(sample, process):
    values, n_clamped = pareto_values(sample.values, process)
    return FieldSample(values=values, rng_seed=sample.rng_seed, clamped=sample.clamped + n_clamped)
