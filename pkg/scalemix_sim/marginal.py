"""Peaks-over-threshold margins.

Step one of the two-step fit: a spatial threshold mu(s) from linear quantile regression
on the site coordinates, and a generalized Pareto tail (sigma, xi) shared by all sites
and fitted by maximizing the independence likelihood of the pooled exceedances. The
censored GPD maps uniform-scale copula values to rainfall and back.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd
from scipy.optimize import minimize

from scalemix_sim.errors import DegenerateError, DomainError, EstimationError, RankError

logger = logging.getLogger('scalemix_sim')

XI_BOUNDS = (-0.5, 1.0)
XI_ZERO = 1e-8
MIN_EXCEEDANCES = 30
INDEPENDENCE_NOTE = "independence likelihood: standard errors underestimate uncertainty"


@dataclass
class MarginalSpec:
    p: float
    mu: np.ndarray
    sigma: float
    xi: float

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        if not 0.0 < self.p < 1.0:
            raise DomainError("Threshold probability p must lie in (0, 1), got " + repr(self.p))
        if not np.isfinite(self.sigma) or self.sigma <= 0:
            raise DomainError("GPD scale sigma must be positive, got " + repr(self.sigma))
        if not np.isfinite(self.xi):
            raise DomainError("GPD shape xi must be finite")

    def site_mu(self, site=None):
        return self.mu if site is None else self.mu[site]

    def upper_endpoint(self, site=None):
        if self.xi >= 0:
            return np.full_like(np.atleast_1d(self.site_mu(site)), np.inf, dtype=float)
        return self.site_mu(site) - self.sigma / self.xi

    def to_dict(self):
        return {"p": self.p, "mu": [float(m) for m in self.mu], "sigma": self.sigma, "xi": self.xi}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["p"]), np.asarray(d["mu"], dtype=float), float(d["sigma"]), float(d["xi"]))


def _scalar_or_array(values):
    return float(values) if np.ndim(values) == 0 else values


def uniform_to_data(u, spec, site=None):
    """Censored-GPD quantile: mu for u <= p, the GPD tail above.

    With site=None the threshold vector broadcasts along the last axis of u.
    """
    u = np.asarray(u, dtype=float)
    if np.any(np.isnan(u)) or np.any(u < 0.0):
        raise DomainError("uniform_to_data needs u in (0, 1)")
    if np.any(u >= 1.0):
        raise DomainError("uniform_to_data needs u < 1")
    mu = spec.site_mu(site)
    q = np.clip((u - spec.p) / (1.0 - spec.p), 0.0, None)
    log_survival = np.log1p(-q)
    if abs(spec.xi) < XI_ZERO:
        tail = -spec.sigma * log_survival
    else:
        tail = spec.sigma * np.expm1(-spec.xi * log_survival) / spec.xi
    y = np.where(u <= spec.p, 0.0, tail) + mu
    return _scalar_or_array(y)


def data_to_uniform(y, spec, site=None):
    """Censored-GPD CDF: p for y <= mu, p + (1 - p) * GPD CDF above."""
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise DomainError("data_to_uniform needs finite values")
    z = np.clip((y - spec.site_mu(site)) / spec.sigma, 0.0, None)
    if abs(spec.xi) < XI_ZERO:
        gpd_cdf = -np.expm1(-z)
    else:
        t = 1.0 + spec.xi * z
        if np.any(t < 0.0):
            raise DomainError("Value beyond the GPD upper endpoint mu - sigma/xi")
        with np.errstate(divide="ignore"):
            gpd_cdf = -np.expm1(-np.log(t) / spec.xi)
    u = spec.p + (1.0 - spec.p) * gpd_cdf
    return _scalar_or_array(u)


def panel_to_data(panel, spec):
    """Data-scale copy of a uniform-scale PanelDataset; missing cells stay missing."""
    from scalemix_sim.panel import Scale
    values = np.full_like(panel.values, np.nan)
    observed = ~panel.mask
    sites = np.broadcast_to(np.arange(panel.n_sites), panel.values.shape)[observed]
    values[observed] = uniform_to_data(panel.values[observed], spec, sites)
    return panel.with_values(values, Scale.DATA)


def panel_to_uniform(panel, spec):
    from scalemix_sim.panel import Scale
    values = np.full_like(panel.values, np.nan)
    observed = ~panel.mask
    sites = np.broadcast_to(np.arange(panel.n_sites), panel.values.shape)[observed]
    values[observed] = data_to_uniform(panel.values[observed], spec, sites)
    return panel.with_values(values, Scale.UNIFORM)


@dataclass
class QuantileRegressionFit:
    coefficients: np.ndarray
    tau: float
    n_obs: int = 0
    iterations: int = 0
    loss: float = 0.0

    def predict(self, coords):
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        if len(self.coefficients) == 1:
            return np.full(coords.shape[0], self.coefficients[0])
        return self.coefficients[0] + coords @ self.coefficients[1:]

    def to_dict(self):
        return {"coefficients": [float(c) for c in self.coefficients], "tau": self.tau,
                "n_obs": self.n_obs, "iterations": self.iterations, "loss": self.loss}


def pinball_loss(residuals, tau):
    residuals = np.asarray(residuals, dtype=float)
    return float(np.sum(residuals * (tau - (residuals < 0))))


def fit_quantile_regression(design, y, tau, tol=1e-8, max_iter=500, eps=1e-10):
    """Linear quantile regression by iteratively reweighted least squares from the OLS start."""
    beta = np.linalg.lstsq(design, y, rcond=None)[0]
    loss = pinball_loss(y - design @ beta, tau)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        if loss == 0.0:
            break
        residuals = y - design @ beta
        weights = np.where(residuals < 0, 1.0 - tau, tau) / np.maximum(np.abs(residuals), eps)
        weighted = design * weights[:, None]
        candidate = np.linalg.solve(design.T @ weighted, weighted.T @ y)
        new_loss = pinball_loss(y - design @ candidate, tau)
        change = abs(loss - new_loss) / max(loss, np.finfo(float).tiny)
        if new_loss <= loss:
            beta, loss = candidate, new_loss
        if change < tol:
            break
    else:
        logger.warning("Quantile regression stopped after %d iterations", max_iter)
    return beta, loss, iterations


def fit_threshold_qr(data, sites=None, tau=0.90):
    """Threshold surface mu(s) = b0 + b1*x + b2*y at quantile level tau from all observed values."""
    if not 0.0 < tau < 1.0:
        raise DomainError("Quantile level tau must lie in (0, 1), got " + repr(tau))
    sites = np.arange(data.n_sites) if sites is None else np.asarray(sites, dtype=int)
    values = data.values[:, :, sites]
    observed = ~data.mask[:, :, sites]
    y = values[observed]
    if y.size == 0:
        raise DomainError("No observed values for quantile regression")

    if len(sites) == 1:
        coefficients = np.array([np.quantile(y, tau)])
        fit = QuantileRegressionFit(coefficients, tau, n_obs=int(y.size))
        fit.loss = pinball_loss(y - coefficients[0], tau)
        return fit

    coords = data.coords[sites]
    site_design = np.column_stack([np.ones(len(sites)), coords])
    if np.linalg.matrix_rank(site_design) < 3:
        raise RankError("Site coordinates are collinear; the threshold plane is not identifiable")
    site_of_obs = np.broadcast_to(np.arange(len(sites)), values.shape)[observed]
    design = site_design[site_of_obs]
    beta, loss, iterations = fit_quantile_regression(design, y, tau)
    logger.info("Threshold quantile regression (tau=%.3f) on %d values: coefficients %s after %d iterations",
                tau, y.size, np.array2string(beta, precision=4), iterations)
    return QuantileRegressionFit(beta, tau, n_obs=int(y.size), iterations=iterations, loss=loss)


def write_threshold_table(path, site_ids, coords, mu):
    pd.DataFrame({"site_id": list(site_ids), "x_km": coords[:, 0], "y_km": coords[:, 1],
                  "mu": mu}).to_csv(path, index=False, float_format="%.17g")


def exceedances(data, mu):
    """Pooled positive excesses y - mu(s) over all observed cells."""
    excess = data.values - np.asarray(mu)[None, None, :]
    excess = excess[~data.mask]
    return excess[excess > 0]


def _gpd_nll(params, x):
    """Negative GPD log-likelihood and its gradient in (sigma, xi)."""
    sigma, xi = params
    n = x.size
    if sigma <= 0:
        return 1e10, np.zeros(2)
    a = x / sigma
    t = 1.0 + xi * a
    if np.any(t <= 0):
        return 1e10 * (1.0 + float(np.max(-t))), np.zeros(2)
    grad_sigma = (n - (1.0 + xi) * np.sum(a / t)) / sigma
    if abs(xi) < 1e-6:
        value = n * np.log(sigma) + np.sum(a) + xi * np.sum(a - a * a / 2.0) \
            + xi * xi * np.sum(a ** 3 / 3.0 - a * a / 2.0)
        grad_xi = np.sum(a - a * a / 2.0) + xi * np.sum(2.0 * a ** 3 / 3.0 - a * a)
    else:
        log_t = np.log1p(xi * a)
        value = n * np.log(sigma) + (1.0 + 1.0 / xi) * np.sum(log_t)
        grad_xi = -np.sum(log_t - xi * a / t) / (xi * xi) + np.sum(a / t)
    return float(value), np.array([grad_sigma, grad_xi])


def _fd_hessian(x, params, h=1e-5):
    hessian = np.empty((2, 2))
    for j in range(2):
        step = np.zeros(2)
        step[j] = h * max(1.0, abs(params[j]))
        hessian[:, j] = (_gpd_nll(params + step, x)[1] - _gpd_nll(params - step, x)[1]) / (2.0 * step[j])
    return 0.5 * (hessian + hessian.T)


@dataclass
class GPDFit:
    sigma: float
    xi: float
    se_sigma: float
    se_xi: float
    n: int
    loglik: float
    gradient_norm: float
    iterations: int
    boundary: bool = False
    note: str = INDEPENDENCE_NOTE

    def to_dict(self):
        return {"sigma": self.sigma, "xi": self.xi, "se_sigma": self.se_sigma, "se_xi": self.se_xi,
                "n": self.n, "loglik": self.loglik, "gradient_norm": self.gradient_norm,
                "iterations": self.iterations, "boundary": self.boundary, "note": self.note}


def fit_gpd_mle(exceedances, max_iter=500):
    """(sigma, xi) maximizing the GPD likelihood of positive excesses, with inverse-Hessian SEs.

    The excesses are divided by their mean before optimizing, so the fit is exactly
    scale-equivariant; xi is boxed to (-0.5, 1).
    """
    x = np.asarray(exceedances, dtype=float).ravel()
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise DomainError("Exceedances must be finite and positive")
    if x.size < MIN_EXCEEDANCES:
        raise EstimationError("GPD fit needs at least %d exceedances, got %d" % (MIN_EXCEEDANCES, x.size))
    if np.all(x == x[0]):
        raise DegenerateError("All exceedances are equal; the GPD likelihood has no maximum")

    scale = float(np.mean(x))
    z = x / scale
    m, v = 1.0, float(np.var(z))
    xi0 = float(np.clip(0.5 * (1.0 - m * m / v), XI_BOUNDS[0] + 0.05, XI_BOUNDS[1] - 0.05))
    sigma0 = 0.5 * m * (m * m / v + 1.0)
    if xi0 < 0:
        sigma0 = max(sigma0, -1.1 * xi0 * z.max())
    result = minimize(_gpd_nll, np.array([sigma0, xi0]), args=(z,), jac=True, method="L-BFGS-B",
                      bounds=[(1e-12, None), XI_BOUNDS],
                      options={"maxiter": max_iter, "ftol": 1e-15, "gtol": 1e-12})
    if not result.success and result.nit >= max_iter:
        raise EstimationError("GPD likelihood did not converge in %d iterations" % max_iter)

    params = np.asarray(result.x, dtype=float)
    boundary = min(abs(params[1] - XI_BOUNDS[0]), abs(params[1] - XI_BOUNDS[1])) < 1e-6
    value, grad = _gpd_nll(params, z)
    if not boundary:
        for _ in range(20):
            if np.linalg.norm(grad) / z.size < 1e-12:
                break
            step = np.linalg.solve(_fd_hessian(z, params), grad)
            for _ in range(30):
                candidate = params - step
                candidate[1] = np.clip(candidate[1], *XI_BOUNDS)
                cand_value, cand_grad = _gpd_nll(candidate, z)
                if candidate[0] > 0 and cand_value <= value:
                    params, value, grad = candidate, cand_value, cand_grad
                    break
                step = step / 2.0
            else:
                break

    gradient_norm = float(np.linalg.norm(grad) / z.size)
    if not boundary and gradient_norm > 1e-4:
        raise EstimationError("GPD likelihood stopped away from a stationary point (|grad|=%g)" % gradient_norm)
    try:
        covariance = np.linalg.inv(_fd_hessian(z, params))
        se = np.sqrt(np.clip(np.diag(covariance), 0.0, None))
    except np.linalg.LinAlgError:
        se = np.array([np.nan, np.nan])
    if boundary:
        logger.warning("GPD shape estimate %.4f sits on the search boundary %s", params[1], XI_BOUNDS)

    fit = GPDFit(sigma=float(params[0] * scale), xi=float(params[1]), se_sigma=float(se[0] * scale),
                 se_xi=float(se[1]), n=int(x.size),
                 loglik=float(-value - x.size * np.log(scale)), gradient_norm=gradient_norm,
                 iterations=int(result.nit), boundary=bool(boundary))
    logger.debug("GPD fit on %d exceedances: sigma=%.4f (%.4f) xi=%.4f (%.4f)",
                 fit.n, fit.sigma, fit.se_sigma, fit.xi, fit.se_xi)
    return fit


@dataclass
class SiteGPDFit:
    site_id: str
    n_exceedances: int
    fit: Optional[GPDFit] = None
    reason: str = ""

    def intervals(self, z=1.959963984540054):
        if self.fit is None:
            return None
        return {"sigma": (self.fit.sigma - z * self.fit.se_sigma, self.fit.sigma + z * self.fit.se_sigma),
                "xi": (self.fit.xi - z * self.fit.se_xi, self.fit.xi + z * self.fit.se_xi)}

    def to_dict(self):
        d = {"site_id": self.site_id, "n_exceedances": self.n_exceedances, "reason": self.reason}
        if self.fit is not None:
            d.update(self.fit.to_dict())
            d["ci95"] = {k: list(v) for k, v in self.intervals().items()}
        return d


def fit_gpd_by_site(data, mu):
    """Site-wise GPD fits with 95% Wald intervals, for checking that (sigma, xi) is constant."""
    fits = []
    for i, site_id in enumerate(data.site_ids):
        series = data.values[:, :, i][~data.mask[:, :, i]] - mu[i]
        excess = series[series > 0]
        try:
            fits.append(SiteGPDFit(site_id, int(excess.size), fit_gpd_mle(excess)))
        except (EstimationError, DomainError) as exc:
            logger.info("Site %s: no GPD fit (%s)", site_id, exc)
            fits.append(SiteGPDFit(site_id, int(excess.size), reason=str(exc)))
    return fits


@dataclass
class MarginalFit:
    spec: MarginalSpec
    threshold: QuantileRegressionFit
    gpd: GPDFit
    site_fits: List[SiteGPDFit] = field(default_factory=list)

    def to_dict(self):
        return {"spec": self.spec.to_dict(), "threshold": self.threshold.to_dict(),
                "gpd": self.gpd.to_dict(), "site_fits": [f.to_dict() for f in self.site_fits]}


def fit_marginal(data, p=0.90, tau=None, per_site=False):
    """Threshold plane at level tau (default p) followed by the pooled GPD fit."""
    threshold = fit_threshold_qr(data, tau=p if tau is None else tau)
    mu = threshold.predict(data.coords)
    gpd = fit_gpd_mle(exceedances(data, mu))
    logger.info("Marginal fit: sigma=%.4f xi=%.4f from %d exceedances", gpd.sigma, gpd.xi, gpd.n)
    site_fits = fit_gpd_by_site(data, mu) if per_site else []
    return MarginalFit(MarginalSpec(p, mu, gpd.sigma, gpd.xi), threshold, gpd, site_fits)
