"""Empirical tail dependence: pairwise chi(u), binned chi grids, and the chi* neighbourhood check.

All statistics pair observations within a year only; years are independent blocks.
Exceedance thresholds are per-site empirical quantiles pooled over years (linear
interpolation of order statistics).
"""
import json
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.spatial.distance import cdist

from scalemix_sim.errors import ConfigurationError, DomainError, EmptyBinError
from scalemix_sim.rng import Purpose, stream

logger = logging.getLogger('scalemix_sim')

DEFAULT_LEVELS = (0.90, 0.95, 0.99)
MIN_SITE_OBSERVATIONS = 20


@dataclass(frozen=True)
class GridConfig:
    levels: Tuple[float, ...] = DEFAULT_LEVELS
    n_dist_bins: int = 8
    lags: Tuple[int, ...] = tuple(range(8))
    # Top distance edge in km; None means half the largest inter-site distance
    max_distance: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(float(u) for u in self.levels))
        object.__setattr__(self, "lags", tuple(int(k) for k in self.lags))
        if not self.levels or any(not 0.0 < u < 1.0 for u in self.levels):
            raise ConfigurationError("Grid levels must lie in (0, 1)")
        if self.n_dist_bins < 1:
            raise ConfigurationError("Grid needs at least one distance bin")
        if not self.lags or any(k < 0 for k in self.lags) or np.any(np.diff(self.lags) <= 0):
            raise ConfigurationError("Grid lags must be non-negative and strictly increasing")
        if self.max_distance is not None and self.max_distance <= 0:
            raise ConfigurationError("max_distance must be positive")

    def edges(self, distances):
        top = self.max_distance
        if top is None:
            top = 0.5 * float(np.max(distances))
        if top <= 0:
            raise ConfigurationError("Distance grid needs at least two distinct sites")
        return np.linspace(0.0, top, self.n_dist_bins + 1)

    def to_dict(self):
        return {"levels": list(self.levels), "n_dist_bins": self.n_dist_bins, "lags": list(self.lags),
                "max_distance": self.max_distance}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d.get("levels", DEFAULT_LEVELS)), int(d.get("n_dist_bins", 8)),
                   tuple(d.get("lags", range(8))), d.get("max_distance"))


def site_quantiles(data, u):
    counts = np.sum(~data.mask, axis=(0, 1))
    if np.any(counts < MIN_SITE_OBSERVATIONS):
        raise DomainError("Site %s has fewer than %d observations"
                          % (data.site_ids[int(np.argmin(counts))], MIN_SITE_OBSERVATIONS))
    flat = data.values.reshape(-1, data.n_sites)
    if not data.mask.any():
        return np.quantile(flat, u, axis=0)
    return np.nanquantile(flat, u, axis=0)


def _exceedances(data, u):
    """(exceeds & observed, observed) indicator cubes at level u."""
    valid = ~data.mask
    with np.errstate(invalid="ignore"):
        exceeds = (data.values > site_quantiles(data, u)[None, None, :]) & valid
    return exceeds, valid


@dataclass
class PairChi:
    pair: Tuple[int, int]
    lag: int
    u: float
    chi_hat: float
    n_effective: int
    clipped: bool = False


def empirical_chi_pair(data, pair, lag, u):
    """chi(u) for site pair (i, j): joint exceedances of (i at t, j at t + lag) over valid time pairs."""
    if not 0.0 < u < 1.0:
        raise DomainError("u must lie in (0, 1), got " + repr(u))
    i, j = pair
    if lag < 0 or lag >= data.n_days:
        raise EmptyBinError("No time pairs at lag %d within %d-day years" % (lag, data.n_days))
    exceeds, valid = _exceedances(data, u)
    end = data.n_days - lag
    joint = np.count_nonzero(exceeds[:, :end, i] & exceeds[:, lag:, j])
    n_valid = np.count_nonzero(valid[:, :end, i] & valid[:, lag:, j])
    if n_valid == 0:
        raise EmptyBinError("No valid time pairs for sites %d, %d at lag %d" % (i, j, lag))
    chi = joint / (n_valid * (1.0 - u))
    return PairChi((i, j), lag, u, float(min(chi, 1.0)), int(n_valid), bool(chi > 1.0))


def pair_chi_matrix(exceeds, valid, lag, u):
    """n x n matrix of chi(u) for (i at t, j at t + lag); NaN where no valid pairs."""
    n_years, n_days, n_sites = exceeds.shape
    if lag >= n_days:
        return np.full((n_sites, n_sites), np.nan)
    end = n_days - lag
    a = exceeds[:, :end, :].reshape(-1, n_sites).astype(float)
    b = exceeds[:, lag:, :].reshape(-1, n_sites).astype(float)
    va = valid[:, :end, :].reshape(-1, n_sites).astype(float)
    vb = valid[:, lag:, :].reshape(-1, n_sites).astype(float)
    joint = a.T @ b
    n_valid = va.T @ vb
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n_valid > 0, joint / (n_valid * (1.0 - u)), np.nan)


@dataclass
class ChiGrid:
    values: np.ndarray
    u_levels: Tuple[float, ...]
    dist_edges: np.ndarray
    lag_values: Tuple[int, ...]
    n_pairs: np.ndarray
    clipped: int = 0

    @property
    def shape(self):
        return self.values.shape

    def tensor(self, mask_channel=False):
        """Network input: NaN cells imputed as 0, optionally with one observed-cell mask per level."""
        filled = np.nan_to_num(self.values, nan=0.0)
        if not mask_channel:
            return filled
        return np.concatenate([filled, np.isfinite(self.values).astype(float)])

    @property
    def n_empty(self):
        return int(np.count_nonzero(np.isnan(self.values)))

    def to_frame(self):
        rows = []
        for li, u in enumerate(self.u_levels):
            for b in range(len(self.dist_edges) - 1):
                for ki, lag in enumerate(self.lag_values):
                    rows.append((li, u, self.dist_edges[b], self.dist_edges[b + 1], lag,
                                 self.values[li, b, ki], int(self.n_pairs[li, b, ki])))
        return pd.DataFrame(rows, columns=["level", "u", "dist_lo", "dist_hi", "lag", "chi", "n_pairs"])

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    def to_dict(self):
        return {"values": np.where(np.isnan(self.values), None, self.values).tolist(),
                "u_levels": list(self.u_levels), "dist_edges": self.dist_edges.tolist(),
                "lag_values": list(self.lag_values), "n_pairs": self.n_pairs.tolist(),
                "clipped": self.clipped}

    @classmethod
    def from_dict(cls, d):
        values = np.array([[[np.nan if v is None else v for v in row] for row in level]
                           for level in d["values"]], dtype=float)
        return cls(values, tuple(d["u_levels"]), np.asarray(d["dist_edges"], dtype=float),
                   tuple(d["lag_values"]), np.asarray(d["n_pairs"], dtype=int), int(d.get("clipped", 0)))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass
class PairBins:
    """Which site pairs fall in which distance bin, shared by every grid on one layout."""
    edges: np.ndarray
    bins: np.ndarray
    lag0_pairs: np.ndarray
    lagged_pairs: np.ndarray

    @classmethod
    def for_layout(cls, coords, config):
        distances = cdist(coords, coords)
        edges = config.edges(distances)
        # Left-closed, right-open bins; pairs at or beyond the top edge are dropped
        bins = np.searchsorted(edges, distances, side="right") - 1
        in_range = (bins >= 0) & (bins < len(edges) - 1)
        n = len(coords)
        upper = np.triu(np.ones((n, n), dtype=bool), k=1)
        return cls(edges, bins, upper & in_range, in_range)


def chi_grid(data, config=None, pair_bins=None):
    """Mean pairwise chi(u) per (level, distance bin, lag); NaN for empty cells."""
    config = config or GridConfig()
    pair_bins = pair_bins or PairBins.for_layout(data.coords, config)
    m1, m2 = len(pair_bins.edges) - 1, len(config.lags)
    values = np.full((len(config.levels), m1, m2), np.nan)
    n_pairs = np.zeros((len(config.levels), m1, m2), dtype=int)
    clipped = 0
    for li, u in enumerate(config.levels):
        exceeds, valid = _exceedances(data, u)
        for ki, lag in enumerate(config.lags):
            chi = pair_chi_matrix(exceeds, valid, lag, u)
            selected = (pair_bins.lag0_pairs if lag == 0 else pair_bins.lagged_pairs) & np.isfinite(chi)
            over = selected & (chi > 1.0)
            clipped += int(np.count_nonzero(over))
            chi = np.minimum(chi, 1.0)
            bins = pair_bins.bins[selected]
            counts = np.bincount(bins, minlength=m1)
            sums = np.bincount(bins, weights=chi[selected], minlength=m1)
            n_pairs[li, :, ki] = counts
            with np.errstate(invalid="ignore"):
                values[li, :, ki] = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    if clipped:
        logger.debug("chi grid clipped %d pair estimate(s) at 1", clipped)
    return ChiGrid(values, config.levels, pair_bins.edges, config.lags, n_pairs, clipped)


def grid_rmse(first, second):
    """Root mean squared difference over cells defined in both grids."""
    a = first.values if isinstance(first, ChiGrid) else np.asarray(first)
    b = second.values if isinstance(second, ChiGrid) else np.asarray(second)
    both = np.isfinite(a) & np.isfinite(b)
    if not both.any():
        return float("nan")
    return float(np.sqrt(np.mean((a[both] - b[both]) ** 2)))


def nearest_neighbours(coords, site, k=4):
    distances = cdist(coords[site:site + 1], coords)[0]
    order = np.argsort(distances, kind="stable")
    return order[order != site][:k]


def chi_star(data, site, lag, u, n_neighbours=4):
    """Pr(all nearest neighbours exceed at t | site exceeds at t - lag), within years."""
    if data.n_sites < n_neighbours + 1:
        raise ConfigurationError("chi* needs at least %d sites, got %d" % (n_neighbours + 1, data.n_sites))
    if lag < 0 or lag >= data.n_days:
        raise EmptyBinError("No time pairs at lag %d" % lag)
    exceeds, valid = _exceedances(data, u)
    neighbours = nearest_neighbours(data.coords, site, n_neighbours)
    end = data.n_days - lag
    usable = valid[:, :end, site] & np.all(valid[:, lag:, neighbours], axis=2)
    given = exceeds[:, :end, site] & usable
    n_given = np.count_nonzero(given)
    if n_given == 0:
        return float("nan")
    joint = given & np.all(exceeds[:, lag:, neighbours], axis=2)
    return np.count_nonzero(joint) / n_given


def chi_star_all(data, lag, u, n_neighbours=4):
    return np.array([chi_star(data, i, lag, u, n_neighbours) for i in range(data.n_sites)])


def rmse_chi_star(empirical, simulated):
    """Site-wise RMSE of simulated chi* draws (draws x sites) around the empirical values, and its mean."""
    empirical = np.asarray(empirical, dtype=float)
    simulated = np.atleast_2d(np.asarray(simulated, dtype=float))
    if simulated.shape[0] < 1:
        raise DomainError("rmse_chi_star needs at least one simulated draw")
    with np.errstate(invalid="ignore"):
        per_site = np.sqrt(np.nanmean((simulated - empirical[None, :]) ** 2, axis=0))
    return per_site, float(np.nanmean(per_site))


def _resampled_grid(data, config, pair_bins, seed, replicate):
    years = stream(seed, Purpose.YEAR_BLOCKS, replicate).integers(0, data.n_years, data.n_years)
    return chi_grid(data.select_years(years), config, pair_bins).values


def year_block_bands(data, config=None, n_boot=200, seed=0, coverage=0.95, n_jobs=1):
    """Pointwise bootstrap bands for a chi grid, resampling whole years with replacement."""
    config = config or GridConfig()
    pair_bins = PairBins.for_layout(data.coords, config)
    draws = Parallel(n_jobs=n_jobs)(
        delayed(_resampled_grid)(data, config, pair_bins, seed, b) for b in range(n_boot))
    draws = np.stack(draws)
    alpha = (1.0 - coverage) / 2.0
    with np.errstate(invalid="ignore"):
        lower = np.nanquantile(draws, alpha, axis=0)
        upper = np.nanquantile(draws, 1.0 - alpha, axis=0)
    return lower, upper
