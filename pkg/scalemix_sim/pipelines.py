"""Composite pipelines behind the command line: fit, model selection, diagnostics, storms."""
import contextlib
import json
import logging
import math
import os

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.spatial.distance import pdist

from scalemix_sim.classes import MODES, verify_dependence_class
from scalemix_sim.config import RunConfig
from scalemix_sim.copula import CopulaSimulator, CopulaSpec, Variant, simulate_copula
from scalemix_sim.errors import ConfigurationError, ScaleMixError, SizeError
from scalemix_sim.fields import Layout
from scalemix_sim.marginal import (MarginalSpec, fit_gpd_by_site, fit_marginal, panel_to_data, panel_to_uniform,
                                   uniform_to_data, write_threshold_table)
from scalemix_sim.nn.estimator import bootstrap, box_chi_range, estimate, generate_training_set, train
from scalemix_sim.panel import Scale, bundled_stations, read_stations
from scalemix_sim.rng import Purpose, derive_seed, stream
from scalemix_sim.tail import PairBins, chi_grid, chi_star_all, grid_rmse, rmse_chi_star, year_block_bands

logger = logging.getLogger('scalemix_sim')

CHI_STAR_LAGS = (0, 1, 2)
CHI_STAR_LEVELS = (0.90, 0.95)


@contextlib.contextmanager
def stage(name):
    """Label errors raised inside a pipeline stage; the error type is kept."""
    logger.info("Stage %s: start", name)
    try:
        yield
    except ScaleMixError as exc:
        if not getattr(exc, "stage", None):
            exc.stage = name
        raise
    logger.info("Stage %s: done", name)


def _clean(value):
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.floating, float)):
        return None if math.isnan(value) else float(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def write_json(path, report):
    """Sorted keys, NaN as null, so equal reports give equal bytes."""
    with open(path, "w") as f:
        f.write(json.dumps(_clean(report), sort_keys=True, indent=2, allow_nan=False))
        f.write("\n")


def versioned_dir(out, command):
    """A fresh <out>/<command>-NNN directory; earlier runs are never touched."""
    os.makedirs(out, exist_ok=True)
    index = 1
    while True:
        path = os.path.join(out, "%s-%03d" % (command, index))
        try:
            os.makedirs(path)
            return path
        except FileExistsError:
            index += 1


def station_layout(config):
    if config.layout.stations is None:
        return bundled_stations()
    stations = read_stations(config.layout.stations)
    return list(stations["site_id"]), stations[["x_km", "y_km"]].to_numpy()


def threshold_surface(plane, coords):
    b0, b1, b2 = plane
    coords = np.asarray(coords, dtype=float)
    return b0 + b1 * coords[:, 0] + b2 * coords[:, 1]


def to_data_scale(panel, spec):
    """Data-scale panel with a linear bulk below the threshold: y = mu * u / p for u <= p."""
    data = panel_to_data(panel, spec)
    bulk = ~panel.mask & (panel.values <= spec.p)
    mu = np.broadcast_to(spec.mu, panel.values.shape)
    values = data.values.copy()
    values[bulk] = mu[bulk] * panel.values[bulk] / spec.p
    return data.with_values(values, Scale.DATA)


def simulate_panels(config, n_years=None, seed=None, site_ids=None, coords=None):
    """(uniform, data-scale) panels from the configured copula and margins on the station layout."""
    if coords is None:
        site_ids, coords = station_layout(config)
    n_years = n_years or config.layout.n_years
    seed = config.seed if seed is None else seed
    layout = Layout.regular(coords, config.layout.n_days)
    uniform = simulate_copula(config.copula.to_spec(), layout, n_years, seed, site_ids=site_ids)
    marginal = MarginalSpec(config.marginal.p, threshold_surface(config.marginal.threshold_plane, coords),
                            config.marginal.sigma, config.marginal.xi)
    return uniform, to_data_scale(uniform, marginal)


def make_fixture(seed=2024):
    """Deterministic synthetic station panel from the default configuration (M1), 20 years x 92 days, 30 sites."""
    config = RunConfig()
    _, data = simulate_panels(config, seed=derive_seed(seed, Purpose.FIXTURE))
    data.notes["fixture"] = {"seed": seed, "copula": config.copula.to_spec().to_dict(),
                             "sigma": config.marginal.sigma, "xi": config.marginal.xi,
                             "threshold_plane": list(config.marginal.threshold_plane)}
    return data


def _training_layout(data):
    return Layout(data.coords, data.days)


def train_network(config, data, variant=None, n_years=None, seed=None):
    """Training set on the panel's layout followed by network training."""
    variant = Variant.parse(variant or config.copula.variant)
    seed = config.seed if seed is None else seed
    n_years = n_years or data.n_years
    ts = generate_training_set(variant, config.box, config.budgets.K, _training_layout(data), n_years,
                               derive_seed(seed, Purpose.TRAINING_PANEL), p=config.marginal.p,
                               grid_config=config.grid, mask=None, mask_channel=config.network.mask_channel,
                               n_jobs=config.n_jobs, **config.copula.spec_kwargs())
    network, curve = train(config.network, ts, derive_seed(seed, Purpose.INIT))
    return network, curve, ts


def pipeline_train(config, data, out=None):
    with stage("train"):
        network, curve, ts = train_network(config, data)
    with stage("coverage"):
        coverage = box_chi_range(config.copula.variant, config.box, n_draws=config.budgets.box_chi_draws,
                                 seed=derive_seed(config.seed, Purpose.VERIFY), **config.copula.spec_kwargs())
    network.meta["box_chi_range"] = coverage
    if out is not None:
        network.save(os.path.join(out, "network.json"))
        curve.to_csv(os.path.join(out, "loss_curve.csv"))
        ts.save(os.path.join(out, "training_set.npz"))
    return network, curve


def _copula_panel(config, data):
    """Uniform-scale panel for step two, plus the marginal fit when the data are on the data scale."""
    if data.scale is Scale.UNIFORM:
        logger.info("Panel already on the uniform scale: marginal step skipped")
        return data.censored(config.marginal.p), None
    marginal = fit_marginal(data, p=config.marginal.p, tau=config.marginal.tau)
    return panel_to_uniform(data, marginal.spec), marginal


def pipeline_fit(config, data, network=None, out=None, with_bootstrap=True):
    """Two-step fit (margins, then copula by the network) with bootstrap intervals."""
    report = {"model": "M%d" % int(Variant.parse(config.copula.variant)), "seed": config.seed,
              "flags": {}, "panel": {"years": data.n_years, "days": data.n_days, "sites": data.n_sites,
                                      "missing": int(data.mask.sum())}}
    with stage("marginal"):
        uniform, marginal = _copula_panel(config, data)
    report["flags"]["marginal_step_skipped"] = marginal is None
    if marginal is not None:
        report["marginal"] = {"threshold": marginal.threshold.to_dict(), "gpd": marginal.gpd.to_dict()}
        if out is not None:
            write_threshold_table(os.path.join(out, "thresholds.csv"), data.site_ids, data.coords,
                                  marginal.spec.mu)
    if network is None:
        with stage("train"):
            network, curve, _ = train_network(config, data)
        if out is not None:
            network.save(os.path.join(out, "network.json"))
            curve.to_csv(os.path.join(out, "loss_curve.csv"))
    with stage("estimate"):
        theta = estimate(network, uniform)
        spec = CopulaSpec.from_theta(config.copula.variant, theta, **config.copula.spec_kwargs())
    report["network"] = {"layout": network.meta.get("layout"), "best_epoch": network.meta.get("best_epoch"),
                         "best_val_mae": network.meta.get("best_val_mae")}
    estimates = dict(zip(("delta", "phi", "psi1", "psi2"), theta))
    if marginal is not None:
        estimates.update(sigma=marginal.spec.sigma, xi=marginal.spec.xi)
    report["parameters"] = {name: {"estimate": value} for name, value in estimates.items()}
    if with_bootstrap:
        with stage("bootstrap"):
            result = bootstrap(network, spec, marginal.spec if marginal else None, data, B=config.budgets.B,
                               seed=derive_seed(config.seed, Purpose.BOOTSTRAP), n_jobs=config.n_jobs,
                               p=config.marginal.p)
        report["parameters"] = result.to_dict()
        report["bootstrap"] = {"B": config.budgets.B, "failed": result.n_failed, "level": result.level}
        if out is not None:
            result.draws_frame().to_csv(os.path.join(out, "bootstrap_draws.csv"), index=False,
                                        float_format="%.17g")
    if out is not None:
        write_json(os.path.join(out, "report.json"), report)
    return report


def split_years(n_years, seed, fold, holdout):
    order = stream(seed, Purpose.FOLD, fold).permutation(n_years)
    return np.sort(order[holdout:]), np.sort(order[:holdout])


def holdout_size(config, n_years):
    if n_years < 4:
        raise ConfigurationError("Model selection needs at least 4 years, got %d" % n_years)
    return min(config.layout.holdout_years, max(1, n_years // 4))


def _mc_grid(spec, layout, n_years, seed, p, grid_config, pair_bins, mask):
    panel = simulate_copula(spec, layout, n_years, seed)
    if mask is not None:
        panel = panel.with_values(np.where(mask, np.nan, panel.values))
    return chi_grid(panel.censored(p), grid_config, pair_bins).values


def model_grid(spec, layout, n_years, seeds, p, grid_config, mask=None, n_jobs=1):
    """Monte-Carlo mean chi grid of the model on the layout, one simulated panel per seed."""
    pair_bins = PairBins.for_layout(layout.sites, grid_config)
    grids = Parallel(n_jobs=n_jobs)(delayed(_mc_grid)(spec, layout, n_years, s, p, grid_config, pair_bins, mask)
                                    for s in seeds)
    with np.errstate(invalid="ignore"):
        return np.nanmean(np.stack(grids), axis=0)


def pipeline_model_select(config, data, candidates=None, folds=None, networks=None, out=None):
    """Cross-validated chi-grid RMSE of each candidate variant on held-out year blocks."""
    candidates = [Variant.parse(v) for v in (candidates or config.candidates)]
    folds = folds or config.budgets.folds
    holdout = holdout_size(config, data.n_years)
    networks = dict(networks or {})
    with stage("select-networks"):
        for variant in candidates:
            if variant not in networks:
                networks[variant] = train_network(config, data, variant, n_years=data.n_years - holdout)[0]
    layout = _training_layout(data)
    rmse = {variant: [] for variant in candidates}
    for fold in range(folds):
        fit_years, held_years = split_years(data.n_years, config.seed, fold, holdout)
        with stage("select-fold-%d" % (fold + 1)):
            fit_block, _ = _copula_panel(config, data.select_years(fit_years))
            held_block, _ = _copula_panel(config, data.select_years(held_years))
            held_grid = chi_grid(held_block, config.grid)
            seeds = [derive_seed(config.seed, Purpose.MONTE_CARLO, fold, j) for j in range(config.budgets.n_mc)]
            for variant in candidates:
                theta = estimate(networks[variant], fit_block)
                spec = CopulaSpec.from_theta(variant, theta, **config.copula.spec_kwargs())
                simulated = model_grid(spec, layout, holdout, seeds, config.marginal.p, config.grid,
                                       mask=held_block.mask, n_jobs=config.n_jobs)
                rmse[variant].append(grid_rmse(simulated, held_grid))
        logger.info("Fold %d/%d: %s", fold + 1, folds,
                    ", ".join("%s %.4f" % (v.name, rmse[v][-1]) for v in candidates))
    report = {"folds": folds, "holdout_years": holdout, "n_mc": config.budgets.n_mc,
              "models": {v.name: {"mean_rmse": float(np.nanmean(rmse[v])), "rmse": rmse[v]} for v in candidates}}
    report["best"] = min(report["models"], key=lambda name: report["models"][name]["mean_rmse"])
    if out is not None:
        write_json(os.path.join(out, "model_selection.json"), report)
    return report


def storm_lattice(coords, spacing, margin=0.0):
    lo = coords.min(axis=0) - margin
    hi = coords.max(axis=0) + margin
    xs = np.arange(lo[0], hi[0] + 1e-9, spacing)
    ys = np.arange(lo[1], hi[1] + 1e-9, spacing)
    grid = np.array([(x, y) for y in ys for x in xs])
    # lattice nodes landing on a station are represented by the station itself
    far = np.min(np.linalg.norm(grid[:, None, :] - coords[None, :, :], axis=2), axis=1) > 1e-9
    return grid[far]


def pipeline_storm(config, spec, marginal_plane, sigma, xi, coords=None, n_days=None, seed=None, out=None):
    """One simulated multi-day storm on a lattice plus the stations, censored at the threshold surface."""
    if coords is None:
        _, coords = station_layout(config)
    n_days = n_days or config.layout.storm_days
    seed = derive_seed(config.seed if seed is None else seed, Purpose.STORM)
    lattice = storm_lattice(coords, config.layout.storm_spacing_km)
    points = np.vstack([lattice, coords])
    n_points = len(points)
    if n_points > config.budgets.storm_max_points:
        raise SizeError("Storm lattice has %d points, above the budget of %d; increase storm_spacing_km"
                        % (n_points, config.budgets.storm_max_points))
    with stage("storm"):
        layout = Layout.regular(points, n_days)
        uniform = CopulaSimulator(spec, layout).uniform_year(seed, 0)
        mu = threshold_surface(marginal_plane, points)
        marginal = MarginalSpec(config.marginal.p, mu, sigma, xi)
        values = uniform_to_data(uniform.T, marginal)
    observed = np.concatenate([np.zeros(len(lattice), dtype=bool), np.ones(len(coords), dtype=bool)])
    frame = pd.DataFrame({
        "x": np.tile(points[:, 0], n_days),
        "y": np.tile(points[:, 1], n_days),
        "day": np.repeat(np.arange(1, n_days + 1), n_points),
        "value": values.ravel(),
        "exceeds": (values > mu[None, :]).ravel(),
        "observed": np.tile(observed, n_days),
    })
    logger.info("Storm: %d points x %d days, exceedance fraction per day %s", n_points, n_days,
                np.array2string(frame.groupby("day")["exceeds"].mean().to_numpy(), precision=3))
    if out is not None:
        frame.to_csv(os.path.join(out, "storm.csv"), index=False, float_format="%.17g")
    return frame


def _chi_star_draw(spec, layout, n_years, seed, p, mask):
    panel = simulate_copula(spec, layout, n_years, seed)
    if mask is not None:
        panel = panel.with_values(np.where(mask, np.nan, panel.values))
    panel = panel.censored(p)
    return {(k, u): chi_star_all(panel, k, u) for k in CHI_STAR_LAGS for u in CHI_STAR_LEVELS}


def chi_star_table(config, data, spec, n_draws):
    """Empirical chi* per site against model draws: site-wise and mean RMSE for each (lag, level)."""
    empirical = {(k, u): chi_star_all(data, k, u) for k in CHI_STAR_LAGS for u in CHI_STAR_LEVELS}
    seeds = [derive_seed(config.seed, Purpose.MONTE_CARLO, 10 ** 6 + j) for j in range(n_draws)]
    draws = Parallel(n_jobs=config.n_jobs)(
        delayed(_chi_star_draw)(spec, _training_layout(data), data.n_years, s, config.marginal.p, data.mask)
        for s in seeds)
    table = {}
    for key, values in empirical.items():
        per_site, mean = rmse_chi_star(values, np.stack([d[key] for d in draws]))
        table["lag%d_u%.2f" % key] = {"mean_rmse": mean, "site_rmse": per_site, "empirical": values}
    return table


def pipeline_diagnose(config, data, spec=None, out=None):
    """Chi grid with year-block bands, threshold table, site-wise GPD fits and the chi* check."""
    report = {}
    with stage("diagnose-grid"):
        grid = chi_grid(data, config.grid)
        lower, upper = year_block_bands(data, config.grid, config.budgets.year_block_reps,
                                        derive_seed(config.seed, Purpose.YEAR_BLOCKS), n_jobs=config.n_jobs)
    report["grid"] = {"clipped": grid.clipped, "empty_cells": grid.n_empty}
    if data.scale is Scale.DATA:
        with stage("diagnose-margins"):
            marginal = fit_marginal(data, p=config.marginal.p, tau=config.marginal.tau)
            site_fits = fit_gpd_by_site(data, marginal.spec.mu)
        report["marginal"] = {"pooled": marginal.gpd.to_dict(), "sites": [f.to_dict() for f in site_fits]}
        if out is not None:
            write_threshold_table(os.path.join(out, "thresholds.csv"), data.site_ids, data.coords,
                                  marginal.spec.mu)
    if spec is not None:
        with stage("diagnose-chi-star"):
            report["chi_star"] = chi_star_table(config, data, spec, config.budgets.chi_star_draws)
    if out is not None:
        frame = grid.to_frame()
        frame["band_lo"] = lower.ravel()
        frame["band_hi"] = upper.ravel()
        frame.to_csv(os.path.join(out, "chi_grid.csv"), index=False, float_format="%.17g")
        with open(os.path.join(out, "chi_grid.json"), "w") as f:
            f.write(grid.to_json())
        pd.DataFrame({"site_id": data.site_ids, "x_km": data.coords[:, 0],
                      "y_km": data.coords[:, 1]}).to_csv(os.path.join(out, "sites.csv"), index=False)
        write_json(os.path.join(out, "diagnostics.json"), report)
    return report


def pipeline_verify(config, spec, modes=MODES, distance=None, out=None):
    """Monte-Carlo dependence classes of one variant against the analytic table."""
    if distance is None:
        _, coords = station_layout(config)
        distance = float(np.min(pdist(coords)))
    reports = []
    for mode in modes:
        with stage("verify-" + mode):
            reports.append(verify_dependence_class(spec, mode, n_pairs=config.budgets.verify_pairs,
                                                   seed=derive_seed(config.seed, Purpose.VERIFY),
                                                   distance=distance))
    report = {"spec": spec.to_dict(), "modes": {r.mode: r.to_dict() for r in reports},
              "all_match": all(r.matches for r in reports)}
    if out is not None:
        write_json(os.path.join(out, "classes.json"), report)
    return report
