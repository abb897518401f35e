"""Simulation-based neural estimation of the copula parameters (delta, phi, psi1, psi2).

Parameters are drawn uniformly on a box, a panel is simulated on the target layout for
each draw, the panel is summarized by its chi grids, and a small convolutional network
learns the map from grids back to the (box-scaled) parameters. The same network then
re-estimates parametric bootstrap panels.
"""
import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from scalemix_sim.classes import chi_curve, simulate_pair_uniforms
from scalemix_sim.copula import PARAMETER_NAMES, CopulaSpec, Variant, simulate_copula
from scalemix_sim.errors import (ConfigurationError, DomainError, EstimationError, ScaleMixError,
                                 ShapeError, TrainingError)
from scalemix_sim.marginal import exceedances, fit_gpd_mle, panel_to_data
from scalemix_sim.nn.network import NetworkConfig, NetworkModel, RMSprop, mae_loss
from scalemix_sim.rng import Purpose, derive_seed, stream
from scalemix_sim.tail import GridConfig, PairBins, chi_grid

logger = logging.getLogger('scalemix_sim')

MAX_ATTEMPTS = 10
RECOMMENDED_K = 100
BOOTSTRAP_NAMES = PARAMETER_NAMES + ("sigma", "xi")


@dataclass(frozen=True)
class ParamBox:
    delta: tuple = (0.0, 1.0)
    phi: tuple = (0.0, 2.5)
    psi1: tuple = (4.0, 16.0)
    psi2: tuple = (0.0, 2.5)

    def __post_init__(self):
        for name in PARAMETER_NAMES:
            lo, hi = (float(v) for v in getattr(self, name))
            if not lo < hi:
                raise ConfigurationError("ParamBox bounds for %s must satisfy lo < hi" % name)
            object.__setattr__(self, name, (lo, hi))
        if self.delta[0] < 0.0 or self.delta[1] > 1.0:
            raise ConfigurationError("ParamBox delta bounds must lie in [0, 1]")
        if min(self.phi[0], self.psi1[0], self.psi2[0]) < 0.0:
            raise ConfigurationError("ParamBox range bounds must be non-negative")

    @property
    def lo(self):
        return np.array([getattr(self, name)[0] for name in PARAMETER_NAMES])

    @property
    def hi(self):
        return np.array([getattr(self, name)[1] for name in PARAMETER_NAMES])

    def scale(self, theta):
        return (np.asarray(theta, dtype=float) - self.lo) / (self.hi - self.lo)

    def unscale(self, scaled):
        return self.lo + np.asarray(scaled, dtype=float) * (self.hi - self.lo)

    def sample(self, rng, size=None):
        shape = (4,) if size is None else (size, 4)
        return self.lo + rng.random(shape) * (self.hi - self.lo)

    def to_dict(self):
        return {name: list(getattr(self, name)) for name in PARAMETER_NAMES}

    @classmethod
    def from_dict(cls, d):
        return cls(**{name: tuple(d[name]) for name in PARAMETER_NAMES if name in d})


def layout_fingerprint(coords, n_days):
    """Hash of the site set (order-free) and the number of days per year."""
    coords = np.round(np.asarray(coords, dtype=float), 6)
    ordered = coords[np.lexsort(coords.T[::-1])]
    digest = hashlib.sha256(ordered.tobytes() + str(int(n_days)).encode())
    return digest.hexdigest()[:16]


@dataclass
class TrainingSet:
    inputs: np.ndarray
    targets: np.ndarray
    box: ParamBox
    train_idx: np.ndarray
    val_idx: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.inputs) != len(self.targets):
            raise ShapeError("TrainingSet has %d inputs but %d targets" % (len(self.inputs), len(self.targets)))
        if len(self.inputs) == 0:
            raise ShapeError("TrainingSet is empty")
        # tiny sets validate on their training indices
        shared = np.array_equal(self.train_idx, self.val_idx)
        if not shared and np.intersect1d(self.train_idx, self.val_idx).size:
            raise ShapeError("Training and validation indices overlap")

    def __len__(self):
        return len(self.inputs)

    @property
    def theta(self):
        return self.box.unscale(self.targets)

    def save(self, path):
        header = json.dumps({"box": self.box.to_dict(), "meta": self.meta}, sort_keys=True)
        np.savez(path, inputs=self.inputs, targets=self.targets, train_idx=self.train_idx,
                 val_idx=self.val_idx, header=np.array(header))

    @classmethod
    def load(cls, path):
        with np.load(path) as arrays:
            header = json.loads(str(arrays["header"]))
            return cls(arrays["inputs"], arrays["targets"], ParamBox.from_dict(header["box"]),
                       arrays["train_idx"], arrays["val_idx"], header["meta"])


def split_indices(n, seed, fraction=0.2):
    order = stream(seed, Purpose.SPLIT).permutation(n)
    n_val = int(round(fraction * n))
    if n_val == 0 or n_val == n:
        return order, order
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def _apply_mask(panel, mask):
    if mask is None:
        return panel
    values = np.where(mask, np.nan, panel.values)
    return panel.with_values(values)


def _training_replicate(variant, box, layout, n_years, seed, k, p, config, pair_bins, mask, mask_channel,
                        spec_kwargs):
    for attempt in range(MAX_ATTEMPTS):
        theta = box.sample(stream(seed, Purpose.PARAMETERS, k, attempt))
        try:
            spec = CopulaSpec.from_theta(variant, theta, **spec_kwargs)
            panel = simulate_copula(spec, layout, n_years, derive_seed(seed, Purpose.TRAINING_PANEL, k, attempt))
            panel = _apply_mask(panel, mask)
            grid = chi_grid(panel.censored(p), config, pair_bins)
        except ScaleMixError as exc:
            logger.debug("Training draw %d attempt %d failed at theta=%s: %s", k, attempt, theta, exc)
            continue
        return grid.tensor(mask_channel), box.scale(theta), attempt, grid.n_empty
    raise EstimationError("Training draw %d failed %d times in a row" % (k, MAX_ATTEMPTS))


def generate_training_set(variant, box, K, layout, n_years, seed, p=0.90, grid_config=None, mask=None,
                          mask_channel=False, n_jobs=1, **spec_kwargs):
    """K (chi grid, scaled theta) pairs simulated on the target layout, censored at p."""
    variant = Variant.parse(variant)
    if K < 1:
        raise ConfigurationError("Training set size K must be at least 1")
    if K < RECOMMENDED_K:
        logger.warning("Training set size K=%d is below the recommended minimum of %d", K, RECOMMENDED_K)
    config = grid_config or GridConfig()
    pair_bins = PairBins.for_layout(layout.sites, config)
    logger.info("Generating %d training panels for %s (%d years x %d days x %d sites, seed %d)",
                K, variant.name, n_years, layout.n_times, layout.n_sites, seed)
    results = Parallel(n_jobs=n_jobs)(
        delayed(_training_replicate)(variant, box, layout, n_years, seed, k, p, config, pair_bins, mask,
                                     mask_channel, spec_kwargs) for k in range(K))
    inputs = np.stack([r[0] for r in results])
    targets = np.stack([r[1] for r in results])
    resampled = int(sum(r[2] for r in results))
    imputed = int(sum(r[3] for r in results))
    if resampled:
        logger.info("Resampled %d failed training draw(s)", resampled)
    if imputed:
        logger.info("Imputed %d empty chi-grid cell(s) as 0", imputed)
    train_idx, val_idx = split_indices(K, seed)
    meta = {"variant": "M%d" % int(variant), "n_years": int(n_years), "p": float(p),
            "grid": config.to_dict(), "layout": layout_fingerprint(layout.sites, layout.n_times),
            "mask_channel": bool(mask_channel), "resampled": resampled, "imputed": imputed,
            "spec_kwargs": {k: getattr(v, "value", v) for k, v in spec_kwargs.items()}, "seed": int(seed)}
    return TrainingSet(inputs, targets, box, train_idx, val_idx, meta)


@dataclass
class LossCurve:
    train_mae: List[float] = field(default_factory=list)
    val_mae: List[float] = field(default_factory=list)
    best_epoch: Optional[int] = None

    def to_frame(self):
        return pd.DataFrame({"epoch": np.arange(1, len(self.train_mae) + 1), "train_mae": self.train_mae,
                             "val_mae": self.val_mae})

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format="%.17g")


def train(config, ts, seed, network=None):
    """RMSprop on mean absolute error; returns the weights of the best validation epoch."""
    config = config or NetworkConfig()
    model = network or NetworkModel.build(config, ts.inputs.shape[1:], seed)
    optimizer = RMSprop(model.params(), config.learning_rate, config.rho, config.eps)
    curve = LossCurve()
    best_weights, best_val = model.get_weights(), np.inf
    batch_index = 0
    x_val, y_val = ts.inputs[ts.val_idx], ts.targets[ts.val_idx]
    for epoch in range(config.epochs):
        order = stream(seed, Purpose.SHUFFLE, epoch).permutation(ts.train_idx)
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            pred = model.forward(ts.inputs[batch])
            loss, grad = mae_loss(pred, ts.targets[batch])
            if not np.isfinite(loss) or not np.all(np.isfinite(pred)):
                raise TrainingError("Non-finite training loss in epoch %d, batch %d" % (epoch + 1, batch_index),
                                    batch_index=batch_index)
            model.backward(grad)
            optimizer.step(model.params(), model.grads())
            total += loss * len(batch)
            batch_index += 1
        val_loss = mae_loss(model.predict(x_val), y_val)[0]
        curve.train_mae.append(total / len(order))
        curve.val_mae.append(val_loss)
        logger.info("Epoch %d/%d: train MAE %.5f, validation MAE %.5f",
                    epoch + 1, config.epochs, curve.train_mae[-1], val_loss)
        if val_loss < best_val:
            best_val, best_weights, curve.best_epoch = val_loss, model.get_weights(), epoch + 1
    model.set_weights(best_weights)
    model.meta = dict(ts.meta, box=ts.box.to_dict(), network=config.to_dict(),
                      best_epoch=curve.best_epoch, best_val_mae=float(best_val))
    return model, curve


def network_grid_config(network):
    return GridConfig.from_dict(network.meta.get("grid", {}))


def network_box(network):
    return ParamBox.from_dict(network.meta["box"])


def estimate_from_grids(network, tensors):
    """Unscaled estimates for a stack of grid tensors, strictly inside the box."""
    scaled = network.predict(np.asarray(tensors, dtype=float))
    tiny = np.finfo(float).eps
    return network_box(network).unscale(np.clip(scaled, tiny, 1.0 - tiny))


def estimate(network, data):
    """theta_D = g(chi grids of the observed panel)."""
    expected = network.meta.get("layout")
    found = layout_fingerprint(data.coords, data.n_days)
    if expected is not None and expected != found:
        raise ShapeError("Panel layout %s differs from the training layout %s" % (found, expected))
    grid = chi_grid(data, network_grid_config(network))
    tensor = grid.tensor(network.meta.get("mask_channel", False))
    return estimate_from_grids(network, tensor[None])[0]


@dataclass
class BootstrapResult:
    point: np.ndarray
    draws: np.ndarray
    intervals: np.ndarray
    n_failed: int = 0
    level: float = 0.90
    names: tuple = BOOTSTRAP_NAMES

    def to_dict(self):
        return {name: {"estimate": float(self.point[i]), "interval": [float(v) for v in self.intervals[i]]}
                for i, name in enumerate(self.names)}

    def draws_frame(self):
        return pd.DataFrame(self.draws, columns=list(self.names))


def percentile_intervals(draws, level=0.90):
    alpha = (1.0 - level) / 2.0
    return np.quantile(draws, [alpha, 1.0 - alpha], axis=0).T


def _bootstrap_replicate(network, spec, marginal, template, seed, b, p):
    try:
        panel = simulate_copula(spec, template.layout, template.n_years, derive_seed(seed, Purpose.BOOTSTRAP, b))
        panel = _apply_mask(panel, template.mask)
        theta = estimate(network, panel.censored(p))
        if marginal is None:
            return theta
        gpd = fit_gpd_mle(exceedances(panel_to_data(panel, marginal), marginal.mu))
    except ScaleMixError as exc:
        logger.warning("Bootstrap replicate %d failed: %s", b, exc)
        return None
    return np.concatenate([theta, [gpd.sigma, gpd.xi]])


def bootstrap(network, spec, marginal, template, B=400, seed=0, level=0.90, n_jobs=1, p=None):
    """Parametric bootstrap of (theta_D, sigma, xi) from panels simulated at the point estimates.

    With marginal=None only theta_D is re-estimated (copula-scale data), censored at p.
    """
    if B < 1:
        raise DomainError("Bootstrap needs B >= 1")
    p = marginal.p if marginal is not None else (p or 0.0)
    logger.info("Bootstrap: %d parametric replicates at %s", B, spec.to_dict())
    results = Parallel(n_jobs=n_jobs)(
        delayed(_bootstrap_replicate)(network, spec, marginal, template, seed, b, p) for b in range(B))
    draws = np.array([r for r in results if r is not None])
    n_failed = B - len(draws)
    logger.info("Bootstrap: %d of %d replicates succeeded", len(draws), B)
    if len(draws) < 0.95 * B:
        raise EstimationError("Only %d of %d bootstrap replicates succeeded" % (len(draws), B))
    if marginal is None:
        return BootstrapResult(spec.theta, draws, percentile_intervals(draws, level), n_failed, level,
                               PARAMETER_NAMES)
    point = np.concatenate([spec.theta, [marginal.sigma, marginal.xi]])
    return BootstrapResult(point, draws, percentile_intervals(draws, level), n_failed, level)


def box_chi_range(variant, box, n_draws=20, n_pairs=20000, u=0.9, seed=0, distance=5.0, lag=1, **spec_kwargs):
    """Monte-Carlo range of chi(u) over parameters drawn on the box, per dependence mode."""
    variant = Variant.parse(variant)
    ranges = {}
    for mode in ("space", "time", "spacetime"):
        values = []
        for k in range(n_draws):
            theta = box.sample(stream(seed, Purpose.PARAMETERS, k))
            try:
                spec = CopulaSpec.from_theta(variant, theta, **spec_kwargs)
            except DomainError:
                continue
            u1, u2 = simulate_pair_uniforms(spec, mode, n_pairs, derive_seed(seed, Purpose.VERIFY, k),
                                            distance, lag)
            values.append(float(chi_curve(u1, u2, (u,))[0][0]))
        ranges[mode] = [min(values), max(values)] if values else [None, None]
    logger.info("chi(%.2f) range over the parameter box: %s", u, ranges)
    return ranges
