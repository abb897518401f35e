"""Monte-Carlo check of the asymptotic dependence class of a copula variant.

Draws many independent (X1, X2) pairs for one designated pair of space-time points,
transforms them with the exact marginal CDF, and follows chi(u) toward u -> 1.
"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from scalemix_sim.copula import Dependence, classify_dependence, marginal_cdf_log
from scalemix_sim.errors import DomainError, PrecisionError
from scalemix_sim.rng import Purpose, stream

logger = logging.getLogger('scalemix_sim')

MODES = ("space", "time", "spacetime")
VERIFY_LEVELS = (0.95, 0.99, 0.999)
MIN_EXPECTED_EXCEEDANCES = 50


def pair_correlations(spec, mode, distance, lag):
    """Correlations of R* and W* between the two points of the designated pair."""
    if mode not in MODES:
        raise DomainError("Unknown dependence mode " + repr(mode))
    d = distance if mode in ("space", "spacetime") else 0.0
    k = lag if mode in ("time", "spacetime") else 0
    if spec.variant.r_indexed_by_space:
        rho_r = float(spec.r_kernel()(d))
    else:
        rho_r = float(spec.r_kernel()(k))
    rho_w = float(spec.w_kernel()(d, k))
    return rho_r, rho_w


def _latent_pair(process, rho, n, rng):
    z1 = rng.standard_normal(n)
    if rho >= 1.0:
        z2 = z1.copy()
    else:
        z2 = rho * z1 + np.sqrt(1.0 - rho * rho) * rng.standard_normal(n)
    if process.dependence == "AD":
        g = rng.gamma(shape=process.nu / 2.0, scale=2.0 / process.nu, size=n)
        scale = 1.0 / np.sqrt(g)
        z1, z2 = z1 * scale, z2 * scale
    return -process.logsf(z1), -process.logsf(z2)


def simulate_pair_uniforms(spec, mode, n_pairs, seed, distance=5.0, lag=1):
    """n_pairs independent copula pairs (U1, U2) at the designated points."""
    rho_r, rho_w = pair_correlations(spec, mode, distance, lag)
    mode_key = MODES.index(mode)
    r1, r2 = _latent_pair(spec.r_process(), rho_r, n_pairs, stream(seed, Purpose.VERIFY, mode_key, 1))
    w1, w2 = _latent_pair(spec.w_process(), rho_w, n_pairs, stream(seed, Purpose.VERIFY, mode_key, 2))
    delta = spec.delta
    u1 = marginal_cdf_log(delta * r1 + (1.0 - delta) * w1, delta)
    u2 = marginal_cdf_log(delta * r2 + (1.0 - delta) * w2, delta)
    return u1, u2


def chi_curve(u1, u2, levels):
    """chi(u) = Pr(U1 > u, U2 > u) / (1 - u) with binomial standard errors."""
    n = len(u1)
    chi, se = [], []
    for u in levels:
        p = np.count_nonzero((u1 > u) & (u2 > u)) / n
        chi.append(p / (1.0 - u))
        se.append(np.sqrt(p * (1.0 - p) / n) / (1.0 - u))
    return np.array(chi), np.array(se)


def expected_joint_exceedances(n_pairs, u, chi=1.0):
    return n_pairs * (1.0 - u) * chi


def eta_slope(levels, chi):
    """eta from the slope of log chi(u) on log(1 - u): chi ~ (1 - u)^(1/eta - 1)."""
    levels, chi = np.asarray(levels, dtype=float), np.asarray(chi, dtype=float)
    keep = chi > 0
    if np.count_nonzero(keep) < 2:
        return float("nan")
    slope = np.polyfit(np.log1p(-levels[keep]), np.log(chi[keep]), 1)[0]
    return float(1.0 / (1.0 + slope))


@dataclass
class ClassVerification:
    variant: str
    delta: float
    mode: str
    levels: Tuple[float, ...]
    chi: np.ndarray
    se: np.ndarray
    eta_hat: float
    verdict: Dependence
    expected: Dependence
    n_pairs: int
    distance: float
    lag: int
    n_joint: Tuple[int, ...] = ()

    @property
    def matches(self):
        return self.verdict is self.expected

    def to_dict(self):
        return {"variant": self.variant, "delta": self.delta, "mode": self.mode,
                "levels": list(self.levels), "chi": self.chi.tolist(), "se": self.se.tolist(),
                "eta_hat": self.eta_hat, "verdict": self.verdict.value, "expected": self.expected.value,
                "matches": self.matches, "n_pairs": self.n_pairs, "n_joint": list(self.n_joint),
                "distance_km": self.distance, "lag_days": self.lag}


def verify_dependence_class(spec, mode, n_pairs=10 ** 6, levels=VERIFY_LEVELS, seed=0,
                            distance=5.0, lag=1):
    """AI when chi(u) at the top level has fallen below half its lowest-level value or is
    within two standard errors of zero; AD otherwise.

    The expected joint exceedance count n (1 - u) chi(u) must reach MIN_EXPECTED_EXCEEDANCES:
    before simulating, with chi <= 1 at the top level; after, with the estimated chi at the
    lowest level, which anchors the curve.
    """
    levels = tuple(sorted(levels))
    bound = expected_joint_exceedances(n_pairs, levels[-1])
    if bound < MIN_EXPECTED_EXCEEDANCES:
        raise PrecisionError("%d pairs give at most %.1f expected joint exceedances at u=%g, below %d"
                             % (n_pairs, bound, levels[-1], MIN_EXPECTED_EXCEEDANCES))
    u1, u2 = simulate_pair_uniforms(spec, mode, n_pairs, seed, distance, lag)
    chi, se = chi_curve(u1, u2, levels)
    anchor = expected_joint_exceedances(n_pairs, levels[0], chi[0])
    if anchor < MIN_EXPECTED_EXCEEDANCES:
        raise PrecisionError("%d pairs give %.1f expected joint exceedances at u=%g (chi=%.4f), below %d"
                             % (n_pairs, anchor, levels[0], chi[0], MIN_EXPECTED_EXCEEDANCES))
    n_joint = tuple(int(np.count_nonzero((u1 > u) & (u2 > u))) for u in levels)
    vanishing = chi[-1] < chi[0] / 2.0 or chi[-1] <= 2.0 * se[-1]
    verdict = Dependence.AI if vanishing else Dependence.AD
    expected = classify_dependence(spec).for_mode(mode)
    report = ClassVerification("M%d" % int(spec.variant), spec.delta, mode, levels, chi, se,
                               eta_slope(levels, chi), verdict, expected, n_pairs, distance, lag, n_joint)
    logger.info("%s delta=%.3f %s: chi=%s verdict %s (expected %s)", report.variant, spec.delta, mode,
                np.array2string(chi, precision=4), verdict.value, expected.value)
    return report


def verify_all_modes(spec, **kwargs):
    return [verify_dependence_class(spec, mode, **kwargs) for mode in MODES]
