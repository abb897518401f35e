import unittest

import numpy as np
from hypothesis import given, settings, strategies as st
from scipy import stats

from scalemix_sim.copula import CopulaSpec, simulate_copula
from scalemix_sim.errors import ConfigurationError, DomainError, EmptyBinError
from scalemix_sim.fields import Layout
from scalemix_sim.panel import Scale
from scalemix_sim.tail import (ChiGrid, GridConfig, PairBins, chi_grid, chi_star, chi_star_all, empirical_chi_pair,
                               grid_rmse, nearest_neighbours, rmse_chi_star, year_block_bands)
from scalemix_sim.tests.support import panel, square_sites

SMALL_GRID = GridConfig(levels=(0.90, 0.95), n_dist_bins=3, lags=(0, 1, 2))


def random_panel(seed, shape=(6, 40, 6)):
    return panel(np.random.default_rng(seed).random(shape), square_sites(3)[:shape[2]])


class TestPairChi(unittest.TestCase):

    def test_identical_series(self):
        values = np.random.default_rng(0).random((10, 50, 1))
        data = panel(np.concatenate([values, values], axis=2))
        result = empirical_chi_pair(data, (0, 1), 0, 0.90)
        self.assertAlmostEqual(result.chi_hat, 1.0)
        self.assertEqual(result.n_effective, 500)

    def test_independent_series(self):
        data = panel(np.random.default_rng(1).random((50, 200, 2)))
        self.assertAlmostEqual(empirical_chi_pair(data, (0, 1), 0, 0.90).chi_hat, 0.10, delta=0.03)

    def test_gaussian_pair(self):
        rho = 0.5
        z = np.random.default_rng(2).multivariate_normal([0.0, 0.0], [[1.0, rho], [rho, 1.0]], size=100000)
        data = panel(z.reshape(100, 1000, 2), scale=Scale.DATA)
        q = stats.norm.ppf(0.90)
        joint = stats.multivariate_normal([0.0, 0.0], [[1.0, rho], [rho, 1.0]]).cdf([-q, -q])
        self.assertAlmostEqual(empirical_chi_pair(data, (0, 1), 0, 0.90).chi_hat, joint / 0.10, delta=0.03)

    def test_pairs_never_cross_years(self):
        rng = np.random.default_rng(3)
        values = rng.random((10, 30, 2)) * 0.5
        values[:, -1, 0] = 10.0
        values[:, 0, 1] = 10.0
        data = panel(values, scale=Scale.DATA)
        result = empirical_chi_pair(data, (0, 1), 1, 0.95)
        q = np.quantile(values.reshape(-1, 2), 0.95, axis=0)
        exceeds = values > q
        joint = sum(np.count_nonzero(exceeds[y, :-1, 0] & exceeds[y, 1:, 1]) for y in range(10))
        self.assertAlmostEqual(result.chi_hat, joint / (290 * 0.05))
        self.assertLess(result.chi_hat, 0.5)

    def test_missing_values_shrink_the_denominator(self):
        values = np.random.default_rng(4).random((5, 40, 2))
        values[0, :10, 0] = np.nan
        data = panel(values)
        result = empirical_chi_pair(data, (0, 1), 0, 0.90)
        self.assertEqual(result.n_effective, 190)

    def test_lag_beyond_year(self):
        with self.assertRaises(EmptyBinError):
            empirical_chi_pair(random_panel(5), (0, 1), 40, 0.90)
        with self.assertRaises(DomainError):
            empirical_chi_pair(random_panel(5), (0, 1), 0, 1.0)

    def test_too_few_observations(self):
        with self.assertRaises(DomainError):
            empirical_chi_pair(panel(np.random.default_rng(6).random((1, 10, 2))), (0, 1), 0, 0.90)


class TestChiGrid(unittest.TestCase):

    def test_shape_and_range(self):
        grid = chi_grid(random_panel(7), SMALL_GRID)
        self.assertEqual(grid.shape, (2, 3, 3))
        finite = grid.values[np.isfinite(grid.values)]
        self.assertTrue(np.all((finite >= 0.0) & (finite <= 1.0)))

    def test_lag_zero_uses_distinct_pairs(self):
        coords = np.array([[0.0, 0.0], [1.0, 0.0], [20.0, 0.0]])
        data = panel(np.random.default_rng(8).random((3, 30, 3)), coords)
        bins = PairBins.for_layout(coords, GridConfig(n_dist_bins=2))
        # edges 0, 5, 10: only the 1 km pair falls inside, and self-pairs only count at lag >= 1
        self.assertEqual(int(bins.lag0_pairs.sum()), 1)
        self.assertEqual(int(bins.lagged_pairs.sum()), 5)
        grid = chi_grid(data, GridConfig(levels=(0.9,), n_dist_bins=2, lags=(0, 1)))
        self.assertEqual(grid.n_pairs[0, 0, 0], 1)
        self.assertEqual(grid.n_pairs[0, 0, 1], 5)
        self.assertTrue(np.isnan(grid.values[0, 1, 0]))
        self.assertEqual(grid.n_empty, 2)

    def test_site_order_does_not_matter(self):
        data = random_panel(9)
        order = np.array([4, 2, 0, 5, 1, 3])
        permuted = panel(data.values[:, :, order], data.coords[order])
        first, second = chi_grid(data, SMALL_GRID), chi_grid(permuted, SMALL_GRID)
        np.testing.assert_allclose(first.values, second.values, rtol=1e-12)
        np.testing.assert_array_equal(first.n_pairs, second.n_pairs)

    def test_fully_dependent_field(self):
        spec = CopulaSpec("M1", 1.0, 1.0, 10.0, 1.0)
        data = simulate_copula(spec, Layout.regular(square_sites(3), 92), 20, seed=3)
        grid = chi_grid(data, GridConfig(levels=(0.90, 0.95), n_dist_bins=2, lags=(0, 1)))
        self.assertGreater(np.nanmin(grid.values[:, :, 0]), 0.99)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10 ** 6))
    def test_values_are_probabilities(self, seed):
        grid = chi_grid(random_panel(seed, (3, 25, 6)), SMALL_GRID)
        finite = grid.values[np.isfinite(grid.values)]
        self.assertTrue(np.all((finite >= 0.0) & (finite <= 1.0)))

    def test_json_round_trip_keeps_empty_cells(self):
        coords = np.array([[0.0, 0.0], [1.0, 0.0], [20.0, 0.0]])
        grid = chi_grid(panel(np.random.default_rng(10).random((3, 30, 3)), coords),
                        GridConfig(levels=(0.9,), n_dist_bins=2, lags=(0, 1)))
        again = ChiGrid.from_json(grid.to_json())
        np.testing.assert_array_equal(again.values, grid.values)
        np.testing.assert_array_equal(again.n_pairs, grid.n_pairs)
        self.assertEqual(again.lag_values, grid.lag_values)

    def test_frame_layout(self):
        frame = chi_grid(random_panel(11), SMALL_GRID).to_frame()
        self.assertEqual(list(frame.columns), ["level", "u", "dist_lo", "dist_hi", "lag", "chi", "n_pairs"])
        self.assertEqual(len(frame), 2 * 3 * 3)

    def test_mask_channel(self):
        grid = chi_grid(random_panel(12), SMALL_GRID)
        self.assertEqual(grid.tensor().shape, (2, 3, 3))
        self.assertEqual(grid.tensor(mask_channel=True).shape, (4, 3, 3))
        self.assertFalse(np.isnan(grid.tensor()).any())

    def test_rmse(self):
        a = np.array([[[0.5, np.nan], [0.2, 0.4]]])
        b = np.array([[[0.6, 0.1], [0.1, np.nan]]])
        self.assertAlmostEqual(grid_rmse(a, b), 0.1)
        self.assertTrue(np.isnan(grid_rmse(a * np.nan, b)))

    def test_config_validation(self):
        with self.assertRaises(ConfigurationError):
            GridConfig(levels=(1.0,))
        with self.assertRaises(ConfigurationError):
            GridConfig(lags=(1, 0))
        self.assertEqual(GridConfig.from_dict(SMALL_GRID.to_dict()), SMALL_GRID)

    def test_year_block_bands(self):
        lower, upper = year_block_bands(random_panel(13), SMALL_GRID, n_boot=20, seed=1)
        self.assertEqual(lower.shape, (2, 3, 3))
        both = np.isfinite(lower) & np.isfinite(upper)
        self.assertTrue(np.all(lower[both] <= upper[both]))


class TestChiStar(unittest.TestCase):

    def test_neighbours_are_nearest(self):
        coords = square_sites(3)
        self.assertEqual(sorted(nearest_neighbours(coords, 4, 4)), [1, 3, 5, 7])

    def test_identical_sites(self):
        values = np.random.default_rng(14).random((5, 40, 1))
        data = panel(np.repeat(values, 6, axis=2), square_sites(3)[:6])
        self.assertEqual(chi_star(data, 0, 0, 0.90), 1.0)
        self.assertTrue(np.all(chi_star_all(data, 0, 0.95) == 1.0))

    def test_needs_five_sites(self):
        with self.assertRaises(ConfigurationError):
            chi_star(random_panel(15, (2, 30, 4)), 0, 0, 0.90)

    def test_rmse_examples(self):
        per_site, mean = rmse_chi_star([0.5, 0.5], [[0.5, 0.5], [0.5, 0.5]])
        self.assertEqual(mean, 0.0)
        per_site, mean = rmse_chi_star([0.5, 0.5], [[0.6, 0.6], [0.6, 0.6]])
        np.testing.assert_allclose(per_site, [0.1, 0.1])
        self.assertAlmostEqual(mean, 0.1)


if __name__ == "__main__":
    unittest.main()
