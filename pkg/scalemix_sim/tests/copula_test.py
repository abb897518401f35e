import unittest

import numpy as np
from hypothesis import given, settings, strategies as st
from scipy import stats

from scalemix_sim.copula import (U_CEILING, CopulaSimulator, CopulaSpec, Dependence, Variant, classify_dependence,
                                 marginal_cdf, marginal_quantile, simulate_copula, simulate_copula_x)
from scalemix_sim.errors import DomainError
from scalemix_sim.fields import GaussianProcess, Layout, StudentTProcess
from scalemix_sim.kernels import SpatialKernel, TemporalKernel
from scalemix_sim.tests.support import slow, square_sites

AD, AI = Dependence.AD, Dependence.AI


class TestVariant(unittest.TestCase):

    def test_latent_classes(self):
        self.assertEqual((Variant.M1.r_is_student_t, Variant.M1.w_is_student_t), (False, True))
        self.assertEqual((Variant.M2.r_is_student_t, Variant.M2.w_is_student_t), (True, False))
        self.assertEqual((Variant.M3.r_is_student_t, Variant.M3.w_is_student_t), (False, False))
        self.assertEqual((Variant.M8.r_is_student_t, Variant.M8.w_is_student_t), (True, True))
        self.assertFalse(Variant.M4.r_indexed_by_space)
        self.assertTrue(Variant.M5.r_indexed_by_space)

    def test_parse(self):
        self.assertIs(Variant.parse("m3"), Variant.M3)
        self.assertIs(Variant.parse(6), Variant.M6)
        with self.assertRaises(DomainError):
            Variant.parse("M9")

    def test_spec_builds_matching_processes(self):
        spec = CopulaSpec("M6", 0.4, 1.0, 8.0, 0.5)
        self.assertEqual(spec.r_process(), StudentTProcess(1.0))
        self.assertEqual(spec.w_process(), GaussianProcess())
        self.assertIsInstance(spec.r_kernel(), SpatialKernel)
        self.assertIsInstance(CopulaSpec("M2", 0.4, 1.0, 8.0, 0.5).r_kernel(), TemporalKernel)

    def test_spec_validation(self):
        with self.assertRaises(DomainError):
            CopulaSpec("M1", 1.2, 1.0, 8.0, 0.5)
        with self.assertRaises(DomainError):
            CopulaSpec("M1", 0.5, 0.0, 8.0, 0.5)

    def test_dict_round_trip(self):
        spec = CopulaSpec("M7", 0.3, 0.8, 12.0, 1.1)
        self.assertEqual(CopulaSpec.from_dict(spec.to_dict()), spec)
        self.assertEqual(CopulaSpec.from_theta("M7", spec.theta), spec)


class TestMarginal(unittest.TestCase):

    def test_endpoints_are_standard_pareto(self):
        x = np.array([1.0, 2.0, 10.0])
        for delta in (0.0, 1.0):
            np.testing.assert_allclose(marginal_cdf(x, delta), 1.0 - 1.0 / x)

    def test_half_is_continuous(self):
        for x in (1.5, 4.0, 50.0):
            at_half = marginal_cdf(x, 0.5)
            self.assertAlmostEqual(at_half, 1.0 - (2.0 * np.log(x) + 1.0) / x ** 2)
            self.assertAlmostEqual(marginal_cdf(x, 0.5 + 1e-5), at_half, delta=1e-4)
            self.assertAlmostEqual(marginal_cdf(x, 0.5 - 1e-5), at_half, delta=1e-4)

    def test_reference_values(self):
        self.assertAlmostEqual(marginal_cdf(np.e, 0.5), 1.0 - 3.0 * np.exp(-2.0), places=12)
        self.assertAlmostEqual(marginal_cdf(np.e, 0.5), 0.59399, places=5)
        self.assertAlmostEqual(marginal_cdf(2.0, 0.3), 0.4243, delta=1e-4)

    def test_cdf_matches_product_of_paretos(self):
        # log X = delta * log R + (1 - delta) * log W with independent standard exponential logs
        rng = np.random.default_rng(13)
        below = 0
        for _ in range(5):
            logs = rng.standard_exponential((2, 2000000))
            below += np.count_nonzero(0.3 * logs[0] + 0.7 * logs[1] <= np.log(2.0))
        self.assertAlmostEqual(below / 10 ** 7, marginal_cdf(2.0, 0.3), delta=0.001)

    def test_below_one_is_rejected(self):
        with self.assertRaises(DomainError):
            marginal_cdf(0.5, 0.3)
        with self.assertRaises(DomainError):
            marginal_quantile(1.0, 0.3)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.001, 0.999), st.floats(0.0, 1.0))
    def test_quantile_inverts_cdf(self, u, delta):
        self.assertAlmostEqual(marginal_cdf(marginal_quantile(u, delta), delta), u, delta=1e-9)

    def test_pareto_scale_matches_marginal(self):
        layout = Layout.regular([[0.0, 0.0]], 1)
        for variant, delta in (("M1", 0.2), ("M3", 0.5), ("M4", 0.8)):
            spec = CopulaSpec(variant, delta, 1.0, 10.0, 1.0)
            x = simulate_copula_x(spec, layout, 2000, seed=17).ravel()
            result = stats.kstest(x, lambda v: marginal_cdf(np.maximum(v, 1.0), delta))
            self.assertGreater(result.pvalue, 0.001, msg=variant)


class TestDependenceClasses(unittest.TestCase):

    def test_table_rows(self):
        def classes(variant, delta):
            c = classify_dependence(CopulaSpec(variant, delta, 1.0, 10.0, 1.0))
            return c.in_space, c.in_time, c.in_space_time

        self.assertEqual(classes("M1", 0.7), (AD, AI, AI))
        self.assertEqual(classes("M1", 0.3), (AD, AD, AD))
        self.assertEqual(classes("M2", 0.5), (AI, AI, AI))
        self.assertEqual(classes("M5", 0.7), (AI, AD, AI))
        self.assertEqual(classes("M7", 0.2), (AI, AI, AI))

    @given(st.sampled_from([Variant.M4, Variant.M8]), st.floats(0.0, 1.0))
    def test_student_t_pairs_are_always_dependent(self, variant, delta):
        c = classify_dependence(CopulaSpec(variant, delta, 1.0, 10.0, 1.0))
        self.assertEqual({c.for_mode(m) for m in ("space", "time", "spacetime")}, {AD})


class TestCopulaSimulation(unittest.TestCase):

    def setUp(self):
        self.layout = Layout.regular(square_sites(3), 20)

    def test_log_and_direct_forms_agree(self):
        for variant in ("M1", "M4", "M7"):
            sim = CopulaSimulator(CopulaSpec(variant, 0.6, 1.0, 10.0, 1.0), self.layout)
            direct, _ = sim.x_year_direct(seed=5, year=0)
            np.testing.assert_allclose(np.exp(sim.log_x_year(seed=5, year=0)), direct, rtol=1e-9)

    def test_uniform_panel(self):
        panel = simulate_copula(CopulaSpec("M2", 0.6, 1.0, 10.0, 1.0), self.layout, 3, seed=1)
        self.assertEqual(panel.values.shape, (3, 20, 9))
        self.assertTrue(np.all((panel.values > 0.0) & (panel.values < 1.0)))

    def test_years_are_reproducible_substreams(self):
        spec = CopulaSpec("M3", 0.4, 1.0, 10.0, 1.0)
        three = simulate_copula(spec, self.layout, 3, seed=9).values
        two = simulate_copula(spec, self.layout, 2, seed=9).values
        np.testing.assert_array_equal(three[:2], two)
        self.assertFalse(np.array_equal(three[0], three[1]))

    def test_delta_one_is_constant_in_space(self):
        panel = simulate_copula(CopulaSpec("M1", 1.0, 1.0, 10.0, 1.0), self.layout, 2, seed=4)
        np.testing.assert_array_equal(panel.values, np.repeat(panel.values[:, :, :1], 9, axis=2))

    def test_delta_zero_is_w_alone(self):
        spec = CopulaSpec("M1", 0.0, 1.0, 10.0, 1.0)
        sim = CopulaSimulator(spec, self.layout)
        _, w_star = sim.latent_year(seed=7, year=0)
        expected = np.minimum(spec.w_process().cdf(w_star), U_CEILING)
        np.testing.assert_allclose(sim.uniform_year(seed=7, year=0), expected, rtol=0.0, atol=1e-12)
        panel = simulate_copula(spec, self.layout, 1, seed=7)
        np.testing.assert_allclose(panel.values[0], expected.T, rtol=0.0, atol=1e-12)

    def test_n_years_must_be_positive(self):
        with self.assertRaises(DomainError):
            simulate_copula(CopulaSpec("M1", 0.5, 1.0, 10.0, 1.0), self.layout, 0, seed=1)

    @slow
    def test_uniform_margins(self):
        spec = CopulaSpec("M1", 0.577, 0.874, 9.107, 0.328)
        panel = simulate_copula(spec, Layout.regular([[0.0, 0.0]], 1), 100000, seed=2)
        self.assertGreater(stats.kstest(panel.values.ravel(), "uniform").pvalue, 0.01)


if __name__ == "__main__":
    unittest.main()
