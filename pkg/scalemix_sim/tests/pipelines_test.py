import json
import os
import tempfile
import unittest
from dataclasses import replace
from unittest import mock

import numpy as np
import pandas as pd

from scalemix_sim import pipelines
from scalemix_sim.config import Budgets, LayoutConfig, MarginalConfig, RunConfig
from scalemix_sim.copula import CopulaSpec, Variant, simulate_copula
from scalemix_sim.errors import ConfigurationError, EstimationError, SizeError
from scalemix_sim.fields import Layout
from scalemix_sim.marginal import MarginalSpec
from scalemix_sim.nn.network import NetworkConfig
from scalemix_sim.panel import Scale, bundled_stations
from scalemix_sim.tail import GridConfig
from scalemix_sim.tests.support import panel, slow, square_sites

SITES = square_sites(3)[:6]
SITE_IDS = ["S%d" % i for i in range(6)]


def tiny_config(p=0.0, n_days=25, **layout):
    return RunConfig(
        marginal=MarginalConfig(p=p),
        grid=GridConfig(levels=(0.95,), n_dist_bins=2, lags=(0, 1, 2)),
        network=NetworkConfig(filters=2, dense=(4,), epochs=2, batch_size=8),
        budgets=Budgets(K=4, B=2, folds=1, n_mc=2, verify_pairs=60000, year_block_reps=3, chi_star_draws=2,
                        box_chi_draws=1),
        layout=LayoutConfig(n_years=2, n_days=n_days, **layout),
        seed=3)


def uniform_panel(n_years=2, n_days=25, seed=1):
    return simulate_copula(CopulaSpec("M3", 0.5, 1.0, 10.0, 1.0), Layout.regular(SITES, n_days), n_years, seed)


class TestOutputs(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def test_versioned_dirs(self):
        first = pipelines.versioned_dir(self.tmp.name, "fit")
        second = pipelines.versioned_dir(self.tmp.name, "fit")
        self.assertEqual(os.path.basename(first), "fit-001")
        self.assertEqual(os.path.basename(second), "fit-002")

    def test_json_reports(self):
        path = os.path.join(self.tmp.name, "report.json")
        pipelines.write_json(path, {"b": float("nan"), "a": np.float64(1.5), "c": np.arange(2), "d": np.bool_(True)})
        with open(path) as f:
            text = f.read()
        self.assertEqual(json.loads(text), {"a": 1.5, "b": None, "c": [0, 1], "d": True})
        self.assertLess(text.index('"a"'), text.index('"b"'))

    def test_stage_labels_errors(self):
        with self.assertRaises(EstimationError) as caught:
            with pipelines.stage("marginal"):
                raise EstimationError("no convergence")
        self.assertEqual(caught.exception.stage, "marginal")


class TestPanels(unittest.TestCase):

    def test_data_scale_bulk_and_tail(self):
        spec = MarginalSpec(0.9, [10.0, 20.0], 5.0, 0.1)
        u = np.array([[[0.45, 0.45], [0.9, 0.9], [0.99, 0.99]]])
        data = pipelines.to_data_scale(panel(u), spec)
        np.testing.assert_allclose(data.values[0, 0], [5.0, 10.0])
        np.testing.assert_allclose(data.values[0, 1], [10.0, 20.0])
        self.assertTrue(np.all(data.values[0, 2] > [10.0, 20.0]))
        self.assertIs(data.scale, Scale.DATA)

    def test_simulated_panels(self):
        uniform, data = pipelines.simulate_panels(tiny_config(p=0.9), site_ids=SITE_IDS, coords=SITES)
        self.assertEqual(data.values.shape, (2, 25, 6))
        mu = pipelines.threshold_surface((20.0, 0.1, 0.05), SITES)
        np.testing.assert_array_equal(data.values > mu, uniform.values > 0.9)

    def test_fixture_is_deterministic(self):
        first, second = pipelines.make_fixture(), pipelines.make_fixture()
        self.assertEqual(first.values.shape, (20, 92, 30))
        np.testing.assert_array_equal(first.values, second.values)
        self.assertEqual(first.notes["fixture"]["seed"], 2024)


class TestModelSelection(unittest.TestCase):

    def test_holdout_size(self):
        config = RunConfig()
        self.assertEqual(pipelines.holdout_size(config, 20), 5)
        self.assertEqual(pipelines.holdout_size(config, 8), 2)
        with self.assertRaises(ConfigurationError):
            pipelines.holdout_size(config, 3)

    def test_year_split(self):
        fit, held = pipelines.split_years(10, seed=1, fold=0, holdout=2)
        self.assertEqual(len(held), 2)
        self.assertEqual(sorted(np.concatenate([fit, held])), list(range(10)))

    def test_select(self):
        with tempfile.TemporaryDirectory() as tmp:
            report = pipelines.pipeline_model_select(tiny_config(), uniform_panel(n_years=4), candidates=["M3", "M4"],
                                                     out=tmp)
            self.assertTrue(os.path.exists(os.path.join(tmp, "model_selection.json")))
        self.assertEqual(set(report["models"]), {"M3", "M4"})
        self.assertIn(report["best"], report["models"])
        self.assertEqual(report["holdout_years"], 1)

    def test_simulated_grids_share_holdout_gaps(self):
        data = uniform_panel(n_years=4)
        values = data.values.copy()
        values[:, :3, 0] = np.nan
        data = data.with_values(values)
        with mock.patch("scalemix_sim.pipelines.model_grid", wraps=pipelines.model_grid) as grid:
            pipelines.pipeline_model_select(tiny_config(), data, candidates=["M3"])
        mask = grid.call_args.kwargs["mask"]
        self.assertEqual(mask.shape, (1, 25, 6))
        self.assertTrue(mask[:, :3, 0].all())
        self.assertEqual(int(mask.sum()), 3)

    @slow
    def test_model_three_data_select_model_three(self):
        coords = bundled_stations()[1][:15]
        layout = Layout.regular(coords, 60)
        config = RunConfig(network=NetworkConfig(epochs=40), budgets=Budgets(K=1500, folds=5, n_mc=20),
                           layout=LayoutConfig(n_years=10, n_days=60), seed=31)
        truth = CopulaSpec("M3", 0.3, 1.0, 6.0, 1.0)
        template = simulate_copula(truth, layout, 10, seed=300)
        holdout = pipelines.holdout_size(config, 10)
        networks = {Variant.parse(v): pipelines.train_network(config, template, v, n_years=10 - holdout)[0]
                    for v in ("M1", "M3")}
        wins = 0
        for rep in range(20):
            data = simulate_copula(truth, layout, 10, seed=400 + rep)
            report = pipelines.pipeline_model_select(replace(config, seed=rep), data, candidates=["M1", "M3"],
                                                     networks=networks)
            wins += report["best"] == "M3"
        self.assertGreaterEqual(wins, 14)


class TestFit(unittest.TestCase):

    def test_uniform_fit_is_reproducible(self):
        data = uniform_panel()
        texts = []
        with tempfile.TemporaryDirectory() as tmp:
            for name in ("a", "b"):
                out = os.path.join(tmp, name)
                os.makedirs(out)
                report = pipelines.pipeline_fit(tiny_config(), data, out=out)
                with open(os.path.join(out, "report.json")) as f:
                    texts.append(f.read())
                self.assertTrue(os.path.exists(os.path.join(out, "bootstrap_draws.csv")))
        self.assertEqual(texts[0], texts[1])
        self.assertTrue(report["flags"]["marginal_step_skipped"])
        self.assertEqual(set(report["parameters"]), {"delta", "phi", "psi1", "psi2"})

    def test_bootstrap_centred_on_estimates(self):
        with mock.patch("scalemix_sim.pipelines.bootstrap", wraps=pipelines.bootstrap) as resample:
            report = pipelines.pipeline_fit(tiny_config(), uniform_panel())
        spec = resample.call_args.args[1]
        estimates = [report["parameters"][name]["estimate"] for name in ("delta", "phi", "psi1", "psi2")]
        np.testing.assert_allclose(spec.theta, estimates)
        self.assertEqual(report["bootstrap"]["level"], 0.90)

    def test_data_scale_fit(self):
        config = tiny_config(p=0.9, n_days=30)
        _, data = pipelines.simulate_panels(config, n_years=3, site_ids=SITE_IDS, coords=SITES)
        with tempfile.TemporaryDirectory() as tmp:
            report = pipelines.pipeline_fit(config, data, out=tmp, with_bootstrap=False)
            thresholds = pd.read_csv(os.path.join(tmp, "thresholds.csv"))
        self.assertFalse(report["flags"]["marginal_step_skipped"])
        self.assertIn("sigma", report["parameters"])
        self.assertEqual(len(thresholds), 6)
        self.assertGreater(report["marginal"]["gpd"]["n"], 30)


class TestDiagnostics(unittest.TestCase):

    def test_diagnose(self):
        spec = CopulaSpec("M3", 0.5, 1.0, 10.0, 1.0)
        with tempfile.TemporaryDirectory() as tmp:
            report = pipelines.pipeline_diagnose(tiny_config(), uniform_panel(), spec=spec, out=tmp)
            for name in ("chi_grid.csv", "chi_grid.json", "diagnostics.json", "sites.csv"):
                self.assertTrue(os.path.exists(os.path.join(tmp, name)), msg=name)
            frame = pd.read_csv(os.path.join(tmp, "chi_grid.csv"))
        self.assertIn("band_lo", frame.columns)
        self.assertEqual(len(report["chi_star"]), 6)
        self.assertNotIn("marginal", report)

    def test_verify(self):
        spec = CopulaSpec("M3", 0.3, 0.3, 4.0, 0.3)
        with tempfile.TemporaryDirectory() as tmp:
            report = pipelines.pipeline_verify(tiny_config(), spec, modes=("spacetime",), distance=5.0, out=tmp)
            self.assertTrue(os.path.exists(os.path.join(tmp, "classes.json")))
        self.assertTrue(report["all_match"])
        self.assertEqual(report["modes"]["spacetime"]["verdict"], "AI")


class TestStorm(unittest.TestCase):

    def test_fully_dependent_storm(self):
        config = tiny_config(p=0.9, storm_spacing_km=2.0, storm_days=3)
        spec = CopulaSpec("M1", 1.0, 1.0, 9.0, 0.5)
        with tempfile.TemporaryDirectory() as tmp:
            frame = pipelines.pipeline_storm(config, spec, (20.0, 0.0, 0.0), 5.0, 0.1, coords=SITES, out=tmp)
            self.assertTrue(os.path.exists(os.path.join(tmp, "storm.csv")))
        self.assertEqual(list(frame.columns), ["x", "y", "day", "value", "exceeds", "observed"])
        self.assertEqual(int(frame[frame["day"] == 1]["observed"].sum()), 6)
        self.assertTrue(np.all(frame.groupby("day")["exceeds"].nunique() == 1))

    def test_lattice_budget(self):
        config = replace_budget(tiny_config(p=0.9), storm_max_points=10)
        with self.assertRaises(SizeError):
            pipelines.pipeline_storm(config, CopulaSpec("M1", 0.5, 1.0, 9.0, 0.5), (20.0, 0.0, 0.0), 5.0, 0.1,
                                     coords=SITES)

    def test_lattice_skips_stations(self):
        lattice = pipelines.storm_lattice(SITES, 5.0)
        self.assertEqual(len(lattice), 0)
        self.assertEqual(len(pipelines.storm_lattice(SITES, 2.5)), 15 - 6)


def replace_budget(config, **budgets):
    return replace(config, budgets=replace(config.budgets, **budgets))


if __name__ == "__main__":
    unittest.main()
