import os
import tempfile
import unittest

import numpy as np

from scalemix_sim.errors import DomainError, IngestError, LayoutError
from scalemix_sim.panel import PanelDataset, Scale, bundled_stations, ingest
from scalemix_sim.tests.support import panel

STATIONS = "site_id,x_km,y_km\nA,0,0\nB,3,4\n"


class TestIngest(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def write(self, name, text):
        path = os.path.join(self.tmp.name, name)
        with open(path, "w") as f:
            f.write(text)
        return path

    def ingest(self, values, stations=STATIONS, scale=Scale.DATA):
        return ingest(self.write("stations.csv", stations), self.write("values.csv", values), scale)

    def test_single_site_year(self):
        data = self.ingest("site_id,year,day_index,value\nA,2001,1,1.5\nA,2001,2,0\nA,2001,3,7\n",
                           stations="site_id,x_km,y_km\nA,0,0\n")
        self.assertEqual(data.values.shape, (1, 3, 1))
        np.testing.assert_array_equal(data.values[0, :, 0], [1.5, 0.0, 7.0])
        self.assertEqual(data.years, [2001])

    def test_missing_records_are_masked(self):
        data = self.ingest("site_id,year,day_index,value\nA,2001,1,1\nA,2001,2,2\nB,2001,2,3\n"
                           "A,2002,1,4\nA,2002,2,\nB,2002,1,6\nB,2002,2,7\n")
        self.assertEqual(data.values.shape, (2, 2, 2))
        self.assertTrue(data.mask[0, 0, 1])
        self.assertTrue(data.mask[1, 1, 0])
        self.assertEqual(int(data.mask.sum()), 2)

    def test_duplicate_record(self):
        with self.assertRaises(IngestError) as caught:
            self.ingest("site_id,year,day_index,value\nA,2001,1,1\nA,2001,2,2\nA,2001,2,3\n")
        self.assertIn("site A, year 2001, day 2", str(caught.exception))

    def test_unknown_site(self):
        with self.assertRaises(IngestError):
            self.ingest("site_id,year,day_index,value\nZ,2001,1,1\n")

    def test_missing_column(self):
        with self.assertRaises(IngestError):
            self.ingest("site_id,year,value\nA,2001,1\n")

    def test_non_numeric_value(self):
        with self.assertRaises(IngestError):
            self.ingest("site_id,year,day_index,value\nA,2001,1,wet\n")

    def test_inconsistent_days(self):
        with self.assertRaises(IngestError):
            self.ingest("site_id,year,day_index,value\nA,2001,1,1\nA,2001,2,2\nA,2002,1,3\n")

    def test_days_start_at_one(self):
        with self.assertRaises(IngestError):
            self.ingest("site_id,year,day_index,value\nA,2001,0,1\nA,2001,1,2\n")

    def test_uniform_values_out_of_range(self):
        with self.assertRaises(DomainError):
            self.ingest("site_id,year,day_index,value\nA,2001,1,0.5\nA,2001,2,1.5\n", scale=Scale.UNIFORM)

    def test_export_round_trip(self):
        values = np.random.default_rng(0).random((3, 5, 2)) * 20.0
        values[1, 2, 0] = np.nan
        original = panel(values, np.array([[0.0, 0.0], [3.0, 4.0]]), Scale.DATA)
        stations, values_csv = os.path.join(self.tmp.name, "s.csv"), os.path.join(self.tmp.name, "v.csv")
        original.export_csv(stations, values_csv)
        again = ingest(stations, values_csv)
        np.testing.assert_array_equal(again.values, original.values)
        np.testing.assert_array_equal(again.mask, original.mask)
        self.assertEqual(again.site_ids, original.site_ids)


class TestPanelDataset(unittest.TestCase):

    def test_shape_checks(self):
        with self.assertRaises(LayoutError):
            PanelDataset(["A"], [[0.0, 0.0]], np.zeros((2, 3)))
        with self.assertRaises(LayoutError):
            PanelDataset(["A", "A"], [[0.0, 0.0], [1.0, 1.0]], np.zeros((1, 3, 2)))
        with self.assertRaises(LayoutError):
            PanelDataset(["A", "B"], [[0.0, 0.0]], np.zeros((1, 3, 2)))

    def test_censoring(self):
        data = panel(np.array([[[0.2, 0.95], [0.9, np.nan]]]))
        censored = data.censored(0.9)
        np.testing.assert_array_equal(censored.values, [[[0.9, 0.95], [0.9, np.nan]]])
        np.testing.assert_array_equal(censored.mask, data.mask)
        with self.assertRaises(DomainError):
            panel(np.ones((1, 2, 2)), scale=Scale.DATA).censored(0.9)

    def test_select_years(self):
        data = panel(np.random.default_rng(1).random((4, 3, 2)))
        picked = data.select_years([3, 1, 1])
        self.assertEqual(picked.years, [4, 2, 2])
        np.testing.assert_array_equal(picked.values[0], data.values[3])

    def test_layout(self):
        data = panel(np.random.default_rng(2).random((1, 4, 3)))
        self.assertEqual((data.layout.n_sites, data.layout.n_times), (3, 4))
        self.assertEqual(data.distances().shape, (3, 3))

    def test_bundled_stations(self):
        site_ids, coords = bundled_stations()
        self.assertEqual(len(site_ids), 30)
        self.assertEqual(len(np.unique(coords, axis=0)), 30)
        self.assertEqual(np.linalg.matrix_rank(np.column_stack([np.ones(30), coords])), 3)


if __name__ == "__main__":
    unittest.main()
