import os
import unittest

import numpy as np

from scalemix_sim.panel import PanelDataset, Scale

slow = unittest.skipUnless(os.environ.get("SCALEMIX_SLOW_TESTS"), "long Monte-Carlo study")


def square_sites(n_side, spacing=5.0):
    xs, ys = np.meshgrid(np.arange(n_side) * spacing, np.arange(n_side) * spacing)
    return np.column_stack([xs.ravel(), ys.ravel()])


def panel(values, coords=None, scale=Scale.UNIFORM):
    values = np.asarray(values, dtype=float)
    n_sites = values.shape[2]
    if coords is None:
        coords = np.column_stack([np.arange(n_sites) * 3.0, (np.arange(n_sites) % 2) * 4.0])
    return PanelDataset(site_ids=["S%02d" % i for i in range(n_sites)], coords=coords, values=values, scale=scale)
