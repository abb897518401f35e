"""Station panels: N independent years x T days x n sites, with a missing-value mask."""
import logging
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from scalemix_sim.errors import DomainError, IngestError, LayoutError
from scalemix_sim.fields import Layout

logger = logging.getLogger('scalemix_sim')

STATIONS_COLUMNS = ["site_id", "x_km", "y_km"]
VALUES_COLUMNS = ["site_id", "year", "day_index", "value"]
BUNDLED_STATIONS = os.path.join(os.path.dirname(__file__), "data", "north_brabant_like_stations.csv")


class Scale(Enum):
    DATA = "data"
    UNIFORM = "uniform"


@dataclass
class PanelDataset:
    site_ids: List[str]
    coords: np.ndarray
    values: np.ndarray
    scale: Scale = Scale.DATA
    mask: Optional[np.ndarray] = None
    years: Optional[List[int]] = None
    days: Optional[np.ndarray] = None
    # Free-form provenance notes carried into reports
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        self.values = np.array(self.values, dtype=float)
        if self.values.ndim != 3:
            raise LayoutError("Panel values must be an N x T x n array")
        n_years, n_days, n_sites = self.values.shape
        if len(self.site_ids) != n_sites or self.coords.shape != (n_sites, 2):
            raise LayoutError("Panel has %d sites in values but %d ids / %s coordinates"
                              % (n_sites, len(self.site_ids), self.coords.shape))
        if len(set(self.site_ids)) != len(self.site_ids):
            raise LayoutError("Duplicated site_id in panel")
        if not np.all(np.isfinite(self.coords)):
            raise LayoutError("Site coordinates must be finite")
        if self.mask is None:
            self.mask = ~np.isfinite(self.values)
        else:
            self.mask = np.asarray(self.mask, dtype=bool) | ~np.isfinite(self.values)
        self.values[self.mask] = np.nan
        if self.years is None:
            self.years = list(range(1, n_years + 1))
        if self.days is None:
            self.days = np.arange(1, n_days + 1, dtype=float)
        self.days = np.asarray(self.days, dtype=float)
        if self.scale is Scale.UNIFORM:
            observed = self.values[~self.mask]
            if observed.size and (observed.min() < 0.0 or observed.max() > 1.0):
                raise DomainError("Uniform-scale panel has values outside [0, 1]")

    @property
    def n_years(self):
        return self.values.shape[0]

    @property
    def n_days(self):
        return self.values.shape[1]

    @property
    def n_sites(self):
        return self.values.shape[2]

    @property
    def layout(self):
        return Layout(self.coords, self.days)

    def distances(self):
        return cdist(self.coords, self.coords)

    def with_values(self, values, scale=None):
        return replace(self, values=values, scale=scale or self.scale, mask=self.mask.copy(),
                       notes=dict(self.notes))

    def select_years(self, indices):
        indices = np.asarray(indices, dtype=int)
        return replace(self, values=self.values[indices], mask=self.mask[indices],
                       years=[self.years[i] for i in indices], notes=dict(self.notes))

    def censored(self, p):
        """Uniform panel with every value at or below p replaced by p."""
        if self.scale is not Scale.UNIFORM:
            raise DomainError("Only uniform-scale panels can be censored at a probability")
        return self.with_values(np.where(self.mask, np.nan, np.maximum(self.values, p)))

    def site_series(self, site):
        return self.values[:, :, site]

    def to_frames(self):
        stations = pd.DataFrame({"site_id": self.site_ids, "x_km": self.coords[:, 0],
                                 "y_km": self.coords[:, 1]})
        year_idx, day_idx, site_idx = np.nonzero(~self.mask)
        values = pd.DataFrame({
            "site_id": np.asarray(self.site_ids, dtype=object)[site_idx],
            "year": np.asarray(self.years)[year_idx],
            "day_index": day_idx + 1,
            "value": self.values[year_idx, day_idx, site_idx],
        })
        return stations, values

    def export_csv(self, stations_csv, values_csv):
        stations, values = self.to_frames()
        stations.to_csv(stations_csv, index=False, float_format="%.17g")
        values.to_csv(values_csv, index=False, float_format="%.17g")


def read_stations(stations_csv):
    try:
        stations = pd.read_csv(stations_csv, dtype={"site_id": str})
    except (OSError, pd.errors.ParserError) as exc:
        raise IngestError("Cannot read stations file " + str(stations_csv) + ": " + str(exc)) from exc
    missing = [c for c in STATIONS_COLUMNS if c not in stations.columns]
    if missing:
        raise IngestError("Stations file lacks column(s) " + ", ".join(missing))
    for column in ("x_km", "y_km"):
        coerced = pd.to_numeric(stations[column], errors="coerce")
        bad = coerced.isna() & stations[column].notna() | stations[column].isna()
        if bad.any():
            row = stations[bad].iloc[0]
            raise IngestError("Non-numeric " + column + " for site " + str(row["site_id"]))
        stations[column] = coerced
    duplicated = stations["site_id"][stations["site_id"].duplicated()]
    if len(duplicated):
        raise IngestError("Duplicated site_id " + str(duplicated.iloc[0]) + " in stations file")
    return stations


def ingest(stations_csv, values_csv, scale=Scale.DATA):
    stations = read_stations(stations_csv)
    try:
        values = pd.read_csv(values_csv, dtype={"site_id": str})
    except (OSError, pd.errors.ParserError) as exc:
        raise IngestError("Cannot read values file " + str(values_csv) + ": " + str(exc)) from exc
    missing = [c for c in VALUES_COLUMNS if c not in values.columns]
    if missing:
        raise IngestError("Values file lacks column(s) " + ", ".join(missing))

    for column in ("year", "day_index"):
        coerced = pd.to_numeric(values[column], errors="coerce")
        bad = coerced.isna() | (coerced != np.round(coerced))
        if bad.any():
            row = values[bad].iloc[0]
            raise IngestError("Non-integer " + column + " in record (" + str(row["site_id"]) + ", "
                              + str(row["year"]) + ", " + str(row["day_index"]) + ")")
        values[column] = coerced.astype(int)
    coerced = pd.to_numeric(values["value"], errors="coerce")
    bad = coerced.isna() & values["value"].notna()
    if bad.any():
        row = values[bad].iloc[0]
        raise IngestError("Non-numeric value in record (%s, %d, %d)"
                          % (row["site_id"], row["year"], row["day_index"]))
    values["value"] = coerced

    unknown = ~values["site_id"].isin(stations["site_id"])
    if unknown.any():
        raise IngestError("Unknown site_id " + str(values.loc[unknown, "site_id"].iloc[0]) + " in values file")
    duplicated = values.duplicated(subset=["site_id", "year", "day_index"])
    if duplicated.any():
        row = values[duplicated].iloc[0]
        raise IngestError("Duplicate record for (site %s, year %d, day %d)"
                          % (row["site_id"], row["year"], row["day_index"]))
    if (values["day_index"] < 1).any():
        raise IngestError("day_index must start at 1")

    days_per_year = values.groupby("year")["day_index"].max()
    if days_per_year.nunique() != 1:
        raise IngestError("Inconsistent number of days across years: "
                          + ", ".join("%d->%d" % (y, t) for y, t in days_per_year.items()))
    n_days = int(days_per_year.iloc[0])
    years = sorted(int(y) for y in values["year"].unique())
    site_index = {site: i for i, site in enumerate(stations["site_id"])}
    year_index = {year: i for i, year in enumerate(years)}

    cube = np.full((len(years), n_days, len(site_index)), np.nan)
    cube[values["year"].map(year_index).to_numpy(),
         values["day_index"].to_numpy() - 1,
         values["site_id"].map(site_index).to_numpy()] = values["value"].to_numpy()
    logger.info("Ingested %d records: %d years x %d days x %d sites",
                len(values), len(years), n_days, len(site_index))
    return PanelDataset(site_ids=list(stations["site_id"]),
                        coords=stations[["x_km", "y_km"]].to_numpy(),
                        values=cube, scale=scale, years=years)


def bundled_stations():
    """The bundled 30-station layout (projected km) shaped like the North Brabant network."""
    stations = read_stations(BUNDLED_STATIONS)
    return list(stations["site_id"]), stations[["x_km", "y_km"]].to_numpy()
