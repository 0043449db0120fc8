"""Panels of annual maxima: CSV ingestion, validation, splitting and serialization.

Two UTF-8 CSV files describe a panel:

stations file, one row per station::

    station_id,lon_km,lat_km,elev_km,region_signed_dist_km,mean_level

maxima file, long form, one row per observed (year, station)::

    year,station_id,value

Missing years are simply absent from the maxima file. Lines starting with
``#`` are comments (used for provenance headers) and are skipped.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .climate_space import StationCoords
from .errors import DataError, ParseError
from .margins import StationSeries

STATION_COLUMNS = ("station_id", "lon_km", "lat_km", "elev_km", "region_signed_dist_km",
                   "mean_level")
MAXIMA_COLUMNS = ("year", "station_id", "value")
SCALES = ("raw", "frechet")


@dataclass(frozen=True)
class MaximaPanel:
    """K years x D stations of annual maxima; NaN marks a missing cell."""

    stations: tuple
    years: tuple
    matrix: np.ndarray
    scale_tag: str = "raw"

    def __post_init__(self):
        stations = tuple(self.stations)
        years = tuple(int(y) for y in self.years)
        matrix = np.array(self.matrix, dtype=float)
        matrix.setflags(write=False)
        object.__setattr__(self, "stations", stations)
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "matrix", matrix)
        ids = [s.station_id for s in stations]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise DataError(f"duplicate station ids {dup}")
        if len(set(years)) != len(years):
            raise DataError("duplicate year labels")
        if matrix.shape != (len(years), len(stations)):
            raise DataError(
                f"matrix shape {matrix.shape} does not match {len(years)} years x "
                f"{len(stations)} stations"
            )
        if self.scale_tag not in SCALES:
            raise DataError(f"scale_tag must be one of {SCALES}")
        if np.any(np.isinf(matrix)):
            raise DataError("infinite values in panel")
        if self.scale_tag == "frechet":
            present = matrix[~np.isnan(matrix)]
            if np.any(present <= 0):
                raise DataError("Frechet-scale panels must hold positive values")

    @property
    def ids(self) -> tuple:
        return tuple(s.station_id for s in self.stations)

    @property
    def K(self) -> int:
        return len(self.years)

    @property
    def D(self) -> int:
        return len(self.stations)

    @property
    def n_missing(self) -> int:
        return int(np.isnan(self.matrix).sum())

    def index(self, station_id: str) -> int:
        try:
            return self.ids.index(station_id)
        except ValueError:
            raise KeyError(f"unknown station id {station_id!r}") from None

    def series(self, station_id: str) -> StationSeries:
        col = self.matrix[:, self.index(station_id)]
        keep = ~np.isnan(col)
        years = [y for y, k in zip(self.years, keep) if k]
        return StationSeries(station_id, tuple(col[keep]), tuple(years))

    def subset(self, ids: Sequence[str]) -> "MaximaPanel":
        idx = [self.index(i) for i in ids]
        return MaximaPanel(
            tuple(self.stations[i] for i in idx), self.years, self.matrix[:, idx], self.scale_tag
        )

    def with_matrix(self, matrix, scale_tag: str) -> "MaximaPanel":
        return MaximaPanel(self.stations, self.years, matrix, scale_tag)

    def equals(self, other: "MaximaPanel") -> bool:
        return (
            self.stations == other.stations
            and self.years == other.years
            and self.scale_tag == other.scale_tag
            and np.array_equal(self.matrix, other.matrix, equal_nan=True)
        )


@dataclass(frozen=True)
class Holdout:
    fit_ids: tuple
    validation_ids: tuple


def _rows(path: Path):
    """Yield (line_number, row) for non-comment rows of a CSV file."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or (row[0].startswith("#")):
                continue
            yield reader.line_num, [c.strip() for c in row]


def _check_header(header, expected, path, line):
    missing = [c for c in expected if c not in header]
    unknown = [c for c in header if c not in expected]
    if unknown:
        raise ParseError(f"unexpected column {unknown[0]!r}; expected {list(expected)}", line, path)
    if missing:
        raise ParseError(f"missing column {missing[0]!r}", line, path)
    if len(set(header)) != len(header):
        raise ParseError("duplicate column in header", line, path)


def _float(cell, column, path, line, optional=False):
    if cell == "":
        if optional:
            return None
        raise ParseError(f"empty value in column {column!r}", line, path)
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"non-numeric value {cell!r} in column {column!r}", line, path) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {cell!r} in column {column!r}", line, path)
    return v


def load_stations(path) -> tuple:
    path = Path(path)
    rows = _rows(path)
    try:
        line, header = next(rows)
    except StopIteration:
        raise ParseError("empty stations file", None, path) from None
    _check_header(header, STATION_COLUMNS, path, line)
    col = {c: header.index(c) for c in header}
    out, seen = [], set()
    for line, row in rows:
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line, path)
        sid = row[col["station_id"]]
        if not sid:
            raise ParseError("empty station_id", line, path)
        if sid in seen:
            raise ParseError(f"duplicate station id {sid!r}", line, path)
        seen.add(sid)
        out.append(
            StationCoords(
                lon=_float(row[col["lon_km"]], "lon_km", path, line),
                lat=_float(row[col["lat_km"]], "lat_km", path, line),
                elev=_float(row[col["elev_km"]], "elev_km", path, line),
                region_signed_dist=_float(
                    row[col["region_signed_dist_km"]], "region_signed_dist_km", path, line
                ),
                mean_level=_float(row[col["mean_level"]], "mean_level", path, line, True),
                station_id=sid,
            )
        )
    if not out:
        raise ParseError("no stations", None, path)
    return tuple(out)


def load_panel(stations_path, maxima_path, scale_tag: str = "raw") -> MaximaPanel:
    """Read and validate a panel from the stations and long-form maxima CSVs."""
    stations = load_stations(stations_path)
    path = Path(maxima_path)
    index = {s.station_id: i for i, s in enumerate(stations)}
    rows = _rows(path)
    try:
        line, header = next(rows)
    except StopIteration:
        raise ParseError("empty maxima file", None, path) from None
    _check_header(header, MAXIMA_COLUMNS, path, line)
    col = {c: header.index(c) for c in header}
    cells = {}
    for line, row in rows:
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line, path)
        ycell = row[col["year"]]
        try:
            year = int(ycell)
        except ValueError:
            raise ParseError(f"year {ycell!r} is not an integer", line, path) from None
        sid = row[col["station_id"]]
        if sid not in index:
            raise ParseError(f"station {sid!r} not in stations file", line, path)
        if (year, sid) in cells:
            raise ParseError(f"duplicate entry for year {year}, station {sid!r}", line, path)
        value = _float(row[col["value"]], "value", path, line, optional=True)
        cells[(year, sid)] = np.nan if value is None else value
    if not cells:
        raise ParseError("no maxima rows", None, path)
    years = tuple(sorted({y for y, _ in cells}))
    yindex = {y: k for k, y in enumerate(years)}
    matrix = np.full((len(years), len(stations)), np.nan)
    for (y, sid), v in cells.items():
        matrix[yindex[y], index[sid]] = v
    empty = [stations[i].station_id for i in range(len(stations)) if np.all(np.isnan(matrix[:, i]))]
    if empty:
        raise ParseError(f"station {empty[0]!r} has no observations", None, path)
    try:
        return MaximaPanel(stations, years, matrix, scale_tag)
    except DataError as exc:
        raise ParseError(str(exc), None, path) from None


def fmt(v) -> str:
    """Round-trip-safe float formatting."""
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


def provenance_line(provenance: str | None) -> str:
    return f"# {provenance}\n" if provenance else ""


def stations_csv(stations: Iterable[StationCoords], provenance: str | None = None) -> str:
    buf = io.StringIO()
    buf.write(provenance_line(provenance))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STATION_COLUMNS)
    for s in stations:
        w.writerow([s.station_id, fmt(s.lon), fmt(s.lat), fmt(s.elev),
                    fmt(s.region_signed_dist), fmt(s.mean_level)])
    return buf.getvalue()


def maxima_csv(panel: MaximaPanel, provenance: str | None = None) -> str:
    buf = io.StringIO()
    buf.write(provenance_line(provenance))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MAXIMA_COLUMNS)
    for k, year in enumerate(panel.years):
        for d, sid in enumerate(panel.ids):
            v = panel.matrix[k, d]
            if not np.isnan(v):
                w.writerow([year, sid, fmt(v)])
    return buf.getvalue()


def save_panel(panel: MaximaPanel, stations_path, maxima_path, provenance: str | None = None):
    Path(stations_path).write_text(stations_csv(panel.stations, provenance), encoding="utf-8")
    Path(maxima_path).write_text(maxima_csv(panel, provenance), encoding="utf-8")


def write_table(path, columns: Sequence[str], rows: Iterable[Sequence], provenance=None):
    """Write a flat CSV table; floats use round-trip formatting."""
    buf = io.StringIO()
    buf.write(provenance_line(provenance))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def split_holdout(panel: MaximaPanel, validation_ids: Sequence[str]):
    """Split into (fit panel, validation panel); station order and years are kept."""
    validation_ids = list(validation_ids)
    if len(set(validation_ids)) != len(validation_ids):
        raise KeyError("validation ids contain duplicates")
    for sid in validation_ids:
        panel.index(sid)
    val = set(validation_ids)
    fit_ids = [i for i in panel.ids if i not in val]
    val_ids = [i for i in panel.ids if i in val]
    return panel.subset(fit_ids), panel.subset(val_ids)


# ---- synthetic datasets -----------------------------------------------------


@dataclass(frozen=True)
class Layout:
    """Random station layout in a lon x lat box (km), with an optional straight
    east-west border at ``border_lat``; stations north of it have positive signed
    distance. Mean levels rise linearly with elevation."""

    n_stations: int = 100
    width: float = 200.0
    height: float = 150.0
    elev_range: tuple = (0.2, 3.0)
    border_lat: float | None = None
    mean_base: float = 50.0
    mean_per_km: float = 40.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "elev_range", tuple(float(e) for e in self.elev_range))
        if self.n_stations < 2:
            raise DataError("layout must produce at least two stations")
        if self.width <= 0 or self.height <= 0:
            raise DataError("layout box must have positive size")
        lo, hi = self.elev_range
        if not lo <= hi:
            raise DataError("elevation range must satisfy lo <= hi")

    def stations(self) -> tuple:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(self.seed)))
        n = self.n_stations
        lon = rng.uniform(0.0, self.width, n)
        lat = rng.uniform(0.0, self.height, n)
        elev = rng.uniform(*self.elev_range, n)
        border = self.height / 2 if self.border_lat is None else self.border_lat
        width = len(str(n - 1))
        return tuple(
            StationCoords(
                lon=float(lon[k]), lat=float(lat[k]), elev=float(elev[k]),
                region_signed_dist=float(lat[k] - border),
                mean_level=float(self.mean_base + self.mean_per_km * elev[k]),
                station_id=f"S{k:0{width}d}",
            )
            for k in range(n)
        )


def theta_fraction(model, stations, threshold: float) -> float:
    """Fraction of station pairs whose extremal coefficient is at most ``threshold``."""
    from .climate_space import pairwise_distances

    theta = model.extremal_coefficient(pairwise_distances(model.points(stations)))
    return float(np.mean(np.asarray(theta) <= threshold))


def calibrate_range(spec, beta, stations, threshold: float = 1.68, fraction: float = 0.25,
                    band_width: float | None = None) -> float:
    """Smallest range for which ``fraction`` of the pairs have theta <= ``threshold``.

    ``beta`` is a full parameter vector for ``spec``; its range entry is ignored.
    Bisection on log(range) within the range bounds.
    """
    k = spec.param_names.index("range")
    lo, hi = (math.log(b) for b in spec.param_bounds()[k])
    beta = np.array(beta, dtype=float)

    def frac(log_r):
        beta[k] = math.exp(log_r)
        return theta_fraction(spec.build(beta, band_width), stations, threshold)

    if frac(hi) < fraction or frac(lo) >= fraction:
        raise DataError("target dependence not attainable within the range bounds")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if frac(mid) >= fraction:
            hi = mid
        else:
            lo = mid
    return math.exp(hi)


def synth_dataset(spec, beta, layout: "Layout | Sequence[StationCoords]", K: int, seed: int,
                  band_width: float | None = None, margins=None):
    """Simulate a K-year panel from a fully specified model at a station layout.

    Returns (panel, truth). With ``margins`` (a GevParams) the Frechet fields are
    mapped to that GEV and the panel is on the raw scale.
    """
    from .margins import from_unit_frechet
    from .simulation import SimConfig, simulate_model

    if K < 1:
        raise DataError("K must be at least 1")
    beta = spec.check_beta(beta)
    stations = layout.stations() if isinstance(layout, Layout) else tuple(layout)
    if len(stations) < 2:
        raise DataError("layout must produce at least two stations")
    model = spec.build(beta, band_width)
    batch = simulate_model(model, stations, SimConfig(seed=seed, n_replicates=K))
    years = tuple(range(1, K + 1))
    values, tag = batch.values, "frechet"
    if margins is not None:
        values, tag = from_unit_frechet(values, margins), "raw"
    panel = MaximaPanel(stations, years, values, tag)
    truth = {
        "spec": spec.to_dict(),
        "param_names": list(spec.param_names),
        "beta": [float(b) for b in beta],
        "band_width": spec.bandwidth_grid[0] if band_width is None else float(band_width),
        "K": K,
        "seed": seed,
        "truncated_replicates": int(batch.truncated.sum()),
    }
    if isinstance(layout, Layout):
        truth["layout"] = {f: getattr(layout, f) for f in layout.__dataclass_fields__}
        truth["layout"]["elev_range"] = list(layout.elev_range)
    if margins is not None:
        truth["margins"] = {"mu": margins.mu, "sigma": margins.sigma, "xi": margins.xi}
    return panel, truth
