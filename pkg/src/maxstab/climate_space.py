"""Affine climate-space transforms of station coordinates.

A station at (lon, lat, elev, region coordinate, mean level) is mapped to

    (cos a * lon - sin a * lat,
     c2 * (sin a * lon + cos a * lat),
     c3 * elev,
     c4 * region,
     c5 * mean)

with optional coordinates dropped when inactive. Longitude weight is fixed to 1.
North and south regions may carry their own (a, c2, c3, c5); inside a border
band of width w these are interpolated linearly with the region coordinate.
Distances in climate space are Euclidean norms of differences of transformed
points.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, MatrixError, ParameterError

OPTIONAL_COORDS = ("elev", "region", "mean")


@dataclass(frozen=True)
class StationCoords:
    """Station location; lon/lat/elev in km, signed border distance in km (north > 0)."""

    lon: float
    lat: float
    elev: float = 0.0
    region_signed_dist: float = 0.0
    mean_level: float | None = None
    station_id: str = ""

    def __post_init__(self):
        vals = [self.lon, self.lat, self.elev, self.region_signed_dist]
        if self.mean_level is not None:
            vals.append(self.mean_level)
        if not np.all(np.isfinite(vals)):
            raise DataError(f"station {self.station_id!r}: non-finite coordinate")


@dataclass(frozen=True)
class ClimateTransform:
    alpha_north: float = 0.0
    alpha_south: float = 0.0
    c2_north: float = 1.0
    c2_south: float = 1.0
    c3_north: float = 1.0
    c3_south: float = 1.0
    c4: float = 0.0
    c5_north: float = 0.0
    c5_south: float = 0.0
    band_width: float = 0.0
    coord_mask: frozenset = field(default_factory=frozenset)
    shared_regions: bool = True

    def __post_init__(self):
        mask = frozenset(self.coord_mask)
        object.__setattr__(self, "coord_mask", mask)
        unknown = mask - set(OPTIONAL_COORDS)
        if unknown:
            raise ParameterError(f"unknown coordinates in mask: {sorted(unknown)}")
        for name in ("c2_north", "c2_south", "c3_north", "c3_south"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("c4", "c5_north", "c5_south", "band_width"):
            if not getattr(self, name) >= 0:
                raise ParameterError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if self.shared_regions:
            for a, b in self.region_pairs():
                if getattr(self, a) != getattr(self, b):
                    raise ParameterError(f"shared_regions requires {a} == {b}")

    @staticmethod
    def region_pairs():
        return (
            ("alpha_north", "alpha_south"),
            ("c2_north", "c2_south"),
            ("c3_north", "c3_south"),
            ("c5_north", "c5_south"),
        )

    @classmethod
    def shared(cls, alpha=0.0, c2=1.0, c3=1.0, c4=0.0, c5=0.0, band_width=0.0, coords=()):
        return cls(alpha, alpha, c2, c2, c3, c3, c4, c5, c5, band_width, frozenset(coords), True)

    @property
    def dim(self) -> int:
        return 2 + len(self.coord_mask)

    def with_band(self, w: float) -> "ClimateTransform":
        return replace(self, band_width=float(w))


def region_coordinate(signed_dist, w: float):
    """Region coordinate: 0 north of the band, 1 south of it, linear inside.

    With ``w == 0`` the border is hard: 0 for signed_dist >= 0, 1 otherwise.
    """
    if w < 0:
        raise ParameterError(f"band width must be nonnegative, got {w}")
    d = np.asarray(signed_dist, dtype=float)
    if w == 0:
        out = np.where(d >= 0, 0.0, 1.0)
    else:
        out = np.clip(0.5 - d / w, 0.0, 1.0)
    return out if out.ndim else float(out)


def local_params(x: StationCoords, t: ClimateTransform):
    """Effective (alpha, c2, c3, c5) at a station, interpolated across the band."""
    arr = _local_arrays(np.array([x.region_signed_dist]), t)
    return tuple(float(v[0]) for v in arr)


def _local_arrays(signed_dist, t: ClimateTransform):
    if t.shared_regions:
        n = len(signed_dist)
        return tuple(np.full(n, getattr(t, a)) for a, _ in t.region_pairs())
    rc = np.atleast_1d(region_coordinate(signed_dist, t.band_width))
    return tuple(
        (1.0 - rc) * getattr(t, a) + rc * getattr(t, b) for a, b in t.region_pairs()
    )


def coords_array(stations: Sequence[StationCoords], mask: Iterable[str] = OPTIONAL_COORDS):
    """Stack station coordinates into columns lon, lat, elev, signed_dist, mean."""
    mask = set(mask)
    rows = []
    for s in stations:
        if "mean" in mask and s.mean_level is None:
            raise DataError(f"station {s.station_id!r}: mean_level required but missing")
        mean = s.mean_level if s.mean_level is not None else np.nan
        rows.append((s.lon, s.lat, s.elev, s.region_signed_dist, mean))
    return np.array(rows, dtype=float).reshape(len(rows), 5)


def transform_points(stations: Sequence[StationCoords], t: ClimateTransform) -> np.ndarray:
    """Climate-space points, one row per station (columns follow OPTIONAL_COORDS order)."""
    X = coords_array(stations, t.coord_mask)
    return transform_array(X, t)


def transform_array(X: np.ndarray, t: ClimateTransform) -> np.ndarray:
    """Vectorized transform of a (n, 5) coordinate array."""
    lon, lat, elev, sd, mean = X.T
    alpha, c2, c3, c5 = _local_arrays(sd, t)
    ca, sa = np.cos(alpha), np.sin(alpha)
    cols = [ca * lon - sa * lat, c2 * (sa * lon + ca * lat)]
    if "elev" in t.coord_mask:
        cols.append(c3 * elev)
    if "region" in t.coord_mask:
        cols.append(t.c4 * np.atleast_1d(region_coordinate(sd, t.band_width)))
    if "mean" in t.coord_mask:
        cols.append(c5 * mean)
    return np.column_stack(cols)


def transform(x: StationCoords, t: ClimateTransform) -> np.ndarray:
    return transform_points([x], t)[0]


def climate_distance(x1: StationCoords, x2: StationCoords, t: ClimateTransform) -> float:
    p = transform_points([x1, x2], t)
    return float(np.linalg.norm(p[0] - p[1]))


def pair_indices(n: int):
    """Lexicographically ordered index arrays (i, j) of all pairs i < j."""
    return np.triu_indices(n, k=1)


def pairwise_distances(points: np.ndarray, pairs=None) -> np.ndarray:
    if pairs is None:
        pairs = pair_indices(len(points))
    i, j = pairs
    diff = points[i] - points[j]
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def mahalanobis(x1, x2, sigma) -> float:
    """Mahalanobis distance a with a^2 = (x1 - x2)^T Sigma^{-1} (x1 - x2)."""
    sigma = np.asarray(sigma, dtype=float)
    d = np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float)
    if sigma.shape != (d.size, d.size) or not np.allclose(sigma, sigma.T):
        raise MatrixError("Sigma must be a symmetric matrix matching the point dimension")
    try:
        L = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise MatrixError("Sigma is not positive definite") from exc
    y = np.linalg.solve(L, d)
    return float(np.sqrt(y @ y))


def planar_matrix(t: ClimateTransform, region: str = "north", with_elev: bool | None = None):
    """The linear block V for (lon, lat[, elev]) under one region's parameters."""
    sfx = "_" + region
    alpha = getattr(t, "alpha" + sfx)
    c2 = getattr(t, "c2" + sfx)
    c3 = getattr(t, "c3" + sfx)
    if with_elev is None:
        with_elev = "elev" in t.coord_mask
    ca, sa = np.cos(alpha), np.sin(alpha)
    V = np.array([[ca, -sa], [c2 * sa, c2 * ca]])
    if with_elev:
        V = np.block([[V, np.zeros((2, 1))], [np.zeros((1, 2)), np.array([[c3]])]])
    return V


def sigma_from_transform(t: ClimateTransform, lambda1: float = 1.0, region: str = "north"):
    """Smith covariance Sigma = lambda1 (V^T V)^{-1} equivalent to the transform."""
    if not lambda1 > 0:
        raise ParameterError("lambda1 must be positive")
    V = planar_matrix(t, region)
    if abs(np.linalg.det(V)) < 1e-300:
        raise MatrixError("climate transform block is singular")
    Vinv = np.linalg.inv(V)
    return lambda1 * (Vinv @ Vinv.T)
