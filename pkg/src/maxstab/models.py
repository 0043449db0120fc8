"""Model definitions and their parameter vectors.

A :class:`ModelSpec` names a max-stable family, a correlation family (Schlather
only), which climate coordinates enter the transform, and how the north/south
regions are handled. It determines the ordered list of free parameters; a
parameter vector ``beta`` in that order plus a band width builds a concrete
:class:`MaxStableModel`.

Free-parameter names, in sweep order:

    alpha, c2, [c3], [c4], [c5]       transform (suffixed _north/_south when
                                      regions are separate; c4 is never split)
    range                             correlation range, or Smith's tau with
                                      a = climate distance / tau
    shape | smoothness | power        second correlation parameter, if any
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import correlation as corrmod
from .climate_space import (
    OPTIONAL_COORDS,
    ClimateTransform,
    StationCoords,
    coords_array,
    pair_indices,
    pairwise_distances,
    transform_array,
)
from .errors import ConfigError, ParameterError
from .maxstable import MODELS, extremal_coeff

TRANSFORM_DEFAULTS = {"alpha": 0.0, "c2": 1.0, "c3": 1.0, "c4": 0.0, "c5": 0.0}

DEFAULT_BOUNDS = {
    "alpha": (-math.pi / 2, math.pi / 2),
    "c2": (0.05, 20.0),
    "c3": (0.1, 2000.0),
    "c4": (0.0, 2000.0),
    "c5": (0.0, 100.0),
    "range": corrmod.RANGE_BOUNDS,
    "shape": corrmod.SECOND_PARAM["cauchy"][1],
    "smoothness": corrmod.SECOND_PARAM["matern"][1],
    "power": corrmod.SECOND_PARAM["powered_exponential"][1],
}

# searched on a log scale by the profile optimizer
LOG_SCALE = frozenset({"c2", "c3", "range", "shape", "smoothness"})

DEFAULT_INIT = {"alpha": 0.0, "c2": 1.0, "c3": 1.0, "c4": 0.0, "c5": 0.0, "range": 100.0,
                "shape": 1.0, "smoothness": 1.0, "power": 1.0}


def base_name(name: str) -> str:
    return name.split("_")[0]


@dataclass(frozen=True)
class ModelSpec:
    name: str
    family: str
    corr: str | None = None
    coords: tuple = ()
    separate_regions: bool = False
    euclidean: bool = False
    fixed: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)
    bandwidth_grid: tuple = (0.0,)
    init: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(self.coords))
        object.__setattr__(self, "bandwidth_grid", tuple(float(w) for w in self.bandwidth_grid))
        object.__setattr__(self, "fixed", {k: float(v) for k, v in dict(self.fixed).items()})
        object.__setattr__(
            self, "bounds", {k: (float(v[0]), float(v[1])) for k, v in dict(self.bounds).items()}
        )
        object.__setattr__(self, "init", {k: float(v) for k, v in dict(self.init).items()})
        if self.family not in MODELS:
            raise ConfigError(f"{self.name}: family must be one of {MODELS}")
        if self.family == "schlather":
            if self.corr is None:
                raise ConfigError(f"{self.name}: Schlather model needs a correlation family")
            corrmod.family_param_count(self.corr)
        elif self.corr is not None:
            raise ConfigError(f"{self.name}: Smith model takes no correlation family")
        bad = set(self.coords) - set(OPTIONAL_COORDS)
        if bad:
            raise ConfigError(f"{self.name}: unknown coordinates {sorted(bad)}")
        if self.euclidean and (self.coords or self.separate_regions):
            raise ConfigError(f"{self.name}: Euclidean models take no climate coordinates")
        if not self.bandwidth_grid or any(w < 0 for w in self.bandwidth_grid):
            raise ConfigError(f"{self.name}: bandwidth grid must be nonempty and nonnegative")
        names = set(self.all_param_names())
        for key in list(self.fixed) + list(self.bounds) + list(self.init):
            if key not in names:
                raise ConfigError(f"{self.name}: unknown parameter {key!r}")
        for key, (lo, hi) in self.bounds.items():
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ConfigError(f"{self.name}: bounds for {key} must be finite and lo < hi")
        if not self.param_names:
            raise ConfigError(f"{self.name}: model has no free parameters")

    # ---- parameter layout -------------------------------------------------

    def all_param_names(self) -> tuple:
        names = []
        if not self.euclidean:
            bases = ["alpha", "c2"]
            if "elev" in self.coords:
                bases.append("c3")
            for b in bases:
                names += [f"{b}_north", f"{b}_south"] if self.separate_regions else [b]
            if "region" in self.coords:
                names.append("c4")
            if "mean" in self.coords:
                names += ["c5_north", "c5_south"] if self.separate_regions else ["c5"]
        if self.family == "smith":
            names.append("range")
        else:
            names += list(corrmod.param_names(self.corr))
        return tuple(names)

    @property
    def param_names(self) -> tuple:
        return tuple(n for n in self.all_param_names() if n not in self.fixed)

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    @property
    def uses_band(self) -> bool:
        return "region" in self.coords or self.separate_regions

    def param_bounds(self) -> list:
        out = []
        for n in self.param_names:
            lo, hi = self.bounds.get(n, DEFAULT_BOUNDS[base_name(n)])
            if n in ("shape", "smoothness", "power"):
                vlo, vhi = corrmod.SECOND_PARAM[self.corr][1]
                lo, hi = max(lo, vlo), min(hi, vhi)
            out.append((lo, hi))
        return out

    def log_scale(self) -> list:
        return [base_name(n) in LOG_SCALE and lo > 0 for n, (lo, _) in
                zip(self.param_names, self.param_bounds())]

    def periodic(self, band_width: float = 0.0) -> list:
        """Flags for parameters on which the likelihood is periodic over their bounds.

        A rotation by pi only flips signs, so an angle whose bounds span a full
        half-turn wraps around. Interpolating two angles across a border band
        breaks this for separate regions.
        """
        wraps = not self.separate_regions or band_width == 0
        return [wraps and base_name(n) == "alpha" and math.isclose(hi - lo, math.pi)
                for n, (lo, hi) in zip(self.param_names, self.param_bounds())]

    def default_init(self, stations: Sequence[StationCoords] | None = None) -> np.ndarray:
        vals = []
        for n, (lo, hi) in zip(self.param_names, self.param_bounds()):
            if n in self.init:
                v = self.init[n]
            elif base_name(n) == "range" and stations is not None and len(stations) > 1:
                X = coords_array(stations, ())
                v = float(np.median(pairwise_distances(X[:, :2])))
            else:
                v = DEFAULT_INIT[base_name(n)]
            vals.append(min(max(v, lo), hi))
        return np.array(vals, dtype=float)

    def check_beta(self, beta) -> np.ndarray:
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (self.n_params,):
            raise ParameterError(
                f"{self.name}: expected {self.n_params} parameters {self.param_names}, "
                f"got shape {beta.shape}"
            )
        for n, v, (lo, hi) in zip(self.param_names, beta, self.param_bounds()):
            if not (np.isfinite(v) and lo <= v <= hi):
                raise ParameterError(f"{self.name}: {n}={v} outside bounds [{lo}, {hi}]")
        return beta

    def values(self, beta) -> dict:
        out = dict(self.fixed)
        out.update(zip(self.param_names, (float(b) for b in beta)))
        return out

    # ---- model construction ----------------------------------------------

    def build(self, beta, band_width: float | None = None) -> "MaxStableModel":
        vals = self.values(beta)
        w = self.bandwidth_grid[0] if band_width is None else float(band_width)

        def get(b, region):
            if self.separate_regions:
                key = f"{b}_{region}"
                if key in vals:
                    return vals[key]
            return vals.get(b, TRANSFORM_DEFAULTS[b])

        if self.euclidean:
            t = ClimateTransform()
        else:
            t = ClimateTransform(
                alpha_north=get("alpha", "north"),
                alpha_south=get("alpha", "south"),
                c2_north=get("c2", "north"),
                c2_south=get("c2", "south"),
                c3_north=get("c3", "north"),
                c3_south=get("c3", "south"),
                c4=vals.get("c4", TRANSFORM_DEFAULTS["c4"]),
                c5_north=get("c5", "north"),
                c5_south=get("c5", "south"),
                band_width=w,
                coord_mask=frozenset(self.coords),
                shared_regions=not self.separate_regions,
            )
        if self.family == "smith":
            return MaxStableModel("smith", t, None, vals["range"])
        cparams = tuple(vals[n] for n in corrmod.param_names(self.corr))
        return MaxStableModel("schlather", t, corrmod.CorrelationSpec(self.corr, cparams))

    # ---- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "family": self.family,
            "corr": self.corr,
            "coords": list(self.coords),
            "separate_regions": self.separate_regions,
            "euclidean": self.euclidean,
            "fixed": dict(sorted(self.fixed.items())),
            "bounds": {k: list(v) for k, v in sorted(self.bounds.items())},
            "bandwidth_grid": list(self.bandwidth_grid),
            "init": dict(sorted(self.init.items())),
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        known = {"name", "family", "corr", "coords", "separate_regions", "euclidean", "fixed",
                 "bounds", "bandwidth_grid", "init"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown model keys {sorted(extra)}")
        if "name" not in d or "family" not in d:
            raise ConfigError("model entries need 'name' and 'family'")
        kw = dict(d)
        for key in ("coords", "bandwidth_grid"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)


@dataclass(frozen=True)
class MaxStableModel:
    """A fully specified max-stable dependence model.

    Smith models use ``a = h / scale`` with h the climate distance, which is
    the Mahalanobis distance for Sigma = scale^2 (V^T V)^{-1}.
    """

    family: str
    transform: ClimateTransform
    corr: corrmod.CorrelationSpec | None = None
    scale: float = 1.0

    def points(self, stations: Sequence[StationCoords]) -> np.ndarray:
        return transform_array(coords_array(stations, self.transform.coord_mask), self.transform)

    def dependence(self, h):
        h = np.asarray(h, dtype=float)
        if self.family == "smith":
            return h / self.scale
        return corrmod.correlation(self.corr, h)

    def extremal_coefficient(self, h):
        return extremal_coeff(self.family, self.dependence(h))

    def pair_dependence(self, points: np.ndarray, pairs=None) -> np.ndarray:
        if pairs is None:
            pairs = pair_indices(len(points))
        return np.atleast_1d(self.dependence(pairwise_distances(points, pairs)))
