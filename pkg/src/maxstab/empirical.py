"""Nonparametric extremal coefficients for station pairs, and distance binning.

F-madogram: with F(z) = exp(-1/z) and n complete years,

    nu = (1 / 2n) sum_k |F(z_ik) - F(z_jk)|,     theta = (1 + 2 nu) / (1 - 2 nu).

Naive estimator, from Pr{max(Z1, Z2) <= z} = exp(-theta / z):

    theta = n / sum_k 1 / max(z_ik, z_jk).

Both are clamped to [1, 2].
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy import stats

from .climate_space import StationCoords, pair_indices, pairwise_distances
from .data_io import MaximaPanel
from .errors import DataError, InsufficientDataError, ParameterError

MIN_COMMON_YEARS = 5
MIN_BIN_COUNT = 10
DEFAULT_BINS = 20
METHODS = ("madogram", "naive")


@dataclass(frozen=True)
class PairEstimate:
    station_pair: tuple
    distance: float
    theta_hat: float
    method: str
    n_years: int


PAIR_COLUMNS = ("station_1", "station_2", "distance", "theta_hat", "method", "n_years")


def _common(si, sj):
    si = np.asarray(si, dtype=float)
    sj = np.asarray(sj, dtype=float)
    if si.shape != sj.shape or si.ndim != 1:
        raise DataError("series must be 1-d and aligned by year")
    keep = ~(np.isnan(si) | np.isnan(sj))
    if keep.sum() < MIN_COMMON_YEARS:
        raise InsufficientDataError(
            f"{int(keep.sum())} common years; at least {MIN_COMMON_YEARS} needed"
        )
    si, sj = si[keep], sj[keep]
    if np.any(si <= 0) or np.any(sj <= 0):
        raise DataError("unit Frechet series must be positive")
    return si, sj


def _clamp(theta: float) -> float:
    return float(min(max(theta, 1.0), 2.0))


def madogram_theta(si, sj, ranks: bool = False) -> float:
    """F-madogram extremal coefficient of two year-aligned unit Frechet series.

    With ``ranks=True`` F is replaced by the scaled empirical ranks r / (n + 1).
    """
    si, sj = _common(si, sj)
    if ranks:
        n = si.size
        fi = stats.rankdata(si) / (n + 1)
        fj = stats.rankdata(sj) / (n + 1)
    else:
        fi, fj = np.exp(-1.0 / si), np.exp(-1.0 / sj)
    nu = 0.5 * np.mean(np.abs(fi - fj))
    return _clamp((1.0 + 2.0 * nu) / (1.0 - 2.0 * nu))


def naive_theta(si, sj) -> float:
    si, sj = _common(si, sj)
    return _clamp(si.size / np.sum(1.0 / np.maximum(si, sj)))


def pair_estimates(panel: MaximaPanel, points: np.ndarray | None = None,
                   method: str = "madogram", ranks: bool = False) -> list:
    """Estimates for every station pair with enough common years.

    ``points`` (D x d) gives the space in which distances are measured; by
    default the geographic (lon, lat) plane.
    """
    if panel.scale_tag != "frechet":
        raise DataError("pair estimates need a Frechet-scale panel")
    if method not in METHODS:
        raise ParameterError(f"method must be one of {METHODS}")
    if points is None:
        points = np.array([[s.lon, s.lat] for s in panel.stations])
    i, j = pair_indices(panel.D)
    dist = np.atleast_1d(pairwise_distances(points, (i, j)))
    M = panel.matrix
    out = []
    for p, (a, b) in enumerate(zip(i, j)):
        try:
            if method == "madogram":
                th = madogram_theta(M[:, a], M[:, b], ranks)
            else:
                th = naive_theta(M[:, a], M[:, b])
        except InsufficientDataError:
            continue
        n = int(np.sum(~(np.isnan(M[:, a]) | np.isnan(M[:, b]))))
        out.append(PairEstimate((panel.ids[a], panel.ids[b]), float(dist[p]), th, method, n))
    return out


@dataclass(frozen=True)
class BinnedCurve:
    distance: np.ndarray
    theta: np.ndarray
    count: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.count.size


BIN_COLUMNS = ("bin", "mean_distance", "mean_theta", "count")


def bin_labels(distances, n_bins: int = DEFAULT_BINS, min_count: int = MIN_BIN_COUNT):
    """Equal-count distance bins; bins below ``min_count`` merge with a neighbour.

    Pairs at the same distance always share a bin. Returns one label per input.
    """
    if n_bins < 1:
        raise ParameterError("n_bins must be at least 1")
    d = np.asarray(distances, dtype=float)
    if d.size == 0:
        return np.zeros(0, dtype=int)
    edges = np.unique(np.quantile(d, np.linspace(0, 1, n_bins + 1)[1:-1]))
    labels = np.searchsorted(edges, d, side="left")
    _, labels = np.unique(labels, return_inverse=True)
    counts = list(np.bincount(labels))
    groups = [[k] for k in range(len(counts))]
    while len(counts) > 1 and min(counts) < min_count:
        k = int(np.argmin(counts))
        if k == 0:
            nb = 1
        elif k == len(counts) - 1:
            nb = k - 1
        else:
            nb = k - 1 if counts[k - 1] <= counts[k + 1] else k + 1
        lo, hi = min(k, nb), max(k, nb)
        counts[lo:hi + 1] = [counts[lo] + counts[hi]]
        groups[lo:hi + 1] = [groups[lo] + groups[hi]]
    remap = np.empty(sum(len(g) for g in groups), dtype=int)
    for new, g in enumerate(groups):
        remap[g] = new
    return remap[labels]


def bin_means(labels, distances, thetas):
    labels = np.asarray(labels, dtype=int)
    n = int(labels.max()) + 1 if labels.size else 0
    count = np.bincount(labels, minlength=n)
    with np.errstate(invalid="ignore"):
        dist = np.bincount(labels, weights=distances, minlength=n) / count
        theta = np.bincount(labels, weights=thetas, minlength=n) / count
    return dist, theta, count


def binned_curve(estimates: Sequence[PairEstimate], n_bins: int = DEFAULT_BINS,
                 min_count: int = MIN_BIN_COUNT) -> BinnedCurve:
    if n_bins < 1:
        raise ParameterError("n_bins must be at least 1")
    if not estimates:
        empty = np.zeros(0)
        return BinnedCurve(empty, empty, np.zeros(0, dtype=int), np.zeros(0, dtype=int))
    d = np.array([e.distance for e in estimates])
    t = np.array([e.theta_hat for e in estimates])
    labels = bin_labels(d, n_bins, min_count)
    dist, theta, count = bin_means(labels, d, t)
    return BinnedCurve(dist, theta, count, labels)


@dataclass(frozen=True)
class CurveBand:
    lo: np.ndarray
    hi: np.ndarray
    n_sim: int

    def inside(self, theta) -> np.ndarray:
        return (theta >= self.lo) & (theta <= self.hi)


def binned_band(model, stations: Sequence[StationCoords], n_years: int, curve: BinnedCurve,
                estimates: Sequence[PairEstimate], cfg, n_sim: int = 200,
                method: str = "madogram", level: float = 0.95) -> CurveBand:
    """Monte Carlo band for the binned curve under ``model``.

    Simulates ``n_sim`` panels of ``n_years`` fields at ``stations`` and
    recomputes the per-bin mean estimates using the observed pair-to-bin labels.
    """
    from .simulation import simulate_model

    ids = [s.station_id for s in stations]
    index = {sid: k for k, sid in enumerate(ids)}
    ia = np.array([index[e.station_pair[0]] for e in estimates])
    ib = np.array([index[e.station_pair[1]] for e in estimates])
    d = np.array([e.distance for e in estimates])
    batch = simulate_model(model, stations, replace(cfg, n_replicates=n_sim * n_years))
    fields = batch.values.reshape(n_sim, n_years, len(stations))
    sims = np.empty((n_sim, len(curve)))
    for m in range(n_sim):
        Z = fields[m]
        if method == "madogram":
            F = np.exp(-1.0 / Z)
            nu = 0.5 * np.mean(np.abs(F[:, ia] - F[:, ib]), axis=0)
            th = (1.0 + 2.0 * nu) / (1.0 - 2.0 * nu)
        else:
            th = n_years / np.sum(1.0 / np.maximum(Z[:, ia], Z[:, ib]), axis=0)
        sims[m] = bin_means(curve.labels, d, np.clip(th, 1.0, 2.0))[1]
    alpha = 1.0 - level
    return CurveBand(np.quantile(sims, alpha / 2, axis=0), np.quantile(sims, 1 - alpha / 2, axis=0),
                     n_sim)
