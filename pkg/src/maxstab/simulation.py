"""Monte Carlo simulation of max-stable fields at station sets, and derived checks.

Both simulators use the spectral representation Z(x) = max_i eta_i Y_i(x) with
Poisson magnitudes eta_1 > eta_2 > ... generated from cumulative exponential
spacings, and stop once the next storm cannot raise the pointwise minimum of
the field accumulated so far.

Random numbers come from Philox generators, one substream per block of
``block_size`` replicates spawned from the configured seed, so results do not
depend on how many worker threads process the blocks.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .climate_space import StationCoords, pairwise_distances
from .correlation import CorrelationSpec, correlation
from .data_io import MaximaPanel
from .errors import DataError, DomainError, MatrixError, ParameterError
from .models import MaxStableModel

SQRT_2PI = math.sqrt(2.0 * math.pi)
JITTER_MAX = 1e-8


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    n_replicates: int = 1000
    g_cap: float = 5.0
    max_storms: int = 100_000
    enlargement: float | None = None
    block_size: int = 256
    threads: int = 1

    def __post_init__(self):
        if self.n_replicates < 1:
            raise ParameterError("n_replicates must be at least 1")
        if self.max_storms < 100:
            raise ParameterError("max_storms must be at least 100")
        if self.g_cap <= 0:
            raise ParameterError("g_cap must be positive")
        if self.enlargement is not None and self.enlargement < 0:
            raise ParameterError("enlargement must be nonnegative")
        if self.block_size < 1:
            raise ParameterError("block_size must be positive")


@dataclass(frozen=True)
class SimField:
    values: np.ndarray
    replicate_index: int
    truncation_flag: bool


@dataclass(frozen=True)
class SimBatch:
    """M simulated fields: ``values`` is (M, D), ``truncated`` flags each replicate."""

    values: np.ndarray
    truncated: np.ndarray

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, m) -> SimField:
        return SimField(self.values[m], int(m), bool(self.truncated[m]))

    @property
    def any_truncated(self) -> bool:
        return bool(self.truncated.any())


def _block_generators(cfg: SimConfig):
    n_blocks = -(-cfg.n_replicates // cfg.block_size)
    seqs = np.random.SeedSequence(cfg.seed).spawn(n_blocks)
    sizes = [min(cfg.block_size, cfg.n_replicates - b * cfg.block_size) for b in range(n_blocks)]
    return [(np.random.Generator(np.random.Philox(s)), n) for s, n in zip(seqs, sizes)]


def _run_blocks(cfg: SimConfig, block_fn) -> SimBatch:
    jobs = _block_generators(cfg)
    if cfg.threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            parts = list(pool.map(lambda job: block_fn(*job), jobs))
    else:
        parts = [block_fn(rng, n) for rng, n in jobs]
    return SimBatch(np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))


def correlation_factor(C: np.ndarray) -> np.ndarray:
    """A factor L with L L^T = C for a PSD correlation matrix.

    Uses Cholesky when C is positive definite; otherwise an eigenvalue
    factorization, accepted when the smallest eigenvalue is no lower than
    -1e-8 (the jitter tolerance).
    """
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        pass
    evals, evecs = np.linalg.eigh(C)
    if evals.min() < -JITTER_MAX:
        raise MatrixError(
            f"correlation matrix not positive semidefinite (min eigenvalue {evals.min():.3g})"
        )
    evals = np.where(evals > 1e-12 * evals.max(), evals, 0.0)
    return evecs * np.sqrt(evals)


def _schlather_block(L, g_cap, max_storms):
    D = L.shape[0]
    wmax = SQRT_2PI * g_cap

    def run(rng, B):
        Z = np.zeros((B, D))
        gamma = np.zeros(B)
        truncated = np.zeros(B, dtype=bool)
        active = np.arange(B)
        n = 0
        while active.size:
            n += 1
            gamma[active] += rng.standard_exponential(active.size)
            eta = 1.0 / gamma[active]
            eps = rng.standard_normal((active.size, D)) @ L.T
            Za = np.maximum(Z[active], eta[:, None] * (SQRT_2PI * np.maximum(eps, 0.0)))
            Z[active] = Za
            done = eta * wmax < Za.min(axis=1)
            if n >= max_storms:
                truncated[active[~done]] = True
                done[:] = True
            active = active[~done]
        return Z, truncated

    return run


def simulate_schlather(points: np.ndarray, corr: CorrelationSpec, cfg: SimConfig) -> SimBatch:
    """Schlather fields at climate-space ``points`` (D x d)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    D = points.shape[0]
    C = np.ones((D, D))
    if D > 1:
        i, j = np.triu_indices(D, 1)
        rho = np.atleast_1d(correlation(corr, pairwise_distances(points, (i, j))))
        C[i, j] = C[j, i] = rho
    return simulate_schlather_matrix(C, cfg)


def simulate_schlather_matrix(C: np.ndarray, cfg: SimConfig) -> SimBatch:
    """Schlather fields for an explicit station correlation matrix."""
    L = correlation_factor(np.asarray(C, dtype=float))
    return _run_blocks(cfg, _schlather_block(L, cfg.g_cap, cfg.max_storms))


def simulate_smith(points: np.ndarray, sigma: np.ndarray, cfg: SimConfig) -> SimBatch:
    """Smith storm fields at ``points`` (D x d) with Gaussian storm covariance ``sigma``.

    Storm centres are uniform on the station bounding box enlarged by
    ``cfg.enlargement`` (default four standard deviations of the longest axis).
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    D, d = X.shape
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    if sigma.shape != (d, d):
        raise MatrixError(f"Sigma must be {d}x{d}")
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise MatrixError("Sigma is not positive definite") from exc
    e = cfg.enlargement
    if e is None:
        e = 4.0 * math.sqrt(np.linalg.eigvalsh(sigma).max())
    lo = X.min(axis=0) - e
    width = X.max(axis=0) + e - lo
    if np.any(width <= 0):
        raise DomainError("storm-centre region has zero volume; increase the enlargement")
    volume = float(np.prod(width))
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    fmax = math.exp(-0.5 * d * math.log(2 * math.pi) - 0.5 * logdet)
    cinv = np.linalg.inv(chol)

    def run(rng, B):
        Z = np.zeros((B, D))
        gamma = np.zeros(B)
        truncated = np.zeros(B, dtype=bool)
        active = np.arange(B)
        n = 0
        while active.size:
            n += 1
            gamma[active] += rng.standard_exponential(active.size)
            eta = volume / gamma[active]
            centres = lo + width * rng.random((active.size, d))
            diff = (X[None, :, :] - centres[:, None, :]) @ cinv.T
            f = fmax * np.exp(-0.5 * np.einsum("nDd,nDd->nD", diff, diff))
            Za = np.maximum(Z[active], eta[:, None] * f)
            Z[active] = Za
            done = eta * fmax < Za.min(axis=1)
            if n >= cfg.max_storms:
                truncated[active[~done]] = True
                done[:] = True
            active = active[~done]
        return Z, truncated

    return _run_blocks(cfg, run)


def simulate_model(model: MaxStableModel, stations: Sequence[StationCoords],
                   cfg: SimConfig) -> SimBatch:
    """Simulate ``model`` at the given stations (via their climate-space points)."""
    points = model.points(stations)
    if model.family == "schlather":
        return simulate_schlather(points, model.corr, cfg)
    return simulate_smith(points, model.scale**2 * np.eye(points.shape[1]), cfg)


def simulate_panel(model: MaxStableModel, stations: Sequence[StationCoords], years: Sequence[int],
                   cfg: SimConfig) -> MaximaPanel:
    """A Frechet-scale panel with one simulated field per year."""
    batch = simulate_model(model, stations, replace(cfg, n_replicates=len(years)))
    return MaximaPanel(tuple(stations), tuple(years), batch.values, "frechet")


# ---- group maxima envelopes -------------------------------------------------


@dataclass
class Envelope:
    group: tuple
    observed: np.ndarray
    expected: np.ndarray
    pointwise_lo: np.ndarray
    pointwise_hi: np.ndarray
    overall_lo: np.ndarray
    overall_hi: np.ndarray
    overall_level: float
    n_sim: int
    n_truncated: int

    @property
    def inside_pointwise(self) -> np.ndarray:
        return (self.observed >= self.pointwise_lo) & (self.observed <= self.pointwise_hi)

    @property
    def inside_overall(self) -> bool:
        return bool(np.all((self.observed >= self.overall_lo) & (self.observed <= self.overall_hi)))

    def rows(self):
        K = len(self.observed)
        for k in range(K):
            yield (k + 1, float(self.observed[k]), float(self.expected[k]),
                   float(self.pointwise_lo[k]), float(self.pointwise_hi[k]),
                   float(self.overall_lo[k]), float(self.overall_hi[k]))


ENVELOPE_COLUMNS = ("rank", "observed", "sim_median", "pointwise_lo", "pointwise_hi",
                    "overall_lo", "overall_hi")


def envelope_bands(sims: np.ndarray, level: float = 0.95):
    """Pointwise and overall bands for M simulated ordered series (M x K, rows sorted).

    The overall band uses the k-th smallest and largest values at each rank,
    with k the largest integer for which at most ``1 - level`` of the
    simulated series leave the band somewhere.
    """
    M = sims.shape[0]
    alpha = 1.0 - level
    S = np.sort(sims, axis=0)
    pw_lo = np.quantile(sims, alpha / 2, axis=0)
    pw_hi = np.quantile(sims, 1 - alpha / 2, axis=0)
    ranks = np.argsort(np.argsort(sims, axis=0, kind="stable"), axis=0, kind="stable")
    extremeness = np.minimum(ranks, M - 1 - ranks).min(axis=1)
    k = 0
    for cand in range(1, M // 2):
        if np.mean(extremeness < cand) <= alpha:
            k = cand
        else:
            break
    return pw_lo, pw_hi, S[k], S[M - 1 - k], 1.0 - float(np.mean(extremeness < k))


def group_max_envelope(panel: MaximaPanel, model: MaxStableModel, group: Sequence[str],
                       cfg: SimConfig, level: float = 0.95) -> Envelope:
    """Compare ordered observed group maxima with M simulated series of length K.

    Only years in which every group station is observed are used.
    """
    if panel.scale_tag != "frechet":
        raise DataError("envelope checks need a Frechet-scale panel")
    if len(group) < 1:
        raise DomainError("group must contain at least one station")
    if cfg.n_replicates < 1000:
        raise ParameterError("envelope checks need at least 1000 simulated series")
    idx = [panel.index(g) for g in group]
    obs = panel.matrix[:, idx]
    complete = ~np.isnan(obs).any(axis=1)
    if not complete.any():
        raise DataError("no year with all group stations observed")
    observed = np.sort(obs[complete].max(axis=1))
    K = observed.size
    M = cfg.n_replicates
    stations = [panel.stations[i] for i in idx]
    batch = simulate_model(model, stations, replace(cfg, n_replicates=M * K))
    sims = np.sort(batch.values.max(axis=1).reshape(M, K), axis=1)
    pw_lo, pw_hi, ov_lo, ov_hi, ov_level = envelope_bands(sims, level)
    return Envelope(tuple(group), observed, np.median(sims, axis=0), pw_lo, pw_hi, ov_lo, ov_hi,
                    ov_level, M, int(batch.truncated.sum()))


# ---- joint survival ---------------------------------------------------------


@dataclass(frozen=True)
class JointSurvival:
    r: float
    prob: float
    se: float
    independence: float
    full_dependence: float
    analytic: bool
    n_sim: int


RISK_COLUMNS = ("return_period", "level", "prob", "mc_se", "independence", "full_dependence")


def frechet_return_level(r):
    """Unit Frechet r-year return level -1 / log(1 - 1/r)."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 1):
        raise DomainError("return periods must exceed 1")
    out = -1.0 / np.log1p(-1.0 / r)
    return out if out.ndim else float(out)


def joint_survival_curve(model: MaxStableModel, stations: Sequence[StationCoords],
                         periods: Sequence[float], cfg: SimConfig) -> list:
    """Pr(all stations exceed their r-year level) for each r, from one simulation."""
    periods = [float(r) for r in periods]
    if not stations:
        raise DomainError("group must be nonempty")
    levels = np.atleast_1d(frechet_return_level(periods))
    n = len(stations)
    if n == 1:
        return [JointSurvival(r, 1.0 / r, 0.0, 1.0 / r, 1.0 / r, True, 0) for r in periods]
    batch = simulate_model(model, stations, cfg)
    low = batch.values.min(axis=1)
    M = len(batch)
    out = []
    for r, z in zip(periods, levels):
        p = float(np.mean(low > z))
        out.append(JointSurvival(r, p, math.sqrt(p * (1 - p) / M), r ** (-n), 1.0 / r, False, M))
    return out


def joint_survival(model: MaxStableModel, stations: Sequence[StationCoords], r: float,
                   cfg: SimConfig) -> JointSurvival:
    return joint_survival_curve(model, stations, [r], cfg)[0]
