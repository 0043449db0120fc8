"""GEV margins: evaluation, per-station maximum likelihood, unit Frechet transforms.

The GEV distribution function is

    G(z) = exp[-{1 + xi (z - mu) / sigma}_+^(-1/xi)]

with the Gumbel limit exp(-exp(-(z - mu) / sigma)) at xi = 0. Stations are put
on the unit Frechet scale with f(z) = -1 / log G(z).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize, special, stats

from ._numdiff import hessian
from .errors import (
    ConvergenceError,
    DomainError,
    InsufficientDataError,
    NonIdentifiableError,
    ParameterError,
)

GUMBEL_TOL = 1e-8
CLAMP_LO = 1e-12
CLAMP_HI = 1.0 - 1e-12
XI_BOUNDS = (-0.5, 0.5)
MIN_YEARS = 10

# -1/log G at the clamp limits
FRECHET_MIN = -1.0 / math.log(CLAMP_LO)
FRECHET_MAX = -1.0 / math.log1p(-1e-12)


@dataclass(frozen=True)
class GevParams:
    mu: float
    sigma: float
    xi: float

    def __post_init__(self):
        if not (np.isfinite(self.mu) and np.isfinite(self.sigma) and np.isfinite(self.xi)):
            raise ParameterError(f"non-finite GEV parameters {self}")
        if self.sigma <= 0:
            raise ParameterError(f"GEV scale must be positive, got {self.sigma}")

    @property
    def endpoint(self) -> float | None:
        """Finite support endpoint mu - sigma/xi, or None in the Gumbel case."""
        if abs(self.xi) < GUMBEL_TOL:
            return None
        return self.mu - self.sigma / self.xi

    def as_tuple(self):
        return (self.mu, self.sigma, self.xi)


@dataclass(frozen=True)
class StationSeries:
    station_id: str
    values: tuple
    years: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "years", tuple(self.years))
        if len(self.values) != len(self.years):
            raise DomainError(
                f"station {self.station_id}: {len(self.values)} values but {len(self.years)} years"
            )
        if len(self.values) < 1:
            raise DomainError(f"station {self.station_id}: empty series")
        if not all(math.isfinite(v) for v in self.values):
            raise DomainError(f"station {self.station_id}: missing years must be absent, not NaN")


def _reduced(z, p: GevParams):
    """Return (t, log(-log G)) where t = 1 + xi (z - mu)/sigma.

    log(-log G) is -inf/+inf outside the support, following the (.)_+ rule.
    """
    s = (np.asarray(z, dtype=float) - p.mu) / p.sigma
    if abs(p.xi) < GUMBEL_TOL:
        return None, -s
    xs = p.xi * s
    t = 1.0 + xs
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(t > 0, -np.log1p(np.where(t > 0, xs, 0.0)) / p.xi, 0.0)
    if p.xi > 0:
        # below the lower endpoint G = 0, so -log G = +inf
        out = np.where(t > 0, out, np.inf)
    else:
        out = np.where(t > 0, out, -np.inf)
    return t, out


def gev_cdf(z, p: GevParams):
    """GEV distribution function G(z); works elementwise on arrays."""
    _, loglogG = _reduced(z, p)
    with np.errstate(over="ignore"):
        out = np.exp(-np.exp(loglogG))
    return out if np.ndim(out) else float(out)


def gev_logpdf(z, p: GevParams):
    _, loglogG = _reduced(z, p)
    with np.errstate(over="ignore", invalid="ignore"):
        out = -math.log(p.sigma) + (1.0 + p.xi) * loglogG - np.exp(loglogG)
    out = np.where(np.isfinite(loglogG), out, -np.inf)
    return out if np.ndim(out) else float(out)


def gev_quantile(u, p: GevParams):
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)) or np.any(~np.isfinite(u)):
        raise DomainError("quantile probabilities must lie strictly inside (0, 1)")
    y = -np.log(u)
    if abs(p.xi) < GUMBEL_TOL:
        out = p.mu - p.sigma * np.log(y)
    else:
        out = p.mu + p.sigma * np.expm1(-p.xi * np.log(y)) / p.xi
    return out if out.ndim else float(out)


def to_unit_frechet(z, p: GevParams):
    """Map data values to the unit Frechet scale, clamping G to [1e-12, 1 - 1e-12]."""
    _, loglogG = _reduced(z, p)
    # -1/log G = exp(-log(-log G))
    with np.errstate(over="ignore"):
        out = np.exp(-loglogG)
    out = np.clip(out, FRECHET_MIN, FRECHET_MAX)
    return out if out.ndim else float(out)


def from_unit_frechet(zstar, p: GevParams):
    """Back-transform unit Frechet values to data units: the G^{-1}(exp(-1/z*))."""
    zstar = np.asarray(zstar, dtype=float)
    if np.any(~(zstar > 0)):
        raise DomainError("unit Frechet values must be positive")
    logz = np.log(zstar)
    if abs(p.xi) < GUMBEL_TOL:
        out = p.mu + p.sigma * logz
    else:
        out = p.mu + p.sigma * np.expm1(p.xi * logz) / p.xi
    return out if out.ndim else float(out)


def return_level(r, p: GevParams):
    """The r-year return level, exceeded with probability 1/r in a given year."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 1):
        raise DomainError("return periods must exceed 1 year")
    return gev_quantile(1.0 - 1.0 / r, p)


def gev_nll(theta, z):
    """Negative log-likelihood in (mu, sigma, xi); +inf outside the parameter space."""
    mu, sigma, xi = theta
    if not sigma > 0:
        return np.inf
    s = (z - mu) / sigma
    n = z.size
    if abs(xi) < GUMBEL_TOL:
        return n * math.log(sigma) + np.sum(s) + np.sum(np.exp(-s))
    t = 1.0 + xi * s
    if np.any(t <= 0):
        return np.inf
    logt = np.log1p(xi * s)
    return n * math.log(sigma) + (1.0 + 1.0 / xi) * np.sum(logt) + np.sum(np.exp(-logt / xi))


def pwm_estimate(values: Sequence[float]) -> GevParams:
    """Probability-weighted-moment starting values (Hosking's approximation)."""
    x = np.sort(np.asarray(values, dtype=float))
    n = x.size
    j = np.arange(n)
    b0 = x.mean()
    b1 = np.sum(j / (n - 1) * x) / n
    b2 = np.sum(j * (j - 1) / ((n - 1) * (n - 2)) * x) / n
    l1, l2, l3 = b0, 2 * b1 - b0, 6 * b2 - 6 * b1 + b0
    t3 = l3 / l2
    c = 2.0 / (3.0 + t3) - math.log(2) / math.log(3)
    k = 7.8590 * c + 2.9554 * c**2
    k = float(np.clip(k, -XI_BOUNDS[1], -XI_BOUNDS[0]))
    if abs(k) < 1e-6:
        sigma = l2 / math.log(2)
        return GevParams(l1 - 0.5772156649 * sigma, sigma, 0.0)
    sigma = l2 * k / ((1 - 2.0 ** (-k)) * special.gamma(1 + k))
    mu = l1 - sigma * (1 - special.gamma(1 + k)) / k
    return GevParams(float(mu), float(sigma), float(-k))


def fit_gev(series: StationSeries):
    """Maximum likelihood GEV fit of one station's annual maxima.

    Returns ``(params, se)`` where ``se`` holds the standard errors of
    (mu, sigma, xi) from the inverse observed information.
    """
    z = np.asarray(series.values, dtype=float)
    if z.size < MIN_YEARS:
        raise InsufficientDataError(
            f"station {series.station_id}: {z.size} years, need at least {MIN_YEARS}"
        )
    if np.ptp(z) <= 1e-12 * max(1.0, np.abs(z).max()):
        raise NonIdentifiableError(f"station {series.station_id}: all values equal")

    start = pwm_estimate(z)
    # make the start feasible: every observation inside the support
    mu0, sig0, xi0 = start.as_tuple()
    scale = np.std(z)
    if not np.isfinite(gev_nll((mu0, sig0, xi0), z)):
        mu0, sig0, xi0 = float(np.mean(z) - 0.45 * scale), float(0.78 * scale), 0.0

    def objective(q):
        return gev_nll((q[0], math.exp(q[1]), q[2]), z)

    x0 = np.array([mu0, math.log(sig0), xi0])
    bounds = [(None, None), (None, None), XI_BOUNDS]
    res = optimize.minimize(
        objective,
        x0,
        method="Nelder-Mead",
        bounds=bounds,
        options={"xatol": 1e-9, "fatol": 1e-11, "maxiter": 20000, "maxfev": 40000},
    )
    if not res.success or not np.isfinite(res.fun):
        raise ConvergenceError(
            f"station {series.station_id}: GEV fit did not converge ({res.message})",
            trace={"nit": int(res.nit), "x": res.x.tolist(), "fun": float(res.fun)},
        )
    mu, sigma, xi = float(res.x[0]), float(math.exp(res.x[1])), float(res.x[2])
    params = GevParams(mu, sigma, xi)

    theta = np.array([mu, sigma, xi])
    h = np.array([1e-4 * max(abs(mu), sigma), 1e-4 * sigma, 1e-4])
    info = hessian(lambda q: gev_nll(q, z), theta, h)
    try:
        cov = np.linalg.inv(info)
        se = np.sqrt(np.where(np.diag(cov) > 0, np.diag(cov), np.nan))
    except np.linalg.LinAlgError:
        se = np.full(3, np.nan)
    return params, se


def ks_unit_frechet(zstar):
    """Kolmogorov-Smirnov test of a sample against exp(-1/z)."""
    res = stats.kstest(np.asarray(zstar, dtype=float), stats.invweibull(1.0).cdf)
    return float(res.statistic), float(res.pvalue)
