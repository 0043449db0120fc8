"""Stationary isotropic correlation families for Schlather's model.

Forms, with s = h / range:

    spherical            1 - 1.5 s + 0.5 s^3                       (s < 1, else 0)
    circular             1 - (2/pi) (s sqrt(1 - s^2) + arcsin s)   (s < 1, else 0)
    cubic                1 - 7 s^2 + 35/4 s^3 - 7/2 s^5 + 3/4 s^7  (s < 1, else 0)
    gneiting             (1 + 8 s + 25 s^2 + 32 s^3) (1 - s)^8     (s < 1, else 0)
    exponential          exp(-s)
    matern               2^(1-nu) / Gamma(nu) s^nu K_nu(s),  nu in [0.1, 5]
    gaussian             exp(-s^2)
    powered_exponential  exp(-s^kappa),                       kappa in (0, 2]
    cauchy               (1 + s^2)^(-nu),                     nu > 0 (default 1)

All are 1 at h = 0, nonincreasing, nonnegative and tend to 0 at infinity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError, ParameterError

FAMILIES = (
    "spherical",
    "circular",
    "cubic",
    "gneiting",
    "exponential",
    "matern",
    "gaussian",
    "powered_exponential",
    "cauchy",
)

COMPACT = frozenset({"spherical", "circular", "cubic", "gneiting"})

RANGE_BOUNDS = (1e-2, 1e5)

# name and validity interval of the second parameter, if any
SECOND_PARAM = {
    "matern": ("smoothness", (0.1, 5.0)),
    "powered_exponential": ("power", (0.05, 2.0)),
    "cauchy": ("shape", (0.05, 20.0)),
}

DEFAULT_SECOND = {"matern": 1.0, "powered_exponential": 1.0, "cauchy": 1.0}


def family_param_count(family: str) -> int:
    if family not in FAMILIES:
        raise ParameterError(f"unknown correlation family {family!r}")
    return 2 if family in SECOND_PARAM else 1


def param_names(family: str) -> tuple:
    if family_param_count(family) == 2:
        return ("range", SECOND_PARAM[family][0])
    return ("range",)


def default_bounds(family: str) -> tuple:
    if family_param_count(family) == 2:
        return (RANGE_BOUNDS, SECOND_PARAM[family][1])
    return (RANGE_BOUNDS,)


@dataclass(frozen=True)
class CorrelationSpec:
    family: str
    params: tuple
    bounds: tuple | None = None

    def __post_init__(self):
        n = family_param_count(self.family)
        params = tuple(float(p) for p in np.atleast_1d(self.params))
        if len(params) == 1 and n == 2:
            params = params + (DEFAULT_SECOND[self.family],)
        if len(params) != n:
            raise ParameterError(f"{self.family} takes {n} parameter(s), got {len(params)}")
        bounds = self.bounds if self.bounds is not None else default_bounds(self.family)
        bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "bounds", bounds)
        if params[0] <= 0:
            raise ParameterError(f"range must be positive, got {params[0]}")
        if n == 2:
            lo, hi = SECOND_PARAM[self.family][1]
            if not lo <= params[1] <= hi:
                name = SECOND_PARAM[self.family][0]
                raise ParameterError(f"{self.family} {name} {params[1]} outside [{lo}, {hi}]")

    @property
    def range(self) -> float:
        return self.params[0]


def correlation(spec: CorrelationSpec, h):
    """Evaluate rho(h) elementwise; h must be nonnegative."""
    h = np.asarray(h, dtype=float)
    if np.any(h < 0) or np.any(np.isnan(h)):
        raise DomainError("distances must be nonnegative")
    out = _rho(spec.family, h / spec.params[0], spec.params[1:])
    return out if out.ndim else float(out)


def _rho(family, s, extra):
    if family in COMPACT:
        u = np.minimum(s, 1.0)
        if family == "spherical":
            r = 1.0 - 1.5 * u + 0.5 * u**3
        elif family == "circular":
            r = 1.0 - (2.0 / np.pi) * (u * np.sqrt(1.0 - u * u) + np.arcsin(u))
        elif family == "cubic":
            u2 = u * u
            r = 1.0 - u2 * (7.0 - u * (8.75 - u2 * (3.5 - 0.75 * u2)))
        else:
            r = (1.0 + u * (8.0 + u * (25.0 + 32.0 * u))) * (1.0 - u) ** 8
        return np.where(s < 1.0, np.clip(r, 0.0, 1.0), 0.0)
    if family == "exponential":
        return np.exp(-s)
    if family == "gaussian":
        return np.exp(-s * s)
    if family == "powered_exponential":
        return np.exp(-(s ** extra[0]))
    if family == "cauchy":
        return (1.0 + s * s) ** (-extra[0])
    if family == "matern":
        nu = extra[0]
        with np.errstate(invalid="ignore", over="ignore", under="ignore"):
            pos = np.where(s > 0, s, 1.0)
            val = 2.0 ** (1.0 - nu) / special.gamma(nu) * pos**nu * special.kv(nu, pos)
        val = np.where(np.isfinite(val), val, 0.0)
        return np.where(s > 0, np.clip(val, 0.0, 1.0), 1.0)
    raise ParameterError(f"unknown correlation family {family!r}")
