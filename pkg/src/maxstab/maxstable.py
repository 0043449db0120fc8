"""Bivariate laws of the Smith and Schlather max-stable models on unit Frechet margins.

Both models have F(z1, z2) = exp{-V(z1, z2)} with V homogeneous of order -1.

Smith, with Mahalanobis distance a, w = a/2 + log(z2/z1)/a, v = a - w:

    V = Phi(w)/z1 + Phi(v)/z2

Schlather, with correlation rho and Q = z1^2 - 2 rho z1 z2 + z2^2:

    V = (1/2) (1/z1 + 1/z2) (1 + sqrt(1 - 2 (rho + 1) z1 z2 / (z1 + z2)^2))
      = (1/2) (1/z1 + 1/z2 + sqrt(Q) / (z1 z2))

The density is f = F (V1 V2 - V12) where Vi are partial derivatives of V.
For Smith this reduces to

    V1 V2 - V12 = Phi(w) Phi(v) / (z1^2 z2^2) + phi(w) / (a z1^2 z2)

and for Schlather to

    V1 V2 - V12 = (1 + (z2 - rho z1)/sqrt(Q)) (1 + (z1 - rho z2)/sqrt(Q)) / (4 z1^2 z2^2)
                  + (1 - rho^2) / (2 Q^(3/2)).
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from .errors import DegenerateModelError, DomainError

SMITH_FULL_DEP = 1e-6
SMITH_INDEP = 1e2
SCHLATHER_FULL_DEP = 1.0 - 1e-12
RADICAND_TOL = 1e-12
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

MODELS = ("smith", "schlather")


def norm_cdf(x):
    """Standard normal distribution function via the complementary error function."""
    return 0.5 * special.erfc(-np.asarray(x, dtype=float) / math.sqrt(2.0))


def _scalar(out):
    return out if np.ndim(out) else float(out)


def _check_z(z1, z2):
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    if np.any(~(z1 > 0)) or np.any(~(z2 > 0)):
        raise DomainError("unit Frechet values must be positive")
    return z1, z2


def smith_exponent(z1, z2, a):
    """Exponent measure V(z1, z2) for Smith's model, with exact limit branches."""
    z1, z2, a = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (z1, z2, a)))
    full = a < SMITH_FULL_DEP
    indep = a > SMITH_INDEP
    mid = ~(full | indep)
    am = np.where(mid, a, 1.0)
    w = am / 2.0 + np.log(z2 / z1) / am
    v = am - w
    V = norm_cdf(w) / z1 + norm_cdf(v) / z2
    V = np.where(full, 1.0 / np.minimum(z1, z2), V)
    return np.where(indep, 1.0 / z1 + 1.0 / z2, V)


def smith_bivariate_cdf(z1, z2, a):
    z1, z2 = _check_z(z1, z2)
    if np.any(np.asarray(a) < 0):
        raise DomainError("Mahalanobis distance must be nonnegative")
    return _scalar(np.exp(-smith_exponent(z1, z2, a)))


def schlather_exponent(z1, z2, rho):
    z1, z2, rho = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (z1, z2, rho)))
    s = z1 + z2
    rad = 1.0 - 2.0 * (rho + 1.0) * z1 * z2 / (s * s)
    rad = np.where((rad < 0) & (rad >= -RADICAND_TOL), 0.0, rad)
    return 0.5 * (1.0 / z1 + 1.0 / z2) * (1.0 + np.sqrt(rad))


def schlather_bivariate_cdf(z1, z2, rho):
    z1, z2 = _check_z(z1, z2)
    rho_arr = np.asarray(rho, dtype=float)
    if np.any(rho_arr < -1) or np.any(rho_arr > 1):
        raise DomainError("correlation must lie in [-1, 1]")
    return _scalar(np.exp(-schlather_exponent(z1, z2, rho)))


def smith_extremal_coeff(a):
    a = np.asarray(a, dtype=float)
    if np.any(a < 0) or np.any(np.isnan(a)):
        raise DomainError("Mahalanobis distance must be nonnegative")
    return _scalar(2.0 * norm_cdf(a / 2.0))


def schlather_extremal_coeff(rho):
    rho = np.asarray(rho, dtype=float)
    if np.any(np.abs(rho) > 1) or np.any(np.isnan(rho)):
        raise DomainError("correlation must lie in [-1, 1]")
    return _scalar(1.0 + np.sqrt((1.0 - rho) / 2.0))


def smith_logpdf(z1, z2, a):
    """Smith bivariate log-density; -inf where a is in the full-dependence branch."""
    z1, z2, a = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (z1, z2, a)))
    lz1, lz2 = np.log(z1), np.log(z2)
    full = a < SMITH_FULL_DEP
    indep = a > SMITH_INDEP
    am = np.where(full | indep, 1.0, a)
    w = am / 2.0 + (lz2 - lz1) / am
    v = am - w
    V = norm_cdf(w) / z1 + norm_cdf(v) / z2
    term1 = special.log_ndtr(w) + special.log_ndtr(v) - lz2
    term2 = -0.5 * w * w - _LOG_SQRT_2PI - np.log(am)
    out = -V - 2.0 * lz1 - lz2 + np.logaddexp(term1, term2)
    out = np.where(indep, -1.0 / z1 - 1.0 / z2 - 2.0 * (lz1 + lz2), out)
    return np.where(full, -np.inf, out)


def schlather_logpdf(z1, z2, rho):
    """Schlather bivariate log-density; -inf at the full-dependence limit."""
    z1, z2, rho = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (z1, z2, rho)))
    full = rho >= SCHLATHER_FULL_DEP
    r = np.where(full, 0.0, rho)
    zz = z1 * z2
    Q = z1 * z1 - 2.0 * r * zz + z2 * z2
    sq = np.sqrt(Q)
    V = 0.5 * (1.0 / z1 + 1.0 / z2 + sq / zz)
    a1 = 1.0 + (z2 - r * z1) / sq
    a2 = 1.0 + (z1 - r * z2) / sq
    dens = a1 * a2 / (4.0 * zz * zz) + (1.0 - r * r) / (2.0 * Q * sq)
    with np.errstate(divide="ignore"):
        out = -V + np.log(dens)
    return np.where(full, -np.inf, out)


def bivariate_log_density(model: str, z1, z2, dep):
    """log d^2F/dz1 dz2 for ``model`` in {"smith", "schlather"}.

    ``dep`` is the Mahalanobis distance a (Smith) or the correlation rho
    (Schlather). Full dependence has no density and raises.
    """
    z1, z2 = _check_z(z1, z2)
    dep = np.asarray(dep, dtype=float)
    if model == "smith":
        if np.any(dep < 0):
            raise DomainError("Mahalanobis distance must be nonnegative")
        if np.any(dep < SMITH_FULL_DEP):
            raise DegenerateModelError("Smith model at full dependence has no bivariate density")
        return _scalar(smith_logpdf(z1, z2, dep))
    if model == "schlather":
        if np.any(dep < -1) or np.any(dep > 1):
            raise DomainError("correlation must lie in [-1, 1]")
        if np.any(dep >= SCHLATHER_FULL_DEP):
            raise DegenerateModelError(
                "Schlather model at full dependence has no bivariate density"
            )
        return _scalar(schlather_logpdf(z1, z2, dep))
    raise DomainError(f"unknown model {model!r}; expected one of {MODELS}")


def bivariate_cdf(model: str, z1, z2, dep):
    if model == "smith":
        return smith_bivariate_cdf(z1, z2, dep)
    if model == "schlather":
        return schlather_bivariate_cdf(z1, z2, dep)
    raise DomainError(f"unknown model {model!r}; expected one of {MODELS}")


def extremal_coeff(model: str, dep):
    if model == "smith":
        return smith_extremal_coeff(dep)
    if model == "schlather":
        return schlather_extremal_coeff(dep)
    raise DomainError(f"unknown model {model!r}; expected one of {MODELS}")
