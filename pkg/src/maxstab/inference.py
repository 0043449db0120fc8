"""Pairwise likelihood fitting, sandwich information and CLIC model selection.

The pairwise log-likelihood sums bivariate log-densities over all K years and
all D(D-1)/2 station pairs. It is maximized by cyclic coordinate profiling:
each parameter in turn is set to the maximizer of the one-dimensional
profile with the others held fixed, until a full sweep stops improving.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, special

from . import _numdiff
from .climate_space import coords_array, pair_indices, transform_array
from .data_io import MaximaPanel
from .errors import (
    BoundaryError,
    DataError,
    EvaluationError,
    MatrixError,
    MaxStabError,
    ParameterError,
)
from .maxstable import (
    _LOG_SQRT_2PI,
    SCHLATHER_FULL_DEP,
    SMITH_FULL_DEP,
    SMITH_INDEP,
    norm_cdf,
    schlather_logpdf,
    smith_logpdf,
)
from .models import ModelSpec

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
N_GRID = 32
MAX_SWEEPS = 100
SWEEP_RTOL = 1e-6
SINGULAR_COND = 1e12
CHUNK = 16384


class PairwiseLikelihood:
    """Pairwise log-likelihood of one panel under one model spec.

    Cells are the (pair, year) combinations with both observations present,
    ordered by pair (lexicographic) and then by year; sums follow that order.
    """

    def __init__(self, panel: MaximaPanel, spec: ModelSpec, band_width: float | None = None):
        if panel.scale_tag != "frechet":
            raise DataError("pairwise likelihood needs a panel on the unit Frechet scale")
        if panel.D < 2:
            raise DataError("pairwise likelihood needs at least two stations")
        self.panel = panel
        self.spec = spec
        self.band_width = spec.bandwidth_grid[0] if band_width is None else float(band_width)
        self.X = coords_array(panel.stations, spec.coords)
        self.pairs = pair_indices(panel.D)
        i, j = self.pairs
        z1 = panel.matrix[:, i].T
        z2 = panel.matrix[:, j].T
        valid = ~(np.isnan(z1) | np.isnan(z2))
        self.pair_idx, self.year_idx = np.nonzero(valid)
        self.z1 = np.ascontiguousarray(z1[valid])
        self.z2 = np.ascontiguousarray(z2[valid])
        self.n_pairs = len(i)
        self.skipped_pairs = int(np.sum(~valid.any(axis=1)))
        self.n_cells = self.z1.size
        # dependence-free pieces of the log-density, computed once per panel
        z1, z2 = self.z1, self.z2
        self._lz1, self._lz2 = np.log(z1), np.log(z2)
        self._inv_sum = 1.0 / z1 + 1.0 / z2
        self._zz = z1 * z2
        self._sq_sum = z1 * z1 + z2 * z2
        self._log_base = -2.0 * self._lz1 - self._lz2

    def model(self, beta):
        return self.spec.build(beta, self.band_width)

    def pair_dependence(self, beta) -> np.ndarray:
        m = self.model(beta)
        points = transform_array(self.X, m.transform)
        return m.pair_dependence(points, self.pairs)

    def cell_logf(self, beta) -> np.ndarray:
        dep = self.pair_dependence(beta)
        cells = self._smith_cells if self.spec.family == "smith" else self._schlather_cells
        out = np.empty(self.n_cells)
        # chunked so that temporaries stay in cache
        for start in range(0, self.n_cells, CHUNK):
            sl = slice(start, start + CHUNK)
            out[sl] = cells(dep[self.pair_idx[sl]], sl)
        return out

    def _schlather_cells(self, rho, sl):
        z1, z2, zz = self.z1[sl], self.z2[sl], self._zz[sl]
        if np.any(rho >= SCHLATHER_FULL_DEP):
            return schlather_logpdf(z1, z2, rho)
        Q = self._sq_sum[sl] - 2.0 * rho * zz
        inv_sq = 1.0 / np.sqrt(Q)
        a1 = 1.0 + (z2 - rho * z1) * inv_sq
        a2 = 1.0 + (z1 - rho * z2) * inv_sq
        dens = a1 * a2 / (4.0 * zz * zz) + (1.0 - rho * rho) * (0.5 * inv_sq * inv_sq * inv_sq)
        with np.errstate(divide="ignore"):
            return np.log(dens) - 0.5 * (self._inv_sum[sl] + 1.0 / (zz * inv_sq))

    def _smith_cells(self, a, sl):
        z1, z2 = self.z1[sl], self.z2[sl]
        if np.any(a < SMITH_FULL_DEP) or np.any(a > SMITH_INDEP):
            return smith_logpdf(z1, z2, a)
        lz2 = self._lz2[sl]
        w = 0.5 * a + (lz2 - self._lz1[sl]) / a
        v = a - w
        pw, pv = norm_cdf(w), norm_cdf(v)
        V = pw / z1 + pv / z2
        dens = pw * pv / z2 + np.exp(-0.5 * w * w - _LOG_SQRT_2PI) / a
        tiny = ~(dens > 1e-280)
        with np.errstate(divide="ignore"):
            log_dens = np.log(dens)
        if tiny.any():
            wt, vt, at = w[tiny], v[tiny], a[tiny]
            t1 = special.log_ndtr(wt) + special.log_ndtr(vt) - lz2[tiny]
            t2 = -0.5 * wt * wt - _LOG_SQRT_2PI - np.log(at)
            log_dens[tiny] = np.logaddexp(t1, t2)
        return self._log_base[sl] - V + log_dens

    def __call__(self, beta) -> float:
        return float(np.sum(self.cell_logf(beta)))


def pairwise_loglik(panel: MaximaPanel, spec: ModelSpec, beta, band_width=None) -> float:
    beta = spec.check_beta(beta)
    return PairwiseLikelihood(panel, spec, band_width)(beta)


# ---- one-dimensional maximization -------------------------------------------


def _safe(f, x):
    try:
        v = float(f(x))
    except (MaxStabError, FloatingPointError, ZeroDivisionError):
        return -math.inf
    return v if math.isfinite(v) else -math.inf


def golden_section_max(f, a, b, xtol, fa=None):
    """Golden-section search for a maximum of ``f`` on [a, b].

    Returns the best (x, f(x)) among all points evaluated.
    """
    best = (None, -math.inf)
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = _safe(f, x1), _safe(f, x2)
    for x, v in ((x1, f1), (x2, f2)):
        if v > best[1]:
            best = (x, v)
    while b - a > xtol:
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = _safe(f, x1)
            if f1 > best[1]:
                best = (x1, f1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = _safe(f, x2)
            if f2 > best[1]:
                best = (x2, f2)
    return best


def maximize_1d(
    objective: Callable[[float], float],
    lo: float,
    hi: float,
    incumbent: float | None = None,
    f_incumbent: float | None = None,
    n_grid: int = N_GRID,
    xtol: float | None = None,
):
    """Maximize a scalar function on [lo, hi]: grid scan, then golden section.

    The golden-section stage refines the bracket around the best grid cell.
    The result is never worse than the incumbent, and ties keep the incumbent.
    """
    if not lo < hi:
        raise ParameterError(f"empty interval [{lo}, {hi}]")
    if xtol is None:
        xtol = 1e-7 * (hi - lo)
    grid = np.linspace(lo, hi, n_grid)
    vals = np.array([_safe(objective, g) for g in grid])
    if not np.any(np.isfinite(vals)):
        raise EvaluationError(f"objective non-finite at every grid point on [{lo}, {hi}]")
    k = int(np.argmax(vals))
    best_x, best_f = float(grid[k]), float(vals[k])
    if incumbent is not None:
        f_inc = _safe(objective, incumbent) if f_incumbent is None else f_incumbent
        if f_inc >= best_f:
            best_x, best_f = float(incumbent), f_inc
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, n_grid - 1)]
    xg, fg = golden_section_max(objective, a, b, xtol)
    if fg > best_f:
        best_x, best_f = float(xg), fg
    return best_x, best_f


# ---- fit results ------------------------------------------------------------


@dataclass
class ClicResult:
    value: float
    rescaled: float
    penalty: float
    diagnosis: str = ""


@dataclass
class FitResult:
    spec: ModelSpec
    param_names: tuple
    beta_hat: np.ndarray
    band_width: float
    pll: float
    H: np.ndarray | None
    J: np.ndarray | None
    sandwich_cov: np.ndarray | None
    clic: float
    clic_rescaled: float
    clic_penalty: float
    diagnosis: str
    trace: list
    converged: bool
    n_sweeps: int
    n_stations: int
    n_years: int
    n_cells: int
    skipped_pairs: int = 0
    band_pll: dict = field(default_factory=dict)

    @property
    def std_errors(self) -> np.ndarray:
        if self.sandwich_cov is None:
            return np.full(len(self.param_names), np.nan)
        d = np.diag(self.sandwich_cov)
        return np.sqrt(np.where(d >= 0, d, np.nan))

    @property
    def params(self) -> dict:
        return dict(zip(self.param_names, (float(b) for b in self.beta_hat)))

    def model(self):
        return self.spec.build(self.beta_hat, self.band_width)

    def to_dict(self) -> dict:
        def mat(m):
            return None if m is None else [[_jnum(v) for v in row] for row in m]

        se = self.std_errors
        params = {}
        for n, b, s in zip(self.param_names, self.beta_hat, se):
            params[n] = {
                "estimate": float(b),
                "se": _jnum(s),
                "table": f"{b:.4g} ({s:.3g})" if np.isfinite(s) else f"{b:.4g}",
            }
        return {
            "spec": self.spec.to_dict(),
            "param_names": list(self.param_names),
            "beta_hat": [float(b) for b in self.beta_hat],
            "params": params,
            "fixed": dict(sorted(self.spec.fixed.items())),
            "band_width": float(self.band_width),
            "band_pll": {repr(float(k)): _jnum(v) for k, v in sorted(self.band_pll.items())},
            "pll": _jnum(self.pll),
            "clic": _jnum(self.clic),
            "clic_rescaled": _jnum(self.clic_rescaled),
            "clic_penalty": _jnum(self.clic_penalty),
            "diagnosis": self.diagnosis,
            "H": mat(self.H),
            "J": mat(self.J),
            "sandwich_cov": mat(self.sandwich_cov),
            "converged": self.converged,
            "n_sweeps": self.n_sweeps,
            "n_stations": self.n_stations,
            "n_years": self.n_years,
            "n_cells": self.n_cells,
            "skipped_pairs": self.skipped_pairs,
            "trace": self.trace,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        def arr(m):
            return None if m is None else np.array(m, dtype=float)

        def num(v):
            return math.nan if v is None else float(v)

        spec = ModelSpec.from_dict(d["spec"])
        return cls(
            spec=spec,
            param_names=tuple(d["param_names"]),
            beta_hat=np.array(d["beta_hat"], dtype=float),
            band_width=float(d["band_width"]),
            pll=num(d["pll"]),
            H=arr(d.get("H")),
            J=arr(d.get("J")),
            sandwich_cov=arr(d.get("sandwich_cov")),
            clic=num(d.get("clic")),
            clic_rescaled=num(d.get("clic_rescaled")),
            clic_penalty=num(d.get("clic_penalty")),
            diagnosis=d.get("diagnosis", ""),
            trace=list(d.get("trace", [])),
            converged=bool(d.get("converged", False)),
            n_sweeps=int(d.get("n_sweeps", 0)),
            n_stations=int(d.get("n_stations", 0)),
            n_years=int(d.get("n_years", 0)),
            n_cells=int(d.get("n_cells", 0)),
            skipped_pairs=int(d.get("skipped_pairs", 0)),
        )


def _jnum(v):
    v = float(v)
    return v if math.isfinite(v) else None


# ---- profiling --------------------------------------------------------------


def _coordinate_ascent(lik, spec, init, max_sweeps, rtol, n_grid, trace):
    bounds = spec.param_bounds()
    logs = spec.log_scale()
    beta = np.array(init, dtype=float)
    pll = lik(beta)
    if not math.isfinite(pll):
        raise EvaluationError(f"{spec.name}: pairwise likelihood not finite at the initial point")
    w = lik.band_width
    trace.append({"band_width": w, "sweep": 0, "param": None, "value": None, "pll": pll})
    converged = False
    sweep = 0
    for sweep in range(1, max_sweeps + 1):
        start = pll
        for r, name in enumerate(spec.param_names):
            lo, hi = bounds[r]
            work = beta.copy()
            if logs[r]:
                def f(u, r=r, work=work):
                    work[r] = math.exp(u)
                    return lik(work)
                x, val = maximize_1d(f, math.log(lo), math.log(hi), math.log(beta[r]), pll,
                                     n_grid=n_grid)
                x = min(max(math.exp(x), lo), hi)
            else:
                def f(u, r=r, work=work):
                    work[r] = u
                    return lik(work)
                x, val = maximize_1d(f, lo, hi, beta[r], pll, n_grid=n_grid)
            if val > pll:
                beta[r] = x
                pll = val
            trace.append({"band_width": w, "sweep": sweep, "param": name,
                          "value": float(beta[r]), "pll": pll})
        if pll - start <= rtol * abs(start):
            converged = True
            break
    return beta, pll, converged, sweep


def profile_fit(
    panel: MaximaPanel,
    spec: ModelSpec,
    init=None,
    max_sweeps: int = MAX_SWEEPS,
    rtol: float = SWEEP_RTOL,
    n_grid: int = N_GRID,
    information: bool = True,
    j_mode: str = "year",
    starts: Sequence | None = None,
) -> FitResult:
    """Maximize the pairwise likelihood by cyclic coordinate profiling.

    The band width, on which the likelihood is not differentiable, is chosen
    from ``spec.bandwidth_grid`` by refitting all other parameters for each
    candidate and keeping the best. ``starts`` adds further initial vectors;
    every (band width, start) combination is profiled and the best kept.
    """
    if init is None:
        init = spec.default_init(panel.stations)
    inits = [spec.check_beta(init)] + [spec.check_beta(s) for s in (starts or ())]
    widths = spec.bandwidth_grid if spec.uses_band else spec.bandwidth_grid[:1]
    trace: list = []
    best = None
    band_pll = {}
    for w in widths:
        lik = PairwiseLikelihood(panel, spec, w)
        for k, x0 in enumerate(inits):
            run: list = []
            beta, pll, conv, sweeps = _coordinate_ascent(lik, spec, x0, max_sweeps, rtol,
                                                         n_grid, run)
            if len(inits) > 1:
                for row in run:
                    row["start"] = k
            trace += run
            band_pll[w] = max(pll, band_pll.get(w, -math.inf))
            if best is None or pll > best[2]:
                best = (lik, beta, pll, conv, sweeps)
    lik, beta, pll, conv, sweeps = best

    H = J = cov = None
    clic_res = ClicResult(math.nan, math.nan, math.nan, "information not computed")
    if information:
        try:
            H, J = score_and_information(lik, beta, j_mode=j_mode)
            cov = sandwich(H, J)
            clic_res = compute_clic(pll, H, J, panel.D, spec.param_names)
        except (BoundaryError, MatrixError, EvaluationError) as exc:
            clic_res = ClicResult(math.nan, math.nan, math.nan, str(exc))
    return FitResult(
        spec=spec,
        param_names=spec.param_names,
        beta_hat=beta,
        band_width=lik.band_width,
        pll=pll,
        H=H,
        J=J,
        sandwich_cov=cov,
        clic=clic_res.value,
        clic_rescaled=clic_res.rescaled,
        clic_penalty=clic_res.penalty,
        diagnosis=clic_res.diagnosis,
        trace=trace,
        converged=conv,
        n_sweeps=sweeps,
        n_stations=panel.D,
        n_years=panel.K,
        n_cells=lik.n_cells,
        skipped_pairs=lik.skipped_pairs,
        band_pll=band_pll,
    )


def simplex_fit(lik: PairwiseLikelihood, init, maxiter: int | None = None):
    """Joint Nelder-Mead maximization in the profiler's coordinates.

    Baseline for comparing against :func:`profile_fit`. Returns (beta, pll).
    """
    spec = lik.spec
    bounds = spec.param_bounds()
    logs = spec.log_scale()

    def to_u(beta):
        return np.array([math.log(b) if lg else b for b, lg in zip(beta, logs)])

    def from_u(u):
        return np.array([
            min(max(math.exp(x) if lg else x, lo), hi)
            for x, lg, (lo, hi) in zip(u, logs, bounds)
        ])

    ubounds = [(math.log(lo), math.log(hi)) if lg else (lo, hi)
               for lg, (lo, hi) in zip(logs, bounds)]
    res = optimize.minimize(
        lambda u: -_safe(lik, from_u(u)),
        to_u(np.asarray(init, dtype=float)),
        method="Nelder-Mead",
        bounds=ubounds,
        options={"maxiter": maxiter or 200 * len(logs), "xatol": 1e-6, "fatol": 1e-6},
    )
    beta = from_u(res.x)
    return beta, lik(beta)


# ---- information matrices and CLIC -----------------------------------------


def score_and_information(lik: PairwiseLikelihood, beta, j_mode: str = "year"):
    """Return (H, J) at ``beta`` by central finite differences.

    H is minus the Hessian of the pairwise log-likelihood. J sums outer
    products of score contributions: per year (scores summed over pairs within
    each year) when ``j_mode == "year"``, per (pair, year) cell when
    ``j_mode == "cell"``.
    """
    if j_mode not in ("year", "cell"):
        raise ParameterError("j_mode must be 'year' or 'cell'")
    beta = np.asarray(beta, dtype=float)
    spec = lik.spec
    bounds = spec.param_bounds()
    hg = _numdiff.steps(beta, _numdiff.GRAD_REL_STEP, _numdiff.GRAD_ABS_STEP)
    hh = _numdiff.steps(beta, _numdiff.HESS_REL_STEP, _numdiff.HESS_ABS_STEP)
    periodic = spec.periodic(lik.band_width)
    for n, b, h, (lo, hi), wraps in zip(spec.param_names, beta, np.maximum(hg, hh), bounds,
                                        periodic):
        if not wraps and (b - h < lo or b + h > hi):
            raise BoundaryError(f"{spec.name}: {n}={b} within the derivative step of a bound")

    R = beta.size
    G = np.empty((lik.n_cells, R))
    for r in range(R):
        e = np.zeros(R)
        e[r] = hg[r]
        G[:, r] = (lik.cell_logf(beta + e) - lik.cell_logf(beta - e)) / (2.0 * hg[r])
    if not np.all(np.isfinite(G)):
        raise EvaluationError(f"{spec.name}: non-finite score contributions")
    if j_mode == "year":
        S = np.column_stack([
            np.bincount(lik.year_idx, weights=G[:, r], minlength=lik.panel.K) for r in range(R)
        ])
        J = S.T @ S
    else:
        J = G.T @ G
    J = 0.5 * (J + J.T)
    H = -_numdiff.hessian(lik, beta, hh)
    if not np.all(np.isfinite(H)):
        raise EvaluationError(f"{spec.name}: non-finite Hessian")
    return H, J


def sandwich(H, J) -> np.ndarray:
    try:
        Hinv = np.linalg.inv(H)
    except np.linalg.LinAlgError as exc:
        raise MatrixError("H is singular") from exc
    cov = Hinv @ J @ Hinv
    return 0.5 * (cov + cov.T)


def compute_clic(pll, H, J, n_stations=None, names: Sequence[str] | None = None) -> ClicResult:
    """CLIC = -2 pll + 2 tr(H^{-1} J), plus the version divided by D - 1."""
    H = np.asarray(H, dtype=float)
    J = np.asarray(J, dtype=float)
    cond = np.linalg.cond(H)
    if not np.isfinite(cond) or cond > SINGULAR_COND:
        evals, evecs = np.linalg.eigh(0.5 * (H + H.T))
        k = int(np.argmin(np.abs(evals)))
        vec = evecs[:, k]
        labels = names or [f"b{i}" for i in range(len(vec))]
        terms = ", ".join(f"{n}:{v:+.3f}" for n, v in zip(labels, vec) if abs(v) > 1e-3)
        return ClicResult(math.nan, math.nan, math.nan,
                          f"H singular (cond={cond:.3g}); null direction [{terms}]")
    penalty = 2.0 * float(np.trace(np.linalg.solve(H, J)))
    value = -2.0 * float(pll) + penalty
    rescaled = value / (n_stations - 1) if n_stations and n_stations > 1 else math.nan
    return ClicResult(value, rescaled, penalty)


def clic(fit: FitResult) -> ClicResult:
    if fit.H is None or fit.J is None:
        return ClicResult(math.nan, math.nan, math.nan, fit.diagnosis or "no information matrices")
    return compute_clic(fit.pll, fit.H, fit.J, fit.n_stations, fit.param_names)


# ---- model sweeps -----------------------------------------------------------


@dataclass
class SweepRow:
    name: str
    spec: ModelSpec
    fit: FitResult | None
    error: str | None = None

    @property
    def clic(self) -> float:
        return self.fit.clic if self.fit is not None else math.nan

    def to_dict(self, rank: int) -> dict:
        f = self.fit
        return {
            "rank": rank,
            "name": self.name,
            "family": self.spec.family,
            "corr": self.spec.corr,
            "n_params": self.spec.n_params,
            "pll": _jnum(f.pll) if f else None,
            "clic": _jnum(f.clic) if f else None,
            "clic_rescaled": _jnum(f.clic_rescaled) if f else None,
            "converged": f.converged if f else False,
            "error": self.error if self.error else (f.diagnosis or None if f else None),
        }


def model_sweep(panel: MaximaPanel, specs: Sequence[ModelSpec], threads: int = 1,
                **fit_kwargs) -> list:
    """Fit every spec and rank by CLIC (ascending; undefined CLIC last)."""
    if not specs:
        raise ParameterError("model sweep needs at least one spec")

    def run(spec):
        try:
            return SweepRow(spec.name, spec, profile_fit(panel, spec, **fit_kwargs))
        except MaxStabError as exc:
            return SweepRow(spec.name, spec, None, f"{type(exc).__name__}: {exc}")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, specs))
    else:
        rows = [run(s) for s in specs]
    order = sorted(range(len(rows)),
                   key=lambda i: (not math.isfinite(rows[i].clic),
                                  rows[i].clic if math.isfinite(rows[i].clic) else 0.0, i))
    return [rows[i] for i in order]
