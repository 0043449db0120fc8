"""Command-line entry point: ``maxstab <command> --config run.json``.

Commands: transform, fit, select, check, risk, synth. Each reads the blocks it
needs from one JSON config; ``--seed``, ``--threads`` and ``--out`` override
the config's top-level ``seed``, ``threads`` and ``out``. When ``--threads`` is
absent, MAXSTAB_THREADS is used before the config value. Relative paths in the
config are resolved against the config file's directory.

Every output embeds the SHA-256 of the effective config (thread count and
output directory excluded) and the seed.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .climate_space import pairwise_distances
from .data_io import (
    Layout,
    MaximaPanel,
    calibrate_range,
    load_panel,
    save_panel,
    synth_dataset,
    write_table,
)
from .empirical import (
    BIN_COLUMNS,
    DEFAULT_BINS,
    PAIR_COLUMNS,
    binned_band,
    binned_curve,
    pair_estimates,
)
from .errors import ConfigError, DataError, MaxStabError, ParameterError
from .inference import FitResult, model_sweep, profile_fit
from .margins import GevParams, fit_gev, ks_unit_frechet, to_unit_frechet
from .models import ModelSpec
from .simulation import (
    ENVELOPE_COLUMNS,
    RISK_COLUMNS,
    SimConfig,
    frechet_return_level,
    group_max_envelope,
    joint_survival_curve,
)

COMMANDS = ("transform", "fit", "select", "check", "risk", "synth")
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
MAX_FAIL_FRACTION = 0.10
FIT_OPTIONS = {"max_sweeps", "rtol", "n_grid", "information", "j_mode"}


@dataclass
class RunConfig:
    command: str
    raw: dict
    base: Path
    seed: int
    threads: int
    out: Path

    @property
    def block(self) -> dict:
        return self.raw.get(self.command, {})

    @property
    def digest(self) -> str:
        keep = {k: v for k, v in self.raw.items() if k not in ("threads", "out")}
        keep["seed"] = self.seed
        text = json.dumps(keep, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    @property
    def provenance(self) -> str:
        return f"maxstab provenance: config_sha256={self.digest} seed={self.seed}"

    def path(self, value, what: str) -> Path:
        if not isinstance(value, str):
            raise ConfigError(f"{what} must be a path string")
        p = Path(value)
        p = p if p.is_absolute() else self.base / p
        if not p.exists():
            raise ConfigError(f"{what} {str(p)!r} does not exist")
        return p

    def sim_config(self, n_replicates: int, **extra) -> SimConfig:
        opts = dict(self.raw.get("simulation", {}))
        unknown = set(opts) - {"g_cap", "max_storms", "enlargement", "block_size"}
        if unknown:
            raise ConfigError(f"unknown simulation keys {sorted(unknown)}")
        opts.update(extra)
        return SimConfig(seed=self.seed, n_replicates=n_replicates, threads=self.threads, **opts)


def _int(value, what):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{what} must be an integer")
    return value


def build_config(args) -> RunConfig:
    path = Path(args.config)
    if not path.exists():
        raise ConfigError(f"config file {str(path)!r} does not exist")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if args.command not in raw:
        raise ConfigError(f"config has no {args.command!r} block")
    seed = args.seed if args.seed is not None else _int(raw.get("seed", 0), "seed")
    if args.threads is not None:
        threads = args.threads
    elif os.environ.get("MAXSTAB_THREADS"):
        try:
            threads = int(os.environ["MAXSTAB_THREADS"])
        except ValueError:
            raise ConfigError("MAXSTAB_THREADS must be an integer") from None
    else:
        threads = _int(raw.get("threads", 1), "threads")
    if threads < 1:
        raise ConfigError("thread count must be at least 1")
    if seed < 0:
        raise ConfigError("seed must be nonnegative")
    out = args.out if args.out is not None else raw.get("out", "out")
    out = Path(out)
    if not out.is_absolute() and args.out is None:
        out = path.parent / out
    raw = dict(raw)
    raw["seed"] = seed
    return RunConfig(args.command, raw, path.parent, seed, threads, out)


def _panel(cfg: RunConfig, need_scale: str | None = None) -> MaximaPanel:
    block = cfg.raw.get("input")
    if not isinstance(block, dict):
        raise ConfigError("config needs an 'input' block with stations, maxima and scale")
    scale = block.get("scale", "raw")
    if scale not in ("raw", "frechet"):
        raise ConfigError("input scale must be 'raw' or 'frechet'")
    panel = load_panel(cfg.path(block.get("stations"), "input.stations"),
                       cfg.path(block.get("maxima"), "input.maxima"), scale)
    if need_scale is not None and panel.scale_tag != need_scale:
        if need_scale == "raw":
            raise DataError("panel is already on the Frechet scale; transform needs raw maxima")
        raise DataError("this command needs a Frechet-scale panel; run transform first")
    return panel


def _write_json(path: Path, doc: dict, cfg: RunConfig):
    doc = dict(doc)
    doc["provenance"] = {"config_sha256": cfg.digest, "seed": cfg.seed}
    path.write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n", encoding="utf-8")


def _spec(d, what="model") -> ModelSpec:
    if not isinstance(d, dict):
        raise ConfigError(f"{what} must be an object")
    try:
        return ModelSpec.from_dict(d)
    except (ParameterError, TypeError) as exc:
        raise ConfigError(f"{what}: {exc}") from None


def _beta(spec: ModelSpec, value, what: str) -> np.ndarray:
    if isinstance(value, dict):
        missing = [n for n in spec.param_names if n not in value]
        extra = set(value) - set(spec.param_names)
        if missing or extra:
            raise ConfigError(f"{what}: expected parameters {list(spec.param_names)}")
        value = [value[n] for n in spec.param_names]
    try:
        return spec.check_beta(np.array(value, dtype=float))
    except (ParameterError, TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: parameter error: {exc}") from None


def _fit_options(block: dict) -> dict:
    opts = {k: block[k] for k in FIT_OPTIONS if k in block}
    if opts.get("j_mode", "year") not in ("year", "cell"):
        raise ConfigError("j_mode must be 'year' or 'cell'")
    return opts


def _load_fit(cfg: RunConfig, block: dict) -> FitResult:
    path = cfg.path(block.get("fit"), f"{cfg.command}.fit")
    try:
        return FitResult.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read fit result {path}: {exc}") from None


def _groups(block: dict, panel_ids) -> list:
    groups = block.get("groups", [])
    if not isinstance(groups, list) or not all(isinstance(g, list) and g for g in groups):
        raise ConfigError("groups must be a list of nonempty station-id lists")
    for g in groups:
        for sid in g:
            if sid not in panel_ids:
                raise KeyError(f"unknown station id {sid!r} in group {g}")
    return groups


# ---- commands ---------------------------------------------------------------


def cmd_transform(cfg: RunConfig) -> int:
    """Fit GEV margins per station and write the unit Frechet panel."""
    panel = _panel(cfg, need_scale="raw")
    block = cfg.block
    max_fail = float(block.get("max_fail_fraction", MAX_FAIL_FRACTION))
    rows, failures, keep = [], [], []
    frechet = np.full(panel.matrix.shape, np.nan)
    for d, sid in enumerate(panel.ids):
        try:
            params, se = fit_gev(panel.series(sid))
        except MaxStabError as exc:
            failures.append((sid, f"{type(exc).__name__}: {exc}"))
            continue
        col = panel.matrix[:, d]
        present = ~np.isnan(col)
        frechet[present, d] = to_unit_frechet(col[present], params)
        ks, pval = ks_unit_frechet(frechet[present, d])
        rows.append((sid, params.mu, params.sigma, params.xi, float(se[0]), float(se[1]),
                     float(se[2]), float(ks), float(pval)))
        keep.append(d)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_table(cfg.out / "gev_params.csv",
                ("station_id", "mu", "sigma", "xi", "se_mu", "se_sigma", "se_xi", "ks_stat",
                 "ks_pvalue"), rows, cfg.provenance)
    write_table(cfg.out / "failures.csv", ("station_id", "error"), failures, cfg.provenance)
    if keep:
        out_panel = MaximaPanel([panel.stations[d] for d in keep], panel.years,
                                frechet[:, keep], "frechet")
        save_panel(out_panel, cfg.out / "frechet_stations.csv", cfg.out / "frechet_maxima.csv",
                   cfg.provenance)
    frac = len(failures) / panel.D
    if frac > max_fail:
        print(f"maxstab: {len(failures)} of {panel.D} station fits failed", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_fit(cfg: RunConfig) -> int:
    """Fit one max-stable model by pairwise likelihood."""
    block = cfg.block
    spec = _spec(block.get("model"))
    init = _beta(spec, block["init"], "fit.init") if "init" in block else None
    starts = block.get("starts", [])
    if not isinstance(starts, list):
        raise ConfigError("fit.starts must be a list of parameter vectors")
    starts = [_beta(spec, s, f"fit.starts[{k}]") for k, s in enumerate(starts)]
    panel = _panel(cfg, need_scale="frechet")
    fit = profile_fit(panel, spec, init=init, starts=starts, **_fit_options(block))
    cfg.out.mkdir(parents=True, exist_ok=True)
    _write_json(cfg.out / "fit.json", fit.to_dict(), cfg)
    return EXIT_OK if fit.converged else EXIT_NUMERICAL


SELECT_COLUMNS = ("rank", "name", "family", "corr", "n_params", "pll", "clic", "clic_rescaled",
                  "converged", "error")


def cmd_select(cfg: RunConfig) -> int:
    """Fit several models and rank them by CLIC."""
    block = cfg.block
    models = block.get("models")
    if not isinstance(models, list) or not models:
        raise ConfigError("select.models must be a nonempty list")
    specs = [_spec(m, "select.models entry") for m in models]
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise ConfigError(f"duplicate model names in select.models: {dup}")
    panel = _panel(cfg, need_scale="frechet")
    rows = model_sweep(panel, specs, threads=cfg.threads, **_fit_options(block))
    table = [r.to_dict(k + 1) for k, r in enumerate(rows)]
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_table(cfg.out / "select.csv", SELECT_COLUMNS,
                ([t[c] if t[c] is not None else "" for c in SELECT_COLUMNS] for t in table),
                cfg.provenance)
    fits = {r.name: r.fit.to_dict() for r in rows if r.fit is not None}
    _write_json(cfg.out / "select.json", {"table": table, "fits": fits}, cfg)
    return EXIT_OK if any(r.fit is not None for r in rows) else EXIT_NUMERICAL


def cmd_check(cfg: RunConfig) -> int:
    """Compare a fitted model with empirical extremal coefficients and group maxima."""
    block = cfg.block
    panel = _panel(cfg, need_scale="frechet")
    fit = _load_fit(cfg, block)
    groups = _groups(block, set(panel.ids))
    model = fit.model()
    method = block.get("method", "madogram")
    n_bins = _int(block.get("n_bins", DEFAULT_BINS), "check.n_bins")
    n_band = _int(block.get("band_sims", 200), "check.band_sims")
    n_env = _int(block.get("n_sim", 1000), "check.n_sim")
    n_grid = _int(block.get("curve_points", 101), "check.curve_points")

    points = model.points(panel.stations)
    estimates = pair_estimates(panel, points, method=method, ranks=bool(block.get("ranks", False)))
    curve = binned_curve(estimates, n_bins)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_table(cfg.out / "pairs.csv", PAIR_COLUMNS,
                ((e.station_pair[0], e.station_pair[1], e.distance, e.theta_hat, e.method,
                  e.n_years) for e in estimates), cfg.provenance)
    summary = {"n_pairs": len(estimates), "n_bins": len(curve), "groups": []}
    if len(curve):
        band = binned_band(model, panel.stations, panel.K, curve, estimates,
                           cfg.sim_config(1), n_sim=n_band, method=method)
        inside = band.inside(curve.theta)
        write_table(cfg.out / "binned.csv", BIN_COLUMNS + ("band_lo", "band_hi", "inside"),
                    ((k + 1, float(curve.distance[k]), float(curve.theta[k]), int(curve.count[k]),
                      float(band.lo[k]), float(band.hi[k]), int(inside[k]))
                     for k in range(len(curve))), cfg.provenance)
        summary["bins_inside_fraction"] = float(np.mean(inside))
    hmax = float(pairwise_distances(points).max()) if panel.D > 1 else 1.0
    grid = np.linspace(0.0, hmax, n_grid)
    theta = np.atleast_1d(model.extremal_coefficient(grid))
    write_table(cfg.out / "model_curve.csv", ("distance", "theta"),
                ((float(h), float(t)) for h, t in zip(grid, theta)), cfg.provenance)
    for g, group in enumerate(groups, start=1):
        env = group_max_envelope(panel, model, group, cfg.sim_config(n_env))
        write_table(cfg.out / f"envelope_{g}.csv", ENVELOPE_COLUMNS, env.rows(), cfg.provenance)
        summary["groups"].append({
            "index": g,
            "stations": list(group),
            "inside_overall": env.inside_overall,
            "inside_pointwise_fraction": float(np.mean(env.inside_pointwise)),
            "overall_level": env.overall_level,
            "truncated_replicates": env.n_truncated,
        })
    _write_json(cfg.out / "check.json", summary, cfg)
    return EXIT_OK


def cmd_risk(cfg: RunConfig) -> int:
    """Joint exceedance probabilities of return levels for station groups."""
    block = cfg.block
    periods = block.get("periods", [2, 5, 10, 20, 50, 100])
    if not isinstance(periods, list) or not periods:
        raise ConfigError("risk.periods must be a nonempty list")
    try:
        periods = [float(r) for r in periods]
    except (TypeError, ValueError):
        raise ConfigError("risk.periods must be numbers") from None
    if any(not r > 1 for r in periods):
        raise ConfigError("return periods must exceed 1")
    fit = _load_fit(cfg, block)
    panel = _panel(cfg)
    groups = _groups(block, set(panel.ids))
    if not groups:
        raise ConfigError("risk.groups must list at least one group")
    n_sim = _int(block.get("n_sim", 10000), "risk.n_sim")
    model = fit.model()
    rows = []
    for g, group in enumerate(groups, start=1):
        stations = [panel.stations[panel.index(s)] for s in group]
        for res in joint_survival_curve(model, stations, periods, cfg.sim_config(n_sim)):
            rows.append((g, len(group), res.r, float(frechet_return_level(res.r)), res.prob,
                         res.se, res.independence, res.full_dependence))
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_table(cfg.out / "risk.csv", ("group", "size") + RISK_COLUMNS, rows, cfg.provenance)
    write_table(cfg.out / "risk_groups.csv", ("group", "station_id"),
                ((g, s) for g, group in enumerate(groups, start=1) for s in group), cfg.provenance)
    return EXIT_OK


def cmd_synth(cfg: RunConfig) -> int:
    """Simulate a synthetic station layout and maxima panel."""
    block = cfg.block
    spec = _spec(block.get("model"))
    K = _int(block.get("K", 43), "synth.K")
    layout_opts = block.get("layout", {})
    if not isinstance(layout_opts, dict):
        raise ConfigError("synth.layout must be an object")
    try:
        layout = Layout(**layout_opts)
    except TypeError as exc:
        raise ConfigError(f"synth.layout: {exc}") from None
    band_width = block.get("band_width")
    beta_in = block.get("beta")
    calib = block.get("calibrate")
    if beta_in is None:
        raise ConfigError("synth.beta is required")
    if calib is not None:
        if "range" not in spec.param_names:
            raise ConfigError("range calibration needs a free 'range' parameter")
        if isinstance(beta_in, dict):
            lo, hi = spec.param_bounds()[spec.param_names.index("range")]
            beta_in = {**beta_in, "range": beta_in.get("range", math.sqrt(lo * hi))}
        beta = _beta(spec, beta_in, "synth.beta")
        k = spec.param_names.index("range")
        beta[k] = calibrate_range(spec, beta, layout.stations(),
                                  float(calib.get("threshold", 1.68)),
                                  float(calib.get("fraction", 0.25)), band_width)
    else:
        beta = _beta(spec, beta_in, "synth.beta")
    margins = block.get("margins")
    if margins is not None:
        try:
            margins = GevParams(**margins)
        except TypeError as exc:
            raise ConfigError(f"synth.margins: {exc}") from None
    panel, truth = synth_dataset(spec, beta, layout, K, cfg.seed, band_width, margins)
    cfg.out.mkdir(parents=True, exist_ok=True)
    save_panel(panel, cfg.out / "stations.csv", cfg.out / "maxima.csv", cfg.provenance)
    _write_json(cfg.out / "truth.json", truth, cfg)
    return EXIT_OK


HANDLERS = {
    "transform": cmd_transform,
    "fit": cmd_fit,
    "select": cmd_select,
    "check": cmd_check,
    "risk": cmd_risk,
    "synth": cmd_synth,
}


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="maxstab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"maxstab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name, help=HANDLERS[name].__doc__.splitlines()[0])
        s.add_argument("--config", required=True, help="JSON run configuration")
        s.add_argument("--seed", type=int, help="random seed (overrides config)")
        s.add_argument("--threads", type=int, help="worker threads (default $MAXSTAB_THREADS)")
        s.add_argument("--out", help="output directory (overrides config)")
    return p


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    try:
        cfg = build_config(args)
        return HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"maxstab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"maxstab: data error: {msg}", file=sys.stderr)
        return EXIT_DATA
    except MaxStabError as exc:
        print(f"maxstab: numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
