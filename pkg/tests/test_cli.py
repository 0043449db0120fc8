import csv
import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from maxstab.cli import main
from maxstab.data_io import load_panel, save_panel, synth_dataset, Layout
from maxstab.margins import GevParams
from maxstab.models import ModelSpec

MODEL = {"name": "schl", "family": "schlather", "corr": "exponential", "euclidean": True}
SMITH = {"name": "smith", "family": "smith", "euclidean": True}


def run(tmp_path, command, doc, *flags, name="run.json"):
    cfg = tmp_path / name
    cfg.write_text(json.dumps(doc))
    return main([command, "--config", str(cfg), *flags])


def read_csv(path):
    with open(path) as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


def first_line(path):
    with open(path) as fh:
        return fh.readline()


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth (raw margins) -> transform -> fit, shared by the command tests."""
    d = tmp_path_factory.mktemp("pipe")
    synth = {
        "seed": 3,
        "synth": {"model": MODEL, "beta": {"range": 40.0}, "K": 60,
                  "layout": {"n_stations": 8, "width": 80.0, "height": 60.0, "seed": 1},
                  "margins": {"mu": 30.0, "sigma": 6.0, "xi": 0.1}},
        "out": "raw",
    }
    assert run(d, "synth", synth, name="synth.json") == 0
    base = {"input": {"stations": "raw/stations.csv", "maxima": "raw/maxima.csv",
                      "scale": "raw"},
            "transform": {}, "out": "fr"}
    assert run(d, "transform", base, name="transform.json") == 0
    fr = {"input": {"stations": "fr/frechet_stations.csv", "maxima": "fr/frechet_maxima.csv",
                    "scale": "frechet"},
          "fit": {"model": MODEL}, "out": "fit"}
    assert run(d, "fit", fr, name="fit.json") == 0
    return d, fr["input"]


def test_synth_outputs_and_provenance(pipeline):
    d, _ = pipeline
    truth = json.loads((d / "raw" / "truth.json").read_text())
    assert truth["beta"] == [40.0] and truth["K"] == 60 and truth["seed"] == 3
    assert len(truth["provenance"]["config_sha256"]) == 64 and truth["provenance"]["seed"] == 3
    line = first_line(d / "raw" / "maxima.csv")
    assert line.startswith("# maxstab provenance: config_sha256=") and "seed=3" in line
    panel = load_panel(d / "raw" / "stations.csv", d / "raw" / "maxima.csv")
    assert (panel.D, panel.K) == (8, 60)


def test_transform_outputs(pipeline):
    d, _ = pipeline
    rows = read_csv(d / "fr" / "gev_params.csv")
    assert len(rows) == 8 and read_csv(d / "fr" / "failures.csv") == []
    for r in rows:
        assert float(r["mu"]) == pytest.approx(30.0, abs=4.0)
        assert float(r["se_mu"]) > 0 and 0 <= float(r["ks_pvalue"]) <= 1
    panel = load_panel(d / "fr" / "frechet_stations.csv", d / "fr" / "frechet_maxima.csv",
                       "frechet")
    assert panel.D == 8 and np.all(panel.matrix > 0)


def test_transform_passes_ks_on_gev_panel(tmp_path):
    spec = ModelSpec("m", "schlather", corr="exponential", euclidean=True)
    panel, _ = synth_dataset(spec, [20.0], Layout(n_stations=40, seed=2), K=80, seed=4,
                             margins=GevParams(10.0, 2.0, -0.1))
    save_panel(panel, tmp_path / "s.csv", tmp_path / "m.csv")
    doc = {"input": {"stations": "s.csv", "maxima": "m.csv"}, "transform": {}}
    assert run(tmp_path, "transform", doc) == 0
    rows = read_csv(tmp_path / "out" / "gev_params.csv")
    passed = [float(r["ks_pvalue"]) > 0.01 for r in rows]
    assert np.mean(passed) >= 0.95


def test_transform_refuses_frechet_and_empty(pipeline, tmp_path):
    d, fr = pipeline
    doc = {"input": {k: str(d / v) if k != "scale" else v for k, v in fr.items()},
           "transform": {}}
    assert run(tmp_path, "transform", doc) == 3
    (tmp_path / "e.csv").write_text("year,station_id,value\n")
    doc = {"input": {"stations": str(d / fr["stations"]), "maxima": "e.csv"}, "transform": {}}
    assert run(tmp_path, "transform", doc) == 3


def test_transform_too_many_failures(tmp_path):
    stations = "station_id,lon_km,lat_km,elev_km,region_signed_dist_km,mean_level\n"
    stations += "a,0,0,0,0,\nb,1,1,0,0,\n"
    maxima = "year,station_id,value\n" + "".join(
        f"{y},a,{v}\n{y},b,{5.0 if y < 2003 else ''}\n"
        for y, v in zip(range(2000, 2030), np.random.default_rng(0).gumbel(20, 3, 30))
    )
    (tmp_path / "s.csv").write_text(stations)
    (tmp_path / "m.csv").write_text(maxima)
    doc = {"input": {"stations": "s.csv", "maxima": "m.csv"}, "transform": {}}
    assert run(tmp_path, "transform", doc) == 4
    fails = read_csv(tmp_path / "out" / "failures.csv")
    assert [f["station_id"] for f in fails] == ["b"]


def test_fit_output(pipeline):
    d, _ = pipeline
    doc = json.loads((d / "fit" / "fit.json").read_text())
    assert doc["converged"] and doc["param_names"] == ["range"]
    assert doc["params"]["range"]["estimate"] > 0
    assert doc["params"]["range"]["table"].count("(") == 1
    assert math.isfinite(doc["clic"]) and doc["provenance"]["seed"] == 0
    plls = [t["pll"] for t in doc["trace"]]
    assert plls == sorted(plls)


def test_fit_extra_starts(pipeline, tmp_path):
    d, fr = pipeline
    inp = {k: str(d / v) if k != "scale" else v for k, v in fr.items()}
    doc = {"input": inp, "fit": {"model": MODEL, "starts": [[5.0], [500.0]]}}
    assert run(tmp_path, "fit", doc) == 0
    out = json.loads((tmp_path / "out" / "fit.json").read_text())
    base = json.loads((d / "fit" / "fit.json").read_text())
    assert out["pll"] >= base["pll"] - 1e-9 * abs(base["pll"])
    assert {t["start"] for t in out["trace"]} == {0, 1, 2}


def test_fit_smoke_is_fast(pipeline, tmp_path):
    d, fr = pipeline
    doc = {"input": {k: str(d / v) if k != "scale" else v for k, v in fr.items()},
           "fit": {"model": MODEL}}
    t0 = time.perf_counter()
    assert run(tmp_path, "fit", doc) == 0
    assert time.perf_counter() - t0 < 10


def test_fit_config_errors(pipeline, tmp_path):
    d, fr = pipeline
    inp = {k: str(d / v) if k != "scale" else v for k, v in fr.items()}
    assert run(tmp_path, "fit", {"input": inp, "fit": {"model": MODEL, "init": [1e9]}}) == 2
    assert run(tmp_path, "fit", {"input": inp, "fit": {"model": {"name": "x"}}}) == 2
    assert run(tmp_path, "fit", {"input": inp}) == 2
    assert run(tmp_path, "fit", {"input": {**inp, "maxima": "nope.csv"},
                                 "fit": {"model": MODEL}}) == 2
    assert run(tmp_path, "fit", {"input": inp, "fit": {"model": MODEL, "starts": [[-1.0]]}}) == 2
    assert run(tmp_path, "fit", {"input": inp, "fit": {"model": MODEL, "starts": 5.0}}) == 2
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["fit", "--config", str(tmp_path / "bad.json")]) == 2
    assert main(["fit", "--config", str(tmp_path / "missing.json")]) == 2


def test_select_ranked_table(pipeline, tmp_path):
    d, fr = pipeline
    inp = {k: str(d / v) if k != "scale" else v for k, v in fr.items()}
    doc = {"input": inp, "select": {"models": [SMITH, MODEL]}}
    assert run(tmp_path, "select", doc) == 0
    rows = read_csv(tmp_path / "out" / "select.csv")
    assert [r["rank"] for r in rows] == ["1", "2"]
    assert float(rows[0]["clic"]) <= float(rows[1]["clic"])
    assert float(rows[0]["clic_rescaled"]) == pytest.approx(float(rows[0]["clic"]) / 7)
    js = json.loads((tmp_path / "out" / "select.json").read_text())
    assert set(js["fits"]) == {"schl", "smith"}

    assert run(tmp_path, "select", {"input": inp, "select": {"models": [MODEL]}}) == 0
    assert len(read_csv(tmp_path / "out" / "select.csv")) == 1
    assert run(tmp_path, "select", {"input": inp, "select": {"models": [MODEL, MODEL]}}) == 2


def test_check_outputs(pipeline, tmp_path):
    d, fr = pipeline
    inp = {k: str(d / v) if k != "scale" else v for k, v in fr.items()}
    doc = {"input": inp, "check": {"fit": str(d / "fit" / "fit.json"), "band_sims": 100,
                                   "n_sim": 1000, "groups": [["S0"], ["S0", "S1", "S2"]]}}
    assert run(tmp_path, "check", doc) == 0
    out = tmp_path / "out"
    assert len(read_csv(out / "pairs.csv")) == 28
    assert len(read_csv(out / "model_curve.csv")) == 101
    binned = read_csv(out / "binned.csv")
    assert sum(int(b["count"]) for b in binned) == 28
    env = read_csv(out / "envelope_1.csv")
    K = len(env)
    q = -1.0 / np.log(np.arange(1, K + 1) / (K + 1))
    lo = np.array([float(r["pointwise_lo"]) for r in env])
    hi = np.array([float(r["pointwise_hi"]) for r in env])
    assert np.all((q >= lo) & (q <= hi))
    summary = json.loads((out / "check.json").read_text())
    assert len(summary["groups"]) == 2

    doc["check"]["groups"] = [["S0", "nope"]]
    assert run(tmp_path, "check", doc) == 3


def test_risk_outputs(pipeline, tmp_path):
    d, fr = pipeline
    inp = {k: str(d / v) if k != "scale" else v for k, v in fr.items()}
    doc = {"input": inp, "risk": {"fit": str(d / "fit" / "fit.json"), "periods": [2, 10, 50],
                                  "n_sim": 4000, "groups": [["S3"], ["S0", "S1"]]}}
    assert run(tmp_path, "risk", doc) == 0
    rows = read_csv(tmp_path / "out" / "risk.csv")
    single = [r for r in rows if r["group"] == "1"]
    assert [float(r["prob"]) for r in single] == [1 / 2, 1 / 10, 1 / 50]
    pair = [r for r in rows if r["group"] == "2"]
    for r in pair:
        p, se = float(r["prob"]), float(r["mc_se"])
        assert float(r["independence"]) - 3 * se <= p <= float(r["full_dependence"]) + 3 * se
    assert float(pair[1]["independence"]) == pytest.approx(0.01)
    assert float(pair[1]["full_dependence"]) == pytest.approx(0.1)
    doc["risk"]["periods"] = [1, 10]
    assert run(tmp_path, "risk", doc) == 2


def test_risk_matches_self_simulated_frequencies(tmp_path):
    spec = ModelSpec("m", "schlather", corr="exponential", euclidean=True)
    stations = Layout(n_stations=3, width=30.0, height=30.0, seed=5).stations()
    panel, _ = synth_dataset(spec, [40.0], stations, K=2000, seed=6)
    save_panel(panel, tmp_path / "s.csv", tmp_path / "m.csv")
    fit = {"spec": spec.to_dict(), "param_names": ["range"], "beta_hat": [40.0],
           "band_width": 0.0, "pll": 0.0}
    (tmp_path / "fit.json").write_text(json.dumps(fit))
    ids = list(panel.ids)
    doc = {"input": {"stations": "s.csv", "maxima": "m.csv", "scale": "frechet"},
           "risk": {"fit": "fit.json", "periods": [2, 5, 10], "n_sim": 20000, "groups": [ids]}}
    assert run(tmp_path, "risk", doc) == 0
    for r in read_csv(tmp_path / "out" / "risk.csv"):
        z = float(r["level"])
        freq = np.mean(panel.matrix.min(axis=1) > z)
        p = float(r["prob"])
        band = 1.96 * math.sqrt(p * (1 - p) / panel.K) + 2 * float(r["mc_se"])
        assert abs(freq - p) <= band


def test_seed_and_threads_precedence(pipeline, tmp_path, monkeypatch):
    d, fr = pipeline
    inp = {k: str(d / v) if k != "scale" else v for k, v in fr.items()}
    doc = {"input": inp, "risk": {"fit": str(d / "fit" / "fit.json"), "periods": [10],
                                  "n_sim": 2000, "groups": [["S0", "S1"]]}, "threads": 2,
           "seed": 5}
    outs = {}
    for tag, flags, env in (("a", [], None), ("b", ["--threads", "3"], "4"),
                            ("c", [], "4"), ("d", ["--seed", "5"], None)):
        if env is None:
            monkeypatch.delenv("MAXSTAB_THREADS", raising=False)
        else:
            monkeypatch.setenv("MAXSTAB_THREADS", env)
        assert run(tmp_path, "risk", doc, *flags, "--out", str(tmp_path / tag)) == 0
        outs[tag] = (tmp_path / tag / "risk.csv").read_bytes()
    assert outs["a"] == outs["b"] == outs["c"] == outs["d"]
    monkeypatch.delenv("MAXSTAB_THREADS", raising=False)
    assert run(tmp_path, "risk", doc, "--seed", "6", "--out", str(tmp_path / "e")) == 0
    assert (tmp_path / "e" / "risk.csv").read_bytes() != outs["a"]
    monkeypatch.setenv("MAXSTAB_THREADS", "zero")
    assert run(tmp_path, "risk", doc) == 2


def test_console_script_entry():
    res = subprocess.run([sys.executable, "-m", "maxstab.cli", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "maxstab" in res.stdout
