import math

import numpy as np
import pytest
from scipy import stats

from maxstab.correlation import CorrelationSpec
from maxstab.data_io import MaximaPanel
from maxstab.errors import DataError, DomainError, MatrixError, ParameterError
from maxstab.models import ModelSpec
from maxstab.simulation import (
    SimConfig,
    correlation_factor,
    envelope_bands,
    frechet_return_level,
    group_max_envelope,
    joint_survival,
    joint_survival_curve,
    simulate_model,
    simulate_panel,
    simulate_schlather,
    simulate_schlather_matrix,
    simulate_smith,
)

from conftest import random_stations


def frechet_cdf(z):
    return np.exp(-1.0 / np.asarray(z))


def ks_p(sample):
    return stats.kstest(sample, frechet_cdf).pvalue


def pair_theta(Z, z=1.0):
    return -z * math.log(np.mean((Z[:, 0] <= z) & (Z[:, 1] <= z)))


def test_config_validation():
    for kw in ({"n_replicates": 0}, {"max_storms": 99}, {"g_cap": 0.0}, {"enlargement": -1.0},
               {"block_size": 0}):
        with pytest.raises(ParameterError):
            SimConfig(**kw)


def test_deterministic_and_thread_independent():
    pts = np.random.default_rng(1).uniform(0, 50, size=(6, 2))
    corr = CorrelationSpec("exponential", (20.0,))
    cfg = SimConfig(seed=7, n_replicates=1000)
    a = simulate_schlather(pts, corr, cfg)
    b = simulate_schlather(pts, corr, cfg)
    c = simulate_schlather(pts, corr, SimConfig(seed=7, n_replicates=1000, threads=4))
    assert a.values.tobytes() == b.values.tobytes() == c.values.tobytes()
    s1 = simulate_smith(pts, 25.0 * np.eye(2), cfg)
    s2 = simulate_smith(pts, 25.0 * np.eye(2), SimConfig(seed=7, n_replicates=1000, threads=3))
    assert s1.values.tobytes() == s2.values.tobytes()
    d = simulate_schlather(pts, corr, SimConfig(seed=8, n_replicates=1000))
    assert not np.array_equal(a.values, d.values)


def test_fields_positive_and_indexed():
    batch = simulate_schlather_matrix(np.eye(3), SimConfig(seed=2, n_replicates=50))
    assert len(batch) == 50 and np.all(batch.values > 0)
    f = batch[10]
    assert f.replicate_index == 10 and f.values.shape == (3,) and not f.truncation_flag


def test_fully_correlated_fields_constant():
    batch = simulate_schlather_matrix(np.ones((4, 4)), SimConfig(seed=3, n_replicates=200))
    np.testing.assert_allclose(batch.values, batch.values[:, :1] * np.ones((1, 4)), rtol=1e-12)
    assert ks_p(batch.values.max(axis=1)) > 0.001


def test_correlation_factor():
    C = np.array([[1.0, 0.5], [0.5, 1.0]])
    L = correlation_factor(C)
    np.testing.assert_allclose(L @ L.T, C, atol=1e-14)
    L = correlation_factor(np.ones((3, 3)))
    np.testing.assert_allclose(L @ L.T, np.ones((3, 3)), atol=1e-12)
    with pytest.raises(MatrixError):
        correlation_factor(np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]]))


def test_schlather_margins_unit_frechet():
    pts = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 30.0]])
    batch = simulate_schlather(pts, CorrelationSpec("exponential", (15.0,)),
                               SimConfig(seed=4, n_replicates=10_000))
    for d in range(3):
        assert ks_p(batch.values[:, d]) > 0.01


def test_smith_margins_unit_frechet():
    one = simulate_smith(np.zeros((1, 2)), np.eye(2), SimConfig(seed=5, n_replicates=10_000))
    assert ks_p(one.values[:, 0]) > 0.01
    pts = np.array([[0.0, 0.0], [3.0, 1.0], [6.0, 6.0]])
    many = simulate_smith(pts, 4.0 * np.eye(2), SimConfig(seed=6, n_replicates=10_000))
    for d in range(3):
        assert ks_p(many.values[:, d]) > 0.01


@pytest.mark.parametrize("rho", [0.0, 0.5, 0.9])
def test_schlather_pair_theta(rho):
    C = np.array([[1.0, rho], [rho, 1.0]])
    Z = simulate_schlather_matrix(C, SimConfig(seed=11, n_replicates=20_000)).values
    assert pair_theta(Z) == pytest.approx(1 + math.sqrt((1 - rho) / 2), abs=0.03)


def test_smith_pair_theta():
    pts = np.array([[0.0, 0.0], [1.0, 0.0]])
    Z = simulate_smith(pts, np.eye(2), SimConfig(seed=12, n_replicates=20_000)).values
    assert pair_theta(Z) == pytest.approx(2 * stats.norm.cdf(0.5), abs=0.03)
    assert 2 * stats.norm.cdf(0.5) == pytest.approx(1.3829, abs=1e-4)


def test_smith_without_enlargement_biased_at_edge():
    pts = np.array([[0.0, 0.0], [20.0, 0.0], [0.0, 20.0], [20.0, 20.0]])
    sigma = 25.0 * np.eye(2)
    biased = simulate_smith(pts, sigma, SimConfig(seed=13, n_replicates=10_000, enlargement=0.0))
    assert ks_p(biased.values[:, 0]) < 0.01
    assert np.median(biased.values[:, 0]) < 1.0 / math.log(2)
    good = simulate_smith(pts, sigma, SimConfig(seed=13, n_replicates=10_000))
    assert ks_p(good.values[:, 0]) > 0.01


def test_smith_errors():
    with pytest.raises(MatrixError):
        simulate_smith(np.zeros((2, 2)), np.array([[1.0, 2.0], [2.0, 1.0]]), SimConfig())
    with pytest.raises(MatrixError):
        simulate_smith(np.zeros((2, 2)), np.eye(3), SimConfig())
    with pytest.raises(DomainError):
        simulate_smith(np.zeros((1, 2)), np.eye(2), SimConfig(enlargement=0.0))


def test_max_stability_of_simulated_fields():
    spec = ModelSpec("m", "schlather", corr="exponential", euclidean=True)
    model = spec.build([20.0])
    stations = random_stations(4, seed=14, box=40.0, with_mean=False)
    n, M = 5, 10_000
    single = simulate_model(model, stations, SimConfig(seed=15, n_replicates=M)).values
    groups = simulate_model(model, stations, SimConfig(seed=16, n_replicates=n * M)).values
    pooled = groups.reshape(M, n, -1).max(axis=1) / n
    # compare a genuinely joint functional: the minimum over stations
    assert stats.ks_2samp(single.min(axis=1), pooled.min(axis=1)).pvalue > 0.01
    assert ks_p(pooled[:, 0]) > 0.01


def test_truncation_flag():
    # a loose Gaussian cap needs many more storms than allowed
    capped = simulate_schlather_matrix(np.eye(5), SimConfig(seed=17, n_replicates=20, g_cap=1e3,
                                                            max_storms=100))
    assert capped.any_truncated and capped.truncated.all()
    free = simulate_schlather_matrix(np.eye(2), SimConfig(seed=17, n_replicates=200))
    assert not free.any_truncated


def test_simulate_panel_round():
    spec = ModelSpec("m", "smith", euclidean=True)
    stations = random_stations(3, seed=18, with_mean=False)
    panel = simulate_panel(spec.build([30.0]), stations, [2001, 2002, 2003], SimConfig(seed=1))
    assert panel.scale_tag == "frechet" and panel.K == 3 and panel.D == 3


# ---- envelopes --------------------------------------------------------------


def _panel(stations, Z):
    return MaximaPanel(tuple(stations), tuple(range(Z.shape[0])), Z, "frechet")


def test_envelope_bands_cover_simulations():
    rng = np.random.default_rng(19)
    sims = np.sort(1.0 / rng.exponential(size=(2000, 25)), axis=1)
    pw_lo, pw_hi, lo, hi, level = envelope_bands(sims)
    inside = np.all((sims >= lo) & (sims <= hi), axis=1)
    assert np.mean(inside) >= 0.95
    assert level == pytest.approx(np.mean(inside))
    assert np.all(lo <= pw_lo) and np.all(hi >= pw_hi)


def test_single_station_envelope_contains_frechet_quantiles():
    stations = random_stations(2, seed=20, with_mean=False)
    spec = ModelSpec("m", "schlather", corr="exponential", euclidean=True)
    model = spec.build([30.0])
    Z = 1.0 / np.random.default_rng(21).exponential(size=(30, 2))
    env = group_max_envelope(_panel(stations, Z), model, [stations[0].station_id],
                             SimConfig(seed=22, n_replicates=1000))
    K = 30
    q = -1.0 / np.log(np.arange(1, K + 1) / (K + 1))
    assert np.all((q >= env.pointwise_lo) & (q <= env.pointwise_hi))
    assert env.n_sim == 1000 and env.observed.size == K
    assert len(list(env.rows())) == K


def test_fully_dependent_group_max_is_unit_frechet():
    Z = simulate_schlather_matrix(np.ones((5, 5)), SimConfig(seed=23, n_replicates=10_000)).values
    assert ks_p(Z.max(axis=1)) > 0.01


def test_envelope_uses_complete_years_and_validates():
    stations = random_stations(3, seed=24, with_mean=False)
    model = ModelSpec("m", "smith", euclidean=True).build([20.0])
    Z = 1.0 / np.random.default_rng(25).exponential(size=(12, 3))
    Z[2, 1] = np.nan
    panel = _panel(stations, Z)
    ids = [s.station_id for s in stations]
    env = group_max_envelope(panel, model, ids[:2], SimConfig(seed=1, n_replicates=1000))
    assert env.observed.size == 11
    with pytest.raises(ParameterError):
        group_max_envelope(panel, model, ids, SimConfig(n_replicates=999))
    with pytest.raises(DomainError):
        group_max_envelope(panel, model, [], SimConfig())
    with pytest.raises(DataError):
        group_max_envelope(MaximaPanel(panel.stations, panel.years, np.abs(Z), "raw"), model, ids,
                           SimConfig())
    with pytest.raises(KeyError):
        group_max_envelope(panel, model, ["nope"], SimConfig())


# ---- joint survival ---------------------------------------------------------


def test_return_level():
    assert frechet_return_level(10) == pytest.approx(-1.0 / math.log(0.9), rel=1e-15)
    assert frechet_return_level(10) == pytest.approx(9.4912, abs=1e-4)
    with pytest.raises(DomainError):
        frechet_return_level(1.0)


def test_single_station_analytic():
    model = ModelSpec("m", "smith", euclidean=True).build([10.0])
    st_ = random_stations(1, seed=26)
    js = joint_survival(model, st_, 20.0, SimConfig())
    assert js.analytic and js.prob == 1 / 20 and js.se == 0.0


def test_reference_bounds():
    model = ModelSpec("m", "schlather", corr="exponential", euclidean=True).build([30.0])
    st_ = random_stations(2, seed=27, with_mean=False)
    js = joint_survival(model, st_, 10.0, SimConfig(n_replicates=100))
    assert js.independence == pytest.approx(0.01)
    assert js.full_dependence == pytest.approx(0.1)
    with pytest.raises(DomainError):
        joint_survival(model, (), 10.0, SimConfig())


def test_joint_survival_between_bounds_and_monotone():
    model = ModelSpec("m", "schlather", corr="exponential", euclidean=True).build([40.0])
    stations = random_stations(5, seed=28, box=60.0, with_mean=False)
    cfg = SimConfig(seed=29, n_replicates=20_000)
    curve = joint_survival_curve(model, stations, [2, 5, 10, 50], cfg)
    probs = [c.prob for c in curve]
    assert all(b <= a for a, b in zip(probs, probs[1:]))
    for c in curve:
        assert c.independence - 3 * c.se <= c.prob <= c.full_dependence + 3 * c.se
    smaller = joint_survival_curve(model, stations[:3], [2, 5, 10, 50], cfg)
    for big, small in zip(curve, smaller):
        assert big.prob <= small.prob + 3 * math.hypot(big.se, small.se)
