import numpy as np
import pytest

from bundlechoice.dgp import DgpConfig, simulate_dataset
from bundlechoice.errors import UsageError
from bundlechoice.kernels import RngStream
from bundlechoice.mcmc import McmcSettings, ModelSpec, run_chain
from bundlechoice.model_core import PanelData
from _helpers import fixed_panel, mnp_probabilities
from bundlechoice.predict import (ChainSource, ElasticityTable, Scenario, TruthSource, good_shares,
                                  predict_shares, price_elasticities)


def test_shares_match_quadrature_oracle():
    d, src = fixed_panel(n=50_000)
    res = predict_shares(src, d, rng=RngStream(1), n_sim=4)
    m = np.array([0.0, -0.5 + 0.3, -0.5 - 0.2, -1.0 + 0.1 + 0.5])
    oracle = mnp_probabilities(m)
    assert oracle.sum() == pytest.approx(1.0, abs=1e-8)
    np.testing.assert_allclose(res.bundle, oracle, atol=0.005)


def test_share_identities_per_draw():
    data, truth = simulate_dataset(DgpConfig(N=100, T=3, seed=1))
    ch = run_chain(data, ModelSpec(shared=truth.shared, mcmc=McmcSettings(burn_in=2, draws=5, seed=1)))
    res = predict_shares(ChainSource(ch), data, rng=RngStream(0))
    np.testing.assert_allclose(res.bundle_draws.sum(1), 1.0, atol=1e-12)
    assert np.all(res.bundle_draws >= 0)
    cs = data.choice_set
    G = good_shares(cs, res.bundle_draws)
    for j in range(3):
        in_j = [r for r in range(1, 8) if j in cs.bundles[r]]
        np.testing.assert_allclose(G[:, j], res.bundle_draws[:, in_j].sum(1), atol=1e-12)
    np.testing.assert_allclose(res.good, G.mean(0), atol=1e-12)


def test_huge_negative_intercepts_choose_outside():
    d, src = fixed_panel(n=500, intercepts=(-60.0, -60.0), pair=0.0)
    res = predict_shares(src, d, rng=RngStream(0))
    assert res.bundle[0] == 1.0 and np.all(res.good == 0)


def test_unit_scenario_reproduces_baseline():
    data, truth = simulate_dataset(DgpConfig(N=200, T=3, seed=2))
    src = TruthSource.from_truth(truth, data)
    a = predict_shares(src, data, rng=RngStream(4))
    b = predict_shares(src, data, Scenario((1.0, 1.0, 1.0)), rng=RngStream(4))
    np.testing.assert_array_equal(a.bundle, b.bundle)


def test_tax_lowers_taxed_good_share():
    data, truth = simulate_dataset(DgpConfig(N=500, T=6, seed=2))
    src = TruthSource.from_truth(truth, data)
    a = predict_shares(src, data, rng=RngStream(4), n_sim=2)
    b = predict_shares(src, data, Scenario((1.2, 1.0, 1.0), "tax"), rng=RngStream(4), n_sim=2)
    assert b.good[0] < a.good[0]


def test_scenario_validation():
    with pytest.raises(UsageError):
        Scenario((1.0, -1.0))
    data, truth = simulate_dataset(DgpConfig(N=10, T=2, seed=2))
    with pytest.raises(UsageError):
        Scenario((1.0, 1.0)).apply(data)
    with pytest.raises(UsageError):
        Scenario((1.0, 1.0, 1.0), overrides={"q_1": 0.0}).apply(data)
    d2 = Scenario((1.0, 1.0, 1.0), overrides={"z_1_3": 0.0, "w_1_2_1": 2.0}).apply(data)
    assert np.all(d2.z[0][:, 2] == 0) and np.all(d2.w[0][:, 0] == 2)


def test_zero_price_coefficient_gives_zero_elasticities():
    d, src = fixed_panel(n=3000, alpha=0.0)
    tab = price_elasticities(src, d, rng=RngStream(0))
    np.testing.assert_array_equal(tab.good, 0.0)
    np.testing.assert_array_equal(tab.bundle, 0.0)


def test_elasticity_table_shape_and_finite_difference():
    d, src = fixed_panel(n=200_000, alpha=-0.8)
    tab = price_elasticities(src, d, rng=RngStream(2), step=0.05)
    assert tab.good.shape == (2, 2) and tab.bundle.shape == (2, 3)
    # analytic oracle from the quadrature probabilities
    def shares(p1, p2):
        m = np.array([0.0, -0.8 * p1 + 0.3, -0.8 * p2 - 0.2, -0.8 * (p1 + p2) + 0.1 + 0.5])
        P = mnp_probabilities(m)
        return np.array([P[1] + P[3], P[2] + P[3]]), P[1:]
    g0, b0 = shares(1, 1)
    gf, bf = shares(1.05, 1)
    gb, bb = shares(0.95, 1)
    np.testing.assert_allclose(tab.good[0], (gf - gb) / g0 / 0.1, atol=0.03)
    np.testing.assert_allclose(tab.bundle[0], (bf - bb) / b0 / 0.1, atol=0.06)


def test_crn_changes_only_noise():
    data, truth = simulate_dataset(DgpConfig(N=1000, T=12, seed=7))
    src = TruthSource.from_truth(truth, data)
    on = price_elasticities(src, data, rng=RngStream(1), n_sim=6, common_random_numbers=True)
    off = price_elasticities(src, data, rng=RngStream(2), n_sim=6, common_random_numbers=False)
    # without CRN the finite-difference noise is roughly sd(share)/share/0.1 per cell
    assert np.all(np.abs(on.good - off.good) < 0.45)


def test_zero_baseline_share_is_undefined():
    d, src = fixed_panel(n=300, intercepts=(-60.0, 0.0), pair=-60.0)
    tab = price_elasticities(src, d, rng=RngStream(0))
    assert np.isnan(tab.good[0, 0]) and np.isfinite(tab.good[1, 1])
    assert any("zero baseline share" in m for m in tab.diagnostics)


def test_relabelling_individuals_is_invariant():
    data, truth = simulate_dataset(DgpConfig(N=300, T=2, seed=3))
    src = TruthSource.from_truth(truth, data)
    a = price_elasticities(src, data, rng=RngStream(5))
    # rename ids in reverse order keeping row order (ids decreasing would reorder rows)
    data2 = PanelData(data.choice_set, data.ids + 1000, data.periods, data.y, data.z, data.w, data.p, data.zp,
                      data.price_slot)
    b = price_elasticities(TruthSource.from_truth(truth, data2), data2, rng=RngStream(5))
    np.testing.assert_array_equal(a.good, b.good)


def test_chain_source_checks_and_average():
    data, truth = simulate_dataset(DgpConfig(N=30, T=2, seed=3))
    ch = run_chain(data, ModelSpec(shared=truth.shared, mcmc=McmcSettings(burn_in=1, draws=4, seed=1)))
    src = ChainSource(ch, max_draws=2)
    assert src.n_draws == 2
    t1 = price_elasticities(src, data, rng=RngStream(0))
    assert np.all(np.isfinite(t1.good_se) | np.isnan(t1.good))
    avg = ElasticityTable.average([t1, t1])
    np.testing.assert_allclose(avg.good, t1.good)
    np.testing.assert_allclose(avg.good_se, 0.0)
    other, _ = simulate_dataset(DgpConfig(N=31, T=2, seed=3))
    with pytest.raises(UsageError):
        predict_shares(src, other, rng=RngStream(0))
