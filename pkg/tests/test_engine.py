import dataclasses

import numpy as np
import pytest

from datamarket.allocation import QualityModel
from datamarket.core import BuyerInstance, FeatureMatrix, InputError, PredictionTask, derive_seed
from datamarket.engine import MarketConfig, run_market, truthful_bid
from datamarket.harness.scenarios import MuDistribution, Scenario, generate_scenario
from datamarket.prediction import GainSpec
from datamarket.revenue import best_response, buyer_utility

FAST = MarketConfig(K=40, replications=2, epsilon=0.1, delta=0.1)


def stream(n=100, seed=0, **kw):
    sc = Scenario(n_sellers=4, n_steps=60, n_buyers=n, master_seed=seed,
                  mu_distribution=MuDistribution.TWO_TYPE, **kw)
    return generate_scenario(sc)


def test_same_seed_same_traces_different_seed_different_traces():
    X, buyers = stream()
    a = run_market(dataclasses.replace(FAST, master_seed=1), X, buyers).traces
    b = run_market(dataclasses.replace(FAST, master_seed=1), X, buyers).traces
    c = run_market(dataclasses.replace(FAST, master_seed=2), X, buyers).traces
    assert a == b
    assert len(a) == 100
    assert [t.price for t in a] != [t.price for t in c]


def test_price_does_not_see_the_current_bid():
    X, buyers = stream(30)
    base = run_market(FAST, X, buyers)
    k = 12
    altered = list(buyers)
    altered[k] = dataclasses.replace(buyers[k], bid=0.0 if buyers[k].mu > 0.5 else 1.0)
    other = run_market(FAST, X, altered)
    assert [t.price for t in other.traces[: k + 1]] == [t.price for t in base.traces[: k + 1]]
    assert other.traces[k].bid != base.traces[k].bid


def test_seller_revenue_conserves_collected_revenue():
    X, buyers = stream(40)
    run = run_market(FAST, X, buyers)
    assert all(t.error is None for t in run.traces)
    assert run.seller_revenue.sum() == pytest.approx(run.realized.sum(), abs=1e-9)
    assert np.all(run.seller_revenue >= 0)


def test_fully_predictive_feature_gives_full_gain():
    rng = np.random.default_rng(4)
    y = np.tile([0.0, 1.0], 30)
    X = FeatureMatrix(np.vstack([y, rng.normal(size=60)]))
    task = PredictionTask.split(y)
    cfg = MarketConfig(gain=GainSpec("normalized_accuracy"), K=20, replications=2,
                       epsilon=0.25, delta=0.1)
    run = run_market(cfg, X, [BuyerInstance(task, 1.0)])
    t = run.traces[0]
    assert t.error is None and t.bid == 1.0
    assert t.gain == 1.0
    # payment is p h(p) minus the area under the curve up to the bid
    model = QualityModel(dataclasses.replace(cfg.allocation, noise_seed=derive_seed(0, 4)),
                         X, task, cfg.predictor, cfg.gain, cfg.replications)
    curve = model.curve(t.price, run.net.points)
    assert t.revenue == pytest.approx(1.0 * curve.value_at(1.0) - curve.integral_to(1.0), abs=1e-12)
    assert t.revenue <= t.price + 1e-12


def test_zero_value_buyer_pays_nothing():
    X, buyers = stream(1)
    run = run_market(FAST, X, [dataclasses.replace(buyers[0], mu=0.0)])
    t = run.traces[0]
    assert t.bid == 0.0 and t.revenue == 0.0
    assert len(t.division) == X.n_sellers


def test_failed_step_is_recorded_and_market_continues():
    X, buyers = stream(5)
    broken = PredictionTask(np.arange(3.0), np.arange(2.0), [0, 1, 2], [3, 999])
    bad = list(buyers)
    bad[2] = BuyerInstance(broken, 0.5)
    run = run_market(FAST, X, bad)
    assert run.traces[2].error is not None
    assert all(run.traces[i].error is None for i in (0, 1, 3, 4))
    assert run.regret().realized_revenue == pytest.approx(run.realized.sum())


def test_strategy_supplies_bids():
    X, buyers = stream(10)
    run = run_market(FAST, X, buyers, strategy=lambda curve, buyer: 0.5 * buyer.mu)
    assert [t.bid for t in run.traces] == [0.5 * b.mu for b in buyers]


def test_out_of_range_bid_is_a_step_error():
    X, buyers = stream(2)
    run = run_market(FAST, X, buyers, strategy=lambda curve, buyer: 5.0)
    assert all(t.error is not None for t in run.traces)


def test_truthful_bid_is_a_best_response():
    X, buyers = stream(1)
    model = QualityModel(FAST.allocation, X, buyers[0].task, replications=2)
    curve = model.curve(0.5, np.linspace(0, 1, 11))
    for mu in (0.0, 0.3, 0.5, 0.9):
        assert truthful_bid(curve, mu) == mu
        best = best_response(curve, mu)
        assert buyer_utility(curve, mu, mu) == pytest.approx(buyer_utility(curve, mu, best), abs=1e-9)


def test_regret_accounting():
    X, buyers = stream(60)
    run = run_market(dataclasses.replace(FAST, divide=False), X, buyers)
    summary = run.regret()
    assert run.cumulative_regret()[-1] == pytest.approx(summary.regret)
    assert summary.best_fixed_revenue >= 0
    assert run.revenues.shape == (60, len(run.net))


def test_auto_schedule_needs_buyer_count():
    X, buyers = stream(3)
    with pytest.raises(InputError):
        run_market(MarketConfig(), X, iter(buyers))
    run = run_market(MarketConfig(K=10, replications=2), X, iter(buyers), n_buyers=3)
    assert run.epsilon == pytest.approx(1 / np.sqrt(3))


def test_config_validation():
    with pytest.raises(InputError):
        MarketConfig(b_max=0.0)
    with pytest.raises(InputError):
        MarketConfig(K=-3)
    with pytest.raises(InputError):
        run_market(FAST, FeatureMatrix(np.zeros((2, 10))), [])


def test_per_step_seller_revenue_adds_up():
    X, buyers = stream(15)
    run = run_market(FAST, X, buyers)
    assert run.seller_steps.shape == (15, X.n_sellers)
    np.testing.assert_allclose(run.seller_steps.sum(axis=1), run.realized, atol=1e-12)
    np.testing.assert_allclose(run.seller_steps.sum(axis=0), run.seller_revenue)
