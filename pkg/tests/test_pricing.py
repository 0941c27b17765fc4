import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from datamarket.core import InputError
from datamarket.pricing import (
    RENORMALIZE_EVERY,
    EpsilonNet,
    PriceState,
    expected_gain,
    hindsight_regret,
    hyperparameters,
    sample_price,
    update_weights,
)


def test_net_covers_range_including_endpoint():
    np.testing.assert_allclose(EpsilonNet(1.0, 0.25).points, [0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(EpsilonNet(1.0, 0.3).points, [0, 0.3, 0.6, 0.9, 1.0])
    assert len(EpsilonNet(2.0, 0.1)) == 21


@given(st.floats(0.01, 10), st.floats(1e-3, 1))
def test_net_spacing(b_max, eps):
    pts = EpsilonNet(b_max, eps).points
    assert pts[0] == 0 and pts[-1] == b_max
    assert np.all(np.diff(pts) > 0)
    assert np.all(np.diff(pts) <= eps * (1 + 1e-9))


def test_multiplicative_update():
    state = PriceState.initial(EpsilonNet(1.0, 0.5), 0.1, seed=1)
    new = update_weights(state, [0.0, 0.5, 1.0])
    np.testing.assert_allclose(new.weights, [1.0, 1.05, 1.1])
    assert new.steps == 1
    np.testing.assert_array_equal(state.weights, [1, 1, 1])


def test_update_rejects_bad_gains():
    state = PriceState.initial(EpsilonNet(1.0, 0.5), 0.1, seed=1)
    with pytest.raises(InputError):
        update_weights(state, [0.0, 1.5, 0.0])
    with pytest.raises(InputError):
        update_weights(state, [0.0, 0.5])
    with pytest.raises(InputError):
        PriceState.initial(EpsilonNet(1.0, 0.5), 0.0, seed=1)


def test_renormalization_keeps_distribution_and_log_scale():
    rng = np.random.default_rng(3)
    state = PriceState.initial(EpsilonNet(1.0, 0.1), 0.3, seed=1)
    log_w = np.zeros(len(state.weights))
    for _ in range(2 * RENORMALIZE_EVERY + 5):
        g = rng.random(len(log_w))
        log_w += np.log1p(0.3 * g)
        state = update_weights(state, g)
    assert np.all(np.isfinite(state.weights))
    expected = np.exp(log_w - log_w.max())
    np.testing.assert_allclose(state.probabilities, expected / expected.sum(), rtol=1e-9)
    assert state.log_scale + math.log(state.total_weight) == pytest.approx(
        math.log(np.exp(log_w - log_w.max()).sum()) + log_w.max(), rel=1e-9
    )


def test_sampling_follows_weights_and_is_seeded():
    net = EpsilonNet(1.0, 0.5)
    state = PriceState(net, np.array([1.0, 2.0, 7.0]), 0.1, np.random.default_rng(5))
    draws = [sample_price(state) for _ in range(20000)]
    freq = [np.mean(np.isclose(draws, p)) for p in net.points]
    np.testing.assert_allclose(freq, [0.1, 0.2, 0.7], atol=0.015)
    a = PriceState.initial(net, 0.1, seed=9)
    b = PriceState.initial(net, 0.1, seed=9)
    assert [sample_price(a) for _ in range(20)] == [sample_price(b) for _ in range(20)]


def test_expected_gain():
    state = PriceState(EpsilonNet(1.0, 0.5), np.array([1.0, 1.0, 2.0]), 0.1, None)
    assert expected_gain(state, [0.0, 0.4, 1.0]) == pytest.approx(0.6)


def test_hyperparameters():
    eps, delta = hyperparameters(100, 1.0, 1.0)
    assert eps == pytest.approx(0.1)
    assert delta == pytest.approx(math.sqrt(math.log(11) / 100))
    eps, _ = hyperparameters(10**9, 1.0, 1.0)
    assert eps == 1 / 4096
    with pytest.raises(InputError):
        hyperparameters(0, 1.0, 1.0)


def test_hindsight_regret_example():
    net = EpsilonNet(1.0, 0.5)
    revenues = np.array([[0.0, 0.5, 0.0], [0.0, 0.5, 1.0], [0.0, 0.5, 0.0]])
    summary = hindsight_regret(revenues, [0.5, 0.5, 0.0], net)
    assert summary.best_price == 0.5
    assert summary.best_fixed_revenue == 1.5
    assert summary.regret == pytest.approx(0.5)
    assert summary.average == pytest.approx(0.5 / 3)
    with pytest.raises(InputError):
        hindsight_regret(revenues[:, :2], [0, 0, 0], net)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(50, 400))
def test_expected_regret_within_mw_bound(seed, N):
    """sum_n max_i g - sum_n E[g] <= delta * N + ln(n) / delta for gains in [0, 1]."""
    rng = np.random.default_rng(seed)
    net = EpsilonNet(1.0, 0.1)
    delta = math.sqrt(math.log(len(net)) / N)
    state = PriceState.initial(net, delta, seed)
    gains = rng.random((N, len(net))) * rng.random(len(net))
    earned = 0.0
    for g in gains:
        earned += expected_gain(state, g)
        state = update_weights(state, g)
    regret = gains.sum(axis=0).max() - earned
    assert regret <= delta * N + math.log(len(net)) / delta
