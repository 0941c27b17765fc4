"""The per-buyer market loop: price, bid, allocate, collect, divide, update."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .allocation import AllocationSpec, QualityCurve, QualityModel, allocate
from .core import (
    BuyerInstance,
    FeatureMatrix,
    InputError,
    MarketError,
    NumericalError,
    PredictionTask,
    TraceRecord,
    derive_seed,
)
from .division import (
    CoalitionValueOracle,
    SimilaritySpec,
    robust_sample_size,
    shapley_robust,
)
from .prediction import GainSpec, PredictorSpec, coalition_gain
from .pricing import (
    EpsilonNet,
    PriceState,
    RegretSummary,
    expected_gain,
    hindsight_regret,
    hyperparameters,
    normalized_revenues,
    sample_price,
    update_weights,
)
from .revenue import best_response, buyer_utility, myerson_payment

log = logging.getLogger(__name__)

AUTO = "auto"

# sub-stream labels for derive_seed(master_seed, label, ...)
_PRICE_STREAM, _ALLOC_STREAM, _DIVISION_STREAM, _CURVE_STREAM = 1, 2, 3, 4

BidStrategy = Callable[[QualityCurve, BuyerInstance], float]


@dataclass(frozen=True)
class MarketConfig:
    allocation: AllocationSpec = AllocationSpec()
    predictor: PredictorSpec = PredictorSpec()
    gain: GainSpec = GainSpec()
    similarity: SimilaritySpec = SimilaritySpec()
    b_max: float = 1.0
    epsilon: float | str = AUTO
    delta: float | str = AUTO
    lipschitz: float = 1.0
    lam: float = math.log(2)
    K: int | str = AUTO
    division_epsilon: float = 0.1
    division_delta: float = 0.05
    replications: int = 16
    common_noise: bool = True
    divide: bool = True
    master_seed: int = 0

    def __post_init__(self):
        if not self.b_max > 0:
            raise InputError("b_max must be positive")
        for name in ("epsilon", "delta", "K"):
            value = getattr(self, name)
            if value != AUTO and not (isinstance(value, (int, float)) and value > 0):
                raise InputError(f"{name} must be positive or 'auto', got {value!r}")
        if self.lam < 0 or not self.lipschitz > 0 or self.replications < 1:
            raise InputError("need lam >= 0, lipschitz > 0, replications >= 1")

    def price_schedule(self, n_buyers: int | None) -> tuple[float, float]:
        eps, delta = self.epsilon, self.delta
        if AUTO in (eps, delta):
            if not n_buyers:
                raise InputError("automatic epsilon/delta need the number of buyers")
            auto_eps, auto_delta = hyperparameters(n_buyers, self.lipschitz, self.b_max)
            if eps == AUTO:
                eps = auto_eps
            if delta == AUTO:
                delta = math.sqrt(math.log(len(EpsilonNet(self.b_max, eps))) / n_buyers)
        return float(eps), float(delta)

    def sample_count(self, n_sellers: int) -> int:
        if self.K == AUTO:
            return robust_sample_size(n_sellers, self.division_epsilon, self.division_delta)
        return int(self.K)


@dataclass(eq=False)
class MarketRun:
    traces: list[TraceRecord]
    net: EpsilonNet
    epsilon: float
    delta: float
    revenues: np.ndarray
    realized: np.ndarray
    expected_gains: np.ndarray
    seller_revenue: np.ndarray
    final_state: PriceState = field(repr=False)
    step_seconds: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    seller_steps: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)), repr=False)

    def regret(self) -> RegretSummary:
        ok = [i for i, t in enumerate(self.traces) if t.error is None]
        return hindsight_regret(self.revenues[ok], self.realized[ok], self.net)

    def cumulative_regret(self) -> np.ndarray:
        ok = np.array([t.error is None for t in self.traces])
        rev = np.where(ok[:, None], self.revenues, 0.0)
        best = np.cumsum(rev, axis=0).max(axis=1)
        return best - np.cumsum(np.where(ok, self.realized, 0.0))


def truthful_bid(curve: QualityCurve, mu: float, tol: float = 1e-9) -> float:
    """Bid ``mu`` after confirming it attains the best-response utility.

    Above the posted price the buyer is indifferent among bids, so the
    smallest-bid argmax would tie the bid to the price; bidding the value
    keeps bids independent of prices.
    """
    best = best_response(curve, mu)
    if buyer_utility(curve, mu, mu) < buyer_utility(curve, mu, best) - tol:
        raise NumericalError(f"bidding the true value {mu} is not optimal on this curve")
    return float(mu)


class _ModelBook:
    """One QualityModel per distinct task object, so curves are reused across buyers."""

    def __init__(self, config: MarketConfig, X: FeatureMatrix):
        self.config = config
        self.X = X
        self.spec = replace(
            config.allocation, noise_seed=derive_seed(config.master_seed, _CURVE_STREAM)
        )
        self._models: dict[int, tuple[PredictionTask, QualityModel]] = {}

    def __call__(self, task: PredictionTask) -> QualityModel:
        entry = self._models.get(id(task))
        if entry is None or entry[0] is not task:
            c = self.config
            model = QualityModel(
                self.spec, self.X, task, c.predictor, c.gain, c.replications, c.common_noise
            )
            entry = (task, model)
            self._models[id(task)] = entry
        return entry[1]


def run_market(
    config: MarketConfig,
    X: FeatureMatrix,
    buyers: Iterable[BuyerInstance],
    strategy: BidStrategy | None = None,
    n_buyers: int | None = None,
) -> MarketRun:
    """Run buyers through the market one at a time.

    Each price is drawn before the buyer's bid is seen. Bids come from
    ``buyer.bid`` if set, else ``strategy(curve, buyer)``, else the buyer's
    best response to the quality curve at the posted price. A failing step is
    recorded with its error and the market moves on to the next buyer.
    """
    if n_buyers is None and isinstance(buyers, Sequence):
        n_buyers = len(buyers)
    epsilon, delta = config.price_schedule(n_buyers)
    net = EpsilonNet(config.b_max, epsilon)
    state = PriceState.initial(net, delta, derive_seed(config.master_seed, _PRICE_STREAM))
    models = _ModelBook(config, X)

    traces: list[TraceRecord] = []
    revenue_rows: list[np.ndarray] = []
    realized: list[float] = []
    g_alg: list[float] = []
    seller_steps: list[np.ndarray] = []
    no_split = np.zeros(X.n_sellers)
    empty_row = np.zeros(len(net))

    seconds: list[float] = []
    for n, buyer in enumerate(buyers):
        started = time.perf_counter()
        step_seed = derive_seed(config.master_seed, _ALLOC_STREAM, n)
        price = sample_price(state)
        bid = float("nan")
        try:
            model = models(buyer.task)
            curve = model.curve(price, net.points)
            if buyer.bid is not None:
                bid = float(buyer.bid)
            elif strategy is not None:
                bid = float(strategy(curve, buyer))
            else:
                bid = truthful_bid(curve, min(buyer.mu, config.b_max))
            if not 0.0 <= bid <= config.b_max:
                raise InputError(f"bid {bid} outside [0, {config.b_max}]")

            X_tilde = allocate(replace(config.allocation, noise_seed=step_seed), price, bid, X)
            gain = coalition_gain(config.predictor, config.gain, X_tilde, buyer.task)
            revenue = myerson_payment(curve, bid)

            if config.divide:
                oracle = CoalitionValueOracle.from_data(
                    X_tilde, buyer.task, config.predictor, config.gain
                )
                division = shapley_robust(
                    oracle,
                    X_tilde,
                    config.sample_count(X.n_sellers),
                    config.similarity,
                    config.lam,
                    derive_seed(config.master_seed, _DIVISION_STREAM, n),
                )
                psi = np.clip(division.psi, 0.0, None)
                split = revenue * division.normalized()
            else:
                psi = np.zeros(0)
                split = no_split

            gains = normalized_revenues(model, net, bid)
            g_alg.append(expected_gain(state, gains))
            state = update_weights(state, gains)
        except (MarketError, np.linalg.LinAlgError) as exc:
            log.warning("buyer %d failed: %s", n, exc)
            traces.append(TraceRecord(n, price, bid, 0.0, 0.0, (), step_seed, error=str(exc)))
            revenue_rows.append(empty_row)
            seller_steps.append(no_split)
            realized.append(0.0)
            g_alg.append(float("nan"))
            seconds.append(time.perf_counter() - started)
            continue

        traces.append(TraceRecord(n, price, bid, gain, revenue, tuple(psi), step_seed))
        revenue_rows.append(gains * net.b_max)
        seller_steps.append(split)
        realized.append(revenue)
        seconds.append(time.perf_counter() - started)

    if not traces:
        raise InputError("the market needs at least one buyer")
    steps = np.vstack(seller_steps)
    return MarketRun(
        traces,
        net,
        epsilon,
        delta,
        np.vstack(revenue_rows),
        np.asarray(realized),
        np.asarray(g_alg),
        steps.sum(axis=0),
        state,
        np.asarray(seconds),
        steps,
    )
