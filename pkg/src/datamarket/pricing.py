"""Posted-price updates with Multiplicative Weights over an epsilon-net of prices."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .allocation import QualityModel
from .core import InputError
from .revenue import myerson_payment

log = logging.getLogger(__name__)

RENORMALIZE_EVERY = 1000


@dataclass(frozen=True, eq=False)
class EpsilonNet:
    """Evenly spaced points 0, eps, 2*eps, ... covering [0, b_max], b_max included."""

    b_max: float
    epsilon: float
    points: np.ndarray = field(init=False)

    def __post_init__(self):
        if not (self.b_max > 0 and self.epsilon > 0):
            raise InputError("b_max and epsilon must be positive")
        k = int(math.floor(self.b_max / self.epsilon + 1e-9))
        pts = np.arange(k + 1) * self.epsilon
        if pts[-1] >= self.b_max * (1 - 1e-9):
            pts[-1] = self.b_max
        else:
            pts = np.append(pts, self.b_max)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)


@dataclass(eq=False)
class PriceState:
    """Expert weights over the net. ``log_scale`` records the mass removed by renormalization."""

    net: EpsilonNet
    weights: np.ndarray
    delta: float
    rng: np.random.Generator
    steps: int = 0
    log_scale: float = 0.0

    @classmethod
    def initial(cls, net: EpsilonNet, delta: float, seed: int) -> "PriceState":
        if not delta > 0:
            raise InputError(f"learning rate must be positive, got {delta}")
        return cls(net, np.ones(len(net)), float(delta), np.random.default_rng(seed))

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    @property
    def probabilities(self) -> np.ndarray:
        return self.weights / self.weights.sum()


def sample_price(state: PriceState) -> float:
    """Draw a net price with probability proportional to its weight (advances ``state.rng``)."""
    i = state.rng.choice(len(state.weights), p=state.probabilities)
    return float(state.net.points[i])


def expected_gain(state: PriceState, gains) -> float:
    gains = np.asarray(gains, dtype=float)
    return float(state.weights @ gains / state.weights.sum())


def update_weights(state: PriceState, gains) -> PriceState:
    """w_i <- w_i * (1 + delta * g_i) for normalized gains g_i in [0, 1]."""
    gains = np.asarray(gains, dtype=float)
    if gains.shape != state.weights.shape:
        raise InputError(f"expected {len(state.weights)} gains, got {gains.shape}")
    if np.any(gains < 0) or np.any(gains > 1 + 1e-12):
        raise InputError("normalized gains must lie in [0, 1]")
    weights = state.weights * (1.0 + state.delta * gains)
    steps = state.steps + 1
    log_scale = state.log_scale
    if steps % RENORMALIZE_EVERY == 0:
        total = weights.sum()
        log_scale += math.log(total)
        weights = weights / total
    return PriceState(state.net, weights, state.delta, state.rng, steps, log_scale)


def normalized_revenues(model: QualityModel, net: EpsilonNet, bid: float) -> np.ndarray:
    """Revenue each net price would have earned against ``bid``, divided by b_max."""
    grid = net.points
    pay = [myerson_payment(model.curve(c, grid), bid) for c in grid]
    return np.clip(np.asarray(pay) / net.b_max, 0.0, 1.0)


def hyperparameters(n_buyers: int, lipschitz: float, b_max: float) -> tuple[float, float]:
    """(epsilon, delta) = (1/(L sqrt(N)), sqrt(log|net| / N)), epsilon floored at b_max/4096."""
    if n_buyers < 1 or not lipschitz > 0 or not b_max > 0:
        raise InputError("need N >= 1, L > 0 and b_max > 0")
    epsilon = 1.0 / (lipschitz * math.sqrt(n_buyers))
    floor = b_max / 4096
    if epsilon < floor:
        log.info("epsilon %.3g below floor; using b_max/4096 = %.3g", epsilon, floor)
        epsilon = floor
    size = len(EpsilonNet(b_max, epsilon))
    return epsilon, math.sqrt(math.log(size) / n_buyers)


@dataclass(frozen=True)
class RegretSummary:
    best_price: float
    best_fixed_revenue: float
    realized_revenue: float
    regret: float
    average: float


def hindsight_regret(revenues, realized, net: EpsilonNet) -> RegretSummary:
    """Regret against the best single net price over the recorded buyers.

    ``revenues[n, i]`` is what price ``net.points[i]`` would have earned from
    buyer ``n``; ``realized[n]`` is what the market actually collected.
    """
    revenues = np.asarray(revenues, dtype=float)
    realized = np.asarray(realized, dtype=float)
    if revenues.ndim != 2 or revenues.shape[0] == 0:
        raise InputError("empty trace")
    if revenues.shape != (len(realized), len(net)):
        raise InputError(f"revenue matrix {revenues.shape} does not match trace/net")
    totals = revenues.sum(axis=0)
    best = int(np.argmax(totals))
    realized_total = float(realized.sum())
    regret = float(totals[best]) - realized_total
    return RegretSummary(
        float(net.points[best]), float(totals[best]), realized_total, regret, regret / len(realized)
    )
