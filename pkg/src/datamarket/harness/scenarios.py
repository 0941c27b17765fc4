"""Synthetic markets: correlated seller time series and buyers forecasting from them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..core import BuyerInstance, FeatureMatrix, InputError, PredictionTask, derive_seed


class MuDistribution(str, Enum):
    FIXED = "fixed"
    UNIFORM = "uniform"
    TWO_TYPE = "two-type"
    TWO_TYPE_ADVERSARIAL = "two-type-adversarial"


@dataclass(frozen=True)
class Scenario:
    """Everything needed to regenerate a market instance.

    ``rho`` is the pairwise correlation between seller streams. Buyers draw
    their task from a pool of ``n_task_types`` forecasting problems, each a
    sparse linear combination of ``sparsity`` sellers plus ``noise``.
    """

    name: str = "inventory"
    n_sellers: int = 8
    n_steps: int = 120
    n_buyers: int = 500
    rho: float = 0.3
    noise: float = 0.3
    mu_distribution: MuDistribution = MuDistribution.UNIFORM
    mu_value: float = 0.8
    mu_low: float = 0.35
    n_task_types: int = 4
    sparsity: int = 3
    b_max: float = 1.0
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mu_distribution", MuDistribution(self.mu_distribution))
        if self.n_sellers < 1 or self.n_steps < 5 or self.n_buyers < 1:
            raise InputError("need n_sellers >= 1, n_steps >= 5, n_buyers >= 1")
        if not 0.0 <= self.rho <= 1.0:
            raise InputError(f"rho must lie in [0, 1], got {self.rho}")
        if self.noise < 0 or self.n_task_types < 1 or self.sparsity < 1:
            raise InputError("need noise >= 0, n_task_types >= 1, sparsity >= 1")
        if not (0 <= self.mu_low <= self.b_max and 0 <= self.mu_value <= self.b_max):
            raise InputError("buyer values must lie in [0, b_max]")


def correlated_features(n_sellers: int, n_steps: int, rho: float, rng) -> np.ndarray:
    """Gaussian rows with unit variance and pairwise correlation ``rho``."""
    common = rng.standard_normal(n_steps)
    own = rng.standard_normal((n_sellers, n_steps))
    return math.sqrt(rho) * common + math.sqrt(1.0 - rho) * own


def _task(values: np.ndarray, sparsity: int, noise: float, rng, name: str) -> PredictionTask:
    M, T = values.shape
    support = rng.choice(M, size=min(sparsity, M), replace=False)
    weights = rng.uniform(0.5, 1.5, size=len(support)) * rng.choice([-1.0, 1.0], size=len(support))
    y = weights @ values[support] + noise * rng.standard_normal(T)
    return PredictionTask.split(y, name=name)


def generate_scenario(sc: Scenario) -> tuple[FeatureMatrix, list[BuyerInstance]]:
    rng = np.random.default_rng(derive_seed(sc.master_seed, 11))
    values = correlated_features(sc.n_sellers, sc.n_steps, sc.rho, rng)
    X = FeatureMatrix(values, tuple(f"{sc.name}-{j}" for j in range(sc.n_sellers)))

    two_type = sc.mu_distribution in (MuDistribution.TWO_TYPE, MuDistribution.TWO_TYPE_ADVERSARIAL)
    n_types = 2 if two_type else sc.n_task_types
    tasks = [_task(values, sc.sparsity, sc.noise, rng, f"{sc.name}-task{k}") for k in range(n_types)]

    buyer_rng = np.random.default_rng(derive_seed(sc.master_seed, 12))
    buyers = []
    for n in range(sc.n_buyers):
        if sc.mu_distribution is MuDistribution.TWO_TYPE_ADVERSARIAL:
            kind = n % 2
        elif sc.mu_distribution is MuDistribution.TWO_TYPE:
            kind = int(buyer_rng.integers(2))
        else:
            kind = int(buyer_rng.integers(n_types))
        if two_type:
            mu = sc.mu_value if kind == 0 else sc.mu_low
        elif sc.mu_distribution is MuDistribution.FIXED:
            mu = sc.mu_value
        else:
            mu = float(buyer_rng.uniform(0.0, sc.b_max))
        buyers.append(BuyerInstance(tasks[kind], mu))
    return X, buyers
