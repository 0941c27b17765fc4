"""Allocation functions that degrade features when the bid falls short of the price,
and the quality curve h(z): gain as a function of a hypothetical bid at a fixed price.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .core import FeatureMatrix, InputError, PredictionTask, derive_seed
from .prediction import GainSpec, PredictorSpec, coalition_gain


class AllocationKind(str, Enum):
    GAUSSIAN = "gaussian_noise"
    BERNOULLI = "bernoulli_mask"


@dataclass(frozen=True)
class AllocationSpec:
    kind: AllocationKind = AllocationKind.GAUSSIAN
    sigma: float = 1.0
    noise_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", AllocationKind(self.kind))
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise InputError(f"sigma must be positive, got {self.sigma}")
        if self.noise_seed < 0:
            raise InputError("noise_seed must be nonnegative")


def _check_price_bid(price, bid):
    if not (price >= 0 and bid >= 0):
        raise InputError(f"price and bid must be nonnegative, got p={price}, b={bid}")


def mask_rate(price: float, bid: float) -> float:
    """theta = min(b/p, 1); a zero price never masks."""
    if price <= 0:
        return 1.0
    return min(bid / price, 1.0)


def allocate(spec: AllocationSpec, price: float, bid: float, X: FeatureMatrix) -> FeatureMatrix:
    """Degrade ``X`` in proportion to the shortfall of ``bid`` below ``price``.

    Both modes draw from ``spec.noise_seed`` alone, so the same seed yields the
    same standard-normal matrix (or the same uniforms behind the mask) for
    every (price, bid). A bid at or above the price returns ``X`` itself.
    """
    _check_price_bid(price, bid)
    rng = np.random.default_rng(spec.noise_seed)
    if spec.kind is AllocationKind.GAUSSIAN:
        scale = max(0.0, price - bid) * spec.sigma
        if scale == 0.0:
            return X
        noise = rng.standard_normal(X.values.shape)
        return FeatureMatrix(X.values + scale * noise, X.seller_ids)

    theta = mask_rate(price, bid)
    if theta >= 1.0:
        return X
    keep = rng.random(X.values.shape) < theta
    return FeatureMatrix(X.values * keep, X.seller_ids)


def isotonic_increasing(y, weights=None) -> np.ndarray:
    """Weighted L2 projection onto non-decreasing sequences (pool adjacent violators)."""
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n <= 1:
        return y.copy()
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if len(w) != n or np.any(w <= 0):
        raise InputError("weights must be positive and match y")

    means: list[float] = []
    mass: list[float] = []
    sizes: list[int] = []
    for yi, wi in zip(y, w):
        means.append(float(yi))
        mass.append(float(wi))
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, s2 = means.pop(), mass.pop(), sizes.pop()
            total = mass[-1] + w2
            means[-1] = (means[-1] * mass[-1] + m2 * w2) / total
            mass[-1] = total
            sizes[-1] += s2
    return np.repeat(means, sizes)


@dataclass(frozen=True, eq=False)
class QualityCurve:
    """Piecewise-linear gain-vs-bid curve on a grid starting at 0.

    A repeated grid abscissa encodes a jump; evaluation is right-continuous.
    ``raw`` keeps the Monte-Carlo values from before the isotonic projection.
    """

    grid: np.ndarray
    h: np.ndarray
    replications: int = 1
    raw: np.ndarray | None = None

    def __post_init__(self):
        grid = np.array(self.grid, dtype=float)
        h = np.array(self.h, dtype=float)
        if grid.ndim != 1 or grid.shape != h.shape or len(grid) < 2:
            raise InputError("grid and h must be 1-d of equal length >= 2")
        if grid[0] != 0.0:
            raise InputError("grid must start at 0")
        steps = np.diff(grid)
        if np.any(steps < 0) or np.any((steps[:-1] == 0) & (steps[1:] == 0)):
            raise InputError("grid must be ascending (a point may repeat once to mark a jump)")
        if steps[-1] == 0 or not grid[-1] > 0:
            raise InputError("grid must end with a positive, unrepeated point")
        if np.any(h < 0) or np.any(h > 1):
            raise InputError("h must lie in [0, 1]")
        if np.any(np.diff(h) < 0):
            raise InputError("h must be non-decreasing")
        if self.replications < 1:
            raise InputError("replications must be >= 1")
        cum = np.concatenate([[0.0], np.cumsum(steps * (h[:-1] + h[1:]) / 2.0)])
        for name, arr in (("grid", grid), ("h", h), ("_cum", cum)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def b_max(self) -> float:
        return float(self.grid[-1])

    def _locate(self, b: float) -> int:
        if not (0.0 <= b <= self.b_max * (1 + 1e-12)):
            raise InputError(f"bid {b} outside [0, {self.b_max}]")
        return int(np.searchsorted(self.grid, b, side="right")) - 1

    def value_at(self, b: float) -> float:
        i = self._locate(b)
        g, h = self.grid, self.h
        if i >= len(g) - 1 or g[i] == b:
            return float(h[i])
        t = (b - g[i]) / (g[i + 1] - g[i])
        return float(h[i] + t * (h[i + 1] - h[i]))

    def integral_to(self, b: float) -> float:
        """Exact integral of the piecewise-linear curve over [0, b]."""
        i = self._locate(b)
        g = self.grid
        if i >= len(g) - 1 or g[i] == b:
            return float(self._cum[i])
        return float(self._cum[i] + (b - g[i]) * (self.h[i] + self.value_at(b)) / 2.0)


class QualityModel:
    """Gain of the buyer's task under every degradation level, with memoization.

    With common random numbers the degraded gain depends on (price, bid) only
    through the degradation level (noise scale or mask rate), so one cache
    serves the quality curves of every candidate price.
    """

    def __init__(
        self,
        spec: AllocationSpec,
        X: FeatureMatrix,
        task: PredictionTask,
        predictor: PredictorSpec = PredictorSpec(),
        gain_spec: GainSpec = GainSpec(),
        replications: int = 16,
        common_noise: bool = True,
    ):
        if replications < 1:
            raise InputError("replications must be >= 1")
        self.spec = spec
        self.X = X
        self.task = task
        self.predictor = predictor
        self.gain_spec = gain_spec
        self.replications = int(replications)
        self.common_noise = common_noise
        self._gains: dict = {}
        self._curves: dict = {}
        self._full_gain: float | None = None

    def full_gain(self) -> float:
        if self._full_gain is None:
            self._full_gain = coalition_gain(self.predictor, self.gain_spec, self.X, self.task)
        return self._full_gain

    def _level(self, price: float, bid: float) -> float:
        if self.spec.kind is AllocationKind.GAUSSIAN:
            return round(max(0.0, price - bid), 12)
        return round(mask_rate(price, bid), 12)

    def _degraded(self, level: float, seed: int) -> FeatureMatrix:
        spec = replace(self.spec, noise_seed=seed)
        if self.spec.kind is AllocationKind.GAUSSIAN:
            return allocate(spec, level, 0.0, self.X)
        return allocate(spec, 1.0, level, self.X)

    def raw_gain(self, price: float, bid: float, grid_index: int = 0) -> float:
        """Gain averaged over the replicated noise draws."""
        _check_price_bid(price, bid)
        if bid >= price:
            return self.full_gain()
        level = self._level(price, bid)
        if self.common_noise:
            key = ("crn", level)
            seeds = [derive_seed(self.spec.noise_seed, r) for r in range(self.replications)]
        else:
            key = ("fresh", float(price), level, int(grid_index))
            seeds = [
                derive_seed(self.spec.noise_seed, grid_index, r) for r in range(self.replications)
            ]
        cached = self._gains.get(key)
        if cached is not None:
            return cached
        total = 0.0
        for seed in seeds:
            X_tilde = self._degraded(level, seed)
            total += coalition_gain(self.predictor, self.gain_spec, X_tilde, self.task)
        value = total / len(seeds)
        self._gains[key] = value
        return value

    def curve(self, price: float, grid) -> QualityCurve:
        grid = np.asarray(grid, dtype=float)
        key = (float(price), grid.tobytes())
        cached = self._curves.get(key)
        if cached is not None:
            return cached
        raw = np.array([self.raw_gain(price, z, i) for i, z in enumerate(grid)])
        curve = QualityCurve(grid, np.clip(isotonic_increasing(raw), 0.0, 1.0), self.replications, raw)
        self._curves[key] = curve
        return curve


def quality_curve(
    spec: AllocationSpec,
    price: float,
    X: FeatureMatrix,
    task: PredictionTask,
    predictor: PredictorSpec,
    gain_spec: GainSpec,
    grid,
    replications: int = 16,
    common_noise: bool = True,
) -> QualityCurve:
    model = QualityModel(spec, X, task, predictor, gain_spec, replications, common_noise)
    return model.curve(price, grid)
