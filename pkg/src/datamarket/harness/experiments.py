"""Experiment drivers: worked examples, regret decay, axiom battery, robustness and timing."""

from __future__ import annotations

import dataclasses
import gc
import math
import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ..allocation import AllocationSpec
from ..core import FeatureMatrix, PredictionTask, derive_seed
from ..division import (
    DEFAULT_CACHE_SIZE,
    CoalitionValueOracle,
    SimilaritySpec,
    impossibility_witness,
    replication_robustness_test,
    sample_size,
    shapley_approx,
    shapley_exact,
    shapley_robust,
)
from ..engine import MarketConfig, run_market
from ..prediction import GainSpec, PredictorSpec
from .scenarios import MuDistribution, Scenario, generate_scenario, correlated_features


# ---------------------------------------------------------------- worked examples


@dataclass(frozen=True)
class ReproLine:
    label: str
    expected: float
    computed: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return abs(self.expected - self.computed) <= self.tolerance


def _identical_sellers(n: int) -> tuple[CoalitionValueOracle, FeatureMatrix]:
    # any nonempty coalition of copies predicts equally well
    row = np.array([1.0, 2.0, 3.0, 4.0])
    X = FeatureMatrix(np.tile(row, (n, 1)), tuple("A" if i == 0 else f"A{i}" for i in range(n)))
    oracle = CoalitionValueOracle.from_set_function(lambda S: 1.0 if S else 0.0, n)
    return oracle, X


def repro_examples() -> list[ReproLine]:
    """Two identical sellers before and after A copies its data, plain and penalized."""
    two, X2 = _identical_sellers(2)
    three, X3 = _identical_sellers(3)
    plain2 = shapley_exact(two).psi
    plain3 = shapley_exact(three).psi
    robust2 = shapley_robust(two, X2, None, lam=1.0).psi
    robust3 = shapley_robust(three, X3, None, lam=1.0).psi
    e = math.e
    return [
        ReproLine("shapley psi(A)", 0.5, plain2[0], 1e-9),
        ReproLine("shapley psi(B)", 0.5, plain2[1], 1e-9),
        ReproLine("replicated psi(A)+psi(A')", 2 / 3, plain3[0] + plain3[1], 1e-9),
        ReproLine("robust psi(A), lambda=1", 1 / (2 * e), robust2[0], 1e-6),
        ReproLine("robust replicated psi(A)+psi(A'), lambda=1", 2 / (3 * e**2),
                  robust3[0] + robust3[1], 1e-6),
    ]


def impossibility_lines() -> list[tuple[str, Fraction]]:
    w = impossibility_witness()
    return [
        ("two identical sellers, share of A", w.two_sellers),
        ("A plus copy A', total to A", w.replicated_total),
        ("three identical sellers, share of each", w.three_sellers),
    ]


# ---------------------------------------------------------------- regret decay

REGRET_SCENARIO = Scenario(
    name="two-type",
    n_sellers=4,
    n_steps=80,
    noise=0.3,
    mu_distribution=MuDistribution.TWO_TYPE,
    mu_value=0.8,
    mu_low=0.35,
)
REGRET_MARKET = MarketConfig(allocation=AllocationSpec(sigma=3.0), divide=False)


@dataclass(frozen=True)
class RegretRow:
    N: int
    seed: int
    realized_revenue: float
    best_fixed_revenue: float
    avg_regret: float


def regret_decay(
    sizes=(500, 2000),
    seeds=range(10),
    scenario: Scenario = REGRET_SCENARIO,
    market: MarketConfig = REGRET_MARKET,
) -> list[RegretRow]:
    """Average regret against the best fixed net price, one row per (N, seed)."""
    rows = []
    for N in sizes:
        for seed in seeds:
            sc = dataclasses.replace(scenario, n_buyers=int(N), master_seed=int(seed))
            X, buyers = generate_scenario(sc)
            cfg = dataclasses.replace(market, b_max=sc.b_max, master_seed=int(seed))
            summary = run_market(cfg, X, buyers).regret()
            rows.append(RegretRow(int(N), int(seed), summary.realized_revenue,
                                  summary.best_fixed_revenue, summary.average))
    return rows


def mean_regret_by_size(rows: list[RegretRow]) -> dict[int, float]:
    sizes = sorted({r.N for r in rows})
    return {N: float(np.mean([r.avg_regret for r in rows if r.N == N])) for N in sizes}


# ---------------------------------------------------------------- axiom battery


@dataclass
class AxiomTally:
    passed: int = 0
    total: int = 0

    def record(self, ok: bool):
        self.total += 1
        self.passed += bool(ok)

    @property
    def all_passed(self) -> bool:
        return self.passed == self.total


AXIOMS = ("balance", "symmetry", "zero_element", "additivity")


def _random_game(rng, M: int):
    """A data game with a duplicated seller pair and an all-zero seller."""
    T = 40
    base = rng.standard_normal((M - 2, T))
    values = np.vstack([base, base[:1], np.zeros((1, T))])
    X = FeatureMatrix(values)
    tasks = []
    for _ in range(2):
        w = rng.normal(size=M - 2)
        y = w @ base + 0.5 * rng.standard_normal(T)
        tasks.append(PredictionTask.split(y))
    return X, tasks


def axiom_battery(
    n_instances: int = 50,
    max_sellers: int = 6,
    epsilon: float = 0.1,
    delta: float = 0.05,
    seed: int = 0,
    predictor: PredictorSpec = PredictorSpec(ridge_lambda=1e-3),
    gain_spec: GainSpec = GainSpec(),
) -> dict[str, dict[str, AxiomTally]]:
    """Check balance, symmetry, zero element and additivity on random data games.

    Exact values must satisfy each property to 1e-9; sampled values (with
    ``sample_size(M, epsilon, delta)`` permutations) to ``epsilon``.
    Balance here means the values sum to v(all) - v(empty).
    """
    rng = np.random.default_rng(derive_seed(seed, 21))
    tallies = {mode: {a: AxiomTally() for a in AXIOMS} for mode in ("exact", "sampled")}
    for i in range(n_instances):
        M = int(rng.integers(3, max_sellers + 1))
        X, (task_a, task_b) = _random_game(rng, M)
        game_a = CoalitionValueOracle.from_data(X, task_a, predictor, gain_spec)
        game_b = CoalitionValueOracle.from_data(X, task_b, predictor, gain_spec)
        game_sum = game_a + game_b
        surplus = game_a.value(range(M)) - game_a.value([])
        K = sample_size(M, epsilon, delta)
        sub_seed = derive_seed(seed, 22, i)
        for mode, tol in (("exact", 1e-9), ("sampled", epsilon)):
            if mode == "exact":
                psi_a, psi_b, psi_sum = (shapley_exact(g).psi for g in (game_a, game_b, game_sum))
            else:
                psi_a, psi_b, psi_sum = (
                    shapley_approx(g, K, sub_seed).psi for g in (game_a, game_b, game_sum)
                )
            t = tallies[mode]
            t["balance"].record(abs(psi_a.sum() - surplus) <= tol)
            # rows 0 and M-2 hold identical data
            t["symmetry"].record(abs(psi_a[0] - psi_a[M - 2]) <= tol)
            t["zero_element"].record(abs(psi_a[M - 1]) <= tol)
            t["additivity"].record(np.max(np.abs(psi_sum - psi_a - psi_b)) <= tol)
    return tallies


# ---------------------------------------------------------------- approximation and robustness


def approximation_trials(
    n_trials: int = 100,
    M: int = 8,
    epsilon: float = 0.1,
    delta: float = 0.05,
    seed: int = 0,
) -> tuple[int, int, float]:
    """(trials within epsilon in sup norm, K used, worst error) on one data game."""
    rng = np.random.default_rng(derive_seed(seed, 31))
    values = correlated_features(M, 60, 0.3, rng)
    y = rng.uniform(0.5, 1.5, M) @ values + 0.3 * rng.standard_normal(60)
    oracle = CoalitionValueOracle.from_data(FeatureMatrix(values), PredictionTask.split(y))
    exact = shapley_exact(oracle).psi
    K = sample_size(M, epsilon, delta)
    errors = [
        float(np.max(np.abs(shapley_approx(oracle, K, derive_seed(seed, 32, t)).psi - exact)))
        for t in range(n_trials)
    ]
    return sum(e < epsilon for e in errors), K, max(errors)


def replication_trials(
    n_trials: int = 100,
    M: int = 6,
    max_copies: int = 3,
    epsilon: float = 0.1,
    delta: float = 0.05,
    lam: float = math.log(2),
    seed: int = 0,
    similarity: SimilaritySpec = SimilaritySpec(),
) -> tuple[int, float]:
    """(trials where no seller gains more than epsilon by copying, worst excess)."""
    held, worst = 0, -math.inf
    for t in range(n_trials):
        rng = np.random.default_rng(derive_seed(seed, 41, t))
        sc = Scenario(n_sellers=M, n_steps=60, n_buyers=1, rho=float(rng.uniform(0, 0.6)),
                      master_seed=derive_seed(seed, 42, t))
        X, buyers = generate_scenario(sc)
        copies = rng.integers(0, max_copies + 1, size=M)
        check = replication_robustness_test(
            X, buyers[0].task, list(copies), epsilon, spec=similarity, lam=lam, delta=delta,
            seed=derive_seed(seed, 43, t),
        )
        held += check.holds
        worst = max(worst, float(np.max(check.replicated_totals - check.original)))
    return held, worst


# ---------------------------------------------------------------- efficiency


def step_timing(
    early: int = 10, late: int = 1000, window: int = 25, seed: int = 0,
    market: MarketConfig | None = None,
) -> tuple[float, float]:
    """Median per-buyer wall-clock around step ``early`` and around step ``late``."""
    sc = Scenario(n_sellers=6, n_steps=80, n_buyers=late + window, master_seed=seed,
                  mu_distribution=MuDistribution.TWO_TYPE)
    X, buyers = generate_scenario(sc)
    if market is None:
        market = MarketConfig(division_epsilon=0.25, replications=8)
    cfg = dataclasses.replace(market, epsilon=0.05, delta=0.05, master_seed=seed)
    run = run_market(cfg, X, buyers)
    secs = run.step_seconds
    return float(np.median(secs[early:early + window])), float(np.median(secs[late:late + window]))


def division_scaling(
    sizes=(10, 20, 40), epsilon: float = 0.25, delta: float = 0.05, seed: int = 0,
    n_steps: int = 60, memo: bool = False, repeats: int = 3,
) -> tuple[list[float], float]:
    """Sampled-division wall-clock for each seller count and the fitted power-law exponent.

    The memo is off by default: with it, small markets hit the 2^M ceiling on
    distinct coalitions and look cheaper than the trend. Each size reports the
    best of ``repeats`` runs with the garbage collector paused, as timeit does.
    """
    seconds = []
    for M in sizes:
        rng = np.random.default_rng(derive_seed(seed, 51, M))
        values = correlated_features(M, n_steps, 0.3, rng)
        y = rng.normal(size=M) @ values / math.sqrt(M) + 0.3 * rng.standard_normal(n_steps)
        X = FeatureMatrix(values)
        task = PredictionTask.split(y)
        K = sample_size(M, epsilon, delta)
        best = math.inf
        for _ in range(repeats):
            oracle = CoalitionValueOracle.from_data(
                X, task, cache_size=DEFAULT_CACHE_SIZE if memo else 0
            )
            gc_was_enabled = gc.isenabled()
            gc.disable()
            try:
                started = time.perf_counter()
                shapley_robust(oracle, X, K, seed=seed)
                best = min(best, time.perf_counter() - started)
            finally:
                if gc_was_enabled:
                    gc.enable()
        seconds.append(best)
    slope = float(np.polyfit(np.log(sizes), np.log(seconds), 1)[0])
    return seconds, slope
