"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

from datamarket.allocation import AllocationSpec, QualityCurve, QualityModel
from datamarket.division import impossibility_witness, penalty_valid
from datamarket.harness import experiments
from datamarket.harness.cli import main
from datamarket.harness.scenarios import Scenario, generate_scenario
from datamarket.revenue import buyer_utility, myerson_payment


class Clock:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def test_golden_examples(criterion, capsys):
    with Clock() as clock:
        lines = experiments.repro_examples()
        code = main(["repro"])
    capsys.readouterr()
    ok = all(line.ok for line in lines) and code == 0 and clock.seconds < 1
    worst = max(abs(line.expected - line.computed) for line in lines)
    assert criterion(1, ok, f"worked examples, max error {worst:.1e}, {clock.seconds:.2f}s")


def _random_curve(rng):
    n = int(rng.integers(2, 30))
    grid = np.sort(np.concatenate([[0.0, 1.0], rng.uniform(0, 1, n - 2)]))
    grid = np.unique(grid)
    h = np.sort(rng.uniform(0, 1, len(grid)))
    if rng.random() < 0.3 and len(grid) > 2:
        # insert a jump at an interior point
        j = int(rng.integers(1, len(grid) - 1))
        grid = np.insert(grid, j, grid[j])
        h = np.insert(h, j, h[j - 1])
    return QualityCurve(grid, h)


def test_truthfulness(criterion):
    rng = np.random.default_rng(2024)
    curves = [_random_curve(rng) for _ in range(200)]
    X, buyers = generate_scenario(Scenario(n_sellers=4, n_steps=60, n_buyers=4))
    for b in buyers:
        model = QualityModel(AllocationSpec(sigma=float(rng.uniform(0.5, 5))), X, b.task,
                             replications=4)
        curves += [model.curve(p, np.linspace(0, 1, 21)) for p in (0.2, 0.55, 0.9)]
    worst = math.inf
    with Clock() as clock:
        for curve in curves:
            for mu in rng.uniform(0, 1, 5):
                truthful = buyer_utility(curve, mu, mu)
                best = max(buyer_utility(curve, mu, b) for b in curve.grid)
                worst = min(worst, truthful - best)
    ok = worst >= -1e-9 and clock.seconds < 30
    assert criterion(2, ok, f"{len(curves)} curves, min U(mu)-max U(b) = {worst:.1e}, "
                            f"{clock.seconds:.1f}s")


def test_myerson_quadrature(criterion):
    errors_aligned, errors_off = [], []
    with Clock() as clock:
        for p in (0.1, 0.3, 0.5, 0.8):
            for g in (0.25, 0.6, 1.0):
                step = QualityCurve([0, p, p, 1], [0, 0, g, g])
                for b in (p, 0.9, 1.0):
                    errors_aligned.append(abs(myerson_payment(step, b) - p * g))
                # a jump between grid points of a fine grid
                grid = np.linspace(0, 1, 1001)
                ramp = QualityCurve(grid, np.where(grid >= p + 3e-4, g, 0.0))
                errors_off.append(abs(myerson_payment(ramp, 0.95) - (p + 3e-4) * g))
        for b_max in (1.0, 2.0):
            grid = np.linspace(0, b_max, 21)
            line = QualityCurve(grid, grid / b_max)
            for b in grid:
                errors_aligned.append(abs(myerson_payment(line, b) - b * b / (2 * b_max)))
            for b in np.random.default_rng(0).uniform(0, b_max, 50):
                errors_off.append(abs(myerson_payment(line, b) - b * b / (2 * b_max)))
    ok = max(errors_aligned) <= 1e-9 and max(errors_off) <= 1e-3 and clock.seconds < 1
    assert criterion(3, ok, f"grid-aligned max error {max(errors_aligned):.1e}, "
                            f"off-grid {max(errors_off):.1e}, {clock.seconds:.2f}s")


def test_regret_decay(criterion):
    with Clock() as clock:
        rows = experiments.regret_decay(sizes=(500, 2000), seeds=range(10))
    means = experiments.mean_regret_by_size(rows)
    ratio = means[2000] / means[500]
    ok = ratio < 0.8 and clock.seconds < 300
    assert criterion(4, ok, f"mean avg regret N=500 {means[500]:.5f}, N=2000 {means[2000]:.5f}, "
                            f"ratio {ratio:.3f} (< 0.8), {clock.seconds:.0f}s")


def test_shapley_approximation(criterion):
    with Clock() as clock:
        hits, K, worst = experiments.approximation_trials(n_trials=100, M=8, epsilon=0.1,
                                                          delta=0.05)
    ok = K == 1477 and hits >= 95 and clock.seconds < 120
    assert criterion(5, ok, f"K={K}, {hits}/100 trials within 0.1 (worst {worst:.4f}), "
                            f"{clock.seconds:.1f}s")


def test_replication_robustness(criterion):
    with Clock() as clock:
        held, worst = experiments.replication_trials(n_trials=100, M=6, max_copies=3,
                                                     lam=math.log(2))
    ok = held >= 95 and clock.seconds < 120
    assert criterion(6, ok, f"{held}/100 trials robust (largest gain from copying {worst:+.4f}), "
                            f"{clock.seconds:.1f}s")


def test_axiom_battery(criterion):
    with Clock() as clock:
        tallies = experiments.axiom_battery(n_instances=50, max_sellers=6)
    ok = all(t.all_passed and t.total == 50 for m in tallies.values() for t in m.values())
    ok = ok and clock.seconds < 60
    summary = ", ".join(f"{mode} {sum(t.passed for t in m.values())}/{sum(t.total for t in m.values())}"
                        for mode, m in tallies.items())
    assert criterion(7, ok, f"{summary}, {clock.seconds:.1f}s")


def test_penalty_checker(criterion):
    with Clock() as clock:
        accepted = [penalty_valid(lambda x, l=lam: math.exp(-l * x), 5).valid
                    for lam in (math.log(2), 1.0, 2.0)]
        accepted.append(penalty_valid(lambda x: 2.0 ** (-x), 5).valid)
        reciprocal = penalty_valid(lambda x: 1 / (1 + x), 5)
        tight = penalty_valid(lambda x: math.exp(-math.log(2) * x), 5).tight
    ok = (all(accepted) and not reciprocal.valid and reciprocal.violation == (1.0, 1)
          and any(c == 1 for _, c in tight) and clock.seconds < 1)
    assert criterion(8, ok, f"accepted {sum(accepted)}/4, reciprocal violation at "
                            f"{reciprocal.violation}, equality at c=1: {bool(tight)}")


def test_impossibility_witness(criterion):
    with Clock() as clock:
        w = impossibility_witness()
    ok = w.replicated_total == 2 * w.three_sellers and w.violates_robustness and clock.seconds < 1
    assert criterion(9, ok, f"replicated total {w.replicated_total} > {w.two_sellers}")


def test_efficiency(criterion):
    with Clock() as clock:
        early, late = experiments.step_timing(early=10, late=1000)
        seconds, slope = experiments.division_scaling(sizes=(10, 20, 40))
    ratio = late / early
    ok = 0.5 <= ratio <= 2.0 and slope < 2.5 and clock.seconds < 300
    assert criterion(10, ok, f"step time n=1000 / n=10 = {ratio:.2f}, division exponent "
                             f"{slope:.2f} over M=10,20,40, {clock.seconds:.0f}s")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
