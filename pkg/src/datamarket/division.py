"""Revenue division among sellers.

Exact Shapley values, permutation-sampling estimates, the similarity-penalized
variant that discourages sellers from replicating their own data, and checks
for the penalty condition and replication robustness.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from itertools import permutations
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import FeatureMatrix, InputError, PredictionTask
from .prediction import GainSpec, PredictorSpec, SubsetPredictor, score

MAX_EXACT_SELLERS = 12
MAX_SAMPLED_SELLERS = 63
DEFAULT_CACHE_SIZE = 2**20


class SizeError(InputError):
    """Too many sellers for the requested computation."""


class UndefinedSimilarityError(InputError):
    """Similarity is undefined for the given vectors (e.g. a zero vector under cosine)."""


class CoalitionValueOracle:
    """Memoized coalition value v(S) for S given as a bitmask over sellers.

    Sellers sharing a ``classes`` label are exact copies of each other; the
    value of a coalition then depends only on which classes it contains, and
    the memo is keyed that way. The memo is a bounded LRU and is not safe for
    concurrent writers.
    """

    def __init__(
        self,
        value_fn: Callable[[tuple[int, ...]], float],
        n_players: int,
        classes: Sequence[int] | None = None,
        cache_size: int = DEFAULT_CACHE_SIZE,
    ):
        if n_players < 0 or n_players > MAX_SAMPLED_SELLERS:
            raise SizeError(f"{n_players} sellers; at most {MAX_SAMPLED_SELLERS} supported")
        self.value_fn = value_fn
        self.n_players = n_players
        if classes is None:
            classes = range(n_players)
        classes = np.asarray(classes, dtype=np.int64)
        if len(classes) != n_players:
            raise InputError("one class label per player required")
        # relabel classes as 0..C-1 in order of first appearance
        _, first, inverse = np.unique(classes, return_index=True, return_inverse=True)
        order = np.argsort(first, kind="stable")
        relabel = np.empty_like(order)
        relabel[order] = np.arange(len(order))
        self.classes = relabel[inverse.ravel()].astype(np.uint64)
        self.representatives = tuple(int(i) for i in np.sort(first))
        self.cache_size = cache_size
        self._cache: OrderedDict[int, float] = OrderedDict()
        self.calls = 0

    @classmethod
    def from_data(
        cls,
        X: FeatureMatrix,
        task: PredictionTask,
        predictor: PredictorSpec = PredictorSpec(),
        gain_spec: GainSpec = GainSpec(),
        cache_size: int = DEFAULT_CACHE_SIZE,
    ) -> "CoalitionValueOracle":
        predict = SubsetPredictor(predictor, X, task)
        classes = predict.row_class

        def value(subset):
            return score(gain_spec, task, predict(subset))

        return cls(value, X.n_sellers, classes, cache_size)

    @classmethod
    def from_set_function(
        cls, fn: Callable[[frozenset], float], n_players: int, classes=None
    ) -> "CoalitionValueOracle":
        return cls(lambda subset: fn(frozenset(subset)), n_players, classes)

    def __add__(self, other: "CoalitionValueOracle") -> "CoalitionValueOracle":
        if other.n_players != self.n_players:
            raise InputError("cannot add games over different player sets")
        return CoalitionValueOracle(
            lambda subset: self.value_fn(subset) + other.value_fn(subset), self.n_players
        )

    def _class_masks(self, masks: np.ndarray) -> np.ndarray:
        out = np.zeros_like(masks)
        one = np.uint64(1)
        for j, c in enumerate(self.classes):
            out |= ((masks >> np.uint64(j)) & one) << c
        return out

    def _lookup(self, class_mask: int, members: np.ndarray) -> float:
        cache = self._cache
        if class_mask in cache:
            cache.move_to_end(class_mask)
            return cache[class_mask]
        self.calls += 1
        value = float(self.value_fn(tuple(int(i) for i in members)))
        if self.cache_size > 0:
            cache[class_mask] = value
            if len(cache) > self.cache_size:
                cache.popitem(last=False)
        return value

    def value(self, subset) -> float:
        """v(S) for an iterable of seller indices."""
        mask = 0
        for i in subset:
            if not 0 <= i < self.n_players:
                raise InputError(f"seller {i} out of range")
            mask |= 1 << int(i)
        return float(self.values(np.array([mask], dtype=np.uint64))[0])

    def values(self, masks: np.ndarray) -> np.ndarray:
        """v for every bitmask; with ``cache_size=0`` each mask is evaluated afresh."""
        masks = np.asarray(masks, dtype=np.uint64)
        class_masks = self._class_masks(masks.ravel())
        if self.cache_size > 0:
            uniq, inverse = np.unique(class_masks, return_inverse=True)
        else:
            uniq, inverse = class_masks, np.arange(len(class_masks))
        reps = np.asarray(self.representatives, dtype=np.intp)
        shifts = np.arange(len(reps), dtype=np.uint64)
        present = ((uniq[:, None] >> shifts) & np.uint64(1)).astype(bool)
        looked_up = np.array([self._lookup(int(m), reps[row]) for m, row in zip(uniq, present)])
        return looked_up[inverse.ravel()].reshape(masks.shape)


class DivisionKind(str, Enum):
    EXACT = "exact"
    SAMPLED = "sampled"
    ROBUST = "robust"


@dataclass(frozen=True, eq=False)
class DivisionVector:
    psi: np.ndarray
    kind: DivisionKind
    K: int | None = None
    lam: float | None = None
    base: np.ndarray | None = None
    penalty: np.ndarray | None = None
    stderr: np.ndarray | None = None

    def __len__(self):
        return len(self.psi)

    def normalized(self) -> np.ndarray:
        """Nonnegative shares summing to one; an even split when no seller adds value."""
        clipped = np.clip(self.psi, 0.0, None)
        total = clipped.sum()
        if total <= 0:
            return np.full(len(clipped), 1.0 / len(clipped)) if len(clipped) else clipped
        return clipped / total


def revenue_split(revenue: float, division: DivisionVector) -> np.ndarray:
    return revenue * division.normalized()


def _popcount(masks: np.ndarray) -> np.ndarray:
    counts = np.zeros(masks.shape, dtype=np.int64)
    m = masks.copy()
    while np.any(m):
        counts += (m & 1).astype(np.int64)
        m >>= 1
    return counts


def shapley_exact(oracle: CoalitionValueOracle) -> DivisionVector:
    """Exact Shapley values by enumerating all 2^M coalitions."""
    M = oracle.n_players
    if M > MAX_EXACT_SELLERS:
        raise SizeError(f"exact Shapley limited to {MAX_EXACT_SELLERS} sellers; use shapley_approx")
    if M == 0:
        return DivisionVector(np.zeros(0), DivisionKind.EXACT)
    masks = np.arange(2**M, dtype=np.uint64)
    v = oracle.values(masks)
    sizes = _popcount(masks)
    weight = np.array(
        [math.factorial(s) * math.factorial(M - s - 1) / math.factorial(M) for s in range(M)]
    )
    psi = np.zeros(M)
    idx = np.arange(2**M)
    for m in range(M):
        without = idx[(idx >> m) & 1 == 0]
        psi[m] = np.sum(weight[sizes[without]] * (v[without | (1 << m)] - v[without]))
    return DivisionVector(psi, DivisionKind.EXACT)


def _permutation_marginals(oracle: CoalitionValueOracle, K: int, seed: int) -> np.ndarray:
    M = oracle.n_players
    rng = np.random.default_rng(seed)
    perms = np.argsort(rng.random((K, M)), axis=1)
    bits = np.left_shift(np.uint64(1), perms.astype(np.uint64))
    after = np.cumsum(bits, axis=1, dtype=np.uint64)
    v_after = oracle.values(after)
    # the coalition before position j is the one after position j - 1
    v_before = np.empty_like(v_after)
    v_before[:, 0] = oracle.value([])
    v_before[:, 1:] = v_after[:, :-1]
    marginals = np.empty((K, M))
    np.put_along_axis(marginals, perms, v_after - v_before, axis=1)
    return marginals


def shapley_approx(oracle: CoalitionValueOracle, K: int, seed: int = 0) -> DivisionVector:
    """Average marginal contributions over K uniformly random join orders.

    Each sampled permutation supplies one marginal for every seller.
    """
    if K < 1:
        raise InputError(f"K must be >= 1, got {K}")
    M = oracle.n_players
    if M == 0:
        return DivisionVector(np.zeros(0), DivisionKind.SAMPLED, K=K)
    marginals = _permutation_marginals(oracle, K, seed)
    psi = marginals.mean(axis=0)
    stderr = marginals.std(axis=0, ddof=1) / math.sqrt(K) if K > 1 else np.full(M, np.inf)
    return DivisionVector(psi, DivisionKind.SAMPLED, K=K, stderr=stderr)


def sample_size(M: int, epsilon: float, delta: float) -> int:
    """ceil(M log(2/delta) / (2 eps^2)) + 1 permutations."""
    if M < 1 or not epsilon > 0 or not 0 < delta <= 2:
        raise InputError(f"need M >= 1, epsilon > 0, 0 < delta <= 2; got {M}, {epsilon}, {delta}")
    bound = M * math.log(2.0 / delta) / (2.0 * epsilon**2)
    return max(1, math.ceil(bound) + 1)


def robust_sample_size(M: int, epsilon: float, delta: float) -> int:
    """Sample size that makes the penalized division epsilon-robust: precision epsilon/3."""
    return sample_size(M, epsilon / 3.0, delta)


class SimilarityKind(str, Enum):
    COSINE = "cosine"
    INVERSE_HELLINGER = "inverse_hellinger"


@dataclass(frozen=True)
class SimilaritySpec:
    kind: SimilarityKind = SimilarityKind.COSINE
    hellinger_bins: int = 16

    def __post_init__(self):
        object.__setattr__(self, "kind", SimilarityKind(self.kind))
        if self.hellinger_bins < 1:
            raise InputError("hellinger_bins must be positive")


def _histograms(x1, x2, bins):
    lo = min(x1.min(), x2.min())
    hi = max(x1.max(), x2.max())
    if hi == lo:
        ones = np.zeros(bins)
        ones[0] = 1.0
        return ones, ones
    edges = np.linspace(lo, hi, bins + 1)
    p = np.histogram(x1, edges)[0] / len(x1)
    q = np.histogram(x2, edges)[0] / len(x2)
    return p, q


def similarity(spec: SimilaritySpec, x1, x2) -> float:
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x1.shape != x2.shape or x1.ndim != 1 or len(x1) == 0:
        raise InputError(f"vectors must be 1-d and equal length: {x1.shape} vs {x2.shape}")
    if spec.kind is SimilarityKind.COSINE:
        n1, n2 = np.linalg.norm(x1), np.linalg.norm(x2)
        if n1 == 0 or n2 == 0:
            raise UndefinedSimilarityError("cosine similarity of a zero vector")
        return float(min(1.0, abs(x1 @ x2) / (n1 * n2)))
    p, q = _histograms(x1, x2, spec.hellinger_bins)
    hellinger = math.sqrt(0.5 * float(np.sum((np.sqrt(p) - np.sqrt(q)) ** 2)))
    return float(min(1.0, max(0.0, 1.0 - hellinger)))


def similarity_matrix(spec: SimilaritySpec, X: FeatureMatrix) -> np.ndarray:
    values = X.values
    M = len(values)
    if spec.kind is SimilarityKind.COSINE:
        norms = np.linalg.norm(values, axis=1)
        if np.any(norms == 0):
            raise UndefinedSimilarityError("cosine similarity of a zero vector")
        S = np.abs(values @ values.T) / np.outer(norms, norms)
        S = np.clip(S, 0.0, 1.0)
        np.fill_diagonal(S, 1.0)
        return S
    S = np.eye(M)
    for i in range(M):
        for j in range(i + 1, M):
            S[i, j] = S[j, i] = similarity(spec, values[i], values[j])
    return S


def replication_penalty(spec: SimilaritySpec, X: FeatureMatrix, lam: float) -> np.ndarray:
    """exp(-lam * sum_{j != m} SM(X_m, X_j)) for every seller m."""
    if lam < 0:
        raise InputError("penalty rate must be nonnegative")
    S = similarity_matrix(spec, X)
    return np.exp(-lam * (S.sum(axis=1) - np.diag(S)))


def shapley_robust(
    oracle: CoalitionValueOracle,
    X: FeatureMatrix,
    K: int | None,
    spec: SimilaritySpec = SimilaritySpec(),
    lam: float = math.log(2),
    seed: int = 0,
) -> DivisionVector:
    """Shapley estimate scaled down by each seller's total similarity to the others.

    ``K=None`` uses exact Shapley values in place of the sampled estimate.
    """
    if X.n_sellers != oracle.n_players:
        raise InputError("oracle and feature matrix disagree on the number of sellers")
    base = shapley_exact(oracle) if K is None else shapley_approx(oracle, K, seed)
    penalty = replication_penalty(spec, X, lam)
    return DivisionVector(
        base.psi * penalty, DivisionKind.ROBUST, K=K, lam=lam, base=base.psi,
        penalty=penalty, stderr=base.stderr,
    )


@dataclass(frozen=True)
class PenaltyCheck:
    valid: bool
    violation: tuple[float, int] | None
    tight: tuple[tuple[float, int], ...]


def penalty_valid(
    f: Callable[[float], float], c_max: int, x_grid=None, tol: float = 1e-12
) -> PenaltyCheck:
    """Check (c+1) f(x+c) <= f(x) for every grid x and integer c in 1..c_max.

    Reports the first violation in (x ascending, c ascending) order and the
    pairs where the inequality holds with equality.
    """
    if c_max < 1:
        raise InputError("c_max must be >= 1")
    xs = np.arange(0, 11, dtype=float) if x_grid is None else np.asarray(x_grid, dtype=float)
    violation = None
    tight = []
    for x in xs:
        fx = f(float(x))
        for c in range(1, c_max + 1):
            lhs = (c + 1) * f(float(x) + c)
            if lhs > fx + tol:
                if violation is None:
                    violation = (float(x), c)
            elif abs(lhs - fx) <= tol:
                tight.append((float(x), c))
    return PenaltyCheck(violation is None, violation, tuple(tight))


def replicate(X: FeatureMatrix, copies: Sequence[int]) -> tuple[FeatureMatrix, np.ndarray]:
    """Append ``copies[m]`` exact copies of every seller's row; also return each row's owner."""
    if len(copies) != X.n_sellers or any(c < 0 for c in copies):
        raise InputError("need a nonnegative copy count per seller")
    rows = [X.values]
    ids = list(X.seller_ids)
    owner = list(range(X.n_sellers))
    for m, c in enumerate(copies):
        for i in range(c):
            rows.append(X.values[m : m + 1])
            ids.append(f"{X.seller_ids[m]}+{i + 1}")
            owner.append(m)
    return FeatureMatrix(np.vstack(rows), tuple(ids)), np.asarray(owner)


@dataclass(frozen=True, eq=False)
class ReplicationCheck:
    holds: bool
    replicated_totals: np.ndarray
    original: np.ndarray
    epsilon: float


def replication_robustness_test(
    X: FeatureMatrix,
    task: PredictionTask,
    copies: Sequence[int] | Mapping[int, int],
    epsilon: float,
    *,
    predictor: PredictorSpec = PredictorSpec(),
    gain_spec: GainSpec = GainSpec(),
    spec: SimilaritySpec = SimilaritySpec(),
    lam: float = math.log(2),
    delta: float = 0.05,
    K: int | None = -1,
    seed: int = 0,
) -> ReplicationCheck:
    """Does replicating sellers' data leave every seller's total within epsilon of before?

    ``K=-1`` sizes each market's sample for precision epsilon/3; ``K=None``
    uses exact Shapley values on both markets.
    """
    if isinstance(copies, Mapping):
        copies = [int(copies.get(m, 0)) for m in range(X.n_sellers)]
    X_plus, owner = replicate(X, copies)

    def robust(features, sub_seed):
        oracle = CoalitionValueOracle.from_data(features, task, predictor, gain_spec)
        k = robust_sample_size(features.n_sellers, epsilon, delta) if K == -1 else K
        return shapley_robust(oracle, features, k, spec, lam, sub_seed).psi

    original = robust(X, seed)
    replicated = robust(X_plus, seed + 1)
    totals = np.bincount(owner, weights=replicated, minlength=X.n_sellers)
    return ReplicationCheck(bool(np.all(totals <= original + epsilon)), totals, original, epsilon)


@dataclass(frozen=True)
class ImpossibilityWitness:
    two_sellers: Fraction
    replicated_total: Fraction
    three_sellers: Fraction

    @property
    def violates_robustness(self) -> bool:
        return self.replicated_total > self.two_sellers


def _balanced_symmetric_share(n_identical: int) -> Fraction:
    """Shapley share of one of ``n`` identical sellers in the unanimity-of-any game, exactly."""
    game = lambda S: Fraction(1) if S else Fraction(0)  # noqa: E731
    players = range(n_identical)
    total = Fraction(0)
    orders = list(permutations(players))
    for order in orders:
        before = order[: order.index(0)]
        total += game(set(before) | {0}) - game(set(before))
    return total / len(orders)


def impossibility_witness() -> ImpossibilityWitness:
    """Three anonymous markets showing balance and replication robustness conflict.

    Two identical sellers split evenly (1/2 each). If A adds a copy A', balance
    among three indistinguishable rows gives 1/3 each, so A collects 2/3. That
    market looks exactly like three distinct identical sellers at 1/3 each.
    """
    half = _balanced_symmetric_share(2)
    third = _balanced_symmetric_share(3)
    return ImpossibilityWitness(half, 2 * third, third)
