"""Shared domain types: seller features, buyer tasks and per-step trace records."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class MarketError(Exception):
    """Base class for every error raised by the marketplace."""


class InputError(MarketError, ValueError):
    """Malformed or out-of-range input."""


class NumericalError(MarketError, ArithmeticError):
    """A numerical routine could not produce a well-defined answer."""


def _frozen_array(values, dtype=float, ndim=None) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise InputError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """M sellers (rows) by T time steps (columns).

    Zero rows are allowed so that the empty coalition is representable.
    """

    values: np.ndarray
    seller_ids: tuple[str, ...] = ()

    def __post_init__(self):
        frozen = np.array(self.values, dtype=float, copy=True)
        if frozen.ndim != 2:
            raise InputError(f"feature matrix must be 2-d, got shape {frozen.shape}")
        if frozen.shape[1] < 1:
            raise InputError("feature matrix needs at least one column")
        if not np.all(np.isfinite(frozen)):
            raise InputError("feature matrix contains NaN or infinite entries")
        frozen.setflags(write=False)
        object.__setattr__(self, "values", frozen)

        ids = tuple(str(s) for s in self.seller_ids) if self.seller_ids else tuple(
            f"s{i}" for i in range(frozen.shape[0])
        )
        if len(ids) != frozen.shape[0]:
            raise InputError(f"{len(ids)} seller ids for {frozen.shape[0]} rows")
        object.__setattr__(self, "seller_ids", ids)

    @property
    def n_sellers(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return self.n_sellers

    def __eq__(self, other):
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return self.seller_ids == other.seller_ids and np.array_equal(self.values, other.values)

    __hash__ = None


def feature_subset(X: FeatureMatrix, S: Iterable[int]) -> FeatureMatrix:
    """Rows of ``X`` indexed by ``S``, in ascending index order."""
    idx = sorted(set(int(i) for i in S))
    if idx and (idx[0] < 0 or idx[-1] >= X.n_sellers):
        raise InputError(f"subset {idx} out of range for {X.n_sellers} sellers")
    if len(idx) == X.n_sellers:
        return X
    return FeatureMatrix(X.values[idx], tuple(X.seller_ids[i] for i in idx))


@dataclass(frozen=True, eq=False)
class PredictionTask:
    """A buyer's labels split into a training part and a held-out test part."""

    y_train: np.ndarray
    y_test: np.ndarray
    train_columns: np.ndarray
    test_columns: np.ndarray
    name: str = ""

    def __post_init__(self):
        y_train = _frozen_array(self.y_train, ndim=1)
        y_test = _frozen_array(self.y_test, ndim=1)
        train = _frozen_array(self.train_columns, dtype=np.intp, ndim=1)
        test = _frozen_array(self.test_columns, dtype=np.intp, ndim=1)
        if len(train) != len(y_train) or len(test) != len(y_test):
            raise InputError("column index sets must match label lengths")
        if len(test) == 0:
            raise InputError("a task needs at least one test column")
        if np.intersect1d(train, test).size:
            raise InputError("train and test columns overlap")
        if (train.size and train.min() < 0) or test.min() < 0:
            raise InputError("negative column index")
        if not (np.all(np.isfinite(y_train)) and np.all(np.isfinite(y_test))):
            raise InputError("labels must be finite")
        object.__setattr__(self, "y_train", y_train)
        object.__setattr__(self, "y_test", y_test)
        object.__setattr__(self, "train_columns", train)
        object.__setattr__(self, "test_columns", test)

    @classmethod
    def split(cls, y: Sequence[float], train_fraction: float = 0.8, name: str = "") -> "PredictionTask":
        """Time-respecting split: the first ``train_fraction`` of columns train, the rest test."""
        y = np.asarray(y, dtype=float)
        n_train = int(math.floor(train_fraction * len(y)))
        n_train = min(max(n_train, 0), len(y) - 1)
        cols = np.arange(len(y))
        return cls(y[:n_train], y[n_train:], cols[:n_train], cols[n_train:], name=name)

    @property
    def n_columns(self) -> int:
        return len(self.train_columns) + len(self.test_columns)

    @property
    def max_column(self) -> int:
        top = self.test_columns.max()
        if self.train_columns.size:
            top = max(top, self.train_columns.max())
        return int(top)


@dataclass(frozen=True, eq=False)
class BuyerInstance:
    """A buyer: a prediction task, a private value per unit gain, and optionally a public bid."""

    task: PredictionTask
    mu: float
    bid: float | None = None

    def __post_init__(self):
        if not (self.mu >= 0 and math.isfinite(self.mu)):
            raise InputError(f"mu must be a finite nonnegative number, got {self.mu}")
        if self.bid is not None and not (self.bid >= 0 and math.isfinite(self.bid)):
            raise InputError(f"bid must be a finite nonnegative number, got {self.bid}")


TRACE_FIELDS = ("n", "price", "bid", "gain", "revenue", "division", "seed")


@dataclass(frozen=True)
class TraceRecord:
    """What happened when buyer ``n`` came to the market."""

    n: int
    price: float
    bid: float
    gain: float
    revenue: float
    division: tuple[float, ...]
    seed: int
    error: str | None = field(default=None, compare=True)

    def __post_init__(self):
        object.__setattr__(self, "division", tuple(float(d) for d in self.division))
        if self.error is None:
            if self.revenue < 0:
                raise InputError(f"negative revenue {self.revenue}")
            if not 0.0 <= self.gain <= 1.0:
                raise InputError(f"gain {self.gain} outside [0, 1]")
            if any(d < 0 for d in self.division):
                raise InputError("division entries must be nonnegative")

    def to_dict(self) -> dict:
        out = {
            "n": int(self.n),
            "price": float(self.price),
            "bid": float(self.bid),
            "gain": float(self.gain),
            "revenue": float(self.revenue),
            "division": list(self.division),
            "seed": int(self.seed),
        }
        if self.error is not None:
            out["error"] = self.error
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "TraceRecord":
        missing = [k for k in TRACE_FIELDS if k not in d]
        if missing:
            raise InputError(f"trace record missing fields {missing}")
        return cls(
            n=int(d["n"]),
            price=float(d["price"]),
            bid=float(d["bid"]),
            gain=float(d["gain"]),
            revenue=float(d["revenue"]),
            division=tuple(d["division"]),
            seed=int(d["seed"]),
            error=d.get("error"),
        )

    @classmethod
    def from_json(cls, line: str) -> "TraceRecord":
        return cls.from_dict(json.loads(line))


def write_traces(path: str | Path, records: Iterable[TraceRecord]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json())
            fh.write("\n")
            count += 1
    return count


def read_traces(path: str | Path) -> list[TraceRecord]:
    with open(path, encoding="utf-8") as fh:
        return [TraceRecord.from_json(line) for line in fh if line.strip()]


def derive_seed(*keys: int) -> int:
    """Deterministic 64-bit child seed from a tuple of nonnegative integers."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)
