"""Myerson payments over a quality curve, buyer utility and the buyer's best response."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .allocation import QualityCurve, QualityModel
from .core import InputError


@dataclass(frozen=True)
class RevenueQuote:
    bid: float
    gain_at_bid: float
    payment: float
    utility: float | None = None


def myerson_payment(curve: QualityCurve, bid: float) -> float:
    """b*h(b) - integral_0^b h(z) dz, clamped at zero."""
    return max(0.0, bid * curve.value_at(bid) - curve.integral_to(bid))


def buyer_utility(curve: QualityCurve, mu: float, bid: float) -> float:
    return mu * curve.value_at(bid) - myerson_payment(curve, bid)


def quote(curve: QualityCurve, bid: float, mu: float | None = None) -> RevenueQuote:
    utility = None if mu is None else buyer_utility(curve, mu, bid)
    return RevenueQuote(bid, curve.value_at(bid), myerson_payment(curve, bid), utility)


def best_response(curve: QualityCurve, mu: float, tol: float = 1e-12) -> float:
    """Utility-maximizing bid over the curve's grid and ``mu`` itself.

    Bids whose utility is within ``tol`` of the maximum count as ties, and the
    smallest of them is returned.
    """
    if not 0.0 <= mu <= curve.b_max * (1 + 1e-12):
        raise InputError(f"mu={mu} outside [0, {curve.b_max}]")
    candidates = np.unique(np.append(curve.grid, min(mu, curve.b_max)))
    utilities = np.array([buyer_utility(curve, mu, b) for b in candidates])
    best = utilities.max()
    return float(candidates[np.argmax(utilities >= best - tol * max(1.0, abs(best)))])


def estimate_lipschitz(models: Iterable[QualityModel], prices, bids) -> float:
    """Largest finite-difference slope of the payment with respect to price.

    Serves as the empirical constant for the price-update schedule.
    """
    prices = np.asarray(prices, dtype=float)
    if len(prices) < 2 or np.any(np.diff(prices) <= 0):
        raise InputError("need at least two strictly ascending prices")
    slope = 0.0
    for model in models:
        for b in bids:
            pay = np.array([myerson_payment(model.curve(p, prices), b) for p in prices])
            slope = max(slope, float(np.max(np.abs(np.diff(pay)) / np.diff(prices))))
    return slope
