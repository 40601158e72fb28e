"""Security quantities: closed forms, count-based estimators, threshold solver.

The closed-form functions describe the number-preserving channel attack at a
balanced beamsplitter, parameterized by the probe-overlap angle theta. The
count-based estimators work on plain count mappings keyed by
``(alice_setting, bob_setting, outcome)`` string triples, so they apply both
to full-session tallies and to the revealed test subset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Tuple, Union

SETTINGS_COMBOS: Tuple[Tuple[str, str], ...] = (("F", "F"), ("F", "A"), ("A", "F"), ("A", "A"))

# Outcomes that leave both of the interferometer detectors silent.
SILENT_OUTCOMES = ("AliceAbsorb", "BobAbsorb", "Null")

THRESHOLD_TOL_RAD = 1e-9

CountKey = Tuple[str, str, str]
CountsLike = Union[Mapping[CountKey, int], object]


class NoDataError(Exception):
    """Raised when an estimator has no events to work with."""


def _counts_of(stats: CountsLike) -> Mapping[CountKey, int]:
    counts = getattr(stats, "counts", stats)
    if not isinstance(counts, Mapping):
        raise TypeError("expected a counts mapping or an object with a .counts mapping")
    return counts


def binary_entropy(e: float) -> float:
    """Binary entropy in bits, with h(0) = h(1) = 0 by continuity."""
    if not (0.0 <= e <= 1.0):
        raise ValueError(f"binary entropy argument must lie in [0, 1], got {e}")
    if e == 0.0 or e == 1.0:
        return 0.0
    return -e * math.log2(e) - (1.0 - e) * math.log2(1.0 - e)


def visibility_from_counts(stats: CountsLike) -> float:
    """Interference contrast among both-reflect rounds: (D2 - D1) / (D2 + D1)."""
    counts = _counts_of(stats)
    n_d1 = counts.get(("F", "F", "D1"), 0)
    n_d2 = counts.get(("F", "F", "D2"), 0)
    if n_d1 + n_d2 == 0:
        raise NoDataError("no detections among both-reflect rounds")
    return (n_d2 - n_d1) / (n_d1 + n_d2)


def error_rate_from_counts(stats: CountsLike) -> float:
    """Fraction of first-detector rounds whose settings cannot carry a key bit."""
    counts = _counts_of(stats)
    total_d1 = sum(v for (_, _, outcome), v in counts.items() if outcome == "D1")
    if total_d1 == 0:
        raise NoDataError("no first-detector events")
    bad = counts.get(("F", "F", "D1"), 0) + counts.get(("A", "A", "D1"), 0)
    return bad / total_d1


def multi_count_rate_from_counts(stats: CountsLike) -> float:
    counts = _counts_of(stats)
    total = sum(counts.values())
    if total == 0:
        raise NoDataError("empty counts")
    return sum(v for (_, _, outcome), v in counts.items() if outcome == "MultiCount") / total


def _check_theta(theta: float) -> None:
    if not (0.0 <= theta <= math.pi / 2 + 1e-12):
        raise ValueError(f"theta must lie in [0, pi/2], got {theta}")


def analytic_visibility(theta: float) -> float:
    """Visibility among both-reflect rounds under the probe-rotation attack."""
    _check_theta(theta)
    return math.cos(theta)


def analytic_error(theta: float) -> float:
    """Key error rate implied by the attack, via Bayes over equal setting priors."""
    _check_theta(theta)
    c = math.cos(theta)
    return (1.0 - c) / (2.0 - c)


def eve_information(theta: float) -> float:
    """Eavesdropper information per sifted bit: the conclusive-readout rate."""
    _check_theta(theta)
    return 1.0 - math.cos(theta)


def key_rate(error_rate: float, eve_info: float) -> float:
    """Distillable key fraction: (1 - h(e)) minus the eavesdropper information."""
    return 1.0 - binary_entropy(error_rate) - eve_info


def security_threshold() -> Tuple[float, float]:
    """Largest tolerable attack angle and the error rate it implies.

    Solves h(e(theta)) = cos(theta) by bisection on [0, pi/2]; the difference
    is strictly increasing, so the root is unique.
    """
    lo, hi = 0.0, math.pi / 2

    def gap(theta: float) -> float:
        return binary_entropy(analytic_error(theta)) - math.cos(theta)

    g_lo, g_hi = gap(lo), gap(hi)
    assert g_lo < 0.0 < g_hi, "threshold root is not bracketed"
    while hi - lo > THRESHOLD_TOL_RAD:
        mid = 0.5 * (lo + hi)
        if gap(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    theta_star = 0.5 * (lo + hi)
    return theta_star, analytic_error(theta_star)


OutcomeTable = Dict[Tuple[str, str], Dict[str, float]]


def attacked_outcome_table(theta: float) -> OutcomeTable:
    """Conditional outcome probabilities per settings combo at a balanced
    beamsplitter, under the probe-rotation attack of angle ``theta``.

    "Null" aggregates every round that leaves both detectors silent
    (absorptions included). theta = 0 reproduces the honest pattern.
    """
    _check_theta(theta)
    c = math.cos(theta)
    return {
        ("F", "F"): {"D1": (1.0 - c) / 2.0, "D2": (1.0 + c) / 2.0, "Null": 0.0},
        ("F", "A"): {"D1": 0.25, "D2": 0.25, "Null": 0.5},
        ("A", "F"): {"D1": 0.25, "D2": 0.25, "Null": 0.5},
        ("A", "A"): {"D1": 0.0, "D2": 0.0, "Null": 1.0},
    }


def honest_outcome_table() -> OutcomeTable:
    return attacked_outcome_table(0.0)


@dataclass(frozen=True)
class SecurityPoint:
    """One attack angle with its trade-off quantities."""

    theta: float
    visibility: float
    error_rate: float
    eve_info: float
    bob_info: float
    key_rate: float

    def __post_init__(self) -> None:
        assert abs(self.visibility + self.eve_info - 1.0) <= 1e-12
        assert -1e-12 <= self.error_rate <= 0.5 + 1e-12
        assert abs(self.key_rate - (self.bob_info - self.eve_info)) <= 1e-12


@dataclass(frozen=True)
class SecurityCurve:
    """Security quantities sampled over a strictly increasing theta grid."""

    points: Tuple[SecurityPoint, ...]

    def __post_init__(self) -> None:
        thetas = [p.theta for p in self.points]
        assert all(a < b for a, b in zip(thetas, thetas[1:])), "theta grid must increase"


def security_point(theta: float) -> SecurityPoint:
    e = analytic_error(theta)
    i_e = eve_information(theta)
    i_ab = 1.0 - binary_entropy(e)
    return SecurityPoint(
        theta=theta,
        visibility=analytic_visibility(theta),
        error_rate=e,
        eve_info=i_e,
        bob_info=i_ab,
        key_rate=i_ab - i_e,
    )


def sweep(theta_grid: Iterable[float]) -> SecurityCurve:
    """Evaluate a :class:`SecurityPoint` per grid value."""
    return SecurityCurve(tuple(security_point(t) for t in theta_grid))
