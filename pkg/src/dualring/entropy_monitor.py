"""Weighted-entropy disclosure monitor with evaporation and apoptosis."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import InvalidDistribution, KTooLarge, UnreachableTarget
from .profile_core import InterestProfile

PROB_TOL = 1e-9
ALPHA_RESOLUTION = 1e-9


class Action(str, Enum):
    NONE = "None"
    EVAPORATE = "Evaporate"
    APOPTOSE = "Apoptose"

    @property
    def strength(self) -> int:
        return {"None": 0, "Evaporate": 1, "Apoptose": 2}[self.value]


class Signal(str, Enum):
    RE_EVALUATE = "ReEvaluate"


@dataclass(frozen=True)
class AttributeDistribution:
    probs: tuple
    weights: tuple
    ids: tuple = ()

    def __post_init__(self):
        if len(self.probs) != len(self.weights) or not self.probs:
            raise InvalidDistribution("probs and weights must be non-empty and equal length")
        if any(p < 0 for p in self.probs) or any(w < 0 for w in self.weights):
            raise InvalidDistribution("probabilities and weights must be non-negative")
        if abs(math.fsum(self.probs) - 1.0) > PROB_TOL:
            raise InvalidDistribution(f"probabilities sum to {math.fsum(self.probs)}")
        if self.ids and len(self.ids) != len(self.probs):
            raise InvalidDistribution("ids must align with probs")
        if not self.ids:
            object.__setattr__(self, "ids", tuple(str(i) for i in range(len(self.probs))))

    @property
    def n(self) -> int:
        return len(self.probs)

    @classmethod
    def uniform_weights(cls, probs, ids=()) -> "AttributeDistribution":
        return cls(tuple(probs), (1.0,) * len(probs), tuple(ids))

    @classmethod
    def from_profile(cls, p: InterestProfile, weights: Sequence[float] | None = None
                     ) -> "AttributeDistribution":
        """Normalized category weights, attributes in sorted id order."""
        ids = tuple(sorted(p.weights))
        raw = [p.weights[c] for c in ids]
        total = math.fsum(raw)
        probs = tuple(w / total for w in raw)
        w = tuple(weights) if weights is not None else (1.0,) * len(ids)
        return cls(probs, w, ids)


@dataclass(frozen=True)
class EntropyState:
    h: float
    h_max: float
    loss: float
    slot: int = 0


@dataclass(frozen=True)
class MonitorPolicy:
    theta_evap: float
    theta_apop: float
    target: float

    def validate(self, h_max: float):
        if not 0 <= self.theta_apop < self.theta_evap <= self.target <= h_max + 1e-12:
            raise ValueError("policy needs 0 <= theta_apop < theta_evap <= target <= h_max")

    @classmethod
    def default(cls, h_max: float) -> "MonitorPolicy":
        return cls(theta_evap=0.6 * h_max, theta_apop=0.3 * h_max, target=0.8 * h_max)


def _plogp(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p, dtype=float)
    nz = p > 0
    out[nz] = -p[nz] * np.log2(p[nz])
    return out


def weighted_entropy(probs, weights) -> float:
    return math.fsum((np.asarray(weights, dtype=float) *
                      _plogp(np.asarray(probs, dtype=float))).tolist())


def entropy(dist: AttributeDistribution) -> float:
    """Weighted Shannon entropy in bits."""
    return weighted_entropy(dist.probs, dist.weights)


def max_entropy(n: int, weights: Sequence[float] | None = None) -> float:
    if n < 1:
        raise ValueError("need at least one attribute")
    if weights is None:
        weights = (1.0,) * n
    if len(weights) != n:
        raise ValueError("weights must have n entries")
    return math.fsum(weights) / n * math.log2(n)


def privacy_loss(dist: AttributeDistribution, slot: int = 0) -> EntropyState:
    h = entropy(dist)
    h_max = max_entropy(dist.n, dist.weights)
    return EntropyState(h=h, h_max=h_max, loss=h_max - h, slot=slot)


def decide(state: EntropyState, policy: MonitorPolicy) -> Action:
    if state.h <= policy.theta_apop:
        return Action.APOPTOSE
    if state.h <= policy.theta_evap:
        return Action.EVAPORATE
    return Action.NONE


def mix_uniform(probs, alpha: float) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    return (1.0 - alpha) * p + alpha / len(p)


def evaporate(dist: AttributeDistribution, target: float,
              resolution: float = ALPHA_RESOLUTION) -> tuple[AttributeDistribution, float]:
    """Mix toward uniform just enough to reach ``target`` bits.

    Returns the distorted distribution and the mixing weight alpha, found by
    bisection to ``resolution``.
    """
    h_max = max_entropy(dist.n, dist.weights)
    if target > h_max + 1e-12:
        raise UnreachableTarget(f"target {target} exceeds maximum entropy {h_max}")
    if entropy(dist) >= target:
        return dist, 0.0

    def h_at(alpha):
        return weighted_entropy(mix_uniform(dist.probs, alpha), dist.weights)

    lo, hi = 0.0, 1.0
    if target >= h_max - 1e-12 or h_at(hi) < target:
        # entropy is flat near the maximum, so rounding would stop short of 1
        alpha = 1.0
    else:
        while hi - lo > resolution:
            mid = 0.5 * (lo + hi)
            if h_at(mid) >= target:
                hi = mid
            else:
                lo = mid
        alpha = hi
    probs = mix_uniform(dist.probs, alpha)
    probs = probs / math.fsum(probs.tolist())
    return replace(dist, probs=tuple(probs.tolist())), alpha


def apoptose(p: InterestProfile, dist: AttributeDistribution, k: int = 1
             ) -> tuple[InterestProfile, Signal]:
    """Destroy the ``k`` most disclosure-dominant attributes (largest w*p).

    Ties go to the lexicographically smallest id.  The remaining weights are
    kept as they are.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= dist.n:
        raise KTooLarge(f"k={k} would remove all {dist.n} attributes")
    scored = sorted(zip(dist.ids, dist.weights, dist.probs),
                    key=lambda t: (-(t[1] * t[2]), t[0]))
    doomed = {attr for attr, _, _ in scored[:k]}
    weights = {c: w for c, w in p.weights.items() if c not in doomed}
    return replace(p, weights=weights), Signal.RE_EVALUATE


def monitor_log_row(state: EntropyState, action: Action, alpha_or_k) -> str:
    """One line of the monitor log CSV ``slot,h,h_max,loss,action,alpha_or_k``."""
    return (f"{state.slot},{state.h:.12f},{state.h_max:.12f},{state.loss:.12f},"
            f"{action.value},{alpha_or_k}")


MONITOR_LOG_HEADER = "slot,h,h_max,loss,action,alpha_or_k"
