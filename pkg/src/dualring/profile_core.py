"""Context and interest profiles: establishment, activity, evolution, usage.

Profiles are immutable; every operation returns a new one.  Weights live
in three disjoint maps (interest categories, browsing components and
interaction components), all saturating at ``zeta_max``.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .errors import (EmptyContext, FormatError, NoPositiveMatch, StaleDelta,
                     UnmappableCategory, WeightOutOfBounds)
from .matcher import InterestCorpus, map_keywords

SLOT_SECONDS = 24 * 3600
STABLE_TOL = 1e-6
STABLE_WINDOW = 3


class ProfileState(str, Enum):
    INITIATION = "Initiation"
    STABLE = "Stable"
    EVOLUTION = "Evolution"


@dataclass(frozen=True)
class WeightBounds:
    zeta_min: float = 0.05
    zeta_max: float = 0.6

    def __post_init__(self):
        if not 0 <= self.zeta_min < self.zeta_max <= 1:
            raise ValueError("bounds need 0 <= zeta_min < zeta_max <= 1")

    def clamp_category(self, w: float) -> float:
        return min(max(w, self.zeta_min), self.zeta_max)

    def clamp_component(self, w: float) -> float:
        return min(w, self.zeta_max)


@dataclass(frozen=True)
class Service:
    service_id: tuple
    category: str
    keywords: frozenset

    def __post_init__(self):
        if not self.keywords:
            raise ValueError(f"service {self.service_id} has no keywords")


@dataclass(frozen=True)
class ContextProfile:
    services: tuple
    marketplace_size: int | None = None

    def __post_init__(self):
        if self.marketplace_size is not None and len(self.services) > self.marketplace_size:
            raise ValueError("context opts into more services than the marketplace has")


@dataclass(frozen=True)
class CategoryMap:
    """The service-category -> interest-category mapping.

    ``table`` is consulted first; otherwise the service's keywords are
    matched against ``corpus``.  ``services`` lets usage records refer to
    services by id.
    """

    table: Mapping[str, str] = field(default_factory=dict)
    corpus: InterestCorpus | None = None
    services: Mapping[tuple, Service] = field(default_factory=dict)

    def interest_for(self, service: Service) -> str:
        if service.category in self.table:
            return self.table[service.category]
        if self.corpus is not None:
            try:
                return map_keywords(service.keywords | {service.category.lower()},
                                    self.corpus)
            except NoPositiveMatch:
                pass
        raise UnmappableCategory(
            f"no mapping for category {service.category!r} of service {service.service_id}")

    def interest_for_id(self, service_id) -> str:
        try:
            service = self.services[tuple(service_id)]
        except KeyError:
            raise UnmappableCategory(f"unknown service {service_id}") from None
        return self.interest_for(service)

    def with_services(self, services: Iterable[Service]) -> "CategoryMap":
        reg = dict(self.services)
        reg.update({s.service_id: s for s in services})
        return replace(self, services=reg)


@dataclass(frozen=True)
class InterestProfile:
    weights: Mapping[str, float]
    browsing_weights: Mapping[str, float] = field(default_factory=dict)
    interaction_weights: Mapping[str, float] = field(default_factory=dict)
    timestamp: int = 0
    state: ProfileState = ProfileState.INITIATION
    bounds: WeightBounds = field(default_factory=WeightBounds)
    slot: int = 0

    def __post_init__(self):
        zmax = self.bounds.zeta_max
        for kind, weights in self.maps().items():
            for key, w in weights.items():
                if not 0 < w <= zmax + 1e-12:
                    raise WeightOutOfBounds(f"{kind} weight {key}={w} outside (0, {zmax}]")

    def maps(self) -> dict[str, Mapping[str, float]]:
        return {"brw": self.browsing_weights, "cat": self.weights,
                "int": self.interaction_weights}

    def entries(self) -> list[tuple[str, str, float]]:
        """All weights as ``(kind, id, weight)`` sorted by kind then id."""
        return [(kind, key, w) for kind, m in sorted(self.maps().items())
                for key, w in sorted(m.items())]

    def categories(self) -> list[str]:
        return sorted(self.weights)


@dataclass(frozen=True)
class ProfileDelta:
    category_changes: Mapping[str, float] = field(default_factory=dict)
    browsing_changes: Mapping[str, float] = field(default_factory=dict)
    interaction_changes: Mapping[str, float] = field(default_factory=dict)
    slot: int = 1
    cap: float = 0.1

    def __post_init__(self):
        for changes in (self.category_changes, self.browsing_changes,
                        self.interaction_changes):
            for key, c in changes.items():
                if not 0 < c <= self.cap:
                    raise WeightOutOfBounds(f"change {key}={c} outside (0, {self.cap}]")

    def __add__(self, other: "ProfileDelta") -> "ProfileDelta":
        """Batch two deltas into one slot (the later slot wins)."""
        def merge(a, b):
            out = Counter(a)
            out.update(b)
            return dict(out)
        return ProfileDelta(merge(self.category_changes, other.category_changes),
                            merge(self.browsing_changes, other.browsing_changes),
                            merge(self.interaction_changes, other.interaction_changes),
                            slot=max(self.slot, other.slot),
                            cap=self.cap + other.cap)


@dataclass(frozen=True)
class UsageRecord:
    per_service_usage: Mapping[tuple, float]
    slot: int = 1

    def __post_init__(self):
        for sid, u in self.per_service_usage.items():
            if not 0 <= u <= 1:
                raise ValueError(f"usage of {sid} must lie in [0, 1], got {u}")


def establish_profile(ctx: ContextProfile, mapping: CategoryMap,
                      bounds: WeightBounds | None = None, timestamp: int = 0
                      ) -> InterestProfile:
    """Derive the initial interest profile from the opted-in services.

    Each interest category gets the share of services that map to it,
    clamped into ``[zeta_min, zeta_max]``.
    """
    bounds = bounds or WeightBounds()
    if not ctx.services:
        raise EmptyContext("context profile has no services")
    counts = Counter(mapping.interest_for(s) for s in ctx.services)
    total = sum(counts.values())
    weights = {cat: bounds.clamp_category(n / total) for cat, n in counts.items()}
    return InterestProfile(weights, timestamp=timestamp,
                           state=ProfileState.INITIATION, bounds=bounds)


def _check_components(components: Mapping[str, float], bounds: WeightBounds, kind: str):
    for key, w in components.items():
        if not 0 < w <= bounds.zeta_max:
            raise WeightOutOfBounds(f"{kind} component {key}={w} outside (0, {bounds.zeta_max}]")


def apply_activity(p: InterestProfile, browsing: Mapping[str, float],
                   interactions: Mapping[str, float], bounds: WeightBounds | None = None
                   ) -> InterestProfile:
    """Add browsing and interaction components onto the category weights.

    Component ids name the interest category they map to.  Components are
    also recorded (accumulated, clamped) in their own maps.
    """
    bounds = bounds or p.bounds
    _check_components(browsing, bounds, "browsing")
    _check_components(interactions, bounds, "interaction")
    if not browsing and not interactions:
        return p
    weights = dict(p.weights)
    for comp in (browsing, interactions):
        for cat, w in comp.items():
            weights[cat] = bounds.clamp_category(weights.get(cat, 0.0) + w)
    brw = _accumulate(p.browsing_weights, browsing, bounds)
    inter = _accumulate(p.interaction_weights, interactions, bounds)
    changed = (weights != dict(p.weights) or brw != dict(p.browsing_weights)
               or inter != dict(p.interaction_weights))
    return replace(p, weights=weights, browsing_weights=brw, interaction_weights=inter,
                   bounds=bounds, state=ProfileState.EVOLUTION if changed else p.state)


def _accumulate(base: Mapping[str, float], changes: Mapping[str, float],
                bounds: WeightBounds) -> dict[str, float]:
    out = dict(base)
    for key, c in changes.items():
        out[key] = bounds.clamp_component(out.get(key, 0.0) + c)
    return out


def evolve(p: InterestProfile, d: ProfileDelta, slot_seconds: int = SLOT_SECONDS
           ) -> InterestProfile:
    """Advance one slot: add the delta element-wise, saturating at zeta_max."""
    if d.slot <= p.slot:
        raise StaleDelta(f"delta slot {d.slot} is not after profile slot {p.slot}")
    b = p.bounds
    weights = dict(p.weights)
    for cat, c in d.category_changes.items():
        weights[cat] = b.clamp_category(weights.get(cat, 0.0) + c)
    brw = _accumulate(p.browsing_weights, d.browsing_changes, b)
    inter = _accumulate(p.interaction_weights, d.interaction_changes, b)
    changed = (weights != dict(p.weights) or brw != dict(p.browsing_weights)
               or inter != dict(p.interaction_weights))
    return replace(p, weights=weights, browsing_weights=brw, interaction_weights=inter,
                   slot=d.slot, timestamp=p.timestamp + (d.slot - p.slot) * slot_seconds,
                   state=ProfileState.EVOLUTION if changed else p.state)


def incorporate_usage(p: InterestProfile, u: UsageRecord, mapping: CategoryMap
                      ) -> InterestProfile:
    """Fold a slot's service-usage fractions into the interest weights."""
    gains: Counter = Counter()
    for sid, frac in u.per_service_usage.items():
        cat = mapping.interest_for_id(sid)
        if frac > 0:
            gains[cat] += frac
    if not gains:
        return p
    b = p.bounds
    weights = dict(p.weights)
    for cat, g in gains.items():
        weights[cat] = b.clamp_category(weights.get(cat, 0.0) + g)
    state = ProfileState.EVOLUTION if weights != dict(p.weights) else p.state
    return replace(p, weights=weights, state=state)


def max_weight_change(a: InterestProfile, b: InterestProfile) -> float:
    diff = 0.0
    for kind, ma in a.maps().items():
        mb = b.maps()[kind]
        for key in set(ma) | set(mb):
            diff = max(diff, abs(ma.get(key, 0.0) - mb.get(key, 0.0)))
    return diff


def detect_state(history: Sequence[InterestProfile], tol: float = STABLE_TOL,
                 window: int = STABLE_WINDOW) -> ProfileState:
    if not history:
        raise ValueError("history must be non-empty")
    if len(history) == 1:
        return ProfileState.INITIATION
    recent = history[-(window + 1):]
    drift = max(max_weight_change(a, b) for a, b in zip(recent, recent[1:]))
    return ProfileState.STABLE if drift <= tol else ProfileState.EVOLUTION


# -- file format ------------------------------------------------------------------
# "DRPROFILE 1", then meta<TAB>key<TAB>value lines, then kind<TAB>id<TAB>weight.

_META_ORDER = ("timestamp", "state", "zeta_min", "zeta_max", "slot")


def dump_profile(p: InterestProfile, extra_meta: Mapping[str, str] | None = None) -> str:
    meta = {"timestamp": str(p.timestamp), "state": p.state.value,
            "zeta_min": repr(p.bounds.zeta_min), "zeta_max": repr(p.bounds.zeta_max),
            "slot": str(p.slot)}
    lines = ["DRPROFILE 1"]
    lines += [f"meta\t{k}\t{meta[k]}" for k in _META_ORDER]
    for k, v in sorted((extra_meta or {}).items()):
        lines.append(f"meta\t{k}\t{v}")
    lines += [f"{kind}\t{key}\t{w:.9f}" for kind, key, w in p.entries()]
    return "\n".join(lines) + "\n"


def parse_profile(text: str) -> tuple[InterestProfile, dict[str, str]]:
    """Parse a profile file; returns the profile and any extra meta keys."""
    lines = text.split("\n")
    if not lines or lines[0] != "DRPROFILE 1":
        raise FormatError("profile file must start with 'DRPROFILE 1'")
    meta: dict[str, str] = {}
    maps: dict[str, dict[str, float]] = {"cat": {}, "brw": {}, "int": {}}
    for n, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"profile line {n}: expected three tab-separated fields")
        kind, key, value = parts
        if kind == "meta":
            meta[key] = value
        elif kind in maps:
            try:
                maps[kind][key] = float(value)
            except ValueError:
                raise FormatError(f"profile line {n}: bad weight {value!r}") from None
        else:
            raise FormatError(f"profile line {n}: unknown entry kind {kind!r}")
    try:
        bounds = WeightBounds(float(meta.pop("zeta_min")), float(meta.pop("zeta_max")))
        profile = InterestProfile(
            maps["cat"], maps["brw"], maps["int"],
            timestamp=int(meta.pop("timestamp")),
            state=ProfileState(meta.pop("state")), bounds=bounds,
            slot=int(meta.pop("slot", "0")))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"profile meta incomplete or invalid: {exc}") from None
    return profile, meta
