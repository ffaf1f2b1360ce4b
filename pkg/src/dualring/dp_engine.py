"""Local aggregation server: profile grouping, statistical queries and the
Laplace perturbation algorithm.

Neighbouring databases differ by adding or removing one row, and
sensitivities are L1.
"""
from __future__ import annotations

import math
import secrets
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import NonPositiveEpsilon, ThresholdOutOfRange, UnsupportedQuery
from .profile_core import InterestProfile, WeightBounds, dump_profile, parse_profile

ZETA_FLOOR = 1e-4
GROUP_THRESHOLD_RANGE = (0.6, 1.0)


def new_temp_id() -> str:
    """A fresh 128-bit token, unrelated to any permanent identifier."""
    return secrets.token_hex(16)


@dataclass(frozen=True)
class ProfileRow:
    temp_id: str
    interests: InterestProfile
    optin_services: frozenset = frozenset()

    def categories(self) -> frozenset:
        return frozenset(self.interests.weights)

    def dominant_category(self) -> str:
        w = self.interests.weights
        return min(w, key=lambda c: (-w[c], c))


@dataclass
class ProfileDatabase:
    rows: list = field(default_factory=list)

    def __post_init__(self):
        ids = [r.temp_id for r in self.rows]
        if len(ids) != len(set(ids)):
            raise ValueError("temp_ids must be unique")

    def add(self, row: ProfileRow) -> None:
        if any(r.temp_id == row.temp_id for r in self.rows):
            raise ValueError(f"duplicate temp_id {row.temp_id}")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)


class QueryKind(str, Enum):
    COUNT_OPT_IN = "CountOptIn"
    CATEGORY_HISTOGRAM = "CategoryHistogram"
    MOST_REQUESTED_SERVICE = "MostRequestedService"


@dataclass(frozen=True)
class StatQuery:
    kind: QueryKind
    service_id: object = None
    categories: tuple = ()

    @property
    def output_dim(self) -> int:
        if self.kind is QueryKind.COUNT_OPT_IN:
            return 1
        return len(self.categories)


@dataclass(frozen=True)
class NoisyOutput:
    values: tuple
    epsilon: float
    lam: float
    delta: float
    kind: str = ""

    def to_csv_row(self) -> str:
        vals = ",".join(repr(float(v)) for v in self.values)
        return (f"{self.kind},{len(self.values)},{self.epsilon!r},{self.delta!r},"
                f"{self.lam!r},{vals}")


def jaccard(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def group_profiles(rows: Sequence[ProfileRow], threshold: float = 0.6) -> list[list[ProfileRow]]:
    """Greedy first-fit grouping by Jaccard similarity to each group's seed."""
    lo, hi = GROUP_THRESHOLD_RANGE
    if not lo <= threshold <= hi:
        raise ThresholdOutOfRange(f"threshold {threshold} outside [{lo}, {hi}]")
    groups: list[list[ProfileRow]] = []
    for row in rows:
        cats = row.categories()
        for group in groups:
            if jaccard(group[0].categories(), cats) >= threshold:
                group.append(row)
                break
        else:
            groups.append([row])
    return groups


def answer(db: ProfileDatabase, q: StatQuery) -> np.ndarray:
    """Exact (non-private) query answer."""
    if q.kind is QueryKind.COUNT_OPT_IN:
        return np.array([sum(1 for r in db.rows if q.service_id in r.optin_services)],
                        dtype=float)
    if q.kind in (QueryKind.CATEGORY_HISTOGRAM, QueryKind.MOST_REQUESTED_SERVICE):
        counts = Counter(r.dominant_category() for r in db.rows)
        return np.array([counts.get(c, 0) for c in q.categories], dtype=float)
    raise UnsupportedQuery(f"unsupported query kind {q.kind!r}")


def sensitivity(q: StatQuery) -> float:
    """L1 sensitivity under add/remove-one-row adjacency."""
    if q.kind in (QueryKind.COUNT_OPT_IN, QueryKind.CATEGORY_HISTOGRAM,
                  QueryKind.MOST_REQUESTED_SERVICE):
        return 1.0
    raise UnsupportedQuery(f"unsupported query kind {q.kind!r}")


def laplace_from_uniform(u, lam: float):
    """Inverse CDF of Laplace(0, lam) at ``u`` in (-1/2, 1/2)."""
    u = np.asarray(u, dtype=float)
    return -lam * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def _uniforms(rng: np.random.Generator, size):
    u = rng.random(size) - 0.5
    # -0.5 maps to an infinite sample
    bad = u == -0.5
    while np.any(bad):
        u[bad] = rng.random(int(bad.sum())) - 0.5
        bad = u == -0.5
    return u


def laplace_sample(lam: float, rng: np.random.Generator) -> float:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if lam == 0:
        return 0.0
    return float(laplace_from_uniform(_uniforms(rng, 1), lam)[0])


def laplace_samples(lam: float, size, rng: np.random.Generator) -> np.ndarray:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if lam == 0:
        return np.zeros(size)
    return laplace_from_uniform(_uniforms(rng, size), lam)


def _check_epsilon(epsilon: float):
    if not epsilon > 0:
        raise NonPositiveEpsilon(f"epsilon must be positive, got {epsilon}")


def perturb(c: Sequence[float], delta: float, epsilon: float,
            rng: np.random.Generator, kind: str = "") -> NoisyOutput:
    _check_epsilon(epsilon)
    if delta < 0:
        raise ValueError("sensitivity must be non-negative")
    lam = delta / epsilon
    c = np.asarray(c, dtype=float)
    values = c + laplace_samples(lam, c.shape, rng)
    return NoisyOutput(tuple(values.tolist()), float(epsilon), lam, float(delta), kind)


def release(db: ProfileDatabase, q: StatQuery, epsilon: float,
            rng: np.random.Generator) -> NoisyOutput:
    return perturb(answer(db, q), sensitivity(q), epsilon, rng, kind=q.kind.value)


def noisy_argmax(out: NoisyOutput, q: StatQuery):
    """Post-processing for MostRequestedService: the top noisy bin."""
    best = max(range(len(out.values)), key=lambda i: (out.values[i], -i))
    return q.categories[best]


def expected_error(delta: float, epsilon: float) -> float:
    """Per-element LPA error, sqrt(2) * delta / epsilon (the noise std dev)."""
    _check_epsilon(epsilon)
    return math.sqrt(2.0) * delta / epsilon


def mean_abs_error(delta: float, epsilon: float) -> float:
    """E|Lap(lambda)| = lambda = delta / epsilon."""
    _check_epsilon(epsilon)
    return delta / epsilon


def privatize_profile(p: InterestProfile, epsilon: float, bounds: WeightBounds | None,
                      rng: np.random.Generator, floor: float = ZETA_FLOOR
                      ) -> InterestProfile:
    """Laplace-perturb every weight with scale zeta_max / epsilon.

    Results are clamped into ``[floor, zeta_max]`` so the key set never
    changes.
    """
    _check_epsilon(epsilon)
    bounds = bounds or p.bounds
    lam = bounds.zeta_max / epsilon
    out = {}
    for kind, weights in p.maps().items():
        keys = sorted(weights)
        noise = laplace_samples(lam, len(keys), rng)
        out[kind] = {k: float(min(max(weights[k] + z, floor), bounds.zeta_max))
                     for k, z in zip(keys, noise)}
    return replace(p, weights=out["cat"], browsing_weights=out["brw"],
                   interaction_weights=out["int"], bounds=bounds)


# -- aggregation input ---------------------------------------------------------------

def parse_rows(texts: Iterable[str]) -> ProfileDatabase:
    """Build a database from profile files carrying a ``temp_id`` meta line.

    Opt-in services come from an optional ``optin`` meta value (comma
    separated service ids).
    """
    db = ProfileDatabase()
    for text in texts:
        profile, meta = parse_profile(text)
        temp_id = meta.get("temp_id") or new_temp_id()
        optin = frozenset(s for s in meta.get("optin", "").split(",") if s)
        db.add(ProfileRow(temp_id, profile, optin))
    return db


def dump_row(row: ProfileRow) -> str:
    meta = {"temp_id": row.temp_id}
    if row.optin_services:
        meta["optin"] = ",".join(sorted(map(str, row.optin_services)))
    return dump_profile(row.interests, meta)
