"""tf-idf keyword matching between ads/services and interest categories."""
from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import EmptyCatalog, FormatError, NoPositiveMatch

_SPLIT = re.compile(r"[^0-9a-z]+")
MIN_TOKEN_LEN = 2


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop tokens shorter than 2."""
    return [tok for tok in _SPLIT.split(text.lower()) if len(tok) >= MIN_TOKEN_LEN]


def detokenize(tokens: Iterable[str]) -> str:
    return " ".join(tokens)


@dataclass(frozen=True)
class AdRecord:
    ad_id: int
    keywords: frozenset
    landing_url: str = ""

    def __post_init__(self):
        if not self.keywords:
            raise ValueError(f"ad {self.ad_id} has no keywords")


class InterestCorpus:
    """Keyword documents, one per interest category.  Immutable once built."""

    def __init__(self, docs: Mapping[str, Iterable[str]]):
        if not docs:
            raise ValueError("corpus needs at least one document")
        self.docs = {k: Counter(v) for k, v in docs.items()}
        self.N = len(self.docs)
        self._df = Counter()
        for doc in self.docs.values():
            self._df.update(doc.keys())

    def df(self, token: str) -> int:
        return self._df.get(token, 0)

    def ids(self) -> list[str]:
        return sorted(self.docs)

    def __contains__(self, interest_id):
        return interest_id in self.docs

    def __getitem__(self, interest_id) -> Counter:
        return self.docs[interest_id]

    # file format: "DRCORPUS 1" then "interest-id<TAB>space separated tokens"

    def dump(self) -> str:
        lines = ["DRCORPUS 1"]
        for key in self.ids():
            tokens = sorted(self.docs[key].elements())
            lines.append(f"{key}\t{detokenize(tokens)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "InterestCorpus":
        lines = text.splitlines()
        if not lines or lines[0].strip() != "DRCORPUS 1":
            raise FormatError("corpus file must start with 'DRCORPUS 1'")
        docs = {}
        for n, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            key, sep, tokens = line.partition("\t")
            if not sep:
                raise FormatError(f"corpus line {n}: expected id<TAB>tokens")
            docs[key] = tokens.split()
        return cls(docs)


def tf(token: str, doc: Mapping[str, int] | Sequence[str]) -> int:
    if isinstance(doc, Mapping):
        return doc.get(token, 0)
    return sum(1 for t in doc if t == token)


def idf(token: str, corpus: InterestCorpus) -> float:
    df = corpus.df(token)
    if df == 0:
        return 0.0
    return math.log10(corpus.N / df)


def score(ad_keywords: Iterable[str], doc, corpus: InterestCorpus) -> float:
    return sum(tf(t, doc) * idf(t, corpus) for t in set(ad_keywords))


def map_keywords(ad_keywords: Iterable[str], corpus: InterestCorpus) -> str:
    """The interest whose document scores highest (ties: smallest id)."""
    kw = set(ad_keywords)
    best_id, best = None, 0.0
    for key in corpus.ids():
        val = score(kw, corpus[key], corpus)
        if val > best:
            best_id, best = key, val
    if best_id is None:
        raise NoPositiveMatch(f"no interest shares a weighted keyword with {sorted(kw)}")
    return best_id


@dataclass(frozen=True)
class CatalogEntry:
    index: int
    service_id: str
    tokens: tuple


def parse_catalog(text: str) -> list[CatalogEntry]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "DRCATALOG 1":
        raise FormatError("catalog file must start with 'DRCATALOG 1'")
    out = []
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3 or not parts[0].isdigit():
            raise FormatError(f"catalog line {n}: expected index<TAB>service-id<TAB>tokens")
        out.append(CatalogEntry(int(parts[0]), parts[1], tuple(parts[2].split())))
    if [e.index for e in out] != list(range(len(out))):
        raise FormatError("catalog indices must be 0..n-1 in order")
    return out


def dump_catalog(entries: Sequence[CatalogEntry]) -> str:
    lines = ["DRCATALOG 1"]
    lines += [f"{e.index}\t{e.service_id}\t{detokenize(e.tokens)}" for e in entries]
    return "\n".join(lines) + "\n"


def service_scores(weights: Mapping[str, float], catalog: Sequence[CatalogEntry],
                   corpus: InterestCorpus) -> list[float]:
    out = []
    for entry in catalog:
        total = 0.0
        for cat in sorted(weights):
            if cat in corpus:
                total += weights[cat] * score(entry.tokens, corpus[cat], corpus)
        out.append(total)
    return out


def select_services(profile, catalog: Sequence[CatalogEntry], k: int,
                    corpus: InterestCorpus) -> list[int]:
    """Top-``k`` catalog indices for a (possibly noisy) profile.

    A service scores the weight-averaged tf-idf match of its keywords
    against each profile category's document.  Ties go to the lower index.
    """
    if not catalog:
        raise EmptyCatalog("service catalog is empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    weights = profile.weights if hasattr(profile, "weights") else profile
    scores = service_scores(weights, catalog, corpus)
    order = sorted(range(len(catalog)), key=lambda i: (-scores[i], i))
    return [catalog[i].index for i in order[:k]]
