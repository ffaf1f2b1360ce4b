"""Ad-URL categorization, four-way impression classification and timing stats."""
from __future__ import annotations

import csv
import io
import math
from bisect import bisect_right
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence
from urllib.parse import urlsplit

from .errors import EmptyInput, FormatError, Unmappable
from .matcher import InterestCorpus, score, tokenize

CLASSES = ("random", "targeted", "contextual", "generic")
OVERLAP_6H = 21600
OVERLAP_1H = 3600
IMPRESSION_COLUMNS = ["experiment_id", "profile", "app_category", "arrival_epoch_s",
                      "network", "ad_url"]


@dataclass(frozen=True, order=True)
class CategoryNode:
    path: tuple

    def __post_init__(self):
        if not self.path or any(not seg for seg in self.path):
            raise ValueError("category path must have non-empty segments")

    @classmethod
    def parse(cls, text: str) -> "CategoryNode":
        return cls(tuple(seg.strip() for seg in text.strip().strip("/").split("/")))

    @property
    def root(self) -> str:
        return self.path[0]

    def __str__(self):
        return "/".join(self.path)


class Taxonomy:
    """Category nodes plus their keyword documents (path segments, tokenized)."""

    def __init__(self, nodes: Iterable[CategoryNode]):
        self.nodes = sorted(set(nodes))
        if not self.nodes:
            raise ValueError("taxonomy is empty")
        self.roots = {n.root for n in self.nodes}
        self._by_name = {str(n): n for n in self.nodes}
        self.corpus = InterestCorpus(
            {str(n): [t for seg in n.path for t in tokenize(seg)] for n in self.nodes})

    def __contains__(self, node):
        return node in self._by_name.values()

    def node(self, text: str) -> CategoryNode:
        try:
            return self._by_name[str(CategoryNode.parse(text))]
        except KeyError:
            raise Unmappable(f"{text!r} is not a taxonomy node") from None

    @classmethod
    def parse(cls, text: str) -> "Taxonomy":
        nodes = [CategoryNode.parse(line) for line in text.splitlines() if line.strip()]
        nodes = _with_ancestors(nodes)
        return cls(nodes)

    def dump(self) -> str:
        return "".join(f"{n}\n" for n in self.nodes)


def _with_ancestors(nodes):
    out = set()
    for n in nodes:
        for i in range(1, len(n.path) + 1):
            out.add(CategoryNode(n.path[:i]))
    return out


@dataclass(frozen=True)
class AdImpression:
    ad_url: str
    network: str
    arrival: int
    profile: str
    app_category: str
    experiment_id: str = "exp"


@dataclass
class ClassifiedAds:
    mapping: dict
    classes: dict = field(default_factory=lambda: {c: [] for c in CLASSES})

    def counts(self) -> dict[str, int]:
        return {c: len(self.classes[c]) for c in CLASSES}

    def proportions(self) -> dict[str, float]:
        total = sum(self.counts().values())
        return {c: (100.0 * len(self.classes[c]) / total if total else 0.0)
                for c in CLASSES}


@dataclass
class TimingStats:
    idle_s: int
    impression_s: list
    bursts: list
    airtime: dict
    duration: int


# -- URL mapping -----------------------------------------------------------------

def url_keywords(url: str) -> list[str]:
    parts = urlsplit(url if "//" in url else "//" + url)
    host = (parts.hostname or "").split(".")
    host = [h for h in host if h not in ("www", "com", "net", "org", "co")]
    return tokenize(" ".join(host) + " " + parts.path)


def map_url(url: str, taxonomy: Taxonomy,
            precategorized: Mapping[str, CategoryNode] | None = None,
            corpus: InterestCorpus | None = None) -> CategoryNode:
    """Direct lookup, then tf-idf argmax of the URL's tokens over node documents."""
    if precategorized and url in precategorized:
        return precategorized[url]
    corpus = corpus or taxonomy.corpus
    kw = set(url_keywords(url))
    best, best_node = 0.0, None
    # path order, so the first maximum wins ties
    for node in taxonomy.nodes:
        key = str(node)
        if key not in corpus:
            continue
        val = score(kw, corpus[key], corpus)
        if val > best:
            best, best_node = val, node
    if best_node is None:
        raise Unmappable(f"cannot categorize {url}")
    return best_node


def map_urls(impressions: Iterable[AdImpression], taxonomy: Taxonomy,
             precategorized=None) -> dict[str, CategoryNode | None]:
    out: dict[str, CategoryNode | None] = {}
    for imp in impressions:
        if imp.ad_url in out:
            continue
        try:
            out[imp.ad_url] = map_url(imp.ad_url, taxonomy, precategorized)
        except Unmappable:
            out[imp.ad_url] = None
    return out


# -- classification ----------------------------------------------------------------

def _intersects(node: CategoryNode | None, targets: Iterable[CategoryNode],
                full_path: bool) -> bool:
    if node is None:
        return False
    if full_path:
        return any(node.path[:len(t.path)] == t.path or t.path[:len(node.path)] == node.path
                   for t in targets)
    return any(node.root == t.root for t in targets)


def random_urls(impressions: Sequence[AdImpression], overlap_s: int) -> set[str]:
    """URLs seen by every profile inside one common window of ``overlap_s``."""
    profiles = {imp.profile for imp in impressions}
    if len(profiles) < 2:
        return set()
    by_url: dict[str, list[tuple[int, str]]] = defaultdict(list)
    for imp in impressions:
        by_url[imp.ad_url].append((imp.arrival, imp.profile))
    out = set()
    for url, hits in by_url.items():
        if {p for _, p in hits} != profiles:
            continue
        hits.sort()
        times = [t for t, _ in hits]
        for i, (start, _) in enumerate(hits):
            stop = bisect_right(times, start + overlap_s)
            if {p for _, p in hits[i:stop]} == profiles:
                out.add(url)
                break
    return out


def classify(impressions: Sequence[AdImpression],
             profile_categories: Mapping[str, Iterable[CategoryNode]],
             context_categories: Mapping[str, Iterable[CategoryNode]],
             mapping: Mapping[str, CategoryNode | None],
             overlap_s: int = OVERLAP_6H, full_path: bool = False) -> ClassifiedAds:
    """Partition impressions: random, then targeted, contextual, generic.

    Random filtering only looks at which profiles saw which URL when, so no
    profile content can influence it.
    """
    if not impressions:
        raise EmptyInput("no impressions to classify")
    rand = random_urls(impressions, overlap_s)
    result = ClassifiedAds(mapping=dict(mapping))
    for imp in impressions:
        node = mapping.get(imp.ad_url)
        if imp.ad_url in rand:
            cls = "random"
        elif _intersects(node, profile_categories.get(imp.profile, ()), full_path):
            cls = "targeted"
        elif _intersects(node, context_categories.get(imp.app_category, ()), full_path):
            cls = "contextual"
        else:
            cls = "generic"
        result.classes[cls].append(imp)
    return result


def profile_targets(profile, taxonomy: Taxonomy, floor: float = 1e-4
                    ) -> list[CategoryNode]:
    """C_r: taxonomy nodes of categories whose weight exceeds ``floor``."""
    out = []
    for cat, w in sorted(profile.weights.items()):
        if w > floor:
            try:
                out.append(taxonomy.node(cat))
            except Unmappable:
                out.append(CategoryNode.parse(cat))
    return out


def dp_effect_report(impressions: Sequence[AdImpression], profiles: Mapping[str, object],
                     privatized: Mapping[str, object],
                     context_categories: Mapping[str, Iterable[CategoryNode]],
                     mapping: Mapping[str, CategoryNode | None], taxonomy: Taxonomy,
                     overlap_s: int = OVERLAP_6H, floor: float = 1e-4) -> dict:
    """Class percentages with original vs privatized profiles, and differences."""
    before = classify(impressions,
                      {k: profile_targets(p, taxonomy, floor) for k, p in profiles.items()},
                      context_categories, mapping, overlap_s)
    after = classify(impressions,
                     {k: profile_targets(p, taxonomy, floor) for k, p in privatized.items()},
                     context_categories, mapping, overlap_s)
    pb, pa = before.proportions(), after.proportions()
    return {
        "before": pb, "after": pa,
        "difference": {c: pa[c] - pb[c] for c in CLASSES},
        "counts_before": before.counts(), "counts_after": after.counts(),
    }


# -- timers ------------------------------------------------------------------------

def timing_stats(impressions: Sequence[AdImpression], duration: int, start: int = 0
                 ) -> TimingStats:
    """Idle, per-impression and burst times for one experiment.

    Idle is the lead-in before the first ad; each ad is on screen until the
    next one arrives and the last one until the experiment ends.
    """
    arrivals = [imp.arrival for imp in impressions]
    if arrivals != sorted(arrivals):
        raise ValueError("impressions must be sorted by arrival")
    end = start + duration
    if not impressions:
        return TimingStats(duration, [], [], {}, duration)
    if arrivals[0] < start or arrivals[-1] > end:
        raise ValueError("arrivals fall outside the experiment window")
    shown = [b - a for a, b in zip(arrivals, arrivals[1:])] + [end - arrivals[-1]]
    airtime: Counter = Counter()
    for imp, dt in zip(impressions, shown):
        airtime[imp.network] += dt
    bursts = []
    run_start = 0
    for i in range(1, len(impressions) + 1):
        if i == len(impressions) or impressions[i].network != impressions[run_start].network:
            bursts.append((impressions[run_start].network,
                           arrivals[i - 1] - arrivals[run_start]))
            run_start = i
    return TimingStats(arrivals[0] - start, shown, bursts, dict(airtime), duration)


def frequency_report(impressions: Iterable[AdImpression], bin_width: int = 100,
                     lo: int = 1, hi: int = 3100) -> dict:
    """Serve count per unique URL, its empirical CDF and a binned histogram."""
    counts = Counter(imp.ad_url for imp in impressions)
    values = sorted(counts.values())
    n = len(values)
    cdf = []
    for v, c in sorted(Counter(values).items()):
        prev = cdf[-1][1] if cdf else 0.0
        cdf.append((v, prev + c / n))
    edges = list(range(lo, hi + 1, bin_width))
    if edges[-1] < hi:
        edges.append(hi)
    bins = [0] * (len(edges) - 1)
    for v in values:
        k = bisect_right(edges, v) - 1
        bins[min(max(k, 0), len(bins) - 1)] += 1
    return {"counts": dict(counts), "cdf": cdf, "edges": edges, "bins": bins}


# -- I/O ---------------------------------------------------------------------------

def read_impressions(text: str) -> list[AdImpression]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != IMPRESSION_COLUMNS:
        raise FormatError(f"impression log columns must be {','.join(IMPRESSION_COLUMNS)}")
    out = []
    for row in reader:
        try:
            out.append(AdImpression(row["ad_url"], row["network"],
                                    int(row["arrival_epoch_s"]), row["profile"],
                                    row["app_category"], row["experiment_id"]))
        except ValueError:
            raise FormatError(f"bad arrival time {row['arrival_epoch_s']!r}") from None
    return out


def write_impressions(impressions: Iterable[AdImpression]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(IMPRESSION_COLUMNS)
    for imp in impressions:
        w.writerow([imp.experiment_id, imp.profile, imp.app_category, imp.arrival,
                    imp.network, imp.ad_url])
    return buf.getvalue()


def class_report_csv(report: dict) -> str:
    lines = ["class,before_pct,after_pct,difference_pct,count_before,count_after"]
    for c in CLASSES:
        lines.append(f"{c},{report['before'][c]:.2f},{report['after'][c]:.2f},"
                     f"{report['difference'][c]:.2f},{report['counts_before'][c]},"
                     f"{report['counts_after'][c]}")
    return "\n".join(lines) + "\n"


def timing_report_csv(stats: TimingStats) -> str:
    lines = ["metric,network,value_s"]
    lines.append(f"idle,,{stats.idle_s}")
    lines.append(f"impression_total,,{sum(stats.impression_s)}")
    for net, t in sorted(stats.airtime.items()):
        lines.append(f"airtime,{net},{t}")
    for net, t in stats.bursts:
        lines.append(f"burst,{net},{t}")
    return "\n".join(lines) + "\n"


def frequency_report_csv(report: dict) -> str:
    lines = ["bin_lo,bin_hi,unique_ads"]
    edges = report["edges"]
    for k, n in enumerate(report["bins"]):
        lines.append(f"{edges[k]},{edges[k + 1]},{n}")
    return "\n".join(lines) + "\n"


def summarize(values: Sequence[float]) -> tuple[float, float]:
    if not values:
        return 0.0, 0.0
    mean = math.fsum(values) / len(values)
    var = math.fsum((v - mean) ** 2 for v in values) / max(1, len(values) - 1)
    return mean, math.sqrt(var)
