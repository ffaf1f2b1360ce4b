"""Deterministic synthetic fixtures: taxonomy, marketplace, ads and logs.

Impression logs carry planted class counts so the classifier can be
checked against a known answer.  Every file is a pure function of the
seed and the options.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import pir_core
from .ad_classifier import AdImpression, CategoryNode, Taxonomy, write_impressions
from .formats import (dump_app_contexts, dump_catmap, dump_context, dump_deltas,
                      dump_services, dump_usage)
from .matcher import CatalogEntry, InterestCorpus, dump_catalog
from .profile_core import (InterestProfile, ProfileDelta, ProfileState, Service,
                           UsageRecord, WeightBounds, dump_profile)
from .seeding import substream

MB = 1 << 20
EXPERIMENT_START = 1_600_000_000
EXPERIMENT_DURATION = 86400
NETWORKS = ("AdMob", "InMobi", "StartApp")
CLASSES = ("random", "targeted", "contextual", "generic")

# root -> (children, extra vocabulary)
TOPICS = {
    "Arts": (("Music", "Movies"), ("concert", "album", "cinema", "gallery", "painting")),
    "Business": (("Finance", "Accounting"), ("invest", "bank", "tax", "stocks", "loans")),
    "Games": (("Puzzle", "Casino"), ("arcade", "level", "poker", "quest", "score")),
    "Health": (("Fitness", "Nutrition"), ("workout", "diet", "yoga", "vitamin", "clinic")),
    "News": (("Politics", "Weather"), ("headline", "election", "forecast", "daily", "press")),
    "Shopping": (("Fashion", "Deals"), ("discount", "shoes", "coupon", "store", "cart")),
    "Sports": (("Football", "Tennis"), ("league", "match", "goal", "racket", "team")),
    "Technology": (("Software", "Gadgets"), ("laptop", "phone", "cloud", "app", "code")),
    "Travel": (("Flights", "Hotels"), ("airline", "booking", "beach", "resort", "trip")),
}

# marketplace category -> interest root; "Weather" is left to keyword fallback
MARKETPLACE = {
    "Music & Audio": "Arts", "Entertainment": "Arts", "Finance": "Business",
    "Productivity": "Business", "Casual Games": "Games", "Health & Fitness": "Health",
    "News & Magazines": "News", "Shopping": "Shopping", "Sports": "Sports",
    "Tools": "Technology", "Travel & Local": "Travel", "Weather": "News",
}
TABLE_EXCLUDED = ("Weather",)

APP_CONTEXTS = {
    "music": ("Arts/Music",), "finance": ("Business/Finance",), "games": ("Games",),
    "fitness": ("Health/Fitness",), "news": ("News",), "shopping": ("Shopping",),
    "sports": ("Sports",), "tools": ("Technology",), "travel": ("Travel",),
}

EXPERIMENT_PROFILES = {
    "r1": ("Sports", "Travel"),
    "r2": ("Business", "Health"),
    "r3": ("Arts", "Games"),
}


@dataclass
class FixtureOptions:
    seed: int = 0
    db_size: int = 1 * MB
    record_size: int = 16384
    word_bits: int = 10
    impressions_per_profile: int = 200
    ratios: dict = field(default_factory=lambda: {
        "random": 0.2, "targeted": 0.3, "contextual": 0.25, "generic": 0.25})
    services_per_category: int = 4
    scenario: str = "default"

    @property
    def num_records(self) -> int:
        return max(1, self.db_size // self.record_size)


def taxonomy() -> Taxonomy:
    nodes = []
    for root, (children, _) in TOPICS.items():
        nodes.append(CategoryNode((root,)))
        nodes += [CategoryNode((root, c)) for c in children]
    return Taxonomy(nodes)


def interest_corpus() -> InterestCorpus:
    docs = {}
    for root, (children, vocab) in TOPICS.items():
        docs[root] = [root.lower()] + [c.lower() for c in children] + list(vocab)
    return InterestCorpus(docs)


def marketplace(opts: FixtureOptions) -> list[Service]:
    rng = substream(opts.seed, "fixtures/services")
    out = []
    for j, (cat, root) in enumerate(sorted(MARKETPLACE.items())):
        vocab = TOPICS[root][1]
        for i in range(opts.services_per_category):
            picks = rng.choice(len(vocab), size=2, replace=False)
            kws = {vocab[int(k)] for k in picks}
            if cat in TABLE_EXCLUDED:
                kws.add("weather")
            out.append(Service((i, j), cat, frozenset(kws)))
    return out


def context_ids(services: list[Service], opts: FixtureOptions) -> list[tuple]:
    """The user's opted-in services.

    The apoptosis scenario is a one-sided context: every Sports service and
    a single Finance one.
    """
    by_cat: dict[str, list[Service]] = {}
    for s in services:
        by_cat.setdefault(s.category, []).append(s)
    if opts.scenario == "apoptosis":
        return [s.service_id for s in by_cat["Sports"]] + [by_cat["Finance"][0].service_id]
    rng = substream(opts.seed, "fixtures/context")
    cats = sorted(by_cat)
    chosen = sorted(rng.choice(len(cats), size=4, replace=False).tolist())
    ids = []
    for k, c in enumerate(chosen):
        ids += [s.service_id for s in by_cat[cats[c]][:k + 1]]
    return sorted(ids)


def deltas(opts: FixtureOptions) -> list[ProfileDelta]:
    if opts.scenario == "apoptosis":
        return []
    rng = substream(opts.seed, "fixtures/deltas")
    roots = sorted(TOPICS)
    out = []
    for slot in range(1, 4):
        cat = roots[int(rng.integers(len(roots)))]
        comp = roots[int(rng.integers(len(roots)))]
        out.append(ProfileDelta({cat: 0.05}, {comp: 0.02}, {}, slot=slot))
    return out


def usage(services: list[Service], ctx: list[tuple]) -> list[UsageRecord]:
    return [UsageRecord({sid: 0.1 for sid in ctx[:2]}, slot=4)]


def catalog(opts: FixtureOptions) -> list[CatalogEntry]:
    rng = substream(opts.seed, "fixtures/catalog")
    roots = sorted(TOPICS)
    out = []
    for i in range(opts.num_records):
        root = roots[int(rng.integers(len(roots)))]
        vocab = TOPICS[root][1]
        picks = sorted(rng.choice(len(vocab), size=2, replace=False).tolist())
        out.append(CatalogEntry(i, f"ad-{i:06d}", tuple(vocab[k] for k in picks)))
    return out


def experiment_profiles() -> dict[str, InterestProfile]:
    out = {}
    for name, roots in EXPERIMENT_PROFILES.items():
        weights = {r: 0.5 for r in roots}
        out[name] = InterestProfile(weights, timestamp=EXPERIMENT_START,
                                    state=ProfileState.STABLE, bounds=WeightBounds())
    return out


def _url(net: str, segments, uid: str) -> str:
    path = "/".join(s.lower() for s in segments)
    return f"https://{net.lower()}.adserve.example/{path}/{uid}"


def _node_url(rng, net, root, uid):
    children = TOPICS[root][0]
    seg = (root,) if rng.random() < 0.5 else (root, children[int(rng.integers(2))])
    return _url(net, seg, uid)


def planted_counts(opts: FixtureOptions) -> dict[str, int]:
    n = opts.impressions_per_profile
    counts = {c: int(round(opts.ratios[c] * n)) for c in CLASSES}
    counts["generic"] = n - sum(counts[c] for c in CLASSES[:3])
    return counts


def impressions(opts: FixtureOptions) -> tuple[list[AdImpression], dict]:
    """Impressions for every experiment profile with planted class counts.

    Random ads are one URL per slot served to every profile within ten
    minutes.  Every other URL is unique, so it cannot be random.  Each
    profile only runs apps whose context lies outside its own interests,
    which keeps the targeted and contextual classes distinct.
    """
    rng = substream(opts.seed, "fixtures/impressions")
    counts = planted_counts(opts)
    profiles = sorted(EXPERIMENT_PROFILES)
    roots = sorted(TOPICS)
    log: dict[str, list[AdImpression]] = {p: [] for p in profiles}
    uid = 0

    def add(profile, t, app, url, net):
        log[profile].append(AdImpression(url, net, int(t), profile, app, f"exp-{profile}"))

    span = EXPERIMENT_DURATION - 1200
    for k in range(counts["random"]):
        base = EXPERIMENT_START + int(rng.integers(0, span))
        net = NETWORKS[int(rng.integers(len(NETWORKS)))]
        url = _node_url(rng, net, roots[int(rng.integers(len(roots)))], f"r{k}")
        for p in profiles:
            apps = _apps_for(p)
            add(p, base + int(rng.integers(0, 600)), apps[int(rng.integers(len(apps)))],
                url, net)

    for p in profiles:
        interests = EXPERIMENT_PROFILES[p]
        apps = _apps_for(p)
        for cls in CLASSES[1:]:
            for _ in range(counts[cls]):
                uid += 1
                t = EXPERIMENT_START + int(rng.integers(0, EXPERIMENT_DURATION))
                net = NETWORKS[int(rng.integers(len(NETWORKS)))]
                app = apps[int(rng.integers(len(apps)))]
                ctx_roots = {CategoryNode.parse(n).root for n in APP_CONTEXTS[app]}
                tag = f"u{uid}"
                if cls == "targeted":
                    url = _node_url(rng, net, interests[int(rng.integers(len(interests)))], tag)
                elif cls == "contextual":
                    url = _url(net, CategoryNode.parse(APP_CONTEXTS[app][0]).path, tag)
                else:
                    others = [r for r in roots if r not in interests and r not in ctx_roots]
                    if rng.random() < 0.5:
                        url = _url(net, ("creative",), tag)
                    else:
                        url = _node_url(rng, net, others[int(rng.integers(len(others)))], tag)
                add(p, t, app, url, net)

    out = []
    for p in profiles:
        out += sorted(log[p], key=lambda imp: (imp.arrival, imp.ad_url))
    planted = {p: dict(counts) for p in profiles}
    return out, planted


def _apps_for(profile: str) -> list[str]:
    interests = set(EXPERIMENT_PROFILES[profile])
    return sorted(app for app, nodes in APP_CONTEXTS.items()
                  if not {CategoryNode.parse(n).root for n in nodes} & interests)


def pipeline_config(opts: FixtureOptions) -> dict:
    cfg = {"seed": opts.seed, "word_bits": opts.word_bits}
    if opts.scenario == "apoptosis":
        # fractions of h_max: the 4:1 context (about 0.81 h_max) apoptoses,
        # and the single category left afterwards has nothing to disclose
        cfg["policy"] = {"theta_evap": 0.9, "theta_apop": 0.85, "target": 0.95}
        cfg["epsilon"] = 1e6
    return cfg


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def generate(out_dir, opts: FixtureOptions) -> dict[str, Path]:
    """Write the whole fixture set into ``out_dir``; returns the paths."""
    out = Path(out_dir)
    (out / "exp_profiles").mkdir(parents=True, exist_ok=True)
    services = marketplace(opts)
    ctx = context_ids(services, opts)
    imps, planted = impressions(opts)
    files = {
        "taxonomy": ("taxonomy.txt", taxonomy().dump()),
        "corpus": ("corpus.txt", interest_corpus().dump()),
        "services": ("services.txt", dump_services(services)),
        "catmap": ("catmap.txt", dump_catmap(
            {c: r for c, r in MARKETPLACE.items() if c not in TABLE_EXCLUDED})),
        "context": ("context.txt", dump_context(ctx)),
        "deltas": ("deltas.txt", dump_deltas(deltas(opts))),
        "usage": ("usage.txt", dump_usage(usage(services, ctx))),
        "catalog": ("catalog.txt", dump_catalog(catalog(opts))),
        "impressions": ("impressions.csv", write_impressions(imps)),
        "app_contexts": ("app_contexts.txt", dump_app_contexts(
            {a: [CategoryNode.parse(n) for n in nodes] for a, nodes in APP_CONTEXTS.items()})),
        "planted": ("planted.json", _json(planted)),
        "manifest": ("manifest.json", _json({
            **{k: v for k, v in asdict(opts).items()}, "num_records": opts.num_records,
            "experiment_start": EXPERIMENT_START, "experiment_duration": EXPERIMENT_DURATION})),
        "pipeline_config": ("pipeline.json", _json(pipeline_config(opts))),
    }
    paths = {}
    for key, (name, text) in files.items():
        path = out / name
        path.write_text(text, encoding="utf-8")
        paths[key] = path
    for name, prof in experiment_profiles().items():
        path = out / "exp_profiles" / f"{name}.txt"
        path.write_text(dump_profile(prof, {"profile_id": name}), encoding="utf-8")
        paths[f"exp_profile:{name}"] = path
    db = pir_core.synthetic_database(opts.num_records, opts.record_size, opts.word_bits,
                                     opts.seed)
    paths["db"] = out / "ads.db"
    db.save(paths["db"])
    return paths
