"""End-to-end run over a fixture directory.

establish, evolve, privatize, entropy check (one apoptosis and
re-establishment at most), service selection, PIR fetch, classification
and reports.  Every stage records digests of what it consumed and produced
in ``stage_log.txt``; wall-clock timings go to ``timings.csv`` so the rest
of the output is byte-for-byte reproducible.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from . import ad_classifier as adc
from . import dp_engine, entropy_monitor as em, formats, matcher, pir_core, pir_net
from .errors import DualRingError, FormatError
from .profile_core import (CategoryMap, ContextProfile, InterestProfile, ProfileDelta,
                           WeightBounds, detect_state, dump_profile, establish_profile,
                           evolve, parse_profile)
from .seeding import substream

MAX_APOPTOSIS_CYCLES = 1


@dataclass
class RunConfig:
    seed: int = 0
    fixtures: str = "fixtures"
    out: str = "out"
    epsilon: float = 1.0
    servers: int = 4
    t: int = 1
    word_bits: int = 10
    depth: int = 1
    ads: int = 3
    overlap: int = adc.OVERLAP_6H
    db_size: int = 1 << 20
    record_size: int = 16384
    zeta_min: float = 0.05
    zeta_max: float = 0.6
    floor: float = dp_engine.ZETA_FLOOR
    policy: dict = field(default_factory=lambda: {
        "theta_evap": 0.6, "theta_apop": 0.3, "target": 0.8})
    attribute_weights: dict = field(default_factory=dict)
    monitor: bool = True

    @classmethod
    def build(cls, file_values: Mapping[str, Any] | None = None,
              flag_values: Mapping[str, Any] | None = None) -> "RunConfig":
        """Defaults, overridden by the config file, overridden by flags."""
        known = {f.name for f in fields(cls)}
        merged: dict[str, Any] = {}
        for source in (file_values or {}, flag_values or {}):
            unknown = set(source) - known
            if unknown:
                raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
            merged.update({k: v for k, v in source.items() if v is not None})
        cfg = cls(**merged)
        cfg.validate()
        return cfg

    def validate(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.ads < 1:
            raise ValueError("ads must be >= 1")
        if self.overlap <= 0:
            raise ValueError("overlap must be positive")
        if set(self.policy) != {"theta_evap", "theta_apop", "target"}:
            raise ValueError("policy needs theta_evap, theta_apop and target")
        WeightBounds(self.zeta_min, self.zeta_max)
        em.MonitorPolicy(**self.policy).validate(1.0)

    @property
    def bounds(self) -> WeightBounds:
        return WeightBounds(self.zeta_min, self.zeta_max)


def load_config_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    return data


def digest(data: str | bytes) -> str:
    if isinstance(data, str):
        data = data.encode()
    return hashlib.sha256(data).hexdigest()[:16]


class StageLog:
    def __init__(self):
        self.lines: list[str] = []
        self.timings: list[tuple[str, float]] = []

    def add(self, stage: str, **items):
        body = " ".join(f"{k}={v}" for k, v in items.items())
        self.lines.append(f"{stage}\t{body}".rstrip())

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"

    def timings_csv(self) -> str:
        return "stage,seconds\n" + "".join(f"{s},{t:.6f}\n" for s, t in self.timings)


class _Stage:
    """Times a stage and tags any error it raises with the stage name."""

    def __init__(self, log: StageLog, name: str):
        self.log, self.name = log, name

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.log.timings.append((self.name, time.perf_counter() - self.t0))
        if isinstance(exc, DualRingError) and not getattr(exc, "stage", None):
            exc.stage = self.name
        return False


@dataclass
class Fixtures:
    services: dict
    mapping: CategoryMap
    corpus: matcher.InterestCorpus
    context: ContextProfile
    deltas: list
    catalog: list
    taxonomy: adc.Taxonomy
    impressions: list
    app_contexts: dict
    exp_profiles: dict
    manifest: dict
    db: pir_core.DatabaseMatrix
    texts: dict


def load_fixtures(root) -> Fixtures:
    root = Path(root)

    def read(name):
        try:
            return (root / name).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise FileNotFoundError(f"fixture file {root / name} is missing") from None

    names = ["services.txt", "catmap.txt", "corpus.txt", "context.txt", "deltas.txt",
             "catalog.txt", "taxonomy.txt", "impressions.csv", "app_contexts.txt",
             "manifest.json"]
    texts = {n: read(n) for n in names}
    services = formats.parse_services(texts["services.txt"])
    corpus = matcher.InterestCorpus.parse(texts["corpus.txt"])
    mapping = CategoryMap(formats.parse_catmap(texts["catmap.txt"]), corpus, services)
    exp = {}
    for path in sorted((root / "exp_profiles").glob("*.txt")):
        text = path.read_text(encoding="utf-8")
        texts[f"exp_profiles/{path.name}"] = text
        exp[path.stem] = parse_profile(text)[0]
    db_path = root / "ads.db"
    if not db_path.exists():
        raise FileNotFoundError(f"fixture file {db_path} is missing")
    try:
        manifest = json.loads(texts["manifest.json"])
    except json.JSONDecodeError:
        raise FormatError("manifest.json is not valid JSON") from None
    return Fixtures(
        services=services, mapping=mapping, corpus=corpus,
        context=formats.parse_context(texts["context.txt"], services),
        deltas=formats.parse_deltas(texts["deltas.txt"]),
        catalog=matcher.parse_catalog(texts["catalog.txt"]),
        taxonomy=adc.Taxonomy.parse(texts["taxonomy.txt"]),
        impressions=adc.read_impressions(texts["impressions.csv"]),
        app_contexts=formats.parse_app_contexts(texts["app_contexts.txt"]),
        exp_profiles=exp, manifest=manifest, db=pir_core.DatabaseMatrix.load(db_path),
        texts=texts)


def _without(d: Mapping[str, float], excluded) -> dict:
    return {k: v for k, v in d.items() if k not in excluded}


def build_profile(fx: Fixtures, cfg: RunConfig, excluded: frozenset, log: StageLog,
                  cycle: int) -> InterestProfile:
    """Establish and evolve, leaving out any destroyed categories."""
    with _Stage(log, f"establish/{cycle}"):
        services = tuple(s for s in fx.context.services
                         if fx.mapping.interest_for(s) not in excluded)
        ctx = replace(fx.context, services=services)
        p = establish_profile(ctx, fx.mapping, cfg.bounds,
                              timestamp=int(fx.manifest.get("experiment_start", 0)))
        log.add(f"establish/{cycle}", context=digest(fx.texts["context.txt"]),
                services=digest(fx.texts["services.txt"]),
                catmap=digest(fx.texts["catmap.txt"]),
                excluded=",".join(sorted(excluded)) or "-",
                out=digest(dump_profile(p)))
    with _Stage(log, f"evolve/{cycle}"):
        history = [p]
        for d in fx.deltas:
            d = ProfileDelta(_without(d.category_changes, excluded),
                             _without(d.browsing_changes, excluded),
                             _without(d.interaction_changes, excluded), d.slot, d.cap)
            p = evolve(p, d)
            history.append(p)
        state = detect_state(history)
        p = replace(p, state=state)
        log.add(f"evolve/{cycle}", deltas=digest(fx.texts["deltas.txt"]),
                slots=len(fx.deltas), state=state.value, out=digest(dump_profile(p)))
    return p


def _evaporated_profile(p: InterestProfile, dist: em.AttributeDistribution
                        ) -> InterestProfile:
    total = sum(p.weights[c] for c in dist.ids)
    weights = {c: min(prob * total, p.bounds.zeta_max)
               for c, prob in zip(dist.ids, dist.probs)}
    return replace(p, weights=weights)


def run(cfg: RunConfig) -> dict[str, Path]:
    """Run every stage and write the report bundle into ``cfg.out``."""
    log = StageLog()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with _Stage(log, "load"):
        fx = load_fixtures(cfg.fixtures)
        log.add("load", fixtures=digest("".join(fx.texts[k] for k in sorted(fx.texts))),
                db=digest(fx.db.shape.header_bytes()), seed=cfg.seed)

    excluded: frozenset = frozenset()
    monitor_rows = [em.MONITOR_LOG_HEADER]
    cycle = 0
    while True:
        profile = build_profile(fx, cfg, excluded, log, cycle)
        with _Stage(log, f"privatize/{cycle}"):
            priv = dp_engine.privatize_profile(profile, cfg.epsilon, cfg.bounds,
                                               substream(cfg.seed, f"privatize/{cycle}"),
                                               cfg.floor)
            log.add(f"privatize/{cycle}", epsilon=repr(cfg.epsilon),
                    lam=repr(cfg.zeta_max / cfg.epsilon),
                    out=digest(dump_profile(priv)))
        if not cfg.monitor:
            break
        with _Stage(log, f"entropy/{cycle}"):
            weights = [float(cfg.attribute_weights.get(c, 1.0)) for c in sorted(priv.weights)]
            dist = em.AttributeDistribution.from_profile(priv, weights)
            state = replace(em.privacy_loss(dist), slot=priv.slot)
            if state.h_max <= 0:
                action = em.Action.NONE
            else:
                policy = em.MonitorPolicy(**{k: v * state.h_max
                                             for k, v in cfg.policy.items()})
                action = em.decide(state, policy)
            if action is em.Action.APOPTOSE and cycle >= MAX_APOPTOSIS_CYCLES:
                log.add(f"entropy/{cycle}", note="apoptosis-limit", fallback="Evaporate")
                action = em.Action.EVAPORATE
            detail: Any = ""
            if action is em.Action.APOPTOSE:
                survivor, signal = em.apoptose(priv, dist, k=1)
                destroyed = sorted(set(priv.weights) - set(survivor.weights))
                excluded = excluded | frozenset(destroyed)
                detail = 1
                log.add(f"entropy/{cycle}", h=f"{state.h:.12f}", h_max=f"{state.h_max:.12f}",
                        action=action.value, destroyed=",".join(destroyed),
                        signal=signal.value)
            elif action is em.Action.EVAPORATE:
                dist2, alpha = em.evaporate(dist, policy.target)
                priv = _evaporated_profile(priv, dist2)
                detail = f"{alpha:.9f}"
                log.add(f"entropy/{cycle}", h=f"{state.h:.12f}", h_max=f"{state.h_max:.12f}",
                        action=action.value, alpha=detail, out=digest(dump_profile(priv)))
            else:
                log.add(f"entropy/{cycle}", h=f"{state.h:.12f}", h_max=f"{state.h_max:.12f}",
                        action=action.value)
            monitor_rows.append(em.monitor_log_row(state, action, detail))
        if action is em.Action.APOPTOSE:
            log.add(f"reestablish/{cycle + 1}", reason="ReEvaluate")
            cycle += 1
            continue
        break

    with _Stage(log, "match"):
        selected = matcher.select_services(priv, fx.catalog, cfg.ads, fx.corpus)
        log.add("match", catalog=digest(fx.texts["catalog.txt"]),
                profile=digest(dump_profile(priv)),
                selected=",".join(map(str, selected)))

    with _Stage(log, "pir"):
        shape = fx.db.shape
        params = pir_core.PirParams(cfg.servers, cfg.t, shape.word_bits, cfg.depth)
        endpoints = [pir_net.InProcessEndpoint(pir_net.PirServer(fx.db, i))
                     for i in range(cfg.servers)]
        records, rec = pir_net.client_fetch(selected, endpoints, params,
                                            substream(cfg.seed, "pir"))
        for idx, data in zip(selected, records):
            if data != fx.db.record(idx):
                raise AssertionError(f"PIR returned the wrong record for index {idx}")
        fetch_rows = ["index,service_id,sha256"]
        fetch_rows += [f"{i},{fx.catalog[i].service_id},{hashlib.sha256(r).hexdigest()}"
                       for i, r in zip(selected, records)]
        log.add("pir", scheme=rec.scheme, l=rec.l, t=rec.t, w=rec.w, d=rec.d, q=rec.q,
                up_bytes=rec.up_bytes, down_bytes=rec.down_bytes,
                records=digest("\n".join(fetch_rows)))
        log.timings += [("pir.encode", rec.encode_s), ("pir.server", rec.server_s),
                        ("pir.decode", rec.decode_s)]

    with _Stage(log, "classify"):
        mapping = adc.map_urls(fx.impressions, fx.taxonomy)
        privatized = {name: dp_engine.privatize_profile(
                          p, cfg.epsilon, None, substream(cfg.seed, f"privatize/exp/{name}"),
                          cfg.floor)
                      for name, p in sorted(fx.exp_profiles.items())}
        report = adc.dp_effect_report(fx.impressions, fx.exp_profiles, privatized,
                                      fx.app_contexts, mapping, fx.taxonomy,
                                      cfg.overlap, cfg.floor)
        classes = adc.classify(fx.impressions,
                               {k: adc.profile_targets(p, fx.taxonomy, cfg.floor)
                                for k, p in fx.exp_profiles.items()},
                               fx.app_contexts, mapping, cfg.overlap)
        per_profile = ["profile,class,count"]
        for cls in adc.CLASSES:
            counts: dict[str, int] = {}
            for imp in classes.classes[cls]:
                counts[imp.profile] = counts.get(imp.profile, 0) + 1
            per_profile += [f"{p},{cls},{counts.get(p, 0)}" for p in sorted(fx.exp_profiles)]
        dp_csv = adc.class_report_csv(report)
        log.add("classify", impressions=digest(fx.texts["impressions.csv"]),
                overlap=cfg.overlap, dp_effect=digest(dp_csv))

    with _Stage(log, "report"):
        start = int(fx.manifest.get("experiment_start", 0))
        duration = int(fx.manifest.get("experiment_duration", 0))
        timing_lines = ["experiment_id,metric,network,value_s"]
        by_exp: dict[str, list] = {}
        for imp in fx.impressions:
            by_exp.setdefault(imp.experiment_id, []).append(imp)
        for exp_id, imps in sorted(by_exp.items()):
            stats = adc.timing_stats(imps, duration, start)
            for line in adc.timing_report_csv(stats).splitlines()[1:]:
                timing_lines.append(f"{exp_id},{line}")
        freq_csv = adc.frequency_report_csv(adc.frequency_report(fx.impressions))

    outputs = {
        "profile.txt": dump_profile(profile),
        "privatized.txt": dump_profile(priv),
        "monitor_log.csv": "\n".join(monitor_rows) + "\n",
        "selection.csv": "rank,index,service_id\n" + "".join(
            f"{k},{i},{fx.catalog[i].service_id}\n" for k, i in enumerate(selected)),
        "fetch.csv": "\n".join(fetch_rows) + "\n",
        "classes.csv": "\n".join(per_profile) + "\n",
        "dp_effect.csv": dp_csv,
        "timing.csv": "\n".join(timing_lines) + "\n",
        "frequency.csv": freq_csv,
    }
    for name in sorted(outputs):
        log.add("output", file=name, sha=digest(outputs[name]))
    outputs["stage_log.txt"] = log.text()
    outputs["timings.csv"] = log.timings_csv()
    paths = {}
    for name, text in outputs.items():
        paths[name] = out / name
        paths[name].write_text(text, encoding="utf-8")
    return paths


def config_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)
