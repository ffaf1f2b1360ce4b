"""Command-line entry point.

Exit codes: 0 success, 2 configuration, 3 I/O, 4 protocol, 5 quorum.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import ad_classifier as adc
from . import dp_engine, entropy_monitor as em, fixtures, formats, matcher, pir_core, pir_net
from .errors import DualRingError
from .pipeline import RunConfig, load_config_file, run
from .profile_core import (CategoryMap, detect_state, dump_profile, establish_profile,
                           evolve, incorporate_usage, parse_profile)
from .seeding import substream

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_PROTOCOL, EXIT_QUORUM = 0, 2, 3, 4, 5


def _size(text: str) -> int:
    """Byte count with optional K/M/G suffix (binary units)."""
    text = text.strip().upper().removesuffix("B")
    mult = {"K": 1 << 10, "M": 1 << 20, "G": 1 << 30}.get(text[-1:], 1)
    if mult != 1:
        text = text[:-1]
    try:
        value = int(float(text) * mult)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError("size must be positive")
    return value


def _read(path) -> str:
    return Path(path).read_text(encoding="utf-8")


def _emit(text: str, out: str | None):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _config(args, keys) -> RunConfig:
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    flags = {k: getattr(args, k, None) for k in keys}
    return RunConfig.build(file_values, flags)


def _mapping(args) -> CategoryMap:
    services = formats.parse_services(_read(args.services))
    corpus = matcher.InterestCorpus.parse(_read(args.corpus))
    return CategoryMap(formats.parse_catmap(_read(args.catmap)), corpus, services)


# -- commands ---------------------------------------------------------------------

def cmd_gen_fixtures(args):
    cfg = _config(args, ["seed", "db_size", "record_size", "word_bits"])
    out = args.out or cfg.fixtures
    opts = fixtures.FixtureOptions(seed=cfg.seed, db_size=cfg.db_size,
                                   record_size=cfg.record_size, word_bits=cfg.word_bits,
                                   scenario=args.scenario)
    paths = fixtures.generate(out, opts)
    print(f"wrote {len(paths)} files to {out} ({opts.num_records} records)")


def cmd_profile_establish(args):
    mapping = _mapping(args)
    ctx = formats.parse_context(_read(args.context), mapping.services)
    cfg = _config(args, [])
    p = establish_profile(ctx, mapping, cfg.bounds, timestamp=args.timestamp)
    _emit(dump_profile(p), args.out)


def cmd_profile_evolve(args):
    p, meta = parse_profile(_read(args.profile))
    for d in formats.parse_deltas(_read(args.deltas), cap=args.cap):
        p = evolve(p, d)
    _emit(dump_profile(p, meta), args.out)


def cmd_profile_usage(args):
    mapping = _mapping(args)
    p, meta = parse_profile(_read(args.profile))
    for u in formats.parse_usage(_read(args.usage)):
        p = incorporate_usage(p, u, mapping)
    _emit(dump_profile(p, meta), args.out)


def cmd_profile_state(args):
    history = [parse_profile(_read(f))[0] for f in args.history]
    print(detect_state(history, args.tol, args.window).value)


def cmd_privatize(args):
    cfg = _config(args, ["seed", "epsilon"])
    p, meta = parse_profile(_read(args.profile))
    priv = dp_engine.privatize_profile(p, cfg.epsilon, None,
                                       substream(cfg.seed, "privatize/0"), cfg.floor)
    _emit(dump_profile(priv, meta), args.out)


def cmd_entropy_monitor(args):
    cfg = _config(args, [])
    p, meta = parse_profile(_read(args.profile))
    weights = [float(cfg.attribute_weights.get(c, 1.0)) for c in sorted(p.weights)]
    dist = em.AttributeDistribution.from_profile(p, weights)
    state = em.privacy_loss(dist, slot=p.slot)
    detail = ""
    action = em.Action.NONE
    if state.h_max > 0:
        policy = em.MonitorPolicy(**{k: v * state.h_max for k, v in cfg.policy.items()})
        action = em.decide(state, policy)
        if action is em.Action.EVAPORATE:
            dist, alpha = em.evaporate(dist, policy.target)
            detail = f"{alpha:.9f}"
        elif action is em.Action.APOPTOSE:
            p, _ = em.apoptose(p, dist, args.k)
            detail = str(args.k)
    _emit(em.MONITOR_LOG_HEADER + "\n" + em.monitor_log_row(state, action, detail) + "\n",
          args.out)
    if args.profile_out and action is em.Action.APOPTOSE:
        Path(args.profile_out).write_text(dump_profile(p, meta), encoding="utf-8")


def cmd_match(args):
    cfg = _config(args, ["ads"])
    p, _ = parse_profile(_read(args.profile))
    catalog = matcher.parse_catalog(_read(args.catalog))
    corpus = matcher.InterestCorpus.parse(_read(args.corpus))
    picked = matcher.select_services(p, catalog, cfg.ads, corpus)
    _emit("rank,index,service_id\n" + "".join(
        f"{k},{i},{catalog[i].service_id}\n" for k, i in enumerate(picked)), args.out)


def cmd_pir_serve(args):
    server = pir_net.serve(args.db, args.bind, args.index)
    print(f"serving {args.db} on {server.endpoint}", flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()


def cmd_pir_fetch(args):
    cfg = _config(args, ["seed", "servers", "t", "word_bits", "depth"])
    if len(args.endpoints) != cfg.servers:
        raise ValueError(f"--servers is {cfg.servers} but {len(args.endpoints)} "
                         "endpoints were given")
    params = pir_core.PirParams(cfg.servers, cfg.t, cfg.word_bits, cfg.depth)
    records, rec = pir_net.client_fetch(args.index, args.endpoints, params,
                                        substream(cfg.seed, "pir"), wait_all=not args.quorum)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for i, data in zip(args.index, records):
            (out / f"record_{i}.bin").write_bytes(data)
    print(f"fetched {len(records)} records: up={rec.up_bytes} B down={rec.down_bytes} B "
          f"total={rec.total_s:.4f}s responders={rec.responders}")


def cmd_pir_bench(args):
    file_values = load_config_file(args.config) if args.config else {}
    sweep = dict(file_values.get("sweep", {}))
    overrides = {"db_sizes": args.db_size, "record_sizes": args.record_size,
                 "servers": args.servers, "privacy_t": args.t, "word_bits": args.word_bits,
                 "depths": args.depth, "ads": args.ads, "repeats": args.repeats,
                 "seed": args.seed, "transport": args.transport}
    sweep.update({k: v for k, v in overrides.items() if v is not None})
    config = pir_net.SweepConfig(**sweep)
    rows = pir_net.bench(config)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", newline="") as fh:
            pir_net.write_csv(rows, fh)
    else:
        pir_net.write_csv(rows, sys.stdout)


def _classify_inputs(args):
    taxonomy = adc.Taxonomy.parse(_read(args.taxonomy))
    imps = adc.read_impressions(_read(args.impressions))
    profiles = {}
    for path in args.profiles:
        p, meta = parse_profile(_read(path))
        profiles[meta.get("profile_id", Path(path).stem)] = p
    contexts = formats.parse_app_contexts(_read(args.contexts))
    return taxonomy, imps, profiles, contexts


def cmd_classify(args):
    cfg = _config(args, ["overlap"])
    taxonomy, imps, profiles, contexts = _classify_inputs(args)
    mapping = adc.map_urls(imps, taxonomy)
    targets = {k: adc.profile_targets(p, taxonomy, cfg.floor) for k, p in profiles.items()}
    result = adc.classify(imps, targets, contexts, mapping, cfg.overlap, args.full_path)
    lines = ["class,count,percent"]
    pct = result.proportions()
    lines += [f"{c},{n},{pct[c]:.2f}" for c, n in result.counts().items()]
    _emit("\n".join(lines) + "\n", args.out)


def cmd_report_dp_effect(args):
    cfg = _config(args, ["seed", "epsilon", "overlap"])
    taxonomy, imps, profiles, contexts = _classify_inputs(args)
    mapping = adc.map_urls(imps, taxonomy)
    privatized = {name: dp_engine.privatize_profile(
                      p, cfg.epsilon, None, substream(cfg.seed, f"privatize/exp/{name}"),
                      cfg.floor)
                  for name, p in sorted(profiles.items())}
    report = adc.dp_effect_report(imps, profiles, privatized, contexts, mapping, taxonomy,
                                  cfg.overlap, cfg.floor)
    _emit(adc.class_report_csv(report), args.out)


def cmd_report_timing(args):
    imps = adc.read_impressions(_read(args.impressions))
    by_exp: dict[str, list] = {}
    for imp in imps:
        by_exp.setdefault(imp.experiment_id, []).append(imp)
    lines = ["experiment_id,metric,network,value_s"]
    for exp_id, group in sorted(by_exp.items()):
        start = args.start if args.start is not None else group[0].arrival
        stats = adc.timing_stats(group, args.duration, start)
        lines += [f"{exp_id},{line}" for line in adc.timing_report_csv(stats).splitlines()[1:]]
    _emit("\n".join(lines) + "\n", args.out)


def cmd_report_frequency(args):
    imps = adc.read_impressions(_read(args.impressions))
    report = adc.frequency_report(imps, args.bin_width, args.lo, args.hi)
    _emit(adc.frequency_report_csv(report), args.out)


def cmd_pipeline(args):
    cfg = _config(args, ["seed", "epsilon", "servers", "t", "word_bits", "depth", "ads",
                         "overlap", "out", "fixtures"])
    paths = run(cfg)
    print(f"pipeline wrote {len(paths)} files to {cfg.out}")


# -- parser -----------------------------------------------------------------------

def _common(p, *names):
    p.add_argument("--config", help="JSON config file (flags override it)")
    spec = {
        "seed": dict(type=int, help="root random seed"),
        "epsilon": dict(type=float, help="privacy budget"),
        "servers": dict(type=int, help="number of PIR servers l"),
        "t": dict(type=int, help="privacy threshold t"),
        "word_bits": dict(type=int, choices=(8, 10, 16, 20), help="field word size w"),
        "depth": dict(type=int, help="recursion depth d"),
        "ads": dict(type=int, help="ads per request q"),
        "db_size": dict(type=_size, help="database size, e.g. 64M"),
        "record_size": dict(type=_size, help="record size, e.g. 16K"),
        "overlap": dict(type=int, help="random-ad window in seconds"),
    }
    for name in names:
        p.add_argument("--" + name.replace("_", "-"), dest=name, **spec[name])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dualring",
                                 description="private profiling and ad retrieval toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-fixtures", help="write a deterministic synthetic fixture set")
    _common(p, "seed", "db_size", "record_size", "word_bits")
    p.add_argument("--scenario", choices=("default", "apoptosis"), default="default")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_gen_fixtures)

    prof = sub.add_parser("profile", help="profile operations").add_subparsers(
        dest="action", required=True)
    p = prof.add_parser("establish")
    _common(p)
    for name in ("context", "services", "catmap", "corpus"):
        p.add_argument("--" + name, required=True)
    p.add_argument("--timestamp", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_profile_establish)
    p = prof.add_parser("evolve")
    p.add_argument("--profile", required=True)
    p.add_argument("--deltas", required=True)
    p.add_argument("--cap", type=float, default=0.1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_profile_evolve)
    p = prof.add_parser("usage")
    for name in ("profile", "usage", "services", "catmap", "corpus"):
        p.add_argument("--" + name, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_profile_usage)
    p = prof.add_parser("state")
    p.add_argument("history", nargs="+", help="profile files, oldest first")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--window", type=int, default=3)
    p.set_defaults(func=cmd_profile_state)

    p = sub.add_parser("privatize", help="Laplace-perturb a profile")
    _common(p, "seed", "epsilon")
    p.add_argument("--profile", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_privatize)

    ent = sub.add_parser("entropy", help="entropy monitor").add_subparsers(
        dest="action", required=True)
    p = ent.add_parser("monitor")
    _common(p)
    p.add_argument("--profile", required=True)
    p.add_argument("--k", type=int, default=1, help="attributes to destroy on apoptosis")
    p.add_argument("--profile-out", help="write the profile left after apoptosis")
    p.add_argument("--out")
    p.set_defaults(func=cmd_entropy_monitor)

    p = sub.add_parser("match", help="select services for a profile")
    _common(p, "ads")
    for name in ("profile", "catalog", "corpus"):
        p.add_argument("--" + name, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_match)

    pir = sub.add_parser("pir", help="PIR server, client and benchmark").add_subparsers(
        dest="action", required=True)
    p = pir.add_parser("serve")
    p.add_argument("--db", required=True)
    p.add_argument("--bind", default="127.0.0.1:0")
    p.add_argument("--index", type=int, default=0, help="this server's index")
    p.set_defaults(func=cmd_pir_serve)
    p = pir.add_parser("fetch")
    _common(p, "seed", "servers", "t", "word_bits", "depth")
    p.add_argument("--endpoints", nargs="+", required=True)
    p.add_argument("--index", type=int, nargs="+", required=True)
    p.add_argument("--quorum", action="store_true", help="decode once a quorum replied")
    p.add_argument("--out", help="directory for fetched records")
    p.set_defaults(func=cmd_pir_fetch)
    p = pir.add_parser("bench")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--db-size", dest="db_size", type=_size, nargs="+")
    p.add_argument("--record-size", dest="record_size", type=_size, nargs="+")
    p.add_argument("--servers", type=int, nargs="+")
    p.add_argument("--t", type=int)
    p.add_argument("--word-bits", dest="word_bits", type=int, choices=(8, 10, 16, 20))
    p.add_argument("--depth", type=int, nargs="+")
    p.add_argument("--ads", type=int, nargs="+")
    p.add_argument("--repeats", type=int)
    p.add_argument("--transport", choices=("inproc", "tcp"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_pir_bench)

    p = sub.add_parser("classify", help="partition ad impressions")
    _common(p, "overlap")
    for name in ("impressions", "taxonomy", "contexts"):
        p.add_argument("--" + name, required=True)
    p.add_argument("--profiles", nargs="+", required=True)
    p.add_argument("--full-path", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_classify)

    rep = sub.add_parser("report", help="reports over impression logs").add_subparsers(
        dest="action", required=True)
    p = rep.add_parser("dp-effect")
    _common(p, "seed", "epsilon", "overlap")
    for name in ("impressions", "taxonomy", "contexts"):
        p.add_argument("--" + name, required=True)
    p.add_argument("--profiles", nargs="+", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report_dp_effect)
    p = rep.add_parser("timing")
    p.add_argument("--impressions", required=True)
    p.add_argument("--duration", type=int, required=True)
    p.add_argument("--start", type=int, help="experiment start (default: first arrival)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report_timing)
    p = rep.add_parser("frequency")
    p.add_argument("--impressions", required=True)
    p.add_argument("--bin-width", dest="bin_width", type=int, default=100)
    p.add_argument("--lo", type=int, default=1)
    p.add_argument("--hi", type=int, default=3100)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report_frequency)

    p = sub.add_parser("pipeline", help="run every stage over a fixture directory")
    _common(p, "seed", "epsilon", "servers", "t", "word_bits", "depth", "ads", "overlap")
    p.add_argument("--fixtures")
    p.add_argument("--out")
    p.set_defaults(func=cmd_pipeline)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except DualRingError as exc:
        stage = getattr(exc, "stage", None)
        prefix = f"stage {stage}: " if stage else ""
        print(f"error: {prefix}{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, EOFError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
