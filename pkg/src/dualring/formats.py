"""Small line-oriented text formats used by the fixtures and the CLI.

Each file starts with a ``MAGIC 1`` header line followed by tab-separated
records; blank lines are ignored.
"""
from __future__ import annotations

from collections import defaultdict
from typing import Iterable, Mapping

from .ad_classifier import CategoryNode
from .errors import FormatError
from .profile_core import ContextProfile, ProfileDelta, Service, UsageRecord


def _records(text: str, magic: str, fields: int) -> list[list[str]]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != f"{magic} 1":
        raise FormatError(f"file must start with '{magic} 1'")
    out = []
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != fields:
            raise FormatError(f"{magic} line {n}: expected {fields} tab-separated fields")
        out.append(parts)
    return out


def _dump(magic: str, rows: Iterable[Iterable[object]]) -> str:
    lines = [f"{magic} 1"] + ["\t".join(str(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def parse_service_id(text: str) -> tuple:
    try:
        i, j = text.split(",")
        return int(i), int(j)
    except ValueError:
        raise FormatError(f"service id must be 'i,j', got {text!r}") from None


def format_service_id(sid) -> str:
    return f"{sid[0]},{sid[1]}"


# services: id<TAB>category<TAB>keywords

def parse_services(text: str) -> dict[tuple, Service]:
    out = {}
    for sid, cat, kws in _records(text, "DRSERVICES", 3):
        service = Service(parse_service_id(sid), cat, frozenset(kws.split()))
        out[service.service_id] = service
    return out


def dump_services(services: Iterable[Service]) -> str:
    return _dump("DRSERVICES", ((format_service_id(s.service_id), s.category,
                                 " ".join(sorted(s.keywords)))
                                for s in sorted(services, key=lambda s: s.service_id)))


# category map: service-category<TAB>interest

def parse_catmap(text: str) -> dict[str, str]:
    return {cat: interest for cat, interest in _records(text, "DRCATMAP", 2)}


def dump_catmap(table: Mapping[str, str]) -> str:
    return _dump("DRCATMAP", sorted(table.items()))


# context: one service id per line

def parse_context(text: str, services: Mapping[tuple, Service]) -> ContextProfile:
    picked = []
    for (sid,) in _records(text, "DRCONTEXT", 1):
        key = parse_service_id(sid)
        if key not in services:
            raise FormatError(f"context names unknown service {sid}")
        picked.append(services[key])
    return ContextProfile(tuple(picked), marketplace_size=len(services))


def dump_context(service_ids: Iterable[tuple]) -> str:
    return _dump("DRCONTEXT", ((format_service_id(s),) for s in service_ids))


# deltas: slot<TAB>kind<TAB>id<TAB>change, kind in cat/brw/int

_DELTA_FIELD = {"cat": "category_changes", "brw": "browsing_changes",
                "int": "interaction_changes"}


def parse_deltas(text: str, cap: float = 0.1) -> list[ProfileDelta]:
    slots: dict[int, dict[str, dict[str, float]]] = defaultdict(
        lambda: {k: {} for k in _DELTA_FIELD})
    for slot, kind, key, change in _records(text, "DRDELTAS", 4):
        if kind not in _DELTA_FIELD:
            raise FormatError(f"unknown delta kind {kind!r}")
        try:
            slots[int(slot)][kind][key] = float(change)
        except ValueError:
            raise FormatError(f"bad delta line for {key!r}") from None
    return [ProfileDelta(**{_DELTA_FIELD[k]: v for k, v in maps.items()}, slot=slot, cap=cap)
            for slot, maps in sorted(slots.items())]


def dump_deltas(deltas: Iterable[ProfileDelta]) -> str:
    rows = []
    for d in deltas:
        for kind, attr in sorted(_DELTA_FIELD.items()):
            for key, c in sorted(getattr(d, attr).items()):
                rows.append((d.slot, kind, key, repr(c)))
    return _dump("DRDELTAS", rows)


# usage: slot<TAB>service-id<TAB>fraction

def parse_usage(text: str) -> list[UsageRecord]:
    slots: dict[int, dict[tuple, float]] = defaultdict(dict)
    for slot, sid, frac in _records(text, "DRUSAGE", 3):
        slots[int(slot)][parse_service_id(sid)] = float(frac)
    return [UsageRecord(usage, slot) for slot, usage in sorted(slots.items())]


def dump_usage(records: Iterable[UsageRecord]) -> str:
    return _dump("DRUSAGE", ((u.slot, format_service_id(sid), repr(f))
                             for u in records for sid, f in sorted(u.per_service_usage.items())))


# app contexts: app-category<TAB>node;node

def parse_app_contexts(text: str) -> dict[str, list[CategoryNode]]:
    return {app: [CategoryNode.parse(n) for n in nodes.split(";") if n]
            for app, nodes in _records(text, "DRAPPCTX", 2)}


def dump_app_contexts(table: Mapping[str, Iterable[CategoryNode]]) -> str:
    return _dump("DRAPPCTX", ((app, ";".join(str(n) for n in nodes))
                              for app, nodes in sorted(table.items())))
