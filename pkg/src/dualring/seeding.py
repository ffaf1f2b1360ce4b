"""Labeled random substreams derived from one root seed."""
from __future__ import annotations

import hashlib

import numpy as np


def label_key(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode()).digest()[:8], "big")


def substream(seed: int, label: str) -> np.random.Generator:
    """A generator that depends only on ``(seed, label)``.

    Stages draw from their own labels, so any stage can be re-run in
    isolation and still see the same numbers.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), label_key(label)]))
