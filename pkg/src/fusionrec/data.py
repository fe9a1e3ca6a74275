"""Interaction ingestion, filtering, sequence building, splits, and sampling.

File formats (UTF-8, one record per line, tab separated):

* interactions: ``user_id<TAB>item_id<TAB>timestamp<TAB>rating``
* catalog:      ``item_id<TAB>title<TAB>description``

Item and user ids are opaque strings. Duplicate (user, item, timestamp)
records are kept: re-interactions are legitimate events.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

__all__ = [
    "Event",
    "InteractionLog",
    "UserSequence",
    "SplitDataset",
    "TrainingInstance",
    "ColdWarmPartition",
    "load_interactions",
    "load_catalog",
    "filter_dataset",
    "build_sequences",
    "leave_one_out_split",
    "sample_negative",
    "build_training_instances",
    "partition_cold_warm",
]


@dataclass(frozen=True)
class Event:
    user: str
    item: str
    timestamp: int
    rating: float


@dataclass
class InteractionLog:
    users: set[str]
    items: set[str]
    events: list[Event]
    catalog: dict[str, tuple[str, str]]  # item id -> (title, description)

    def item_frequency(self) -> Counter:
        return Counter(ev.item for ev in self.events)

    def user_frequency(self) -> Counter:
        return Counter(ev.user for ev in self.events)


@dataclass
class UserSequence:
    user: str
    items: list[str]


@dataclass
class SplitDataset:
    train: dict[str, list[str]]
    validation: dict[str, str]
    test: dict[str, str]

    def full_sequence(self, user: str) -> list[str]:
        return self.train[user] + [self.validation[user], self.test[user]]

    def users(self) -> list[str]:
        return sorted(self.train)

    def item_universe(self) -> set[str]:
        items: set[str] = set()
        for user in self.train:
            items.update(self.train[user])
            items.add(self.validation[user])
            items.add(self.test[user])
        return items


@dataclass(frozen=True)
class TrainingInstance:
    user: str
    history: tuple[str, ...]
    candidate: str
    label: int


@dataclass
class ColdWarmPartition:
    cold: set[str]
    warm: set[str]
    frequency: dict[str, int] = field(repr=False, default_factory=dict)


def load_catalog(path) -> dict[str, tuple[str, str]]:
    """Parse a catalog file into {item_id: (title, description)}."""
    catalog: dict[str, tuple[str, str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t", 2)
            if len(parts) < 2:
                raise DataError(f"catalog line {lineno}: expected item_id, title[, description]")
            item = parts[0]
            title = parts[1]
            description = parts[2] if len(parts) == 3 else ""
            catalog[item] = (title, description)
    return catalog


def load_interactions(path, catalog_path) -> InteractionLog:
    """Load interaction events plus the item catalog.

    Every event's item must have a catalog entry; a reference to an
    uncataloged item is a data error (not silently dropped).
    """
    catalog = load_catalog(catalog_path)
    events: list[Event] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(
                    f"interactions line {lineno}: expected 4 tab-separated fields, got {len(parts)}"
                )
            user, item, ts_raw, rating_raw = (p.strip() for p in parts)
            try:
                timestamp = int(ts_raw)
                rating = float(rating_raw)
            except ValueError as exc:
                raise DataError(f"interactions line {lineno}: {exc}") from exc
            if item not in catalog:
                raise DataError(
                    f"interactions line {lineno}: item {item!r} has no catalog entry"
                )
            events.append(Event(user, item, timestamp, rating))
    users = {ev.user for ev in events}
    items = {ev.item for ev in events}
    return InteractionLog(users=users, items=items, events=events, catalog=catalog)


def filter_dataset(
    log: InteractionLog, min_user_events: int = 5, min_item_popularity: int = 5
) -> InteractionLog:
    """Drop unpopular items and sparse users until a fixed point is reached.

    Removing a user lowers item popularity and vice versa, so the two rules
    are iterated until nothing changes; the result is order-independent.
    """
    if min_user_events < 1 or min_item_popularity < 1:
        raise ValueError("thresholds must be >= 1")
    events = list(log.events)
    while True:
        item_counts = Counter(ev.item for ev in events)
        kept = [ev for ev in events if item_counts[ev.item] >= min_item_popularity]
        user_counts = Counter(ev.user for ev in kept)
        kept = [ev for ev in kept if user_counts[ev.user] >= min_user_events]
        if len(kept) == len(events):
            break
        events = kept
    if not events:
        raise DataError("filtering removed every event")
    users = {ev.user for ev in events}
    items = {ev.item for ev in events}
    return InteractionLog(users=users, items=items, events=events, catalog=dict(log.catalog))


def build_sequences(log: InteractionLog) -> dict[str, UserSequence]:
    """Order each user's events by (timestamp, item id) into a sequence."""
    per_user: dict[str, list[Event]] = {}
    for ev in log.events:
        per_user.setdefault(ev.user, []).append(ev)
    sequences: dict[str, UserSequence] = {}
    for user, evs in per_user.items():
        evs.sort(key=lambda e: (e.timestamp, e.item))
        sequences[user] = UserSequence(user=user, items=[e.item for e in evs])
    return sequences


def leave_one_out_split(sequences: dict[str, UserSequence]) -> SplitDataset:
    """Last interaction to test, second-to-last to validation, rest to train."""
    train: dict[str, list[str]] = {}
    validation: dict[str, str] = {}
    test: dict[str, str] = {}
    for user in sorted(sequences):
        items = sequences[user].items
        if len(items) < 3:
            raise DataError(f"user {user!r} has {len(items)} interactions, need >= 3 to split")
        train[user] = list(items[:-2])
        validation[user] = items[-2]
        test[user] = items[-1]
    return SplitDataset(train=train, validation=validation, test=test)


def sample_negative(
    user: str, sequences: dict[str, UserSequence], rng: np.random.Generator
) -> str:
    """Draw one item uniformly from the universe minus the user's sequence."""
    universe: set[str] = set()
    for seq in sequences.values():
        universe.update(seq.items)
    seen = set(sequences[user].items)
    eligible = sorted(universe - seen)
    if not eligible:
        raise DataError(f"user {user!r} interacted with every item; no negative exists")
    return eligible[int(rng.integers(len(eligible)))]


def build_training_instances(
    split: SplitDataset, negatives_per_positive: int = 1, rng: np.random.Generator | None = None
) -> list[TrainingInstance]:
    """Expand train prefixes into (history, candidate, label) instances.

    For every prefix position k in a user's train region this emits one
    positive (candidate = next train item) and ``negatives_per_positive``
    negatives drawn from outside the user's full sequence.
    """
    if negatives_per_positive < 1:
        raise ValueError("negatives_per_positive must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    universe = sorted(split.item_universe())
    instances: list[TrainingInstance] = []
    for user in split.users():
        prefix = split.train[user]
        full = set(split.full_sequence(user))
        eligible = [q for q in universe if q not in full]
        for k in range(1, len(prefix)):
            history = tuple(prefix[:k])
            instances.append(
                TrainingInstance(user=user, history=history, candidate=prefix[k], label=1)
            )
            if not eligible:
                raise DataError(f"user {user!r} interacted with every item; no negative exists")
            for _ in range(negatives_per_positive):
                neg = eligible[int(rng.integers(len(eligible)))]
                instances.append(
                    TrainingInstance(user=user, history=history, candidate=neg, label=0)
                )
    return instances


def partition_cold_warm(log: InteractionLog, fraction: float = 0.35) -> ColdWarmPartition:
    """Split items into top/bottom frequency bands of floor(fraction*|items|) each."""
    if not 0.0 < fraction <= 0.5:
        raise ValueError("fraction must be in (0, 0.5]")
    freq = log.item_frequency()
    items = sorted(log.items, key=lambda q: (-freq[q], q))
    if len(items) < 2:
        raise DataError("need at least 2 distinct items to partition")
    n_band = math.floor(fraction * len(items))
    warm = set(items[:n_band])
    cold = set(items[len(items) - n_band:]) if n_band else set()
    return ColdWarmPartition(cold=cold, warm=warm, frequency={q: freq[q] for q in items})
