"""Seeded synthetic volunteer-network generator with planted structure.

Stands in for a real sharing-platform export: "hero" users with known
trend archetypes and home communities, regular counterparties, weekly
listing/pickup traffic whose realized donors ratio tracks a per-archetype
template, and activity events whose rates are tied to the stable/changes
outcome so that chosen raw features become predictive by construction.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Mapping

import numpy as np

from .ingest import (
    ActivityEvent,
    EventLog,
    Transaction,
    TransactionLog,
    write_events,
    write_transactions,
)
from .tscluster import ARCHETYPES

#: Start/end levels of each archetype's donors-ratio template; the trend
#: breakpoint sits at week 12 (about three months in).
TEMPLATE_LEVELS = {
    "FPD": (0.90, 0.20),
    "SAD": (0.85, 0.85),
    "FAD": (0.15, 0.80),
    "SPD": (0.15, 0.15),
}
BREAK_WEEK = 12

#: Archetypes whose donors ratio drifts across the horizon ("changes").
CHANGING = ("FPD", "FAD")

#: Baseline mean event counts per user over the event window, by raw feature.
_EVENT_BASE_RATES = {
    "articles_count": 5.0,
    "messages_count": 20.0,
    "rating_count": 4.0,
    "likes_count": 10.0,
    "stories_count": 2.0,
    "comments_count": 8.0,
}
_FEATURE_TO_KIND = {
    "articles_count": "article",
    "messages_count": "message",
    "rating_count": "rating",
    "likes_count": "like",
    "stories_count": "story",
    "comments_count": "comment",
}

_EPOCH = datetime(2021, 1, 1, tzinfo=timezone.utc)
_EVENT_WINDOW_DAYS = 84  # all events land well inside a 3-month cutoff
_CLOSING_DAY = 372  # guarantees every hero spans >= 365 days of activity


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for one synthetic dataset; fully determined by ``seed``."""

    n_heroes: int = 200
    archetype_mix: Mapping[str, float] = field(
        default_factory=lambda: {a: 0.25 for a in ARCHETYPES})
    n_regulars_per_hero: int = 8
    weeks: int = 52
    community_count: int = 4
    noise_sd: float = 0.05
    feature_signal: Mapping[str, float] = field(
        default_factory=lambda: {"messages_count": -1.2})
    seed: int = 0

    def __post_init__(self):
        if self.n_heroes < 1:
            raise ValueError("n_heroes must be >= 1")
        if self.weeks < 8:
            raise ValueError("weeks must be >= 8")
        if self.community_count < 1:
            raise ValueError("community_count must be >= 1")
        if self.n_regulars_per_hero < 1:
            raise ValueError("n_regulars_per_hero must be >= 1")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        unknown = set(self.archetype_mix) - set(ARCHETYPES)
        if unknown:
            raise ValueError(f"unknown archetype(s) in mix: {sorted(unknown)}")
        total = sum(self.archetype_mix.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"archetype mix sums to {total}, expected 1")
        if any(p < 0 for p in self.archetype_mix.values()):
            raise ValueError("archetype proportions must be non-negative")
        bad = set(self.feature_signal) - set(_EVENT_BASE_RATES) - {"rating_current"}
        if bad:
            raise ValueError(f"feature_signal refers to unknown raw feature(s): {sorted(bad)}")


@dataclass(frozen=True)
class PlantedTruth:
    """Ground truth for one hero."""

    archetype: str
    community: int


def _allocate_counts(config: SynthConfig) -> dict[str, int]:
    """Largest-remainder apportionment of heroes over archetypes."""
    quotas = {a: config.archetype_mix.get(a, 0.0) * config.n_heroes for a in ARCHETYPES}
    counts = {a: int(math.floor(q)) for a, q in quotas.items()}
    leftover = config.n_heroes - sum(counts.values())
    by_remainder = sorted(
        ARCHETYPES, key=lambda a: (-(quotas[a] - counts[a]), ARCHETYPES.index(a)))
    for a in by_remainder[:leftover]:
        counts[a] += 1
    infeasible = [a for a in ARCHETYPES
                  if config.archetype_mix.get(a, 0.0) > 0 and counts[a] == 0]
    if infeasible:
        raise ValueError(
            f"infeasible mix: nonzero proportion but zero heroes for {infeasible} "
            f"(n_heroes={config.n_heroes})")
    return counts


def template_dr(archetype: str, week: int, weeks: int) -> float:
    """Noise-free donors-ratio template value for one week."""
    start, end = TEMPLATE_LEVELS[archetype]
    if week < BREAK_WEEK or weeks - 1 <= BREAK_WEEK:
        return start
    frac = (week - BREAK_WEEK) / (weeks - 1 - BREAK_WEEK)
    return start + (end - start) * frac


def generate(config: SynthConfig) -> tuple[TransactionLog, EventLog, dict[str, PlantedTruth]]:
    """Build one synthetic dataset.

    Heroes get archetypes by largest-remainder apportionment and home
    communities round-robin; each hero contributes ``n_regulars_per_hero``
    regulars to the home community's shared pool. Week by week a hero
    makes 6-12 transactions whose listing share follows the archetype
    template plus clipped Gaussian jitter; 90% of counterparties are drawn
    from the home community's pool, the rest from other communities.
    A closing transaction at day ~372 keeps every hero's activity span
    above one year. Event counts are Poisson with rates scaled by
    ``exp(signal * is_changing)`` so configured raw features separate the
    stable and changing heroes. Deterministic per seed.
    """
    counts = _allocate_counts(config)
    rng = np.random.default_rng(config.seed)

    archetype_of: list[str] = []
    for a in ARCHETYPES:
        archetype_of.extend([a] * counts[a])

    heroes = [f"hero{idx:04d}" for idx in range(config.n_heroes)]
    community_of = {h: idx % config.community_count for idx, h in enumerate(heroes)}
    truth = {h: PlantedTruth(archetype=archetype_of[idx], community=community_of[h])
             for idx, h in enumerate(heroes)}

    regulars_of: dict[str, list[str]] = {}
    community_pool: dict[int, list[str]] = {c: [] for c in range(config.community_count)}
    for idx, h in enumerate(heroes):
        pool = [f"reg{idx:04d}x{j}" for j in range(config.n_regulars_per_hero)]
        regulars_of[h] = pool
        community_pool[community_of[h]].extend(pool)

    transactions: list[Transaction] = []
    hero_t0: dict[str, datetime] = {}
    serial = 0

    def pick_partner(hero: str) -> str:
        home = community_of[hero]
        others = [c for c in range(config.community_count) if c != home]
        if others and rng.random() >= 0.9:
            away = int(others[int(rng.integers(len(others)))])
            pool = community_pool[away]
        else:
            pool = community_pool[home]
        return pool[int(rng.integers(len(pool)))]

    for idx, hero in enumerate(heroes):
        t0 = _EPOCH + timedelta(days=int(rng.integers(0, 29)))
        hero_t0[hero] = t0
        archetype = archetype_of[idx]
        for week in range(config.weeks):
            dr = template_dr(archetype, week, config.weeks)
            if config.noise_sd > 0:
                dr = float(np.clip(dr + rng.normal(0.0, config.noise_sd), 0.0, 1.0))
            n_trans = int(rng.integers(6, 13))
            n_listings = int(np.clip(round(dr * n_trans), 0, n_trans))
            week_start = t0 + timedelta(days=7 * week)
            step = timedelta(days=7) / n_trans
            for j in range(n_trans):
                # whole seconds: the canonical file format is second-precision
                collected = (week_start + step * j).replace(microsecond=0)
                listed = collected - timedelta(hours=2)
                partner = pick_partner(hero)
                serial += 1
                if j < n_listings:
                    lister, collector = hero, partner
                else:
                    lister, collector = partner, hero
                transactions.append(Transaction(
                    item_id=f"it{serial:07d}", lister_id=lister, collector_id=collector,
                    listed_at=listed, collected_at=collected))
        closing = t0 + timedelta(days=_CLOSING_DAY)
        serial += 1
        transactions.append(Transaction(
            item_id=f"it{serial:07d}", lister_id=hero,
            collector_id=regulars_of[hero][0],
            listed_at=closing - timedelta(hours=2), collected_at=closing))

    events: list[ActivityEvent] = []
    for idx, hero in enumerate(heroes):
        changing = 1.0 if archetype_of[idx] in CHANGING else 0.0
        t0 = hero_t0[hero]
        for feature, base in _EVENT_BASE_RATES.items():
            rate = base * math.exp(config.feature_signal.get(feature, 0.0) * changing)
            n_events = int(rng.poisson(rate))
            kind = _FEATURE_TO_KIND[feature]
            for _ in range(n_events):
                at = t0 + timedelta(
                    seconds=int(rng.uniform(0, _EVENT_WINDOW_DAYS * 86400)))
                value = None
                if kind == "rating":
                    mean = 8.0 + config.feature_signal.get("rating_current", 0.0) * changing
                    value = float(np.clip(rng.normal(mean, 1.0), 0.0, 10.0))
                events.append(ActivityEvent(user_id=hero, kind=kind, at=at, value=value))

    return (TransactionLog.from_transactions(transactions),
            EventLog.from_events(events),
            truth)


def adjusted_rand_index(a: Mapping[str, object], b: Mapping[str, object]) -> float:
    """Chance-adjusted agreement of two labelings of the same element set.

    1.0 for identical partitions (up to label renaming), about 0 for
    independent ones, negative for worse-than-chance. Degenerate pairs
    whose expected index equals the maximum (both trivial partitions)
    return 1.0.
    """
    if set(a) != set(b):
        raise ValueError("labelings cover different element sets")
    n = len(a)
    if n == 0:
        raise ValueError("empty labelings")
    pair: dict[tuple[object, object], int] = {}
    rows: dict[object, int] = {}
    cols: dict[object, int] = {}
    for element, la in a.items():
        lb = b[element]
        pair[(la, lb)] = pair.get((la, lb), 0) + 1
        rows[la] = rows.get(la, 0) + 1
        cols[lb] = cols.get(lb, 0) + 1

    def comb2(x: int) -> float:
        return x * (x - 1) / 2.0

    index = sum(comb2(v) for v in pair.values())
    sum_rows = sum(comb2(v) for v in rows.values())
    sum_cols = sum(comb2(v) for v in cols.values())
    expected = sum_rows * sum_cols / comb2(n) if n > 1 else 0.0
    max_index = (sum_rows + sum_cols) / 2.0
    if max_index == expected:
        return 1.0
    return (index - expected) / (max_index - expected)


def write_truth_csv(truth: Mapping[str, PlantedTruth], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "archetype", "community"])
        for user in sorted(truth):
            writer.writerow([user, truth[user].archetype, truth[user].community])


def write_dataset(out_dir: str, log: TransactionLog, events: EventLog,
                  truth: Mapping[str, PlantedTruth], fmt: str = "csv") -> dict[str, str]:
    """Write transactions/events/truth under ``out_dir``; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    ext = "csv" if fmt == "csv" else "jsonl"
    paths = {
        "transactions": os.path.join(out_dir, f"transactions.{ext}"),
        "events": os.path.join(out_dir, f"events.{ext}"),
        "truth": os.path.join(out_dir, "truth.csv"),
    }
    write_transactions(log, paths["transactions"], fmt=fmt)
    write_events(events, paths["events"], fmt=fmt)
    write_truth_csv(truth, paths["truth"])
    return paths
