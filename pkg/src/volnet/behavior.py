"""Key-user behavior over time: the donors-ratio series and the hub rule.

The donors ratio of a user in a window is listings / (listings + pickups),
1.0 for a pure donor and 0.0 for a pure recipient.  Series are sampled on
fixed windows from the user's first transaction; windows without activity
are filled by linear interpolation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Iterable

from .graph import TransactionGraph
from .ingest import KeyUserSet, TransactionLog

INTERVAL_DAYS = {"weekly": 7, "monthly": 30}


class SeriesError(ValueError):
    """A DR series cannot be materialized (too few defined points)."""


@dataclass(frozen=True)
class HubRuleParams:
    """Threshold config: hub iff distinct degree > multiplier * average."""

    multiplier: float = 1.0

    def __post_init__(self):
        if self.multiplier < 1.0:
            raise ValueError("multiplier must be >= 1")


@dataclass(frozen=True)
class DRSeries:
    """Per-user donors-ratio samples at fixed intervals from ``t0``."""

    user: str
    interval: str  # "weekly" | "monthly"
    t0: datetime
    values: tuple[float, ...]
    imputed_mask: tuple[bool, ...]

    def __post_init__(self):
        if len(self.values) != len(self.imputed_mask):
            raise ValueError("values and imputed_mask lengths differ")
        for v in self.values:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"DR value {v} outside [0, 1]")

    def __len__(self) -> int:
        return len(self.values)


def donors_ratio(u: str, t1: datetime, t2: datetime, log: TransactionLog) -> float | None:
    """DR of ``u`` over transactions with ``collected_at`` in [t1, t2);
    None when the user has no transactions in the window."""
    if not t1 < t2:
        raise ValueError("window start must precede window end")
    listings = 0
    pickups = 0
    for t in log.transactions:
        if not t1 <= t.collected_at < t2:
            continue
        if t.lister_id == u:
            listings += 1
        elif t.collector_id == u:
            pickups += 1
    if listings + pickups == 0:
        return None
    return listings / (listings + pickups)


def _interpolate(raw: list[float | None]) -> tuple[list[float], list[bool]]:
    """Fill gaps linearly between defined neighbors; boundary gaps copy the
    nearest defined value."""
    defined = [i for i, v in enumerate(raw) if v is not None]
    if len(defined) < 2:
        raise SeriesError(f"only {len(defined)} defined point(s); need >= 2 to impute")
    values: list[float] = []
    mask: list[bool] = []
    first, last = defined[0], defined[-1]
    nxt = 0
    for i, v in enumerate(raw):
        if v is not None:
            values.append(v)
            mask.append(False)
            continue
        mask.append(True)
        if i < first:
            values.append(raw[first])
        elif i > last:
            values.append(raw[last])
        else:
            while defined[nxt] < i:
                nxt += 1
            lo, hi = defined[nxt - 1], defined[nxt]
            frac = (i - lo) / (hi - lo)
            values.append(raw[lo] + frac * (raw[hi] - raw[lo]))
    return values, mask


def dr_series(
    u: str,
    log: TransactionLog,
    interval: str = "weekly",
    horizon: timedelta = timedelta(days=365),
) -> DRSeries:
    """Sample the DR of ``u`` on windows tiling [t0, t0 + horizon).

    ``t0`` is the user's first transaction.  Weekly windows are 7 days and
    monthly windows 30 days; the series holds ``horizon // window`` points
    (52 weekly or 12 monthly over a year).  Windows with no transactions
    are imputed and flagged in ``imputed_mask``.
    """
    if interval not in INTERVAL_DAYS:
        raise ValueError(f"unknown interval {interval!r}")
    step = timedelta(days=INTERVAL_DAYS[interval])
    n_points = int(horizon / step)
    if n_points < 1:
        raise ValueError("horizon shorter than one interval")

    t0: datetime | None = None
    for t in log.transactions:
        if u in (t.lister_id, t.collector_id):
            t0 = t.collected_at
            break
    if t0 is None:
        raise SeriesError(f"user {u!r} has no transactions")

    listings = [0] * n_points
    pickups = [0] * n_points
    end = t0 + n_points * step
    for t in log.transactions:
        if not t0 <= t.collected_at < end:
            continue
        idx = int((t.collected_at - t0) / step)
        if t.lister_id == u:
            listings[idx] += 1
        elif t.collector_id == u:
            pickups[idx] += 1
    raw: list[float | None] = [
        (l / (l + p)) if l + p > 0 else None for l, p in zip(listings, pickups)
    ]
    values, mask = _interpolate(raw)
    return DRSeries(user=u, interval=interval, t0=t0,
                    values=tuple(values), imputed_mask=tuple(mask))


def detect_hubs(g: TransactionGraph, params: HubRuleParams = HubRuleParams()) -> KeyUserSet:
    """Users whose distinct total degree exceeds ``multiplier`` times the
    network average.  Degree counts distinct in- plus out-neighbors, so the
    result is invariant under edge-weight scaling."""
    if not g.nodes:
        raise ValueError("hub detection needs a non-empty graph")
    degree = {v: len(g.in_adj[v]) + len(g.out_adj[v]) for v in g.nodes}
    avg = sum(degree.values()) / len(degree)
    hubs = frozenset(v for v, d in degree.items() if d > params.multiplier * avg)
    return KeyUserSet(ids=hubs, origin="hub_rule")


def write_series_csv(series: Iterable[DRSeries], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "index", "value", "imputed"])
        for s in sorted(series, key=lambda s: s.user):
            for i, (v, imp) in enumerate(zip(s.values, s.imputed_mask)):
                writer.writerow([s.user, i, f"{v:.6f}", int(imp)])
