"""Event-log ingestion, time bucketing, and periodicity mean shifts.

The on-disk format is delimited text with one event per line: timestamp
(seconds since epoch), source node id, destination node id; extra columns are
ignored and a single header line is tolerated.  Events stream through three
stages:

* :func:`ingest` parses lines into :class:`EventRecord`, counting and
  skipping malformed ones;
* :func:`build_node_table` fixes the node universe (by default: ids with at
  least one outgoing event);
* :func:`bucketize` groups events into fixed-width, midnight-aligned time
  buckets with presence/absence semantics (a dyad is active or not within a
  bucket, event counts are kept only as diagnostics).

:func:`periodicity_shifts` then turns per-bucket densities into additive
logit-scale mean shifts per (time-of-day slot, day-of-week) class.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "IngestError",
    "EventRecord",
    "IngestStats",
    "BucketStats",
    "NodeTable",
    "PeriodSnapshot",
    "PeriodicityTable",
    "ingest",
    "build_node_table",
    "bucketize",
    "periodicity_shifts",
    "day_of_week",
]

SECONDS_PER_DAY = 86400.0


class IngestError(ValueError):
    """Raised for unreadable sources, bad widths, or mostly-garbage files."""


@dataclass(frozen=True)
class EventRecord:
    timestamp: float
    source: str
    destination: str


@dataclass
class IngestStats:
    """Counters filled by :func:`ingest` as the stream is consumed."""

    n_records: int = 0
    n_malformed: int = 0
    n_self_loops: int = 0
    header_skipped: bool = False


@dataclass
class BucketStats:
    n_events: int = 0
    n_out_of_order: int = 0
    n_unknown_nodes: int = 0
    n_periods: int = 0
    dropped_leading: bool = False
    dropped_trailing: bool = False


class NodeTable:
    """Interns string node ids to dense integers in first-seen order."""

    def __init__(self, names=()):
        self._index = {}
        self.names = []
        for name in names:
            self.intern(name)

    def __len__(self):
        return len(self.names)

    def __contains__(self, name):
        return name in self._index

    def intern(self, name: str) -> int:
        idx = self._index.get(name)
        if idx is None:
            idx = len(self.names)
            self._index[name] = idx
            self.names.append(name)
        return idx

    def get(self, name: str):
        return self._index.get(name)

    def name(self, idx: int) -> str:
        return self.names[idx]


def day_of_week(timestamp: float) -> int:
    """Day-of-week of an epoch timestamp, 0 = Sunday ... 6 = Saturday."""
    return int(timestamp // SECONDS_PER_DAY + 4) % 7


@dataclass(frozen=True)
class PeriodSnapshot:
    """One time bucket: the deduplicated active edge set plus bookkeeping.

    ``edges`` is an (m, 2) int64 array of (sender, receiver) pairs, unique
    and lexicographically sorted.  ``n_events`` retains the raw event count
    for diagnostics only.
    """

    period_index: int
    bucket_start: float
    bucket_end: float
    edges: np.ndarray
    tod_slot: int
    dow: int
    n_events: int = 0

    @property
    def periodicity_class(self):
        return (self.tod_slot, self.dow)


def _open_lines(source):
    if isinstance(source, (str, Path)):
        try:
            return open(source, "r", encoding="utf-8"), True
        except OSError as exc:
            raise IngestError(f"cannot read event source {source!r}: {exc}") from exc
    return iter(source), False


def ingest(source, *, allow_self_loops=False, stats=None):
    """Yield :class:`EventRecord` from a path or an iterable of lines.

    Malformed lines (too few fields, unparseable time, empty ids) are
    counted in ``stats`` and skipped; blank lines and ``#`` comments are
    ignored.  A first line whose time field does not parse is treated as a
    header.  If, once the stream is exhausted, more than half of the data
    lines were malformed, an :class:`IngestError` is raised.
    """
    if stats is None:
        stats = IngestStats()
    lines, close_me = _open_lines(source)
    first = True
    try:
        for raw in lines:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",") if "," in line else line.split()
            if first:
                first = False
                try:
                    float(parts[0])
                except (ValueError, IndexError):
                    stats.header_skipped = True
                    continue
            if len(parts) < 3:
                stats.n_malformed += 1
                continue
            try:
                ts = float(parts[0])
            except ValueError:
                stats.n_malformed += 1
                continue
            src = parts[1].strip()
            dst = parts[2].strip()
            if not src or not dst or not math.isfinite(ts):
                stats.n_malformed += 1
                continue
            if src == dst and not allow_self_loops:
                stats.n_self_loops += 1
                continue
            stats.n_records += 1
            yield EventRecord(ts, src, dst)
    finally:
        if close_me:
            lines.close()
    total = stats.n_records + stats.n_malformed
    if total and stats.n_malformed * 2 > total:
        raise IngestError(
            f"{stats.n_malformed} of {total} data lines were malformed (>50%)")


def build_node_table(events, policy="senders") -> NodeTable:
    """Fix the node universe from an event stream.

    ``policy="senders"`` keeps ids with at least one outgoing event (the
    natural roster for communication logs where passive receivers are not
    modeled); ``policy="all"`` keeps every id seen on either side.
    """
    if policy not in ("senders", "all"):
        raise IngestError(f"unknown node policy {policy!r}")
    table = NodeTable()
    for ev in events:
        table.intern(ev.source)
        if policy == "all":
            table.intern(ev.destination)
    return table


def bucketize(events, width_hours, *, node_table, extend_roster=True,
              stats=None, tolerance=1.0):
    """Group an event stream into :class:`PeriodSnapshot` buckets.

    Buckets have uniform width ``width_hours`` (must divide 24) and are
    aligned to the midnight of the first event's day.  The leading and
    trailing buckets are dropped when only partially covered by data (first
    event later than bucket start, or last event earlier than bucket end,
    beyond ``tolerance`` seconds); interior buckets without events are
    yielded empty.  Events must be non-decreasing in time at bucket
    granularity: an event for an already-emitted bucket is dropped and
    counted in ``stats.n_out_of_order``.

    With ``extend_roster=False`` the node table is frozen and events naming
    unknown ids are dropped and counted (``stats.n_unknown_nodes``).
    """
    if stats is None:
        stats = BucketStats()
    if not width_hours > 0 or abs(24.0 / width_hours - round(24.0 / width_hours)) > 1e-9:
        raise IngestError(f"bucket width must be a positive divisor of 24, got {width_hours!r}")
    width = float(width_hours) * 3600.0
    slots_per_day = round(SECONDS_PER_DAY / width)

    def snap(index, start, pairs, n_events):
        edges = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
        slot = int(round((start % SECONDS_PER_DAY) / width)) % slots_per_day
        stats.n_periods += 1
        return PeriodSnapshot(index, start, start + width, edges, slot,
                              day_of_week(start), n_events)

    t0 = None
    cur = None          # current bucket number on the absolute grid
    first_kept = None   # bucket number that becomes period 0
    last_ts = None
    pairs = set()
    n_events = 0
    pending = None      # completed snapshot awaiting the partial-tail check

    for ev in events:
        if t0 is None:
            t0 = math.floor(ev.timestamp / SECONDS_PER_DAY) * SECONDS_PER_DAY
            cur = int((ev.timestamp - t0) // width)
            if ev.timestamp > t0 + cur * width + tolerance:
                stats.dropped_leading = True
                first_kept = cur + 1
            else:
                first_kept = cur
        b = int((ev.timestamp - t0) // width)
        if b < cur:
            stats.n_out_of_order += 1
            continue
        last_ts = max(last_ts, ev.timestamp) if last_ts is not None else ev.timestamp
        if b > cur:
            if cur >= first_kept:
                if pending is not None:
                    yield pending
                pending = snap(cur - first_kept, t0 + cur * width, pairs, n_events)
            pairs = set()
            n_events = 0
            for missing in range(max(cur + 1, first_kept), b):
                if pending is not None:
                    yield pending
                pending = snap(missing - first_kept, t0 + missing * width, set(), 0)
            cur = b
        if extend_roster:
            i = node_table.intern(ev.source)
            j = node_table.intern(ev.destination)
        else:
            i = node_table.get(ev.source)
            j = node_table.get(ev.destination)
            if i is None or j is None:
                stats.n_unknown_nodes += 1
                continue
        stats.n_events += 1
        n_events += 1
        pairs.add((i, j))

    if t0 is None:
        return
    if cur >= first_kept:
        if pending is not None:
            yield pending
        pending = snap(cur - first_kept, t0 + cur * width, pairs, n_events)
        if last_ts < t0 + (cur + 1) * width - tolerance:
            stats.dropped_trailing = True
            stats.n_periods -= 1
            pending = None
    if pending is not None:
        yield pending


@dataclass(frozen=True)
class PeriodicityTable:
    """Additive logit-scale mean shift per (time-of-day slot, day-of-week)."""

    width_hours: float
    shifts: np.ndarray  # (slots_per_day, 7)

    @property
    def n_classes(self) -> int:
        return int(self.shifts.size)

    def lookup(self, tod_slot: int, dow: int) -> float:
        return float(self.shifts[tod_slot, dow])

    def for_snapshot(self, snapshot: PeriodSnapshot) -> float:
        return self.lookup(snapshot.tod_slot, snapshot.dow)


def periodicity_shifts(snapshots, n_nodes, *, allow_self_loops=False) -> PeriodicityTable:
    """Estimate periodic mean shifts from bucket densities.

    The shift for class b is logit(mean density within b) minus logit(mean
    density over all buckets), so adding it to the model's baseline moves
    predictions toward that class's typical activity level.  Feed all
    snapshots for an offline pass or only a burn-in prefix for online use;
    at least one full week is needed to populate every class.  Classes with
    no buckets or zero density get shift 0 with a warning.
    """
    snapshots = list(snapshots)
    if not snapshots:
        raise IngestError("periodicity_shifts needs at least one snapshot")
    width = snapshots[0].bucket_end - snapshots[0].bucket_start
    for s in snapshots:
        if abs((s.bucket_end - s.bucket_start) - width) > 1e-6:
            raise IngestError("snapshots have non-uniform bucket widths")
    slots = round(SECONDS_PER_DAY / width)
    n_dyads = n_nodes * n_nodes if allow_self_loops else n_nodes * (n_nodes - 1)

    density = np.zeros((slots, 7))
    count = np.zeros((slots, 7), dtype=np.int64)
    overall = 0.0
    for s in snapshots:
        d = s.edges.shape[0] / n_dyads
        density[s.tod_slot, s.dow] += d
        count[s.tod_slot, s.dow] += 1
        overall += d
    overall /= len(snapshots)

    shifts = np.zeros((slots, 7))
    if overall <= 0.0:
        warnings.warn("no activity in any bucket; periodicity shifts are all zero")
        return PeriodicityTable(width / 3600.0, shifts)
    base = math.log(overall) - math.log1p(-overall)
    empty = []
    for slot in range(slots):
        for dow in range(7):
            if count[slot, dow] == 0 or density[slot, dow] <= 0.0:
                empty.append((slot, dow))
                continue
            d = density[slot, dow] / count[slot, dow]
            shifts[slot, dow] = math.log(d) - math.log1p(-d) - base
    if empty:
        warnings.warn(f"{len(empty)} periodicity classes had no activity; their shifts are 0")
    return PeriodicityTable(width / 3600.0, shifts)
