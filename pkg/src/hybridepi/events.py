"""Time-stamped mobility events: I/O, validation, slicing, and plan edits.

Agents are described by alternating start/end activity events at facilities.
Between an activity's end and the next start the agent commutes in a straight
line, timed to arrive exactly at the next start.  Before its first event an
agent sits at that event's location; after its last start it stays put.

Event times are seconds from simulation start.  Day-type templates (weekday /
saturday / sunday) each cover one day, [0, 86400); `expand_day_plans` stamps
them onto a calendar.
"""

from __future__ import annotations

import bisect
import csv
import io
from dataclasses import dataclass, replace
from datetime import date, timedelta

import numpy as np

SECONDS_PER_DAY = 86400.0

KIND_START = "start"
KIND_END = "end"
KIND_CARRY = "carry"   # artificial continuation event emitted by slicing

HOME_CATEGORY = "home"
SCHOOL_CATEGORY = "school"

DAY_TYPES = ("weekday", "saturday", "sunday")


@dataclass(frozen=True)
class MobilityEvent:
    agent_id: str
    time_s: float
    kind: str
    facility_id: str
    category: str
    x: float
    y: float


@dataclass(frozen=True)
class Facility:
    facility_id: str
    category: str
    x: float
    y: float
    room_size_estimate: int = 1


class EventStreamError(ValueError):
    """Raised for per-agent event streams violating ordering/alternation."""


def day_type_for(d: date) -> str:
    w = d.weekday()
    if w < 5:
        return "weekday"
    return "saturday" if w == 5 else "sunday"


# ---------------------------------------------------------------------------
# CSV I/O  (events: agent_id,time_s,kind,facility_id,category,x,y)
# ---------------------------------------------------------------------------

def write_events_csv(events: list[MobilityEvent], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["agent_id", "time_s", "kind", "facility_id",
                    "category", "x", "y"])
        for e in events:
            w.writerow([e.agent_id, f"{e.time_s:.12g}", e.kind, e.facility_id,
                        e.category, f"{e.x:.12g}", f"{e.y:.12g}"])


def read_events_csv(path) -> list[MobilityEvent]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(MobilityEvent(
                agent_id=row["agent_id"], time_s=float(row["time_s"]),
                kind=row["kind"], facility_id=row["facility_id"],
                category=row["category"], x=float(row["x"]), y=float(row["y"])))
    return out


def write_facilities_csv(facilities: list[Facility], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["facility_id", "category", "x", "y"])
        for f in facilities:
            w.writerow([f.facility_id, f.category, f"{f.x:.12g}", f"{f.y:.12g}"])


def read_facilities_csv(path) -> list[Facility]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(Facility(facility_id=row["facility_id"],
                                category=row["category"],
                                x=float(row["x"]), y=float(row["y"])))
    return out


def write_activity_csv(rows: list[tuple[date, float, float]], path) -> None:
    """activity schedule: date,at_home_pct_change,out_of_home_pct_change"""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "at_home_pct_change", "out_of_home_pct_change"])
        for d, at_home, out_of_home in rows:
            w.writerow([d.isoformat(), f"{at_home:.12g}", f"{out_of_home:.12g}"])


def read_activity_csv(path) -> list[tuple[date, float, float]]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append((date.fromisoformat(row["date"]),
                        float(row["at_home_pct_change"]),
                        float(row["out_of_home_pct_change"])))
    return out


def activity_schedule_for(rows: list[tuple[date, float, float]],
                          start: date, n_days: int) -> np.ndarray:
    """Out-of-home change (%) per simulated day; missing days default to 0."""
    by_date = {d: out for d, _, out in rows}
    return np.array([by_date.get(start + timedelta(days=k), 0.0)
                     for k in range(n_days)])


# ---------------------------------------------------------------------------
# Validation and pairing
# ---------------------------------------------------------------------------

def group_by_agent(events: list[MobilityEvent]) -> dict[str, list[MobilityEvent]]:
    groups: dict[str, list[MobilityEvent]] = {}
    for e in events:
        groups.setdefault(e.agent_id, []).append(e)
    return groups


def validate_events(events: list[MobilityEvent]) -> None:
    """Check per-agent time ordering and start/end alternation."""
    for agent, evs in group_by_agent(events).items():
        last_t = -np.inf
        expect_start = True
        for e in evs:
            if e.kind == KIND_CARRY:
                continue
            if e.time_s < last_t:
                raise EventStreamError(
                    f"agent {agent}: events out of order at t={e.time_s}")
            last_t = e.time_s
            if e.kind == KIND_START and not expect_start:
                raise EventStreamError(
                    f"agent {agent}: two consecutive starts at t={e.time_s}")
            if e.kind == KIND_END and expect_start:
                raise EventStreamError(
                    f"agent {agent}: end without open activity at t={e.time_s}")
            expect_start = e.kind == KIND_END
        _ = expect_start


def pair_activities(events: list[MobilityEvent]
                    ) -> list[tuple[MobilityEvent, MobilityEvent | None]]:
    """(start, end) activity pairs per agent; a trailing start pairs None."""
    validate_events(events)
    pairs = []
    for evs in group_by_agent(events).values():
        open_ev = None
        for e in evs:
            if e.kind == KIND_START:
                open_ev = e
            elif e.kind == KIND_END:
                pairs.append((open_ev, e))
                open_ev = None
        if open_ev is not None:
            pairs.append((open_ev, None))
    pairs.sort(key=lambda p: (p[0].time_s, p[0].agent_id))
    return pairs


# ---------------------------------------------------------------------------
# Position sampling
# ---------------------------------------------------------------------------

class PlanSampler:
    """Positions implied by an event stream at arbitrary times.

    In-facility between a start and its end; linear interpolation from the
    end's location to the next start's location while commuting; stationary
    before the first and after the last event.
    """

    def __init__(self, events: list[MobilityEvent]):
        validate_events(events)
        self._agents: dict[str, tuple[list[float], list[MobilityEvent]]] = {}
        for agent, evs in group_by_agent(events).items():
            real = [e for e in evs if e.kind != KIND_CARRY]
            self._agents[agent] = ([e.time_s for e in real], real)

    @property
    def agent_ids(self) -> list[str]:
        return sorted(self._agents)

    def position(self, agent_id: str, t_s: float) -> tuple[float, float]:
        times, evs = self._agents[agent_id]
        if not evs:
            raise EventStreamError(f"agent {agent_id} has no events")
        k = bisect.bisect_right(times, t_s) - 1
        if k < 0:
            return evs[0].x, evs[0].y
        e = evs[k]
        if e.kind == KIND_START or k + 1 >= len(evs):
            return e.x, e.y
        nxt = evs[k + 1]
        span = nxt.time_s - e.time_s
        if span <= 0:
            return nxt.x, nxt.y
        frac = (t_s - e.time_s) / span
        return (e.x + frac * (nxt.x - e.x), e.y + frac * (nxt.y - e.y))

    def positions(self, t_s: float) -> dict[str, tuple[float, float]]:
        return {a: self.position(a, t_s) for a in self._agents}


# ---------------------------------------------------------------------------
# Calendar expansion
# ---------------------------------------------------------------------------

def expand_day_plans(day_events: dict[str, list[MobilityEvent]],
                     start: date, n_days: int) -> list[MobilityEvent]:
    """Stamp one-day day-type templates onto ``n_days`` calendar days.

    Day 0 additionally opens every agent's first activity at t=0 so streams
    begin with a start event.  Template events must lie in [0, 86400).
    """
    for dtype, evs in day_events.items():
        for e in evs:
            if not 0 <= e.time_s < SECONDS_PER_DAY:
                raise EventStreamError(
                    f"{dtype} template event at t={e.time_s} outside one day")

    out: list[MobilityEvent] = []
    for k in range(n_days):
        dtype = day_type_for(start + timedelta(days=k))
        offset = k * SECONDS_PER_DAY
        out.extend(replace(e, time_s=e.time_s + offset)
                   for e in day_events[dtype])
    out.sort(key=lambda e: (e.time_s, e.agent_id, e.kind == KIND_START))

    # Open every stream that begins with an end event: the agent was inside
    # that facility from t=0.
    opens: list[MobilityEvent] = []
    seen: set[str] = set()
    for e in out:
        if e.agent_id not in seen:
            seen.add(e.agent_id)
            if e.kind == KIND_END:
                opens.append(replace(e, time_s=0.0, kind=KIND_START))
    out = opens + out
    out.sort(key=lambda e: (e.time_s, e.agent_id, e.kind == KIND_START))
    return out


# ---------------------------------------------------------------------------
# Slicing into per-step chunks
# ---------------------------------------------------------------------------

def step_index(time_s: float, dt_days: float, n_steps: int) -> int:
    """Step owning a time; the horizon endpoint folds into the final step."""
    k = int(time_s // (dt_days * SECONDS_PER_DAY))
    return min(k, n_steps - 1)


def slice_events(events: list[MobilityEvent], dt_days: float,
                 t0_days: float = 0.0, t1_days: float | None = None
                 ) -> list[list[MobilityEvent]]:
    """Split an event stream into per-step chunks with continuation events.

    Chunk k covers [k*dt, (k+1)*dt); an event at exactly the horizon end
    joins the final chunk.  Every agent already seen that has no real event
    in a chunk receives one artificial ``carry`` event at the chunk start
    holding its current position, so each chunk alone recovers all last
    known positions.
    """
    if dt_days <= 0:
        raise ValueError("dt must be positive")
    validate_events(events)
    if not events:
        return []
    evs = sorted(events, key=lambda e: (e.time_s, e.agent_id))
    t0 = t0_days * SECONDS_PER_DAY
    if t1_days is None:
        t1 = max(e.time_s for e in evs)
    else:
        t1 = t1_days * SECONDS_PER_DAY
    dt_s = dt_days * SECONDS_PER_DAY
    n_steps = max(1, int(np.ceil((t1 - t0) / dt_s - 1e-12)))

    sampler = PlanSampler(evs)
    chunks: list[list[MobilityEvent]] = [[] for _ in range(n_steps)]
    first_seen: dict[str, int] = {}
    present: dict[str, set[int]] = {}
    for e in evs:
        k = step_index(e.time_s - t0, dt_days, n_steps)
        chunks[k].append(e)
        first_seen.setdefault(e.agent_id, k)
        present.setdefault(e.agent_id, set()).add(k)

    for agent, k0 in sorted(first_seen.items()):
        has_event = present[agent]
        for k in range(k0 + 1, n_steps):
            if k not in has_event:
                t = t0 + k * dt_s
                x, y = sampler.position(agent, t)
                chunks[k].append(MobilityEvent(
                    agent_id=agent, time_s=t, kind=KIND_CARRY,
                    facility_id="", category="", x=x, y=y))
    for chunk in chunks:
        chunk.sort(key=lambda e: (e.time_s, e.agent_id))
    return chunks


# ---------------------------------------------------------------------------
# Room sizes and plan edits
# ---------------------------------------------------------------------------

def estimate_room_sizes(events: list[MobilityEvent]) -> dict[str, int]:
    """Max simultaneous occupancy per facility over the event horizon."""
    evs = sorted((e for e in events if e.kind != KIND_CARRY),
                 key=lambda e: (e.time_s, e.kind == KIND_START))
    occupancy: dict[str, set[str]] = {}
    peak: dict[str, int] = {}
    for e in evs:
        inside = occupancy.setdefault(e.facility_id, set())
        if e.kind == KIND_START:
            inside.add(e.agent_id)
            peak[e.facility_id] = max(peak.get(e.facility_id, 0), len(inside))
        elif e.kind == KIND_END:
            if e.agent_id not in inside:
                raise EventStreamError(
                    f"agent {e.agent_id} ends at {e.facility_id} without start")
            inside.discard(e.agent_id)
    return {f: max(1, n) for f, n in peak.items()}


def apply_activity_reduction(events: list[MobilityEvent],
                             schedule: np.ndarray,
                             rng: np.random.Generator) -> list[MobilityEvent]:
    """Randomly drop out-of-home activities on days with negative change.

    ``schedule[d]`` is the out-of-home activity change in percent for
    simulated day d; a value of -p removes each out-of-home start/end pair
    starting that day with probability p/100.  Positive rates add nothing.
    The first day must be 0 (baseline).
    """
    schedule = np.asarray(schedule, dtype=float)
    if len(schedule) and schedule[0] != 0.0:
        raise ValueError("first simulated day must have change rate 0")
    pairs = pair_activities(events)
    dropped: set[int] = set()
    for start_ev, end_ev in pairs:
        day = int(start_ev.time_s // SECONDS_PER_DAY)
        if day >= len(schedule):
            continue
        rate = schedule[day]
        if rate >= 0 or start_ev.category == HOME_CATEGORY:
            continue
        if rng.random() < min(1.0, -rate / 100.0):
            dropped.add(id(start_ev))
            if end_ev is not None:
                dropped.add(id(end_ev))
    return [e for e in events if id(e) not in dropped]


def apply_school_closures(events: list[MobilityEvent],
                          closure_day: float | None) -> list[MobilityEvent]:
    """Remove school activities starting on or after ``closure_day`` (days)."""
    if closure_day is None:
        return list(events)
    cutoff = closure_day * SECONDS_PER_DAY
    pairs = pair_activities(events)
    dropped: set[int] = set()
    for start_ev, end_ev in pairs:
        if start_ev.category == SCHOOL_CATEGORY and start_ev.time_s >= cutoff:
            dropped.add(id(start_ev))
            if end_ev is not None:
                dropped.add(id(end_ev))
    return [e for e in events if id(e) not in dropped]


def events_to_text(events: list[MobilityEvent]) -> str:
    """Canonical CSV text for an event list (used by golden tests)."""
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["agent_id", "time_s", "kind", "facility_id", "category", "x", "y"])
    for e in events:
        w.writerow([e.agent_id, f"{e.time_s:.12g}", e.kind, e.facility_id,
                    e.category, f"{e.x:.12g}", f"{e.y:.12g}"])
    return buf.getvalue()
