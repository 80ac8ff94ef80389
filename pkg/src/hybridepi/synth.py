"""Synthetic populations with the same file schema as the production data.

The real mobility dataset is private; this generator produces day-type event
templates (weekday / saturday / sunday), a facility table, an hourly
occupancy schedule for the inner density-domain rectangle, and an activity
schedule template.  Geometry is two nested axis-aligned rectangles: the
inner one is the density-domain analog, everything else belongs to the
agent domain.  A configurable share of outer residents commutes into the
inner rectangle on weekdays, which is what exercises both coupling
directions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, timedelta

import numpy as np

from .events import (DAY_TYPES, Facility, MobilityEvent, KIND_END, KIND_START)

Rect = tuple[float, float, float, float]


@dataclass(frozen=True)
class SynthSpec:
    n_agents: int
    seed: int = 0
    outer_rect: Rect = (0.0, 0.0, 10_000.0, 10_000.0)
    inner_rect: Rect = (6_000.0, 6_000.0, 9_000.0, 9_000.0)
    inner_home_fraction: float = 0.3    # agents residing inside the inner rect
    commuter_fraction: float = 0.4      # outer residents working inside it
    school_fraction: float = 0.2        # agents attending school, not work
    leisure_probability: float = 0.5    # weekday evening leisure trip
    household_size: int = 3
    facilities: dict = field(default_factory=lambda: {
        "work": 12, "school": 3, "leisure": 6})
    start_date: date = date(2020, 3, 2)
    activity_days: int = 58
    activity_change_from_day: int | None = None
    out_of_home_change: float = 0.0     # % change applied from that day on

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        for frac in (self.inner_home_fraction, self.commuter_fraction,
                     self.school_fraction, self.leisure_probability):
            if not 0.0 <= frac <= 1.0:
                raise ValueError("fractions must lie in [0, 1]")


@dataclass
class SynthOutput:
    day_events: dict[str, list[MobilityEvent]]
    facilities: list[Facility]
    occupancy_hourly: dict[str, np.ndarray]
    activity_rows: list[tuple[date, float, float]]
    home_xy: dict[str, tuple[float, float]]
    inner_rect: Rect


def _in_rect(x: float, y: float, rect: Rect) -> bool:
    return rect[0] <= x <= rect[2] and rect[1] <= y <= rect[3]


def _sample_in_rect(rng, rect: Rect, margin: float = 0.05) -> tuple[float, float]:
    dx = rect[2] - rect[0]
    dy = rect[3] - rect[1]
    return (rect[0] + dx * rng.uniform(margin, 1 - margin),
            rect[1] + dy * rng.uniform(margin, 1 - margin))


def _sample_outside(rng, outer: Rect, inner: Rect) -> tuple[float, float]:
    for _ in range(1000):
        p = _sample_in_rect(rng, outer, margin=0.02)
        if not _in_rect(p[0], p[1], inner):
            return p
    raise RuntimeError("could not place a point outside the inner rectangle")


def generate(spec: SynthSpec) -> SynthOutput:
    """Deterministic population for a spec+seed; see module docstring."""
    rng = np.random.default_rng(spec.seed)
    inner, outer = spec.inner_rect, spec.outer_rect

    n_inner_homes = max(0, int(round(
        spec.n_agents * spec.inner_home_fraction / spec.household_size)))
    n_outer_homes = max(1, int(np.ceil(
        spec.n_agents * (1 - spec.inner_home_fraction) / spec.household_size)))

    facilities: list[Facility] = []
    home_locs: list[tuple[str, tuple[float, float], bool]] = []
    for h in range(n_inner_homes):
        loc = _sample_in_rect(rng, inner)
        fid = f"home_i{h}"
        facilities.append(Facility(fid, "home", loc[0], loc[1]))
        home_locs.append((fid, loc, True))
    for h in range(n_outer_homes):
        loc = _sample_outside(rng, outer, inner)
        fid = f"home_o{h}"
        facilities.append(Facility(fid, "home", loc[0], loc[1]))
        home_locs.append((fid, loc, False))

    def place_category(name: str, count: int):
        placed = []
        n_in = max(1, count // 3)
        for i in range(count):
            if i < n_in:
                loc = _sample_in_rect(rng, inner)
            else:
                loc = _sample_outside(rng, outer, inner)
            fid = f"{name}_{i}"
            facilities.append(Facility(fid, name, loc[0], loc[1]))
            placed.append((fid, loc, i < n_in))
        return placed

    works = place_category("work", spec.facilities.get("work", 12))
    schools = place_category("school", spec.facilities.get("school", 3))
    leisures = place_category("leisure", spec.facilities.get("leisure", 6))
    works_in = [w for w in works if w[2]] or works
    works_out = [w for w in works if not w[2]] or works
    schools_any = schools or works
    leisures_any = leisures or works

    # Per-agent assignments.
    agents = []
    inner_home_pool = [h for h in home_locs if h[2]]
    outer_home_pool = [h for h in home_locs if not h[2]]
    for a in range(spec.n_agents):
        aid = f"a{a:05d}"
        lives_inner = (rng.random() < spec.inner_home_fraction
                       and inner_home_pool)
        pool = inner_home_pool if lives_inner else outer_home_pool
        home = pool[int(rng.integers(len(pool)))]
        is_student = rng.random() < spec.school_fraction
        if is_student:
            dest = schools_any[int(rng.integers(len(schools_any)))]
        elif lives_inner:
            dest = works_in[int(rng.integers(len(works_in)))]
        elif rng.random() < spec.commuter_fraction:
            dest = works_in[int(rng.integers(len(works_in)))]
        else:
            dest = works_out[int(rng.integers(len(works_out)))]
        leisure = leisures_any[int(rng.integers(len(leisures_any)))]
        has_leisure = rng.random() < spec.leisure_probability
        jitter = rng.uniform(-1800.0, 1800.0, size=6)
        agents.append((aid, home, dest, leisure, has_leisure, jitter))

    def ev(aid, t, kind, fac):
        fid, (x, y), _ = fac
        cat = "home" if fid.startswith("home") else fid.rsplit("_", 1)[0]
        return MobilityEvent(agent_id=aid, time_s=float(t), kind=kind,
                             facility_id=fid, category=cat, x=x, y=y)

    weekday: list[MobilityEvent] = []
    saturday: list[MobilityEvent] = []
    sunday: list[MobilityEvent] = []
    H = 3600.0
    for aid, home, dest, leisure, has_leisure, jit in agents:
        # Weekday: home -> work/school -> (leisure) -> home.
        t_leave = 7.0 * H + jit[0]
        t_arrive = t_leave + 0.75 * H
        t_out = 16.0 * H + jit[1]
        weekday.append(ev(aid, t_leave, KIND_END, home))
        weekday.append(ev(aid, t_arrive, KIND_START, dest))
        weekday.append(ev(aid, t_out, KIND_END, dest))
        if has_leisure:
            t_l = t_out + 0.5 * H
            t_l_end = 20.0 * H + jit[2]
            weekday.append(ev(aid, t_l, KIND_START, leisure))
            weekday.append(ev(aid, t_l_end, KIND_END, leisure))
            weekday.append(ev(aid, t_l_end + 0.5 * H, KIND_START, home))
        else:
            weekday.append(ev(aid, t_out + 0.75 * H, KIND_START, home))
        # Saturday: midday leisure trip for agents with a leisure habit.
        if has_leisure:
            t0 = 10.0 * H + jit[3]
            t1 = 14.0 * H + jit[4]
            saturday.append(ev(aid, t0, KIND_END, home))
            saturday.append(ev(aid, t0 + 0.5 * H, KIND_START, leisure))
            saturday.append(ev(aid, t1, KIND_END, leisure))
            saturday.append(ev(aid, t1 + 0.5 * H, KIND_START, home))
        # Sunday: at home all day (no events).

    for evs in (weekday, saturday, sunday):
        evs.sort(key=lambda e: (e.time_s, e.agent_id))

    day_events = {"weekday": weekday, "saturday": saturday, "sunday": sunday}
    home_xy = {aid: home[1] for aid, home, *_ in agents}
    occupancy = occupancy_from_day_events(day_events, inner, home_xy)

    activity_rows = []
    for k in range(spec.activity_days):
        change = 0.0
        if (spec.activity_change_from_day is not None
                and k >= spec.activity_change_from_day):
            change = spec.out_of_home_change
        activity_rows.append((spec.start_date + timedelta(days=k),
                              -change if change else 0.0, change))

    return SynthOutput(day_events=day_events, facilities=facilities,
                       occupancy_hourly=occupancy, activity_rows=activity_rows,
                       home_xy=home_xy, inner_rect=inner)


def occupancy_from_day_events(day_events: dict[str, list[MobilityEvent]],
                              inner_rect: Rect,
                              home_xy: dict[str, tuple[float, float]]
                              ) -> dict[str, np.ndarray]:
    """Expected persons inside the inner rectangle per hour per day type.

    Agents without events on a day type sit at home for that day.
    """
    from .events import PlanSampler   # local import avoids cycle at module load

    out: dict[str, np.ndarray] = {}
    for dtype in DAY_TYPES:
        events = day_events.get(dtype, [])
        sampler = PlanSampler(events) if events else None
        with_events = set(sampler.agent_ids) if sampler else set()
        counts = np.zeros(24)
        for hour in range(24):
            t = hour * 3600.0
            n = 0
            if sampler:
                for aid in with_events:
                    x, y = sampler.position(aid, t)
                    if _in_rect(x, y, inner_rect):
                        n += 1
            for aid, (x, y) in home_xy.items():
                if aid not in with_events and _in_rect(x, y, inner_rect):
                    n += 1
            counts[hour] = n
        out[dtype] = counts
    return out
