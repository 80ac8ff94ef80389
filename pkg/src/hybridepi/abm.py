"""Event-driven facility ABM: contacts, commuting, health progression.

Transmission is facility-confined: a susceptible accrues exposure hazard
beta * (infectious co-present / room size) * dt for every step it spends in
a facility with infectious (I or SY) occupants, and the accumulated hazard
is resolved into an infection with probability 1 - exp(-hazard) when the
agent leaves.  Commuters are isolated.  Non-susceptible compartments
progress stochastically every step.

The engine tracks every plan's position whether or not the plan's agent is
currently simulated ("active"); the hybrid coupling deactivates agents that
are absorbed into the density domain and reactivates free plan IDs for
emitted individuals at the position their plan implies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import (KIND_END, KIND_START, SECONDS_PER_DAY, EventStreamError,
                     Facility, MobilityEvent, validate_events)
from .states import HealthState, RateSet, step_progression


@dataclass(frozen=True)
class InFacility:
    facility_id: str


@dataclass(frozen=True)
class Commuting:
    origin: tuple[float, float]
    destination: tuple[float, float]
    depart_time: float
    arrival_time: float


@dataclass(frozen=True)
class InPdeDomain:
    pass


@dataclass
class Agent:
    """Coupling-facing view of one simulated individual."""

    id: str
    health: HealthState
    position: tuple[float, float]
    mode: InFacility | Commuting | InPdeDomain
    state_entry_time: float = 0.0
    pending_hazard: float = 0.0


def infection_hazard(co_present_infectious: int, room_size: float,
                     overlap_days: float, beta_const: float) -> float:
    """Exposure hazard accrued over ``overlap_days`` of facility co-presence."""
    if overlap_days < 0:
        raise ValueError("overlap must be non-negative")
    return beta_const * (co_present_infectious / room_size) * overlap_days


def infection_probability(hazard: float) -> float:
    return float(-np.expm1(-hazard))


class PlanTable:
    """Column-stored expanded event stream with commute linkage."""

    def __init__(self, events: list[MobilityEvent],
                 facilities: list[Facility]):
        validate_events(events)
        real = [e for e in events if e.kind in (KIND_START, KIND_END)]
        self.agent_ids = sorted({e.agent_id for e in real})
        agent_index = {a: i for i, a in enumerate(self.agent_ids)}
        self.facilities = list(facilities)
        fac_index = {f.facility_id: i for i, f in enumerate(facilities)}

        order = sorted(range(len(real)),
                       key=lambda i: (real[i].time_s, real[i].agent_id))
        n = len(order)
        self.time_s = np.empty(n)
        self.agent = np.empty(n, dtype=np.int64)
        self.is_end = np.empty(n, dtype=bool)
        self.fac = np.empty(n, dtype=np.int64)
        self.x = np.empty(n)
        self.y = np.empty(n)
        for row, i in enumerate(order):
            e = real[i]
            if e.facility_id not in fac_index:
                raise EventStreamError(f"unknown facility {e.facility_id!r}")
            self.time_s[row] = e.time_s
            self.agent[row] = agent_index[e.agent_id]
            self.is_end[row] = e.kind == KIND_END
            self.fac[row] = fac_index[e.facility_id]
            self.x[row] = e.x
            self.y[row] = e.y

        # Link each end event to the agent's next start (commute target).
        self.next_x = self.x.copy()
        self.next_y = self.y.copy()
        self.next_t = self.time_s.copy()
        last_end_row: dict[int, int] = {}
        for row in range(n):
            a = int(self.agent[row])
            if self.is_end[row]:
                last_end_row[a] = row
            elif a in last_end_row:
                prev = last_end_row.pop(a)
                if self.time_s[row] < self.time_s[prev]:
                    raise EventStreamError(
                        f"agent {self.agent_ids[a]}: arrival before departure")
                self.next_x[prev] = self.x[row]
                self.next_y[prev] = self.y[row]
                self.next_t[prev] = self.time_s[row]

        self.first_xy = np.zeros((len(self.agent_ids), 2))
        seen = np.zeros(len(self.agent_ids), dtype=bool)
        for row in range(n):
            a = int(self.agent[row])
            if not seen[a]:
                seen[a] = True
                self.first_xy[a] = (self.x[row], self.y[row])

        self.room_size = np.array(
            [max(1.0, float(f.room_size_estimate)) for f in facilities])
        self.fac_xy = np.array([[f.x, f.y] for f in facilities]) \
            if facilities else np.zeros((0, 2))

    @property
    def n_agents(self) -> int:
        return len(self.agent_ids)

    def step_bounds(self, dt_days: float, n_steps: int) -> np.ndarray:
        """Event-row boundaries per step; horizon-end events fold into the last."""
        edges = np.arange(n_steps + 1) * dt_days * SECONDS_PER_DAY
        bounds = np.searchsorted(self.time_s, edges, side="left")
        bounds[-1] = len(self.time_s)
        return bounds


class AbmEngine:
    """Sequential, seed-deterministic simulation of one agent population."""

    def __init__(self, plans: PlanTable, rates: RateSet, dt_days: float,
                 n_steps: int, rng: np.random.Generator):
        self.plans = plans
        self.rates = rates
        self.dt = dt_days
        self.n_steps = n_steps
        self.rng = rng
        self._bounds = plans.step_bounds(dt_days, n_steps)

        n = plans.n_agents
        self.active = np.ones(n, dtype=bool)
        self.health = np.full(n, int(HealthState.S), dtype=np.int8)
        self.pos = plans.first_xy.copy()
        self.facility = np.full(n, -1, dtype=np.int64)
        self.hazard = np.zeros(n)
        self.state_entry = np.zeros(n)
        self._from = plans.first_xy.copy()
        self._to = plans.first_xy.copy()
        self._dep = np.zeros(n)
        self._arr = np.zeros(n)
        self.step_count = 0
        self.infections = 0

    # -- state editing used by initialization and the coupling ------------

    def set_health(self, idx, state: HealthState) -> None:
        self.health[idx] = int(state)

    def deactivate(self, idx: int) -> None:
        self.active[idx] = False
        self.hazard[idx] = 0.0

    def activate(self, idx: int, state: HealthState, t_days: float) -> None:
        self.active[idx] = True
        self.health[idx] = int(state)
        self.hazard[idx] = 0.0
        self.state_entry[idx] = t_days

    def agent_view(self, idx: int) -> Agent:
        if self.facility[idx] >= 0:
            mode = InFacility(
                self.plans.facilities[self.facility[idx]].facility_id)
        elif self._arr[idx] > self._dep[idx]:
            mode = Commuting(tuple(self._from[idx]), tuple(self._to[idx]),
                             self._dep[idx], self._arr[idx])
        else:
            mode = InFacility("")
        return Agent(id=self.plans.agent_ids[idx],
                     health=HealthState(self.health[idx]),
                     position=(float(self.pos[idx, 0]), float(self.pos[idx, 1])),
                     mode=mode,
                     state_entry_time=float(self.state_entry[idx]),
                     pending_hazard=float(self.hazard[idx]))

    # -- per-step pipeline -------------------------------------------------

    def _beta(self, t_days: float) -> float:
        return self.rates.beta_const_at(t_days)

    def _process_events(self, k: int) -> None:
        p = self.plans
        t_days = k * self.dt
        for row in range(self._bounds[k], self._bounds[k + 1]):
            a = int(p.agent[row])
            if p.is_end[row]:
                if self.active[a] and self.health[a] == HealthState.S:
                    prob = infection_probability(self.hazard[a])
                    if prob > 0 and self.rng.random() < prob:
                        self.health[a] = int(HealthState.E)
                        self.state_entry[a] = t_days
                        self.infections += 1
                    self.hazard[a] = 0.0
                self.facility[a] = -1
                self._from[a] = (p.x[row], p.y[row])
                self._to[a] = (p.next_x[row], p.next_y[row])
                self._dep[a] = p.time_s[row]
                self._arr[a] = p.next_t[row]
                self.pos[a] = self._from[a]
            else:
                self.facility[a] = p.fac[row]
                self.pos[a] = (p.x[row], p.y[row])
                self._dep[a] = self._arr[a] = p.time_s[row]

    def _advance_positions(self, t_end_s: float) -> None:
        moving = (self.facility < 0) & (self._arr > self._dep)
        if not moving.any():
            return
        idx = np.flatnonzero(moving)
        frac = np.clip((t_end_s - self._dep[idx])
                       / (self._arr[idx] - self._dep[idx]), 0.0, 1.0)
        self.pos[idx] = (self._from[idx]
                         + frac[:, None] * (self._to[idx] - self._from[idx]))
        arrived = frac >= 1.0
        self._dep[idx[arrived]] = self._arr[idx[arrived]]

    def _accrue_hazard(self, t_days: float) -> None:
        beta = self._beta(t_days)
        if beta <= 0:
            return
        in_fac = self.active & (self.facility >= 0)
        infectious = in_fac & ((self.health == HealthState.I)
                               | (self.health == HealthState.SY))
        if not infectious.any():
            return
        counts = np.bincount(self.facility[infectious],
                             minlength=len(self.plans.room_size))
        sus = np.flatnonzero(in_fac & (self.health == HealthState.S))
        if not len(sus):
            return
        fac = self.facility[sus]
        self.hazard[sus] += (beta * counts[fac]
                             / self.plans.room_size[fac] * self.dt)

    def _progress_health(self) -> None:
        movable = self.active & (self.health != HealthState.S) \
            & (self.health != HealthState.R)
        idx = np.flatnonzero(movable)
        if not len(idx):
            return
        sub = self.health[idx].astype(np.int64)
        step_progression(sub, self.rates, self.dt, self.rng)
        changed = sub != self.health[idx]
        if changed.any():
            self.health[idx[changed]] = sub[changed]
            self.state_entry[idx[changed]] = (self.step_count + 1) * self.dt

    def step(self) -> None:
        k = self.step_count
        if k >= self.n_steps:
            raise RuntimeError("simulation horizon exhausted")
        self._process_events(k)
        self._advance_positions((k + 1) * self.dt * SECONDS_PER_DAY)
        self._accrue_hazard(k * self.dt)
        self._progress_health()
        self.step_count = k + 1

    # -- summaries ----------------------------------------------------------

    def state_counts(self) -> np.ndarray:
        counts = np.zeros(8, dtype=np.int64)
        act = self.health[self.active]
        if len(act):
            counts += np.bincount(act, minlength=8)
        return counts

    def symptomatic_count(self) -> int:
        return int(np.count_nonzero(self.active
                                    & (self.health == HealthState.SY)))
