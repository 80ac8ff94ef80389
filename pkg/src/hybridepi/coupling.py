"""Two-way exchange between the agent model and the density model.

Agents whose end-of-step position lies inside the density domain are removed
and deposited as a nodal density increment equivalent to exactly one person:
eps(x*) = 3 / (sum of areas of triangles touching x*), the unique nodal value
whose P1 integral is 1.  Individuals leave the density domain when the
precomputed expected occupancy of the domain falls between two step
endpoints; the corresponding persons are drawn proportionally from the
compartment masses (floored, remainder to the susceptible compartment),
densities are reduced proportionally in space, and each person reactivates a
uniformly drawn free plan ID at the position its plan currently implies.

Fractional expected outflow is accumulated across steps so that sub-person
flows are not lost to rounding; the per-step rounding residue stays below
one person and is logged with each exchange record.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field as dc_field
from datetime import date, timedelta

import numpy as np

from .abm import Agent, AbmEngine
from .events import day_type_for
from .mesh import PointLocator, TriMesh, nearest_node
from .pde import CompartmentField, FemOperators, step as pde_step, total_mass
from .states import N_STATES, HealthState, RateSet

log = logging.getLogger(__name__)


def epsilon_weights(mesh: TriMesh) -> np.ndarray:
    """Per-node density increment equivalent to one person."""
    return 3.0 / mesh.fan_areas()


def agent_to_density(agent: Agent, field: CompartmentField, mesh: TriMesh,
                     eps: np.ndarray | None = None) -> CompartmentField:
    """Deposit one agent into its health compartment at the nearest node.

    Increases that compartment's FEM mass by exactly one person.  The agent
    must already have been verified to lie inside the domain; calling this
    for an outside position is a caller bug.
    """
    if eps is None:
        eps = epsilon_weights(mesh)
    node = nearest_node(mesh, agent.position)
    field.values[int(agent.health), node] += eps[node]
    return field


# ---------------------------------------------------------------------------
# Occupancy schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OccupancySchedule:
    """Expected persons inside the density domain per hour per day type."""

    hourly: dict[str, np.ndarray]   # day type -> 24 values (hour marks 0..23)
    start: date

    def __post_init__(self):
        for dtype, vals in self.hourly.items():
            if len(vals) != 24:
                raise ValueError(f"{dtype}: need 24 hourly values")

    def _value(self, day: int, hour: int) -> float:
        day += hour // 24
        hour = hour % 24
        dtype = day_type_for(self.start + timedelta(days=day))
        return float(self.hourly[dtype][hour])

    def occupancy_at(self, t_days: float) -> float:
        day = int(np.floor(t_days))
        h = (t_days - day) * 24.0
        i0 = int(np.floor(h))
        frac = h - i0
        v0 = self._value(day, i0)
        v1 = self._value(day, i0 + 1)
        return v0 + frac * (v1 - v0)


def expected_outflow(schedule: OccupancySchedule, t_days: float,
                     dt_days: float) -> float:
    """Drop in interpolated expected occupancy over [t, t+dt], floored at 0."""
    return max(0.0, schedule.occupancy_at(t_days)
               - schedule.occupancy_at(t_days + dt_days))


def write_occupancy_csv(schedule: OccupancySchedule, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["day_type", "hour", "expected_persons"])
        for dtype in sorted(schedule.hourly):
            for hour, v in enumerate(schedule.hourly[dtype]):
                w.writerow([dtype, hour, f"{v:.12g}"])


def read_occupancy_csv(path, start: date) -> OccupancySchedule:
    hourly: dict[str, np.ndarray] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            vals = hourly.setdefault(row["day_type"], np.zeros(24))
            vals[int(row["hour"])] = float(row["expected_persons"])
    return OccupancySchedule(hourly=hourly, start=start)


# ---------------------------------------------------------------------------
# Density -> agents
# ---------------------------------------------------------------------------

def density_to_agents(field: CompartmentField, n_out: float,
                      free_ids: list[int], rng: np.random.Generator
                      ) -> tuple[CompartmentField, list[tuple[int, HealthState]]]:
    """Convert ``floor(n_out)`` persons of density into (plan id, state) pairs.

    Per-compartment counts are floors of the density-proportional shares;
    remaining persons go to the susceptible compartment (falling back to the
    largest remaining compartment if S lacks mass).  Densities shrink
    proportionally per compartment, so removal is largest where density is.
    """
    n_whole = int(np.floor(n_out + 1e-12))
    if n_whole <= 0:
        return field, []
    masses = total_mass(field)
    total = float(masses.sum())
    if n_whole > total + 1e-9:
        raise ValueError(f"cannot emit {n_whole} persons from mass {total:.3f}")
    if n_whole > len(free_ids):
        log.warning("free plan IDs exhausted: emitting %d of %d",
                    len(free_ids), n_whole)
        n_whole = len(free_ids)
        if n_whole == 0:
            return field, []

    counts = np.floor(n_whole * masses / total).astype(np.int64)
    remainder = n_whole - int(counts.sum())
    counts[HealthState.S] += remainder
    if counts[HealthState.S] > masses[HealthState.S]:
        deficit = counts[HealthState.S] - int(np.floor(masses[HealthState.S]))
        counts[HealthState.S] -= deficit
        headroom = np.floor(masses).astype(np.int64) - counts
        fallback = int(np.argmax(np.where(headroom > 0, masses, -np.inf)))
        moved = min(deficit, int(headroom[fallback])) if headroom.max() > 0 else 0
        counts[fallback] += moved
        log.warning("susceptible mass short by %d; moved %d to %s",
                    deficit, moved, HealthState(fallback).name)

    emissions: list[tuple[int, HealthState]] = []
    for c in range(N_STATES):
        k = int(counts[c])
        if k == 0:
            continue
        factor = (masses[c] - k) / masses[c]
        field.values[c] *= factor
        for _ in range(k):
            j = int(rng.integers(len(free_ids)))
            free_ids[j], free_ids[-1] = free_ids[-1], free_ids[j]
            emissions.append((free_ids.pop(), HealthState(c)))
    return field, emissions


# ---------------------------------------------------------------------------
# Hybrid orchestration
# ---------------------------------------------------------------------------

@dataclass
class ExchangeRecord:
    step: int
    time_days: float
    agents_absorbed: int
    persons_emitted: int
    compartment_out: np.ndarray   # persons emitted per compartment
    rounding_residue: float        # |agents + mass - N| after the step


@dataclass
class HybridState:
    """Everything one hybrid run owns; never shared across runs."""

    engine: AbmEngine
    field: CompartmentField
    ops: FemOperators
    locator: PointLocator
    eps: np.ndarray
    occupancy: OccupancySchedule
    free_ids: list[int]
    population: float
    disable_pde_to_abm: bool = False
    remember_reentry_state: bool = False
    outflow_residual: float = 0.0
    exchange_log: list[ExchangeRecord] = dc_field(default_factory=list)
    reentry_info: dict[int, tuple[float, HealthState]] = dc_field(
        default_factory=dict)

    def population_gap(self) -> float:
        agents = float(np.count_nonzero(self.engine.active))
        return agents + float(total_mass(self.field).sum()) - self.population


def hybrid_step(state: HybridState, rates_pde: RateSet, beta_eff: float,
                dt: float, rng: np.random.Generator) -> HybridState:
    """Advance both models one step, then exchange across the boundary.

    Order: agent step (interactions inside the density domain still count),
    density step, absorption of agents ending inside the domain, emission of
    the expected outflow.
    """
    engine = state.engine
    k = engine.step_count
    engine.step()
    t_end = engine.step_count * dt

    state.field = pde_step(state.field, state.ops, beta_eff, rates_pde, dt)

    # Agents -> density, judged by end-of-step position.
    absorbed = 0
    active_idx = np.flatnonzero(engine.active)
    if len(active_idx):
        inside = state.locator.contains(engine.pos[active_idx])
        for idx in active_idx[inside]:
            agent = engine.agent_view(int(idx))
            agent_to_density(agent, state.field, state.ops.mesh, state.eps)
            engine.deactivate(int(idx))
            state.free_ids.append(int(idx))
            if state.remember_reentry_state:
                state.reentry_info[int(idx)] = (t_end, agent.health)
            absorbed += 1

    # Density -> agents, driven by the expected-occupancy drop.
    emitted = 0
    compartment_out = np.zeros(N_STATES)
    if not state.disable_pde_to_abm:
        state.outflow_residual += expected_outflow(state.occupancy,
                                                   k * dt, dt)
        n_req = int(np.floor(state.outflow_residual + 1e-12))
        if n_req > 0:
            available = int(np.floor(total_mass(state.field).sum() + 1e-9))
            n_emit = min(n_req, available, len(state.free_ids))
            if n_emit < n_req:
                log.warning("outflow capped at %d of %d requested",
                            n_emit, n_req)
            state.outflow_residual -= n_req
            if n_emit > 0:
                state.field, emissions = density_to_agents(
                    state.field, n_emit, state.free_ids, rng)
                for plan_idx, health in emissions:
                    engine.activate(plan_idx, health, t_end)
                    compartment_out[int(health)] += 1
                    emitted += 1

    state.exchange_log.append(ExchangeRecord(
        step=k, time_days=t_end, agents_absorbed=absorbed,
        persons_emitted=emitted, compartment_out=compartment_out,
        rounding_residue=abs(state.population_gap())))
    return state


def write_exchange_log_csv(records: list[ExchangeRecord], path) -> None:
    names = [HealthState(c).name for c in range(N_STATES)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "time_days", "agents_absorbed", "persons_emitted"]
                   + [f"{n}_out" for n in names])
        for r in records:
            w.writerow([r.step, f"{r.time_days:.12g}", r.agents_absorbed,
                        r.persons_emitted]
                       + [f"{v:.12g}" for v in r.compartment_out])
