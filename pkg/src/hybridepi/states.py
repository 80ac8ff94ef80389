"""Health states and stochastic transition machinery.

Eight compartments: S, E, I (infectious pre-symptomatic), SY (symptomatic),
H (hospitalized), C (critical), HC (hospitalized after critical), R.
Progression edges and per-edge rates:

    E  -> I          sigma
    I  -> SY | R     gamma | phi_i
    SY -> H  | R     eta   | phi_sy
    H  -> C  | R     kappa | phi_h
    C  -> HC         eta_c
    HC -> R          phi_hc

S -> E is driven by contact (facility co-presence or spatial proximity) and
handled by the callers.  A state with total outgoing rate L transitions
within a step of length dt with probability 1 - exp(-L*dt); the destination
is drawn proportionally to the edge rates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np


class HealthState(IntEnum):
    S = 0
    E = 1
    I = 2
    SY = 3
    H = 4
    C = 5
    HC = 6
    R = 7


STATE_NAMES = tuple(s.name for s in HealthState)
N_STATES = len(HealthState)

INFECTIOUS_STATES = (HealthState.I, HealthState.SY)


@dataclass(frozen=True)
class RateSet:
    """Transition rates (1/day), infection-rate schedule, and diffusion.

    ``beta_const_intervals`` is an ordered list of (start_day, value) pairs;
    the value applies from its start day (in days from simulation start)
    until the next interval begins.  The contact radius is not a standalone
    parameter: it is lumped into the fitted constant.
    """

    sigma: float
    gamma: float
    eta: float
    kappa: float
    eta_c: float
    phi_i: float
    phi_sy: float
    phi_h: float
    phi_hc: float
    beta_const_intervals: tuple[tuple[float, float], ...] = ((0.0, 0.0),)
    D: float = 1e-6

    def __post_init__(self):
        for name in ("sigma", "gamma", "eta", "kappa", "eta_c",
                     "phi_i", "phi_sy", "phi_h", "phi_hc"):
            if getattr(self, name) < 0:
                raise ValueError(f"rate {name} must be >= 0")
        starts = [s for s, _ in self.beta_const_intervals]
        if sorted(starts) != starts:
            raise ValueError("beta_const_intervals must be ordered by start day")

    def beta_const_at(self, t_days: float) -> float:
        value = self.beta_const_intervals[0][1]
        for start, v in self.beta_const_intervals:
            if t_days >= start:
                value = v
            else:
                break
        return value

    def outgoing(self, state: HealthState) -> tuple[tuple[HealthState, float], ...]:
        """(destination, rate) edges leaving ``state`` (empty for S and R)."""
        table = {
            HealthState.E: ((HealthState.I, self.sigma),),
            HealthState.I: ((HealthState.SY, self.gamma),
                            (HealthState.R, self.phi_i)),
            HealthState.SY: ((HealthState.H, self.eta),
                             (HealthState.R, self.phi_sy)),
            HealthState.H: ((HealthState.C, self.kappa),
                            (HealthState.R, self.phi_h)),
            HealthState.C: ((HealthState.HC, self.eta_c),),
            HealthState.HC: ((HealthState.R, self.phi_hc),),
        }
        return table.get(HealthState(state), ())


# Edges kept as flat arrays for the vectorized sampler.
_EDGE_SOURCE = [HealthState.E, HealthState.I, HealthState.I, HealthState.SY,
                HealthState.SY, HealthState.H, HealthState.H, HealthState.C,
                HealthState.HC]
_EDGE_DEST = [HealthState.I, HealthState.SY, HealthState.R, HealthState.H,
              HealthState.R, HealthState.C, HealthState.R, HealthState.HC,
              HealthState.R]
_EDGE_RATE_ATTR = ["sigma", "gamma", "phi_i", "eta", "phi_sy", "kappa",
                   "phi_h", "eta_c", "phi_hc"]

ALLOWED_TRANSITIONS = frozenset(
    {(int(s), int(d)) for s, d in zip(_EDGE_SOURCE, _EDGE_DEST)}
    | {(int(HealthState.S), int(HealthState.E))}
)


def step_progression(health: np.ndarray, rates: RateSet, dt: float,
                     rng: np.random.Generator,
                     extra_rates: np.ndarray | None = None,
                     extra_dest: int = int(HealthState.E)) -> np.ndarray:
    """Advance non-susceptible compartments of ``health`` in place by dt.

    ``extra_rates``, when given, adds a per-agent rate toward ``extra_dest``
    (used by the proximity-contact reference model, where susceptibles gain
    an infection rate proportional to infectious neighbors).  Returns the
    array for convenience.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = len(health)
    total = np.zeros(n)
    per_edge = np.zeros((len(_EDGE_SOURCE), n))
    for e, (src, attr) in enumerate(zip(_EDGE_SOURCE, _EDGE_RATE_ATTR)):
        mask = health == src
        if np.any(mask):
            rate = getattr(rates, attr)
            per_edge[e, mask] = rate
            total[mask] += rate
    if extra_rates is not None:
        total = total + extra_rates

    movable = total > 0
    p_move = np.zeros(n)
    p_move[movable] = -np.expm1(-total[movable] * dt)
    moves = rng.random(n) < p_move
    idx = np.flatnonzero(moves)
    if not len(idx):
        return health

    # Destination choice proportional to edge rates, one uniform per mover.
    u = rng.random(len(idx)) * total[idx]
    new_state = health[idx].copy()
    cum = np.zeros(len(idx))
    decided = np.zeros(len(idx), dtype=bool)
    for e, dest in enumerate(_EDGE_DEST):
        cum = cum + per_edge[e, idx]
        pick = (~decided) & (u < cum)
        new_state[pick] = int(dest)
        decided |= pick
    if extra_rates is not None:
        new_state[~decided] = extra_dest
        decided[:] = True
    health[idx[decided]] = new_state[decided]
    return health


def transition_probability(rates: RateSet, state: HealthState, dt: float) -> float:
    """Closed-form per-step probability 1 - exp(-L*dt) of leaving ``state``."""
    lam = sum(r for _, r in rates.outgoing(state))
    return -np.expm1(-lam * dt)
