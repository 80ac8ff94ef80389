"""Deterministic P1 finite-element solver for the compartment PDE system.

Each compartment density u obeys

    du/dt = D * lap(u) + div(grad(V) * u) + reactions,

discretized with linear elements on a triangle mesh and zero-Neumann
boundaries.  Time stepping is operator-split per step: the nodal reaction
system advances explicitly, then transport advances with implicit Euler.
The infection term is localized: the ball-averaged infectious density at a
node collapses to the nodal value, with the ball area lumped into the fitted
coefficient, so the susceptible loss is beta_eff * S * (I + SY) nodally.

Two drift discretizations are available.  ``gradient`` keeps the strong
drift term under the assumption lap(V) = 0 (appropriate for occupancy
landscapes, which are close to harmonic away from hotspots); ``divergence``
integrates the full divergence-form drift by parts, conserves mass to
machine precision for any V, and is used when validating against particle
ensembles in curved potentials.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .mesh import TriMesh
from .states import N_STATES, RateSet, HealthState

REACTION_SCHEMES = ("euler", "rk4")


class SolveError(RuntimeError):
    pass


@dataclass
class FemOperators:
    """Assembled mass/stiffness/drift matrices plus cached factorizations.

    Sign convention: the semi-discrete transport system is
    M du/dt = -K u - G u, with K symmetric positive semi-definite.
    """

    mesh: TriMesh
    M: sp.csr_matrix
    K: sp.csr_matrix
    G: sp.csr_matrix
    lumped: np.ndarray
    D: float
    drift_form: str
    _factor_cache: dict = field(default_factory=dict, repr=False)

    def transport_solver(self, dt: float):
        key = float(dt)
        if key not in self._factor_cache:
            A = (self.M + dt * (self.K + self.G)).tocsc()
            self._factor_cache[key] = splu(A)
        return self._factor_cache[key]


def assemble(mesh: TriMesh, gradV: np.ndarray, D: float,
             drift_form: str = "gradient") -> FemOperators:
    """Assemble P1 operators for diffusion D and nodal potential gradients.

    ``gradV`` holds one 2-vector per node; per triangle the drift uses the
    vertex average, consistent with the fan-averaged nodal gradients.
    """
    gradV = np.asarray(gradV, dtype=float)
    if gradV.shape != (mesh.n_nodes, 2):
        raise ValueError("gradV must be (n_nodes, 2)")
    if drift_form not in ("gradient", "divergence"):
        raise ValueError(f"unknown drift_form {drift_form!r}")

    tri = mesh.triangles
    n = mesh.n_nodes
    a = mesh.nodes[tri[:, 0]]
    b = mesh.nodes[tri[:, 1]]
    c = mesh.nodes[tri[:, 2]]
    area = mesh.triangle_areas

    # Basis gradients: grad(phi_i) = rot90(opposite edge) / (2A).
    gpx = np.stack([b[:, 1] - c[:, 1], c[:, 1] - a[:, 1], a[:, 1] - b[:, 1]],
                   axis=1) / (2 * area)[:, None]
    gpy = np.stack([c[:, 0] - b[:, 0], a[:, 0] - c[:, 0], b[:, 0] - a[:, 0]],
                   axis=1) / (2 * area)[:, None]

    gv_tri = gradV[tri].mean(axis=1)  # (n_tris, 2)

    rows, cols, k_vals, m_vals, a_vals = [], [], [], [], []
    for i in range(3):
        for j in range(3):
            rows.append(tri[:, i])
            cols.append(tri[:, j])
            k_vals.append(D * area * (gpx[:, i] * gpx[:, j]
                                      + gpy[:, i] * gpy[:, j]))
            m_vals.append(area / 12.0 * (2.0 if i == j else 1.0)
                          * np.ones(len(area)))
            # gradient form: rows weight phi_i by area/3, columns carry
            # grad(V).grad(phi_j)
            a_vals.append((gv_tri[:, 0] * gpx[:, j] + gv_tri[:, 1] * gpy[:, j])
                          * area / 3.0)

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    shape = (n, n)
    K = sp.csr_matrix((np.concatenate(k_vals), (rows, cols)), shape=shape)
    M = sp.csr_matrix((np.concatenate(m_vals), (rows, cols)), shape=shape)
    A_grad = sp.csr_matrix((np.concatenate(a_vals), (rows, cols)), shape=shape)

    # Divergence form follows from integration by parts of div(grad(V) u):
    # entries are the negated transpose of the gradient-form matrix.
    drift = A_grad if drift_form == "gradient" else -A_grad.T.tocsr()
    G = (-drift).tocsr()

    lumped = mesh.fan_areas() / 3.0
    return FemOperators(mesh=mesh, M=M, K=K, G=G, lumped=lumped, D=D,
                        drift_form=drift_form)


# ---------------------------------------------------------------------------
# Compartment field
# ---------------------------------------------------------------------------

@dataclass
class CompartmentField:
    """Per-node densities for the eight compartments (persons / m^2)."""

    mesh: TriMesh
    values: np.ndarray          # (8, n_nodes)
    time_days: float = 0.0
    clipped_mass: float = 0.0   # cumulative mass removed by negativity clips

    def copy(self) -> "CompartmentField":
        return CompartmentField(mesh=self.mesh, values=self.values.copy(),
                                time_days=self.time_days,
                                clipped_mass=self.clipped_mass)


def initialize(mesh: TriMesh, init_dist: np.ndarray,
               totals: np.ndarray) -> CompartmentField:
    """Scale a unit-integral spatial distribution by per-compartment totals."""
    totals = np.asarray(totals, dtype=float)
    if totals.shape != (N_STATES,):
        raise ValueError(f"totals must have {N_STATES} entries")
    if np.any(totals < 0):
        raise ValueError("compartment totals must be non-negative")
    init_dist = np.asarray(init_dist, dtype=float)
    values = totals[:, None] * init_dist[None, :]
    return CompartmentField(mesh=mesh, values=values)


def total_mass(field: CompartmentField) -> np.ndarray:
    """FEM integral (lumped inner product) of each compartment."""
    lumped = field.mesh.fan_areas() / 3.0
    return field.values @ lumped


def effective_beta(activity_out_of_home_change_pct: float,
                   beta_const: float) -> float:
    """Lumped infection coefficient (1 - pct/100) * beta_const.

    A positive percentage means out-of-home activity is reduced by that
    share, scaling infections down; 100 turns infections off entirely.
    """
    return (1.0 - activity_out_of_home_change_pct / 100.0) * beta_const


def reaction_rates(values: np.ndarray, beta_eff: float,
                   rates: RateSet) -> np.ndarray:
    """Nodal reaction vector field of the compartment system."""
    S, E, I, SY, H, C, HC, _ = values
    infect = beta_eff * S * (I + SY)
    out = np.empty_like(values)
    out[HealthState.S] = -infect
    out[HealthState.E] = infect - rates.sigma * E
    out[HealthState.I] = rates.sigma * E - (rates.phi_i + rates.gamma) * I
    out[HealthState.SY] = rates.gamma * I - (rates.phi_sy + rates.eta) * SY
    out[HealthState.H] = rates.eta * SY - (rates.phi_h + rates.kappa) * H
    out[HealthState.C] = rates.kappa * H - rates.eta_c * C
    out[HealthState.HC] = rates.eta_c * C - rates.phi_hc * HC
    out[HealthState.R] = (rates.phi_i * I + rates.phi_sy * SY
                          + rates.phi_h * H + rates.phi_hc * HC)
    return out


def _advance_reactions(values: np.ndarray, beta_eff: float, rates: RateSet,
                       dt: float, scheme: str) -> np.ndarray:
    if scheme == "euler":
        return values + dt * reaction_rates(values, beta_eff, rates)
    if scheme == "rk4":
        k1 = reaction_rates(values, beta_eff, rates)
        k2 = reaction_rates(values + 0.5 * dt * k1, beta_eff, rates)
        k3 = reaction_rates(values + 0.5 * dt * k2, beta_eff, rates)
        k4 = reaction_rates(values + dt * k3, beta_eff, rates)
        return values + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    raise ValueError(f"unknown reaction scheme {scheme!r}")


def step(field: CompartmentField, ops: FemOperators, beta_eff: float,
         rates: RateSet, dt: float,
         reaction_scheme: str = "rk4") -> CompartmentField:
    """One split step: explicit nodal reactions, implicit transport.

    Negative nodal values after the solve are clipped to zero with the
    removed mass accumulated on the field.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = _advance_reactions(field.values, beta_eff, rates, dt, reaction_scheme)

    solver = ops.transport_solver(dt)
    rhs = (ops.M @ u.T)
    new = solver.solve(rhs).T
    residual = (ops.M + dt * (ops.K + ops.G)) @ new.T - rhs
    rel = np.linalg.norm(residual) / max(np.linalg.norm(rhs), 1e-300)
    if not np.isfinite(rel) or rel > 1e-8:
        raise SolveError(f"transport solve failed: relative residual {rel:.3e}")

    clipped = 0.0
    neg = new < 0
    if neg.any():
        clipped = float((np.where(neg, -new, 0.0) @ ops.lumped).sum())
        new = np.where(neg, 0.0, new)

    return CompartmentField(mesh=field.mesh, values=new,
                            time_days=field.time_days + dt,
                            clipped_mass=field.clipped_mass + clipped)
