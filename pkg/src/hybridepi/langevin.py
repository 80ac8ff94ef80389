"""Motion-based reference ABM: overdamped Langevin agents on a potential.

Positions follow dX = -grad(V) dt + sqrt(2D) dB (Euler-Maruyama), reflected
at the potential raster's bounding box by re-sampling the noise.  Contacts
are proximity-based (distance <= d_int), and health transitions reuse the
shared rate machinery with a spatial infection rate for susceptibles.

This module validates the drift-diffusion limit: a large ensemble evolved
here should match the single-compartment density PDE started from the same
distribution, which is the link between the particle picture and the
continuum solver.  It is not part of the production hybrid path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .landscape import Potential, Raster
from .mesh import TriMesh
from . import pde
from .states import HealthState, RateSet, step_progression


class RasterGradient:
    """Bilinear gradient field of a raster potential, clamped at the rim."""

    def __init__(self, raster: Raster):
        self.raster = raster
        xs, ys = raster.centers()
        gy, gx = np.gradient(raster.values, raster.cell_size)
        self._xs, self._ys = xs, ys
        self._gx, self._gy = gx, gy

    def _bilinear(self, grid: np.ndarray, pts: np.ndarray) -> np.ndarray:
        xs, ys = self._xs, self._ys
        fx = np.clip((pts[:, 0] - xs[0]) / self.raster.cell_size,
                     0, len(xs) - 1 - 1e-12)
        fy = np.clip((pts[:, 1] - ys[0]) / self.raster.cell_size,
                     0, len(ys) - 1 - 1e-12)
        ix = fx.astype(int)
        iy = fy.astype(int)
        tx = fx - ix
        ty = fy - iy
        v00 = grid[iy, ix]
        v10 = grid[iy, ix + 1] if grid.shape[1] > 1 else v00
        v01 = grid[iy + 1, ix] if grid.shape[0] > 1 else v00
        v11 = grid[iy + 1, ix + 1] if min(grid.shape) > 1 else v00
        return ((1 - tx) * (1 - ty) * v00 + tx * (1 - ty) * v10
                + (1 - tx) * ty * v01 + tx * ty * v11)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.column_stack([self._bilinear(self._gx, pts),
                                self._bilinear(self._gy, pts)])

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        r = self.raster
        lo = np.array(r.origin)
        hi = lo + r.cell_size * np.array([r.width, r.height])
        return lo, hi


def step_langevin(positions: np.ndarray, potential: Potential, D: float,
                  dt: float, rng: np.random.Generator,
                  grad: RasterGradient | None = None,
                  bounds: tuple[np.ndarray, np.ndarray] | None = None,
                  max_attempts: int = 100) -> np.ndarray:
    """One Euler-Maruyama step with reflecting box boundaries.

    The reflecting box defaults to the potential raster's extent; agents
    pushed outside re-sample their noise (drift kept) up to ``max_attempts``
    times, then clamp onto the box.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if grad is None:
        grad = RasterGradient(potential.raster_V)
    positions = np.asarray(positions, dtype=float)
    lo, hi = bounds if bounds is not None else grad.bounds()
    drifted = positions - grad(positions) * dt
    scale = np.sqrt(2.0 * D * dt)
    new = drifted + scale * rng.standard_normal(positions.shape)
    for _ in range(max_attempts):
        outside = np.any((new < lo) | (new > hi), axis=1)
        if not outside.any():
            break
        idx = np.flatnonzero(outside)
        new[idx] = drifted[idx] + scale * rng.standard_normal((len(idx), 2))
    return np.clip(new, lo, hi)


# ---------------------------------------------------------------------------
# Proximity contacts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContactGraph:
    """Symmetric proximity adjacency: connected iff distance <= d_int."""

    n: int
    d_int: float
    pairs: np.ndarray   # (m, 2) with i < j

    def neighbor_counts(self, mask: np.ndarray) -> np.ndarray:
        """Per-agent number of neighbors for which ``mask`` holds."""
        counts = np.zeros(self.n, dtype=np.int64)
        if len(self.pairs):
            i, j = self.pairs[:, 0], self.pairs[:, 1]
            np.add.at(counts, i, mask[j].astype(np.int64))
            np.add.at(counts, j, mask[i].astype(np.int64))
        return counts

    def dense(self) -> np.ndarray:
        A = np.zeros((self.n, self.n), dtype=np.int8)
        if len(self.pairs):
            A[self.pairs[:, 0], self.pairs[:, 1]] = 1
            A[self.pairs[:, 1], self.pairs[:, 0]] = 1
        return A


def contact_graph(positions: np.ndarray, d_int: float) -> ContactGraph:
    if d_int <= 0:
        raise ValueError("d_int must be positive")
    positions = np.asarray(positions, dtype=float)
    tree = cKDTree(positions)
    pairs = tree.query_pairs(d_int, output_type="ndarray")
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))] if len(pairs) \
        else pairs.reshape(0, 2)
    return ContactGraph(n=len(positions), d_int=d_int, pairs=pairs)


def step_states_spatial(health: np.ndarray, graph: ContactGraph,
                        rates: RateSet, beta_spatial: float, dt: float,
                        rng: np.random.Generator) -> np.ndarray:
    """Advance health states with proximity-driven infection.

    A susceptible's infection rate is beta_spatial times its number of
    infectious (I or SY) neighbors; all other transitions follow the shared
    progression rules.  ``health`` is modified in place and returned.
    """
    infectious = ((health == HealthState.I) | (health == HealthState.SY))
    n_inf = graph.neighbor_counts(infectious)
    extra = np.where(health == HealthState.S, beta_spatial * n_inf, 0.0)
    return step_progression(health, rates, dt, rng, extra_rates=extra,
                            extra_dest=int(HealthState.E))


# ---------------------------------------------------------------------------
# Fokker-Planck consistency check
# ---------------------------------------------------------------------------

def compare_to_pde(n_agents: int, potential: Potential, D: float,
                   horizon_days: float, mesh: TriMesh,
                   dt: float, rng: np.random.Generator,
                   drift_form: str = "divergence") -> float:
    """Normalized L1 gap between a Langevin ensemble and the density PDE.

    Both start from the uniform distribution on the mesh's bounding box
    (the mesh is expected to fill it).  The ensemble is binned to mesh nodes
    by nearest node and compared against the lumped nodal masses of the
    single-compartment PDE at the end time.
    """
    lo = mesh.nodes.min(axis=0)
    hi = mesh.nodes.max(axis=0)
    positions = rng.uniform(lo, hi, size=(n_agents, 2))

    grad = RasterGradient(potential.raster_V)
    ops = pde.assemble(mesh, potential.mesh_gradV, D, drift_form=drift_form)
    area = mesh.total_area()
    u = np.full(mesh.n_nodes, 1.0 / area)

    n_steps = int(round(horizon_days / dt))
    solver = ops.transport_solver(dt)
    box = (lo, hi)   # reflect at the mesh box so both models share walls
    for _ in range(n_steps):
        positions = step_langevin(positions, potential, D, dt, rng,
                                  grad=grad, bounds=box)
        u = solver.solve(ops.M @ u)

    tree = cKDTree(mesh.nodes)
    _, node_of = tree.query(positions)
    counts = np.bincount(node_of, minlength=mesh.n_nodes)
    p_emp = counts / counts.sum()
    q = u * (mesh.fan_areas() / 3.0)
    q = q / q.sum()
    return float(np.abs(p_emp - q).sum())


def quadratic_bowl_potential(mesh: TriMesh, k: float, cell: float,
                             pad_cells: int = 2) -> Potential:
    """V = 0.5*k*|x - center|^2 sampled on a raster covering the mesh."""
    lo = mesh.nodes.min(axis=0)
    hi = mesh.nodes.max(axis=0)
    center = 0.5 * (lo + hi)
    width = int(np.ceil((hi[0] - lo[0]) / cell)) + 2 * pad_cells
    height = int(np.ceil((hi[1] - lo[1]) / cell)) + 2 * pad_cells
    origin = (center[0] - width * cell / 2.0, center[1] - height * cell / 2.0)
    raster = Raster(origin=origin, cell_size=cell,
                    values=np.zeros((height, width)))
    xs, ys = raster.centers()
    xx, yy = np.meshgrid(xs, ys)
    vals = 0.5 * k * ((xx - center[0]) ** 2 + (yy - center[1]) ** 2)
    raster = Raster(origin=origin, cell_size=cell, values=vals)

    mesh_v = 0.5 * k * np.sum((mesh.nodes - center) ** 2, axis=1)
    grad_v = k * (mesh.nodes - center)
    return Potential(raster_V=raster, mesh_V=mesh_v, mesh_gradV=grad_v,
                     D_ref=1.0)
