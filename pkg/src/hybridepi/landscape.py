"""Occupancy landscape: histogram -> potential -> mesh fields.

The movement potential is V(x) = -(D/2) * ln(p_st(x)), where p_st is the
normalized long-run occupancy histogram of agent positions sampled hourly
over a representative week (weekday counted five times, Saturday and Sunday
once each).  Cells never visited carry NaN until filled with the maximum
observed value.  V is rescaled exactly proportionally under a change of the
diffusion coefficient, so it is computed once per dataset.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .events import DAY_TYPES, MobilityEvent, PlanSampler
from .mesh import TriMesh

DAY_WEIGHTS = {"weekday": 5.0, "saturday": 1.0, "sunday": 1.0}


@dataclass(frozen=True)
class Raster:
    """Row-major scalar grid; values live at cell centers.

    Row 0 is the bottom row (lowest y).  ``values[row, col]`` sits at
    (origin_x + (col + 0.5) * cell_size, origin_y + (row + 0.5) * cell_size).
    """

    origin: tuple[float, float]
    cell_size: float
    values: np.ndarray  # (height, width)

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if np.asarray(self.values).ndim != 2:
            raise ValueError("values must be a 2-D array")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        col = int((x - self.origin[0]) // self.cell_size)
        row = int((y - self.origin[1]) // self.cell_size)
        if not (0 <= col < self.width and 0 <= row < self.height):
            raise ValueError(f"point ({x}, {y}) outside raster")
        return row, col

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.origin[0] + (np.arange(self.width) + 0.5) * self.cell_size
        ys = self.origin[1] + (np.arange(self.height) + 0.5) * self.cell_size
        return xs, ys


def write_raster_csv(raster: Raster, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["origin_x", "origin_y", "cell_size", "width", "height"])
        w.writerow([f"{raster.origin[0]:.12g}", f"{raster.origin[1]:.12g}",
                    f"{raster.cell_size:.12g}", raster.width, raster.height])
        for row in raster.values:
            w.writerow([f"{v:.12g}" if np.isfinite(v) else "nan" for v in row])


def read_raster_csv(path) -> Raster:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, meta = rows[0], rows[1]
    if header[:5] != ["origin_x", "origin_y", "cell_size", "width", "height"]:
        raise ValueError("unexpected raster CSV header")
    width, height = int(meta[3]), int(meta[4])
    values = np.array([[float(v) for v in r] for r in rows[2:2 + height]])
    if values.shape != (height, width):
        raise ValueError("raster CSV body does not match declared dimensions")
    return Raster(origin=(float(meta[0]), float(meta[1])),
                  cell_size=float(meta[2]), values=values)


# ---------------------------------------------------------------------------
# Histogram and potential
# ---------------------------------------------------------------------------

def build_histogram(day_events: dict[str, list[MobilityEvent]],
                    grid: Raster) -> Raster:
    """Agent-hours per cell over a representative week.

    ``day_events`` maps day types to one-day event streams; each day type's
    hourly position samples are weighted by its weekly multiplicity (5/1/1).
    Cells never visited are NaN.  Events outside the grid raise with the
    offending coordinates listed.
    """
    counts = np.zeros((grid.height, grid.width))
    visited = np.zeros((grid.height, grid.width), dtype=bool)
    bad: list[tuple[float, float]] = []
    for dtype in DAY_TYPES:
        events = day_events.get(dtype, [])
        if not events:
            continue
        weight = DAY_WEIGHTS[dtype]
        sampler = PlanSampler(events)
        for hour in range(24):
            for agent, (x, y) in sampler.positions(hour * 3600.0).items():
                _ = agent
                try:
                    row, col = grid.cell_of(x, y)
                except ValueError:
                    bad.append((x, y))
                    continue
                counts[row, col] += weight
                visited[row, col] = True
    if bad:
        raise ValueError(f"events outside histogram grid at {sorted(set(bad))}")
    counts[~visited] = np.nan
    return replace(grid, values=counts)


def histogram_to_potential(h: Raster, D: float) -> Raster:
    """V = -(D/2) * ln(p) with p the histogram normalized over visited cells."""
    vals = h.values
    finite = np.isfinite(vals)
    if not finite.any():
        raise ValueError("histogram has no visited cells")
    total = vals[finite].sum()
    if total <= 0:
        raise ValueError("histogram total must be positive")
    with np.errstate(invalid="ignore", divide="ignore"):
        v = -(D / 2.0) * np.log(vals / total)
    v[~finite] = np.nan
    return replace(h, values=v)


def fill_unvisited(v: Raster) -> Raster:
    """Replace NaN cells by the maximum of the visited cells."""
    vals = v.values
    finite = np.isfinite(vals)
    if not finite.any():
        raise ValueError("raster is entirely NaN")
    filled = np.where(finite, vals, vals[finite].max())
    return replace(v, values=filled)


def raster_to_mesh(v: Raster, mesh: TriMesh) -> np.ndarray:
    """Bilinear interpolation of cell-center samples at each mesh node."""
    if not np.isfinite(v.values).all():
        raise ValueError("raster must be NaN-free before mesh transfer")
    xs, ys = v.centers()
    interp = RegularGridInterpolator((ys, xs), v.values,
                                     method="linear", bounds_error=True)
    try:
        return interp(mesh.nodes[:, ::-1])
    except ValueError as exc:
        raise ValueError(
            "mesh node outside the raster's cell-center lattice") from exc


def nodal_gradient(mesh: TriMesh, field: np.ndarray) -> np.ndarray:
    """Fan-area-weighted average of per-triangle P1 gradients, per node.

    Exact for affine fields on any mesh.
    """
    field = np.asarray(field, dtype=float)
    if field.shape != (mesh.n_nodes,):
        raise ValueError("field must have one value per node")
    tri = mesh.triangles
    a = mesh.nodes[tri[:, 0]]
    b = mesh.nodes[tri[:, 1]]
    c = mesh.nodes[tri[:, 2]]
    fa, fb, fc = field[tri[:, 0]], field[tri[:, 1]], field[tri[:, 2]]
    det = ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
           - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))
    gx = ((fb - fa) * (c[:, 1] - a[:, 1]) - (fc - fa) * (b[:, 1] - a[:, 1])) / det
    gy = ((fc - fa) * (b[:, 0] - a[:, 0]) - (fb - fa) * (c[:, 0] - a[:, 0])) / det
    tri_grad = np.column_stack([gx, gy])

    weighted = tri_grad * mesh.triangle_areas[:, None]
    acc = np.zeros((mesh.n_nodes, 2))
    np.add.at(acc, tri[:, 0], weighted)
    np.add.at(acc, tri[:, 1], weighted)
    np.add.at(acc, tri[:, 2], weighted)
    return acc / mesh.fan_areas()[:, None]


def fem_integral(mesh: TriMesh, field: np.ndarray) -> float:
    """Exact integral of the P1 interpolant: sum_i u_i * fan_area_i / 3."""
    return float(np.dot(np.asarray(field, dtype=float), mesh.fan_areas()) / 3.0)


def initial_distribution(mesh_V: np.ndarray, mesh: TriMesh) -> np.ndarray:
    """Inverse-potential density, normalized to unit integral over the mesh.

    The potential is shifted strictly positive first; the shift keeps the
    minimum node at a large finite weight instead of a division by zero.
    """
    v = np.asarray(mesh_V, dtype=float)
    if not np.isfinite(v).all():
        raise ValueError("potential must be finite at every node")
    span = v.max() - v.min()
    if span == 0:
        dens = np.ones_like(v)
    else:
        v_pos = v - v.min() + 1e-12 * span
        dens = 1.0 / v_pos
    return dens / fem_integral(mesh, dens)


# ---------------------------------------------------------------------------
# Bundled potential
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Potential:
    """Landscape on raster and mesh, tied to the diffusion value it used.

    Rescaling to another diffusion coefficient multiplies values and
    gradients by D'/D_ref exactly.
    """

    raster_V: Raster
    mesh_V: np.ndarray
    mesh_gradV: np.ndarray
    D_ref: float

    def rescaled(self, D_new: float) -> "Potential":
        f = D_new / self.D_ref
        return Potential(
            raster_V=replace(self.raster_V, values=self.raster_V.values * f),
            mesh_V=self.mesh_V * f,
            mesh_gradV=self.mesh_gradV * f,
            D_ref=D_new,
        )


def potential_from_histogram(hist: Raster, mesh: TriMesh, D: float) -> Potential:
    """Full pipeline: log-potential, NaN fill, mesh transfer, gradients."""
    v_raster = fill_unvisited(histogram_to_potential(hist, D))
    mesh_v = raster_to_mesh(v_raster, mesh)
    grad = nodal_gradient(mesh, mesh_v)
    return Potential(raster_V=v_raster, mesh_V=mesh_v, mesh_gradV=grad, D_ref=D)


def flat_potential(mesh: TriMesh, D: float) -> Potential:
    """Zero landscape (no drift); handy for tests and synthetic scenarios."""
    lo = mesh.nodes.min(axis=0)
    hi = mesh.nodes.max(axis=0)
    pad = 0.51 * max(hi[0] - lo[0], hi[1] - lo[1], 1.0)
    raster = Raster(origin=(lo[0] - pad, lo[1] - pad),
                    cell_size=pad,
                    values=np.zeros((int(np.ceil((hi[1] - lo[1]) / pad)) + 2,
                                     int(np.ceil((hi[0] - lo[0]) / pad)) + 2)))
    return Potential(raster_V=raster,
                     mesh_V=np.zeros(mesh.n_nodes),
                     mesh_gradV=np.zeros((mesh.n_nodes, 2)),
                     D_ref=D)
