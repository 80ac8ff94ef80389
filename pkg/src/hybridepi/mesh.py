"""Triangular meshes: Triangle-format I/O, geometry queries, fixtures.

Meshes are planar (projected coordinates in meters) and immutable after
construction.  Generation of production meshes is delegated to the external
``triangle`` tool; this module only parses and validates its ``.node`` /
``.ele`` / ``.poly`` output and answers the geometric queries the PDE solver
and the domain-coupling logic need (point location, per-node triangle fans).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MeshParseError(ValueError):
    """Raised for malformed Triangle-format input; message names the line."""


class Outside:
    """Sentinel result of point location for points in no triangle."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "Outside"


OUTSIDE = Outside()


@dataclass(frozen=True)
class DomainPolygon:
    """Closed boundary ring (counter-clockwise or clockwise) plus hole seeds."""

    vertices: np.ndarray            # (n, 2)
    holes: np.ndarray | None = None  # (m, 2) interior seed points

    def area(self) -> float:
        """Shoelace area of the ring (holes are seed points, not subtracted)."""
        x = self.vertices[:, 0]
        y = self.vertices[:, 1]
        return 0.5 * abs(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


@dataclass(frozen=True)
class TriMesh:
    """P1 triangle mesh with per-node fans and boundary markers.

    ``node_fans[k]`` lists the indices of triangles incident to node ``k``;
    ``triangle_areas`` are strictly positive (degenerate triangles are a
    parse/construction error).
    """

    nodes: np.ndarray           # (n_nodes, 2) float64
    triangles: np.ndarray       # (n_tris, 3) int64
    boundary_nodes: frozenset[int]
    node_fans: tuple[tuple[int, ...], ...] = field(repr=False)
    triangle_areas: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def total_area(self) -> float:
        return float(self.triangle_areas.sum())

    def fan_areas(self) -> np.ndarray:
        """Per-node sum of incident triangle areas (vectorized fan_area)."""
        out = np.zeros(self.n_nodes)
        np.add.at(out, self.triangles.ravel(),
                  np.repeat(self.triangle_areas, 3))
        return out

    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)


def _signed_areas(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a = nodes[triangles[:, 0]]
    b = nodes[triangles[:, 1]]
    c = nodes[triangles[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                  - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))


def _boundary_nodes_from_topology(triangles: np.ndarray) -> frozenset[int]:
    # Edges appearing in exactly one triangle lie on the boundary.
    edges = np.concatenate([triangles[:, [0, 1]],
                            triangles[:, [1, 2]],
                            triangles[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    return frozenset(np.unique(uniq[counts == 1]).tolist())


def build_mesh(nodes: np.ndarray, triangles: np.ndarray,
               boundary_nodes: set[int] | None = None) -> TriMesh:
    """Construct a validated TriMesh from raw arrays.

    Triangles are re-oriented counter-clockwise; zero-area triangles raise.
    Boundary nodes default to the topological boundary.
    """
    nodes = np.asarray(nodes, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise MeshParseError("triangle array must be (n, 3)")
    if triangles.size and (triangles.min() < 0 or triangles.max() >= len(nodes)):
        raise MeshParseError("triangle references node index out of range")

    signed = _signed_areas(nodes, triangles)
    flip = signed < 0
    if np.any(flip):
        triangles = triangles.copy()
        triangles[flip] = triangles[flip][:, ::-1]
        signed = np.abs(signed)
    scale = max(np.abs(nodes).max(), 1.0) if len(nodes) else 1.0
    if np.any(signed <= 1e-14 * scale * scale):
        bad = int(np.argmin(signed))
        raise MeshParseError(f"degenerate (zero-area) triangle at index {bad}")

    fans: list[list[int]] = [[] for _ in range(len(nodes))]
    for t, (i, j, k) in enumerate(triangles):
        fans[i].append(t)
        fans[j].append(t)
        fans[k].append(t)

    if boundary_nodes is None:
        boundary_nodes = _boundary_nodes_from_topology(triangles)

    return TriMesh(
        nodes=nodes,
        triangles=triangles,
        boundary_nodes=frozenset(int(i) for i in boundary_nodes),
        node_fans=tuple(tuple(f) for f in fans),
        triangle_areas=signed.astype(float),
    )


# ---------------------------------------------------------------------------
# Triangle plain-text formats (.node / .ele / .poly)
# ---------------------------------------------------------------------------

def _data_lines(text: str):
    """Yield (line_number, tokens) for non-comment, non-blank lines."""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def _parse_node_text(node_text: str):
    lines = _data_lines(node_text)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise MeshParseError("empty .node input") from None
    if len(header) < 2:
        raise MeshParseError(f".node line {lineno}: malformed header")
    try:
        n_nodes = int(header[0])
        dim = int(header[1])
        n_attr = int(header[2]) if len(header) > 2 else 0
        n_mark = int(header[3]) if len(header) > 3 else 0
    except ValueError:
        raise MeshParseError(f".node line {lineno}: malformed header") from None
    if dim != 2:
        raise MeshParseError(f".node line {lineno}: expected dimension 2, got {dim}")

    ids = np.empty(n_nodes, dtype=np.int64)
    xy = np.empty((n_nodes, 2), dtype=float)
    markers = np.zeros(n_nodes, dtype=np.int64)
    for row in range(n_nodes):
        try:
            lineno, tok = next(lines)
        except StopIteration:
            raise MeshParseError(
                f".node: header promises {n_nodes} nodes, got {row}") from None
        want = 3 + n_attr + n_mark
        if len(tok) < want:
            raise MeshParseError(f".node line {lineno}: expected {want} fields")
        try:
            ids[row] = int(tok[0])
            xy[row, 0] = float(tok[1])
            xy[row, 1] = float(tok[2])
            if n_mark:
                markers[row] = int(tok[3 + n_attr])
        except ValueError:
            raise MeshParseError(f".node line {lineno}: bad numeric field") from None
    return ids, xy, markers if n_mark else None


def parse_triangle_files(node_text: str, ele_text: str,
                         poly_text: str | None = None) -> TriMesh:
    """Parse Triangle ``.node`` + ``.ele`` (and optional ``.poly``) text.

    Indexing base (0 or 1) is auto-detected from the first node id.  Boundary
    nodes come from the .node boundary-marker column when present, otherwise
    from mesh topology.  Errors carry the offending line number.
    """
    ids, xy, markers = _parse_node_text(node_text)
    base = int(ids[0]) if len(ids) else 0
    if base not in (0, 1):
        raise MeshParseError(f".node: first node index {base} is neither 0 nor 1")
    if not np.array_equal(ids, np.arange(base, base + len(ids))):
        raise MeshParseError(".node: node ids are not consecutive")

    lines = _data_lines(ele_text)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise MeshParseError("empty .ele input") from None
    try:
        n_tris = int(header[0])
        nodes_per = int(header[1]) if len(header) > 1 else 3
    except ValueError:
        raise MeshParseError(f".ele line {lineno}: malformed header") from None
    if nodes_per != 3:
        raise MeshParseError(
            f".ele line {lineno}: only 3-node triangles supported, got {nodes_per}")

    tris = np.empty((n_tris, 3), dtype=np.int64)
    for row in range(n_tris):
        try:
            lineno, tok = next(lines)
        except StopIteration:
            raise MeshParseError(
                f".ele: header promises {n_tris} triangles, got {row}") from None
        if len(tok) < 4:
            raise MeshParseError(f".ele line {lineno}: expected 4+ fields")
        try:
            tris[row] = [int(tok[1]), int(tok[2]), int(tok[3])]
        except ValueError:
            raise MeshParseError(f".ele line {lineno}: bad node index") from None
        lo, hi = tris[row].min(), tris[row].max()
        if lo < base or hi >= base + len(ids):
            raise MeshParseError(f".ele line {lineno}: node index out of range")
    tris -= base

    boundary = None
    if markers is not None:
        boundary = {int(i) for i in np.flatnonzero(markers != 0)}

    try:
        mesh = build_mesh(xy, tris, boundary_nodes=boundary)
    except MeshParseError:
        # Re-derive the failing element for a line-numbered message.
        signed = np.abs(_signed_areas(xy, tris))
        scale = max(np.abs(xy).max(), 1.0)
        bad = np.flatnonzero(signed <= 1e-14 * scale * scale)
        if len(bad):
            raise MeshParseError(
                f".ele data line {bad[0] + 1}: zero-area triangle") from None
        raise

    if poly_text is not None:
        parse_poly(poly_text, base_nodes=xy, base=base)
    return mesh


def parse_poly(poly_text: str, base_nodes: np.ndarray | None = None,
               base: int = 1) -> DomainPolygon:
    """Parse a Triangle ``.poly`` file into the domain boundary polygon.

    When the vertex section declares zero vertices the segment endpoints are
    resolved against ``base_nodes`` (the accompanying .node coordinates).
    The segment list is walked into a single closed ring.
    """
    lines = _data_lines(poly_text)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise MeshParseError("empty .poly input") from None
    n_vert = int(header[0])

    coords: dict[int, tuple[float, float]] = {}
    if n_vert > 0:
        n_attr = int(header[2]) if len(header) > 2 else 0
        first = None
        for _ in range(n_vert):
            lineno, tok = next(lines)
            idx = int(tok[0])
            if first is None:
                first = idx
            coords[idx] = (float(tok[1]), float(tok[2]))
        base = first if first in (0, 1) else base
        _ = n_attr
    elif base_nodes is not None:
        coords = {base + i: (float(x), float(y))
                  for i, (x, y) in enumerate(base_nodes)}
    else:
        raise MeshParseError(".poly declares 0 vertices and no .node supplied")

    try:
        lineno, header = next(lines)
    except StopIteration:
        raise MeshParseError(".poly: missing segment header") from None
    n_seg = int(header[0])
    segments = []
    for _ in range(n_seg):
        lineno, tok = next(lines)
        if len(tok) < 3:
            raise MeshParseError(f".poly line {lineno}: segment needs 2 endpoints")
        segments.append((int(tok[1]), int(tok[2])))

    holes = []
    for lineno, tok in lines:
        if len(tok) == 1:
            continue  # hole-count line
        holes.append((float(tok[1]), float(tok[2])))

    if not segments:
        raise MeshParseError(".poly: no boundary segments")

    # Chain segments into a ring.
    nxt = {a: b for a, b in segments}
    start = segments[0][0]
    ring = [start]
    cur = nxt.get(start)
    guard = 0
    while cur is not None and cur != start:
        ring.append(cur)
        cur = nxt.get(cur)
        guard += 1
        if guard > len(segments) + 1:
            raise MeshParseError(".poly: boundary segments do not form a ring")
    if cur != start:
        raise MeshParseError(".poly: boundary ring is not closed")

    verts = np.array([coords[i] for i in ring], dtype=float)
    holes_arr = np.array(holes, dtype=float) if holes else None
    return DomainPolygon(vertices=verts, holes=holes_arr)


def serialize_triangle_files(mesh: TriMesh) -> tuple[str, str]:
    """Write the mesh back to 1-based .node/.ele text (round-trip safe)."""
    node_lines = [f"{mesh.n_nodes} 2 0 1"]
    for i, (x, y) in enumerate(mesh.nodes):
        marker = 1 if i in mesh.boundary_nodes else 0
        node_lines.append(f"{i + 1} {x!r} {y!r} {marker}")
    ele_lines = [f"{mesh.n_triangles} 3 0"]
    for t, (i, j, k) in enumerate(mesh.triangles):
        ele_lines.append(f"{t + 1} {i + 1} {j + 1} {k + 1}")
    return "\n".join(node_lines) + "\n", "\n".join(ele_lines) + "\n"


# ---------------------------------------------------------------------------
# Geometric queries
# ---------------------------------------------------------------------------

class PointLocator:
    """Uniform-grid accelerated point-in-triangle queries.

    Ties on shared edges/vertices resolve to the lowest triangle index, so
    repeated queries are reproducible across runs.
    """

    def __init__(self, mesh: TriMesh, rel_tol: float = 1e-9):
        self.mesh = mesh
        a = mesh.nodes[mesh.triangles[:, 0]]
        b = mesh.nodes[mesh.triangles[:, 1]]
        c = mesh.nodes[mesh.triangles[:, 2]]
        self._a = a
        self._e1 = b - a
        self._e2 = c - a
        self._det = (self._e1[:, 0] * self._e2[:, 1]
                     - self._e1[:, 1] * self._e2[:, 0])
        self._tol = rel_tol

        lo = mesh.nodes.min(axis=0)
        hi = mesh.nodes.max(axis=0)
        span = np.maximum(hi - lo, 1e-12)
        # ~2 triangles per cell on average
        n_cells = max(1, int(np.sqrt(mesh.n_triangles / 2.0)))
        self._lo = lo
        self._cell = span / n_cells
        self._n = n_cells
        grid: dict[tuple[int, int], list[int]] = {}
        tmin = np.minimum(np.minimum(a, b), c)
        tmax = np.maximum(np.maximum(a, b), c)
        imin = np.clip(((tmin - lo) / self._cell).astype(int), 0, n_cells - 1)
        imax = np.clip(((tmax - lo) / self._cell).astype(int), 0, n_cells - 1)
        for t in range(mesh.n_triangles):
            for ix in range(imin[t, 0], imax[t, 0] + 1):
                for iy in range(imin[t, 1], imax[t, 1] + 1):
                    grid.setdefault((ix, iy), []).append(t)
        self._grid = {k: np.array(sorted(v)) for k, v in grid.items()}

    def _candidates(self, p) -> np.ndarray:
        ix = int((p[0] - self._lo[0]) / self._cell[0])
        iy = int((p[1] - self._lo[1]) / self._cell[1])
        if not (0 <= ix < self._n and 0 <= iy < self._n):
            return np.empty(0, dtype=int)
        return self._grid.get((ix, iy), np.empty(0, dtype=int))

    def locate(self, p):
        """Lowest-index triangle containing p, or OUTSIDE."""
        cand = self._candidates(p)
        if not len(cand):
            return OUTSIDE
        d = np.asarray(p, dtype=float) - self._a[cand]
        det = self._det[cand]
        u = (d[:, 0] * self._e2[cand, 1] - d[:, 1] * self._e2[cand, 0]) / det
        v = (self._e1[cand, 0] * d[:, 1] - self._e1[cand, 1] * d[:, 0]) / det
        ok = (u >= -self._tol) & (v >= -self._tol) & (u + v <= 1.0 + self._tol)
        hits = cand[ok]
        if not len(hits):
            return OUTSIDE
        return int(hits.min())

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized inside-domain test for an (n, 2) array of points."""
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(len(pts), dtype=bool)
        inside_box = np.all((pts >= self._lo) &
                            (pts <= self._lo + self._cell * self._n), axis=1)
        for i in np.flatnonzero(inside_box):
            out[i] = self.locate(pts[i]) is not OUTSIDE
        return out


def locate_point(mesh: TriMesh, p, locator: PointLocator | None = None):
    """Triangle index containing p (barycentric tolerance 1e-9), or OUTSIDE."""
    if locator is None:
        locator = PointLocator(mesh)
    return locator.locate(p)


def fan_area(mesh: TriMesh, node: int) -> float:
    """Total area of the triangles incident to ``node``."""
    if not 0 <= node < mesh.n_nodes:
        raise IndexError(f"node index {node} out of range")
    fan = mesh.node_fans[node]
    return float(mesh.triangle_areas[list(fan)].sum())


def nearest_node(mesh: TriMesh, p) -> int:
    """Index of the node closest to p; ties go to the lowest index."""
    d = mesh.nodes - np.asarray(p, dtype=float)
    return int(np.argmin(np.einsum("ij,ij->i", d, d)))


# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------

def rect_mesh(x0: float, y0: float, x1: float, y1: float,
              nx: int, ny: int) -> TriMesh:
    """Structured triangulation of [x0,x1]x[y0,y1] with nx*ny cells.

    Each cell splits along its lower-left/upper-right diagonal; node ordering
    is row-major from the bottom-left corner.
    """
    if x1 <= x0 or y1 <= y0 or nx < 1 or ny < 1:
        raise ValueError("rect_mesh needs a positive-area box and nx, ny >= 1")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    xx, yy = np.meshgrid(xs, ys)
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    def nid(ix, iy):
        return iy * (nx + 1) + ix

    tris = []
    for iy in range(ny):
        for ix in range(nx):
            n00 = nid(ix, iy)
            n10 = nid(ix + 1, iy)
            n01 = nid(ix, iy + 1)
            n11 = nid(ix + 1, iy + 1)
            tris.append((n00, n10, n11))
            tris.append((n00, n11, n01))
    return build_mesh(nodes, np.array(tris, dtype=np.int64))
