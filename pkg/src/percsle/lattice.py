"""Triangular/hexagonal lattice geometry and marked discrete domains.

Cells are faces of a pointy-top hexagonal tiling addressed by axial
integer coordinates (q, r).  With mesh delta (= hexagon circumradius =
hexagon side), the cell center sits at

    center(q, r) = delta * (sqrt(3) * (q + r/2), 1.5 * r).

Hexagon corners live on an exact integer sublattice: measuring x in
units of sqrt(3)*delta/2 and y in units of delta/2, the center of cell
(q, r) is the integer point (2q + r, 3r) and its six corners are that
point plus the offsets in ``CORNER_OFFSETS``.  All topology (boundary
cycle, arcs, mark snapping) is computed on these integer corners, so it
is immune to floating-point trouble.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SQRT3 = math.sqrt(3.0)

# Axial neighbor steps, counterclockwise starting from +q (angle 0).
AXIAL_DIRS = ((1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1))

# Corner i sits at angle 30 + 60*i degrees from the cell center,
# in half-unit integer coordinates (x unit sqrt(3)*delta/2, y unit delta/2).
CORNER_OFFSETS = ((1, 1), (0, 2), (-1, 1), (-1, -1), (0, -2), (1, -1))

# The edge shared with neighbor k joins corners (k+5)%6 -> k; traversing
# it in that order keeps the cell on the left.
_EDGE_CORNERS = tuple(((k + 5) % 6, k) for k in range(6))


class DomainStructureError(ValueError):
    """Cell set is not a single simply connected union of hexagons."""


class MarkSnapError(ValueError):
    """Marks cannot be realized as distinct boundary corners at this mesh."""


@dataclass(frozen=True)
class Cell:
    """One hexagonal face (equivalently one triangular-lattice site)."""

    q: int
    r: int

    def center_int(self):
        return (2 * self.q + self.r, 3 * self.r)


def neighbors(c: Cell) -> list[Cell]:
    """The 6 axial neighbors in fixed counterclockwise order from +q."""
    return [Cell(c.q + dq, c.r + dr) for dq, dr in AXIAL_DIRS]


def cell_center(q: int, r: int, mesh: float) -> complex:
    return complex(mesh * SQRT3 * (q + 0.5 * r), mesh * 1.5 * r)


def corner_point(xy: tuple[int, int], mesh: float) -> complex:
    return complex(mesh * SQRT3 * 0.5 * xy[0], mesh * 0.5 * xy[1])


def corner_cells(xy: tuple[int, int]):
    """The (up to 3) axial cells of the infinite lattice owning corner xy."""
    out = []
    for dx, dy in CORNER_OFFSETS:
        cx, cy = xy[0] - dx, xy[1] - dy
        if cy % 3 != 0:
            continue
        r = cy // 3
        if (cx - r) % 2 != 0:
            continue
        out.append(((cx - r) // 2, r))
    return out


def _cell_corners(q: int, r: int):
    cx, cy = 2 * q + r, 3 * r
    return [(cx + dx, cy + dy) for dx, dy in CORNER_OFFSETS]


@dataclass(frozen=True)
class DiscreteDomain:
    """A k-marked discrete domain: cells, boundary cycle, marks, arcs.

    Value object: nothing is mutated after construction, so instances are
    safe to share across worker threads.

    Attributes
    ----------
    mesh : hexagon circumradius delta.
    cells : (n, 2) int array of axial (q, r), lexicographically sorted.
    nbr : (n, 6) int32 neighbor indices into ``cells`` (-1 = outside).
    boundary_edges : list of oriented corner pairs ((x0,y0), (x1,y1))
        forming the single counterclockwise boundary cycle; the interior
        is on the left of each edge.
    boundary_edge_cell : int array, owning cell index per boundary edge.
    marks : tuple of corner coordinates (snapped marks P_1..P_k).
    mark_pos : indices into the boundary cycle where each mark sits
        (the mark corner is the start corner of that edge).
    edge_arc : int array, arc index (0-based) per boundary edge.
    """

    mesh: float
    cells: np.ndarray
    nbr: np.ndarray
    boundary_edges: tuple
    boundary_edge_cell: np.ndarray
    marks: tuple
    mark_pos: tuple
    edge_arc: np.ndarray
    _index: dict = field(repr=False, default_factory=dict)

    # -- construction -------------------------------------------------

    @staticmethod
    def from_cells(mesh: float, cells: Sequence[tuple[int, int]],
                   mark_points: Sequence[complex]) -> "DiscreteDomain":
        """Build a marked domain from raw axial cells and mark targets.

        ``mark_points`` are plane points in counterclockwise boundary
        order; each is snapped to the nearest boundary corner incident to
        exactly one domain cell.
        """
        if mesh <= 0:
            raise ValueError("mesh must be positive")
        cell_arr = np.array(sorted(set(map(tuple, cells))), dtype=np.int64)
        if cell_arr.size == 0:
            raise DomainStructureError("empty cell set")
        index = {tuple(c): i for i, c in enumerate(cell_arr)}

        n = len(cell_arr)
        nbr = np.full((n, 6), -1, dtype=np.int32)
        for i, (q, r) in enumerate(cell_arr):
            for k, (dq, dr) in enumerate(AXIAL_DIRS):
                j = index.get((q + dq, r + dr))
                if j is not None:
                    nbr[i, k] = j

        edges, edge_cell = _boundary_cycle(cell_arr, nbr)
        marks, mark_pos = _snap_marks(mesh, edges, mark_points, index)
        edge_arc = _assign_arcs(len(edges), mark_pos)

        return DiscreteDomain(mesh=mesh, cells=cell_arr, nbr=nbr,
                              boundary_edges=tuple(edges),
                              boundary_edge_cell=np.asarray(edge_cell, dtype=np.int64),
                              marks=tuple(marks), mark_pos=tuple(mark_pos),
                              edge_arc=edge_arc, _index=index)

    # -- queries ------------------------------------------------------

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_marks(self) -> int:
        return len(self.marks)

    def cell_index(self, q: int, r: int) -> int:
        return self._index.get((q, r), -1)

    def cell_centers(self) -> np.ndarray:
        q = self.cells[:, 0].astype(np.float64)
        r = self.cells[:, 1].astype(np.float64)
        return self.mesh * (SQRT3 * (q + 0.5 * r) + 1.5j * r)

    def mark_point(self, j: int) -> complex:
        return corner_point(self.marks[j], self.mesh)

    def arc_edges(self, j: int) -> np.ndarray:
        """Boundary-edge indices of arc A_{j+1} (0-based j)."""
        return np.nonzero(self.edge_arc == j)[0]

    def arc_cells(self, j: int) -> np.ndarray:
        """Cells owning at least one boundary edge on arc j (edge incidence)."""
        return np.unique(self.boundary_edge_cell[self.edge_arc == j])

    def boundary_corners(self) -> list:
        return [e[0] for e in self.boundary_edges]

    def corner_incident_cells(self, xy: tuple[int, int]) -> list[int]:
        return [self._index[c] for c in corner_cells(xy) if c in self._index]

    def has_corner(self, xy: tuple[int, int]) -> bool:
        return len(self.corner_incident_cells(xy)) > 0

    def snap_to_corner(self, z: complex) -> tuple[int, int]:
        """Nearest lattice corner to plane point z (not required on boundary)."""
        best, bd = None, np.inf
        x0 = z.real / (SQRT3 * 0.5 * self.mesh)
        y0 = z.imag / (0.5 * self.mesh)
        for xx in range(int(math.floor(x0)) - 2, int(math.floor(x0)) + 3):
            for yy in range(int(math.floor(y0)) - 3, int(math.floor(y0)) + 4):
                if not corner_cells((xx, yy)):
                    continue
                d = abs(corner_point((xx, yy), self.mesh) - z)
                if d < bd:
                    bd, best = d, (xx, yy)
        return best

    def vertex_on_arc(self, xy: tuple[int, int], j: int) -> bool:
        """Whether corner xy is an endpoint of some boundary edge of arc j."""
        for e in np.nonzero(self.edge_arc == j)[0]:
            a, b = self.boundary_edges[e]
            if xy == a or xy == b:
                return True
        return False


def _boundary_cycle(cell_arr, nbr):
    """Oriented boundary edges walked into the single ccw cycle."""
    index_edges = {}
    owner = {}
    for i in range(len(cell_arr)):
        q, r = cell_arr[i]
        corners = _cell_corners(q, r)
        for k in range(6):
            if nbr[i, k] >= 0:
                continue
            a, b = _EDGE_CORNERS[k]
            start, end = corners[a], corners[b]
            if start in index_edges:
                raise DomainStructureError(
                    "boundary is not a simple cycle (pinched or disconnected cells)")
            index_edges[start] = end
            owner[start] = i
    if not index_edges:
        raise DomainStructureError("cell set has no boundary")

    start = min(index_edges)
    edges, edge_cell = [], []
    cur = start
    while True:
        nxt = index_edges.get(cur)
        if nxt is None:
            raise DomainStructureError("boundary walk broke; cell set invalid")
        edges.append((cur, nxt))
        edge_cell.append(owner[cur])
        cur = nxt
        if cur == start:
            break
    if len(edges) != len(index_edges):
        raise DomainStructureError(
            "boundary has multiple cycles; cell set is not simply connected")
    return edges, edge_cell


def _snap_marks(mesh, edges, mark_points, index):
    """Snap mark targets to boundary corners incident to a unique cell.

    Ties in distance are broken counterclockwise-first (lowest position
    in the boundary cycle).
    """
    corner_seq = [e[0] for e in edges]
    eligible = []
    for pos, xy in enumerate(corner_seq):
        owned = sum(1 for c in corner_cells(xy) if c in index)
        if owned == 1:
            eligible.append((pos, xy))
    if not eligible:
        raise MarkSnapError("no boundary corner is incident to a unique cell")

    pts = [corner_point(xy, mesh) for _, xy in eligible]
    snapped, positions = [], []
    for target in mark_points:
        t = complex(target)
        dists = [abs(p - t) for p in pts]
        dmin = min(dists)
        best = min(i for i in range(len(dists)) if dists[i] <= dmin + 1e-12 * (1 + dmin))
        positions.append(eligible[best][0])
        snapped.append(eligible[best][1])

    if len(set(positions)) != len(positions) or not _cyclic_increasing(positions):
        min_gap = _min_target_gap(mark_points)
        raise MarkSnapError(
            "snapped marks collide or lose cyclic order; "
            f"domain too coarse, use mesh <= {min_gap / 4.0:.6g}")
    return snapped, positions


def _assign_arcs(n_edges, mark_pos):
    """Arc index per boundary edge: A_j runs from P_j to P_{j+1} ccw."""
    k = len(mark_pos)
    arc = np.zeros(n_edges, dtype=np.int64)
    if k == 0:
        return arc
    for j in range(k):
        a = mark_pos[j]
        b = mark_pos[(j + 1) % k]
        e = a
        while e != b:
            arc[e] = j
            e = (e + 1) % n_edges
    return arc


def _cyclic_increasing(positions):
    p = list(positions)
    k = p.index(min(p))
    rot = p[k:] + p[:k]
    return all(rot[i] < rot[i + 1] for i in range(len(rot) - 1))


def _min_target_gap(mark_points):
    pts = [complex(p) for p in mark_points]
    k = len(pts)
    if k < 2:
        return math.inf
    return min(abs(pts[i] - pts[(i + 1) % k]) for i in range(k))


# -- canonical shapes -------------------------------------------------

_SHAPES = ("square", "rectangle", "equilateral_triangle")


def shape_polygon(shape: str, aspect: float | None = None, side: float = 1.0):
    """Counterclockwise vertex list of the requested canonical shape."""
    if shape == "square":
        s = side
        return [0 + 0j, s + 0j, s + 1j * s, 1j * s]
    if shape == "rectangle":
        if aspect is None or aspect <= 0:
            raise ValueError("rectangle requires a positive aspect")
        return [0 + 0j, 1 + 0j, 1 + 1j * aspect, 1j * aspect]
    if shape == "equilateral_triangle":
        s = side
        return [0 + 0j, s + 0j, complex(0.5 * s, 0.5 * SQRT3 * s)]
    raise ValueError(f"unknown shape {shape!r}; expected one of {_SHAPES}")


def boundary_point(poly, frac: float) -> complex:
    """Point at arc-length fraction frac in [0,1) ccw from vertex 0."""
    lens = [abs(poly[(i + 1) % len(poly)] - poly[i]) for i in range(len(poly))]
    total = sum(lens)
    t = (frac % 1.0) * total
    for i, L in enumerate(lens):
        if t <= L or i == len(poly) - 1:
            return poly[i] + (poly[(i + 1) % len(poly)] - poly[i]) * (t / L)
        t -= L
    raise AssertionError


def build_canonical_domain(shape: str, mesh: float,
                           marks: Sequence[float],
                           aspect: float | None = None,
                           side: float = 1.0) -> DiscreteDomain:
    """Discretize a canonical shape at mesh delta with k snapped marks.

    ``marks`` are boundary positions given as arc-length fractions in
    [0, 1), counterclockwise from the origin corner, and must be strictly
    increasing.  Cells are the hexagons overlapping the shape; the cell
    union approximates the shape within one hexagon diameter.
    """
    if mesh <= 0:
        raise ValueError("mesh must be positive")
    poly = shape_polygon(shape, aspect=aspect, side=side)
    dims = [abs(poly[(i + 1) % len(poly)] - poly[i]) for i in range(len(poly))]
    if min(dims) < 2 * mesh:
        raise ValueError("shape dimensions must be >= 2 * mesh")
    fr = [float(f) % 1.0 for f in marks]
    if len(fr) >= 2 and any(fr[i + 1] <= fr[i] for i in range(len(fr) - 1)):
        raise ValueError("mark fractions must be strictly increasing (ccw order)")

    shift = _shape_anchor(shape, poly, mesh)
    poly = [p + shift for p in poly]

    cells = _cells_overlapping_polygon(poly, mesh)
    targets = [boundary_point(poly, f) for f in fr]
    return DiscreteDomain.from_cells(mesh, cells, targets)


def _shape_anchor(shape, poly, mesh):
    """Translate so a lattice symmetry point sits at the shape center.

    For the equilateral triangle, aligning the centroid with a hexagon
    center makes the discretization exactly 120-degree symmetric, which
    keeps the three corner arcs congruent.
    """
    centroid = sum(poly) / len(poly)
    # nearest cell center to the centroid
    r = round(centroid.imag / (1.5 * mesh))
    q = round(centroid.real / (SQRT3 * mesh) - 0.5 * r)
    near = cell_center(q, r, mesh)
    return near - centroid if shape == "equilateral_triangle" else 0j


def _cells_overlapping_polygon(poly, mesh):
    """Axial cells whose closed hexagon overlaps the convex polygon."""
    xs = [p.real for p in poly]
    ys = [p.imag for p in poly]
    pad = mesh * 1.01
    r_lo = math.floor((min(ys) - pad) / (1.5 * mesh))
    r_hi = math.ceil((max(ys) + pad) / (1.5 * mesh))
    out = []
    for r in range(r_lo, r_hi + 1):
        q_lo = math.floor((min(xs) - pad) / (SQRT3 * mesh) - 0.5 * r)
        q_hi = math.ceil((max(xs) + pad) / (SQRT3 * mesh) - 0.5 * r)
        for q in range(q_lo, q_hi + 1):
            hexagon = [corner_point(c, mesh) for c in _cell_corners(q, r)]
            if _convex_overlap(hexagon, poly):
                out.append((q, r))
    return out


def _convex_overlap(pa, pb, eps=1e-12):
    """Strict (positive-area) overlap of convex ccw polygons, via SAT."""
    for poly1, poly2 in ((pa, pb), (pb, pa)):
        n = len(poly1)
        for i in range(n):
            edge = poly1[(i + 1) % n] - poly1[i]
            nx, ny = edge.imag, -edge.real  # outward normal for ccw
            mmin = min((p.real - poly1[i].real) * nx + (p.imag - poly1[i].imag) * ny
                       for p in poly2)
            if mmin >= -eps * max(1.0, abs(edge)):
                return False
    return True
