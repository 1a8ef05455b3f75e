"""Critical site-percolation sampling and event estimation on marked domains.

Cells are colored blue (open, 1) / yellow (closed, 0) independently.  All
cluster questions run through disjoint-set union over cell indices with
virtual arc nodes; samples are generated chunk-by-chunk from counter-based
streams so estimates are reproducible and worker-count independent.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from itertools import product

import numpy as np
from numba import njit

from .lattice import DiscreteDomain, corner_cells, corner_point
from .rng import next_uniform, stream_state

BLUE, YELLOW = 1, 0

DEFAULT_CHUNK = 4096
_WORKER_ENV = "PERC_SLE_LAB_WORKERS"


def default_workers() -> int:
    v = os.environ.get(_WORKER_ENV)
    if v:
        return max(1, int(v))
    return min(8, os.cpu_count() or 1)


@dataclass(frozen=True)
class MCEstimate:
    """Monte-Carlo estimate with a Wilson 95% interval."""

    n: int
    p_hat: float
    ci_low: float
    ci_high: float
    seed: int

    @staticmethod
    def from_counts(successes: int, n: int, seed: int) -> "MCEstimate":
        lo, hi = wilson_interval(successes, n)
        return MCEstimate(n=n, p_hat=successes / n, ci_low=lo, ci_high=hi,
                          seed=seed)


def wilson_interval(successes: int, n: int, z: float = 1.959963984540054):
    if n <= 0:
        raise ValueError("n must be positive")
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class Configuration:
    """One coloring of a domain, plus fixed colors of the external arcs."""

    domain: DiscreteDomain
    colors: np.ndarray                 # uint8 per cell, 1 = blue
    boundary_colors: tuple = ()        # color per arc (A_1..A_k), or ()

    def __post_init__(self):
        if len(self.colors) != self.domain.n_cells:
            raise ValueError("colors must have one entry per cell")
        if self.boundary_colors and len(self.boundary_colors) != self.domain.n_marks:
            raise ValueError("boundary_colors must assign one color per arc")


def sample_config(d: DiscreteDomain, p: float, seed: int,
                  boundary_colors: tuple = ()) -> Configuration:
    """Independent coloring: each cell blue with probability p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    state = stream_state(np.uint64(seed), np.uint64(0))
    u = np.empty(d.n_cells, dtype=np.float64)
    _fill_uniform_arr(state, u)
    return Configuration(domain=d, colors=(u < p).astype(np.uint8),
                         boundary_colors=tuple(boundary_colors))


@njit(cache=True, nogil=True)
def _fill_uniform_arr(state, out):
    for i in range(out.shape[0]):
        out[i] = next_uniform(state)


# -- disjoint-set kernels ---------------------------------------------

@njit(cache=True, nogil=True)
def _find(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


@njit(cache=True, nogil=True)
def _union(parent, a, b):
    ra = _find(parent, a)
    rb = _find(parent, b)
    if ra != rb:
        parent[rb] = ra


@njit(cache=True, nogil=True)
def _crossing_indicator(nbr3, colors, from_cells, to_cells, want, parent):
    n = colors.shape[0]
    for i in range(n + 2):
        parent[i] = i
    for i in range(n):
        if colors[i] == want:
            for k in range(3):
                j = nbr3[i, k]
                if j >= 0 and colors[j] == want:
                    _union(parent, i, j)
    vf, vt = n, n + 1
    for idx in from_cells:
        if colors[idx] == want:
            _union(parent, idx, vf)
    for idx in to_cells:
        if colors[idx] == want:
            _union(parent, idx, vt)
    return _find(parent, vf) == _find(parent, vt)


@njit(cache=True, nogil=True)
def _crossing_chunk(nbr3, from_cells, to_cells, p, seed, chunk_index, m):
    n = nbr3.shape[0]
    colors = np.empty(n, dtype=np.uint8)
    parent = np.empty(n + 2, dtype=np.int64)
    state = stream_state(np.uint64(seed), np.uint64(chunk_index))
    count = 0
    for _ in range(m):
        for i in range(n):
            colors[i] = 1 if next_uniform(state) < p else 0
        if _crossing_indicator(nbr3, colors, from_cells, to_cells, 1, parent):
            count += 1
    return count


@njit(cache=True, nogil=True)
def _separating_indicator(nbr3, colors, arc_prev, arc_next, arc_j, z_cells,
                          parent, flag_a, flag_b, wall, parent2):
    n = colors.shape[0]
    for i in range(n + 1):
        parent2[i] = i
    for i in range(n):
        parent[i] = i
        flag_a[i] = 0
        flag_b[i] = 0
    for i in range(n):
        if colors[i] == 1:
            for k in range(3):
                j = nbr3[i, k]
                if j >= 0 and colors[j] == 1:
                    _union(parent, i, j)
    for idx in arc_prev:
        if colors[idx] == 1:
            flag_a[_find(parent, idx)] = 1
    for idx in arc_next:
        if colors[idx] == 1:
            flag_b[_find(parent, idx)] = 1
    wall_exists = False
    for i in range(n):
        if colors[i] == 1:
            r = _find(parent, i)
            w = flag_a[r] == 1 and flag_b[r] == 1
            wall[i] = 1 if w else 0
            if w:
                wall_exists = True
        else:
            wall[i] = 0
    if not wall_exists:
        return False
    # connectivity avoiding the wall clusters; virtual node n = arc A_j
    for i in range(n):
        if wall[i] == 0:
            for k in range(3):
                j = nbr3[i, k]
                if j >= 0 and wall[j] == 0:
                    _union(parent2, i, j)
    for idx in arc_j:
        if wall[idx] == 0:
            _union(parent2, idx, n)
    rj = _find(parent2, n)
    for idx in z_cells:
        if wall[idx] == 0 and _find(parent2, idx) == rj:
            return False
    return True


@njit(cache=True, nogil=True)
def _separating_chunk(nbr3, arc_prev, arc_next, arc_j, z_cells,
                      p, seed, chunk_index, m):
    n = nbr3.shape[0]
    colors = np.empty(n, dtype=np.uint8)
    parent = np.empty(n, dtype=np.int64)
    parent2 = np.empty(n + 1, dtype=np.int64)
    flag_a = np.empty(n, dtype=np.uint8)
    flag_b = np.empty(n, dtype=np.uint8)
    wall = np.empty(n, dtype=np.uint8)
    state = stream_state(np.uint64(seed), np.uint64(chunk_index))
    count = 0
    for _ in range(m):
        for i in range(n):
            colors[i] = 1 if next_uniform(state) < p else 0
        if _separating_indicator(nbr3, colors, arc_prev, arc_next, arc_j,
                                 z_cells, parent, flag_a, flag_b, wall, parent2):
            count += 1
    return count


@njit(cache=True, nogil=True)
def _arm_indicator(nbr3, colors, ring_order, is_outer, pattern,
                   parent, touch, w_root, w_col):
    n = colors.shape[0]
    for i in range(n):
        parent[i] = i
        touch[i] = 0
    for i in range(n):
        ci = colors[i]
        for k in range(3):
            j = nbr3[i, k]
            if j >= 0 and colors[j] == ci:
                _union(parent, i, j)
    for i in range(n):
        if is_outer[i] == 1:
            touch[_find(parent, i)] = 1
    # reduced cyclic word of live crossing clusters around the inner ring
    L = 0
    for t in range(ring_order.shape[0]):
        c = ring_order[t]
        r = _find(parent, c)
        if touch[r] == 1:
            if L > 0 and w_root[L - 1] == r:
                continue
            w_root[L] = r
            w_col[L] = colors[c]
            L += 1
    if L > 1 and w_root[0] == w_root[L - 1]:
        L -= 1
    kpat = pattern.shape[0]
    if L < kpat:
        return False
    for start in range(L):
        got = 0
        for step in range(L):
            idx = start + step
            if idx >= L:
                idx -= L
            if w_col[idx] == pattern[got]:
                got += 1
                if got == kpat:
                    return True
    return False


@njit(cache=True, nogil=True)
def _arm_chunk(nbr3, ring_order, is_outer, pattern, p, seed, chunk_index, m):
    n = nbr3.shape[0]
    colors = np.empty(n, dtype=np.uint8)
    parent = np.empty(n, dtype=np.int64)
    touch = np.empty(n, dtype=np.uint8)
    w_root = np.empty(ring_order.shape[0] + 1, dtype=np.int64)
    w_col = np.empty(ring_order.shape[0] + 1, dtype=np.uint8)
    state = stream_state(np.uint64(seed), np.uint64(chunk_index))
    count = 0
    for _ in range(m):
        for i in range(n):
            colors[i] = 1 if next_uniform(state) < p else 0
        if _arm_indicator(nbr3, colors, ring_order, is_outer, pattern,
                          parent, touch, w_root, w_col):
            count += 1
    return count


# -- chunked Monte-Carlo driver ---------------------------------------

def run_chunked(n: int, chunk: int, workers: int | None, chunk_fn) -> int:
    """Sum chunk_fn(chunk_index, m) over the chunk decomposition of n.

    The reduction order is fixed by chunk index, so the total is identical
    for any worker count.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    chunk = max(1, int(chunk))
    sizes = [chunk] * (n // chunk)
    if n % chunk:
        sizes.append(n % chunk)
    workers = workers if workers is not None else default_workers()
    if workers <= 1 or len(sizes) == 1:
        return sum(chunk_fn(ci, m) for ci, m in enumerate(sizes))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        counts = list(pool.map(chunk_fn, range(len(sizes)), sizes))
    return sum(counts)


# -- public operations -------------------------------------------------

def has_blue_crossing(c: Configuration, from_arc: int, to_arc: int) -> bool:
    """Blue cell path (shared-edge adjacency) joining the two arcs.

    Arcs are 0-based; a cell counts as touching an arc iff it owns a
    boundary edge on it.
    """
    return _has_crossing(c, from_arc, to_arc, BLUE)


def _has_crossing(c: Configuration, from_arc: int, to_arc: int, want: int) -> bool:
    d = c.domain
    if not (0 <= from_arc < d.n_marks and 0 <= to_arc < d.n_marks):
        raise ValueError("arc index out of range")
    if from_arc == to_arc:
        raise ValueError("from_arc and to_arc must differ")
    parent = np.empty(d.n_cells + 2, dtype=np.int64)
    return bool(_crossing_indicator(
        np.ascontiguousarray(d.nbr[:, :3]), c.colors,
        d.arc_cells(from_arc).astype(np.int64),
        d.arc_cells(to_arc).astype(np.int64), want, parent))


def estimate_crossing_prob(d: DiscreteDomain, p: float, n: int, seed: int,
                           from_arc: int = 0, to_arc: int = 2,
                           chunk: int = DEFAULT_CHUNK,
                           workers: int | None = None) -> MCEstimate:
    """Monte-Carlo crossing probability between two arcs (default A_1->A_3)."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    nbr3 = np.ascontiguousarray(d.nbr[:, :3])
    fc = d.arc_cells(from_arc).astype(np.int64)
    tc = d.arc_cells(to_arc).astype(np.int64)

    def job(ci, m):
        return _crossing_chunk(nbr3, fc, tc, p, seed, ci, m)

    successes = run_chunked(n, chunk, workers, job)
    return MCEstimate.from_counts(successes, n, seed)


def separating_indicator(c: Configuration, j: int, z) -> bool:
    """Whether a blue A_{j-1}..A_{j+1} path separates vertex z from A_j.

    j is 1-based (arcs of a 3-marked domain); z is a plane point or an
    integer corner of the hexagonal grid.
    """
    d = c.domain
    zc, z_cells, on_arc = _separating_geometry(d, j, z)
    if on_arc:
        return False
    parent = np.empty(d.n_cells, dtype=np.int64)
    parent2 = np.empty(d.n_cells + 1, dtype=np.int64)
    buf = [np.empty(d.n_cells, dtype=np.uint8) for _ in range(3)]
    ja, jb, jj = _arc_triple(d, j)
    return bool(_separating_indicator(
        np.ascontiguousarray(d.nbr[:, :3]), c.colors, ja, jb, jj,
        z_cells, parent, buf[0], buf[1], buf[2], parent2))


def _arc_triple(d: DiscreteDomain, j: int):
    if d.n_marks != 3:
        raise ValueError("separating events need a 3-marked domain")
    if j not in (1, 2, 3):
        raise ValueError("arc index j must be 1, 2 or 3")
    j0 = j - 1
    prev_arc = (j0 - 1) % 3
    next_arc = (j0 + 1) % 3
    return (d.arc_cells(prev_arc).astype(np.int64),
            d.arc_cells(next_arc).astype(np.int64),
            d.arc_cells(j0).astype(np.int64))


def _separating_geometry(d: DiscreteDomain, j: int, z):
    if isinstance(z, tuple):
        zc = z
    else:
        zc = d.snap_to_corner(complex(z))
        if zc is None or abs(corner_point(zc, d.mesh) - complex(z)) > 0.51 * d.mesh:
            raise ValueError("z is not a hexagonal vertex of the closed domain")
    z_cells = np.array(d.corner_incident_cells(zc), dtype=np.int64)
    if len(z_cells) == 0:
        raise ValueError("z lies outside the closed domain")
    return zc, z_cells, d.vertex_on_arc(zc, j - 1)


def estimate_separating_prob(d: DiscreteDomain, j: int, z, n: int, seed: int,
                             p: float = 0.5, chunk: int = DEFAULT_CHUNK,
                             workers: int | None = None) -> MCEstimate:
    """Estimate s_j(z): probability of the separating event for vertex z."""
    zc, z_cells, on_arc = _separating_geometry(d, j, z)
    if on_arc:
        return MCEstimate(n=n, p_hat=0.0, ci_low=0.0, ci_high=0.0, seed=seed)
    nbr3 = np.ascontiguousarray(d.nbr[:, :3])
    ja, jb, jj = _arc_triple(d, j)

    def job(ci, m):
        return _separating_chunk(nbr3, ja, jb, jj, z_cells, p, seed, ci, m)

    successes = run_chunked(n, chunk, workers, job)
    return MCEstimate.from_counts(successes, n, seed)


# -- exact micro-domain enumeration ------------------------------------

def exhaustive_probability(d: DiscreteDomain, indicator, limit: int = 22) -> Fraction:
    """Exact event probability at p = 1/2 by enumerating all colorings."""
    n = d.n_cells
    if n > limit:
        raise ValueError(f"domain has {n} cells; exhaustive limit is {limit}")
    hits = 0
    colors = np.empty(n, dtype=np.uint8)
    for bits in range(1 << n):
        for i in range(n):
            colors[i] = (bits >> i) & 1
        if indicator(colors):
            hits += 1
    return Fraction(hits, 1 << n)


def corner_neighbors(xy: tuple[int, int]):
    """The 3 adjacent corners of the hexagonal grid, ccw by angle."""
    cand = ((1, 1), (-1, 1), (0, -2), (1, -1), (-1, -1), (0, 2))
    mine = set(corner_cells(xy))
    out = []
    for dx, dy in cand:
        other = (xy[0] + dx, xy[1] + dy)
        shared = mine.intersection(corner_cells(other))
        if len(shared) == 2:
            out.append(other)
    out.sort(key=lambda c: math.atan2(c[1] - xy[1], SQRT3_HALF_RATIO * (c[0] - xy[0])))
    return out


SQRT3_HALF_RATIO = math.sqrt(3.0)  # x-units are sqrt(3)/2, y-units 1/2 of mesh


def color_switching_check(d: DiscreteDomain, w) -> tuple[Fraction, Fraction, Fraction]:
    """Exact probabilities of the three disjoint tricolor path events at w.

    For the counterclockwise neighbors z_1, z_2, z_3 of the hexagonal
    vertex w, let x_j be the cell at w opposite z_j, and C_j the event of
    a color-C path from x_j to arc A_j.  Returns the exact dyadic
    probabilities of (Y_1 B_2 B_3, B_1 Y_2 B_3, B_1 B_2 Y_3), each
    required to occur through pairwise disjoint paths.
    """
    if d.n_cells > 20:
        raise ValueError("exact enumeration refused beyond 20 cells")
    if d.n_marks != 3:
        raise ValueError("color switching needs a 3-marked domain")
    wc = w if isinstance(w, tuple) else d.snap_to_corner(complex(w))
    zs = corner_neighbors(wc)
    if len(zs) != 3:
        raise ValueError("vertex w lacks three grid neighbors")
    for z in zs:
        cells_at_z = d.corner_incident_cells(z)
        if len(cells_at_z) != 3:
            raise ValueError("neighbors of w must lie in the open domain")
    w_cells = d.corner_incident_cells(wc)
    if len(w_cells) != 3:
        raise ValueError("w must be an interior vertex")

    # x_j = the cell at w not incident to z_j
    x = []
    for z in zs:
        z_cells = set(d.corner_incident_cells(z))
        opp = [c for c in w_cells if c not in z_cells]
        if len(opp) != 1:
            raise ValueError("degenerate vertex configuration")
        x.append(opp[0])

    arcs = [d.arc_cells(j).astype(np.int64) for j in range(3)]
    nbr = d.nbr

    def triple_indicator(colors, yellow_slot):
        want = [BLUE, BLUE, BLUE]
        want[yellow_slot] = YELLOW
        for j in range(3):
            if colors[x[j]] != want[j]:
                return False
        # the two same-colored (blue) paths must be cell-disjoint; the
        # yellow path is disjoint from them automatically
        blue_slots = [j for j in range(3) if want[j] == BLUE]
        ys = yellow_slot
        if not _path_exists(nbr, colors, x[ys], set(arcs[ys]), YELLOW, frozenset()):
            return False
        b1, b2 = blue_slots
        return _disjoint_blue_pair(nbr, colors, x[b1], set(arcs[b1]),
                                   x[b2], set(arcs[b2]))

    out = []
    for slot in range(3):
        out.append(exhaustive_probability(d, lambda cc, s=slot: triple_indicator(cc, s)))
    return tuple(out)


def _path_exists(nbr, colors, start, targets, want, banned):
    if colors[start] != want or start in banned:
        return False
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        if u in targets:
            return True
        for k in range(6):
            v = nbr[u, k]
            if v >= 0 and v not in seen and v not in banned and colors[v] == want:
                seen.add(v)
                stack.append(v)
    return False


def _disjoint_blue_pair(nbr, colors, s1, t1, s2, t2):
    """Exist vertex-disjoint blue paths s1->t1 and s2->t2 (DFS over paths)."""
    if colors[s1] != BLUE or colors[s2] != BLUE:
        return False

    path = [s1]
    used = {s1}

    def extend():
        u = path[-1]
        if u in t1:
            if _path_exists(nbr, colors, s2, t2, BLUE, frozenset(used)):
                return True
            # keep extending: a longer path may free up s2's route only by
            # using MORE cells, so no -- but a different branch may help
        for k in range(6):
            v = nbr[u, k]
            if v >= 0 and v not in used and colors[v] == BLUE:
                used.add(v)
                path.append(v)
                if extend():
                    return True
                path.pop()
                used.discard(v)
        return False

    return extend()


# -- annulus arm events -------------------------------------------------

def estimate_annulus_crossing(d: DiscreteDomain, center, r: float, R: float,
                              k: int, arm_pattern: str, p: float, n: int,
                              seed: int, chunk: int = DEFAULT_CHUNK,
                              workers: int | None = None) -> MCEstimate:
    """Probability of k disjoint arms crossing the annulus A(center; r, R).

    ``arm_pattern`` is a cyclic color word like "B", "BY" or "BYBYB"; an
    arm of color c is a c-colored cell path from the inner ring to the
    outer ring inside the annulus.  Each within-annulus crossing cluster
    certifies one arm, and arms are matched to the pattern in
    counterclockwise order around the inner ring.
    """
    geo = _annulus_geometry(d, center, r, R)
    pattern = _parse_pattern(arm_pattern, k)

    def job(ci, m):
        return _arm_chunk(geo.nbr3, geo.ring_order, geo.is_outer, pattern,
                          p, seed, ci, m)

    successes = run_chunked(n, chunk, workers, job)
    return MCEstimate.from_counts(successes, n, seed)


def _parse_pattern(arm_pattern: str, k: int) -> np.ndarray:
    pat = arm_pattern.strip().upper()
    if len(pat) != k or any(ch not in "BY" for ch in pat):
        raise ValueError("arm_pattern must be a length-k word over {B, Y}")
    return np.array([BLUE if ch == "B" else YELLOW for ch in pat], dtype=np.uint8)


@dataclass(frozen=True)
class _AnnulusGeometry:
    cell_ids: np.ndarray
    nbr3: np.ndarray
    ring_order: np.ndarray
    is_outer: np.ndarray


def _annulus_geometry(d: DiscreteDomain, center, r: float, R: float) -> _AnnulusGeometry:
    if r <= 2 * d.mesh:
        raise ValueError("inner radius must exceed 2 * mesh (resolution error)")
    if not r < R:
        raise ValueError("need r < R")
    c = complex(center)
    centers = d.cell_centers()
    dist = np.abs(centers - c)
    # the closed annulus must sit inside the domain with one cell to spare
    bound = min(abs(corner_point(e[0], d.mesh) - c) for e in d.boundary_edges)
    if R + 2 * d.mesh > bound:
        raise ValueError("annulus (plus one cell margin) must lie inside the domain")

    in_ann = (dist >= r) & (dist <= R)
    ids = np.nonzero(in_ann)[0]
    local = -np.ones(d.n_cells, dtype=np.int64)
    local[ids] = np.arange(len(ids))
    nbr_local = np.full((len(ids), 6), -1, dtype=np.int32)
    inner_flag = np.zeros(len(ids), dtype=np.uint8)
    outer_flag = np.zeros(len(ids), dtype=np.uint8)
    for li, gi in enumerate(ids):
        for kk in range(6):
            gj = d.nbr[gi, kk]
            if gj < 0:
                continue
            if in_ann[gj]:
                nbr_local[li, kk] = local[gj]
            elif dist[gj] < r:
                inner_flag[li] = 1
            else:
                outer_flag[li] = 1
    ring = np.nonzero(inner_flag)[0]
    ang = np.angle(centers[ids[ring]] - c)
    ring_order = ring[np.argsort(ang, kind="stable")].astype(np.int64)
    return _AnnulusGeometry(cell_ids=ids,
                            nbr3=np.ascontiguousarray(nbr_local[:, :3]),
                            ring_order=ring_order, is_outer=outer_flag)
