"""Exact crossing-probability evaluation and harmonic-measure oracles.

The centerpiece maps a 4-marked canonical domain onto the upper half
plane, Moebius-normalizes three marks, and evaluates the incomplete
hypergeometric side integral

    F(s) = integral_0^s w^(-2/3) (1-w)^(-2/3) dw

whose normalized value x = F(s4)/F(1) is the scaling-limit probability
of a blue crossing between the first and third boundary arcs.  On the
equilateral triangle x is simply the position of the fourth mark along
its side, which is the form the crossing probability takes after the
conformal change of variables.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit
from scipy import integrate, optimize
from scipy import special as sp

from .lattice import SQRT3
from .percolation import MCEstimate, run_chunked
from .rng import next_uniform, stream_state

ZETA = cmath.exp(2j * math.pi / 3)

INF = math.inf


class MarkOrderError(ValueError):
    """Marks are not in counterclockwise boundary order."""


class QuadratureError(ArithmeticError):
    """Quadrature failed to reach the requested tolerance."""


@dataclass(frozen=True)
class TriangleCoordinate:
    """Position of the fourth mark on the target triangle's side."""

    x: float

    def __post_init__(self):
        if not -1e-12 <= self.x <= 1 + 1e-12:
            raise ValueError("triangle coordinate must lie in [0, 1]")


@dataclass(frozen=True)
class MarkedDomainSpec:
    """A canonical domain with 2-4 marked boundary points.

    marks are plane points on the boundary; for the half plane they are
    reals (math.inf allowed for the point at infinity).
    """

    shape: str
    marks: tuple
    aspect: float | None = None

    def __post_init__(self):
        if self.shape not in ("half_plane", "disc", "rectangle",
                              "equilateral_triangle", "square"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if not 2 <= len(self.marks) <= 4:
            raise ValueError("need 2 to 4 marks")
        params = [_boundary_parameter(self.shape, m, self.aspect)
                  for m in self.marks]
        if not _cyclically_increasing(params):
            raise MarkOrderError("marks must be in counterclockwise order")

    @property
    def rect_aspect(self) -> float:
        if self.shape == "square":
            return 1.0
        if self.shape == "rectangle":
            if self.aspect is None:
                raise ValueError("rectangle spec needs an aspect")
            return float(self.aspect)
        raise ValueError("not a rectangle")


def _cyclically_increasing(params):
    k = len(params)
    if len(set(params)) != k:
        return False
    i0 = params.index(min(params))
    rot = params[i0:] + params[:i0]
    return all(rot[i] < rot[i + 1] for i in range(k - 1))


def _boundary_parameter(shape, mark, aspect):
    """Monotone ccw boundary coordinate of a mark (for order validation)."""
    if shape == "half_plane":
        x = mark if isinstance(mark, (int, float)) else complex(mark).real
        if math.isinf(x):
            return math.pi / 2
        return math.atan(x)  # increasing along R, inf maps to pi/2 (top)
    z = complex(mark)
    if shape == "disc":
        if abs(abs(z) - 1.0) > 1e-9:
            raise ValueError("disc marks must lie on the unit circle")
        return math.atan2(z.imag, z.real)
    poly = _shape_poly(shape, aspect)
    return _perimeter_parameter(poly, z)


def _shape_poly(shape, aspect):
    if shape == "square":
        return [0j, 1 + 0j, 1 + 1j, 1j]
    if shape == "rectangle":
        if aspect is None or aspect <= 0:
            raise ValueError("rectangle spec needs a positive aspect")
        return [0j, 1 + 0j, 1 + 1j * aspect, 1j * aspect]
    if shape == "equilateral_triangle":
        return [0j, 1 + 0j, complex(0.5, 0.5 * SQRT3)]
    raise ValueError(shape)


def _perimeter_parameter(poly, z, tol=1e-9):
    acc = 0.0
    for i in range(len(poly)):
        a, b = poly[i], poly[(i + 1) % len(poly)]
        L = abs(b - a)
        t = ((z - a) / (b - a)).real
        off = abs(z - (a + t * (b - a)))
        if -tol < t < 1 + tol and off < tol:
            return acc + min(max(t, 0.0), 1.0) * L
        acc += L
    raise ValueError(f"mark {z} does not lie on the domain boundary")


# -- the side integral F --------------------------------------------------

@lru_cache(maxsize=8)
def _gj_rule(n: int):
    x, w = sp.roots_jacobi(n, 0.0, -2.0 / 3.0)
    v = 0.5 * (x + 1.0)
    return v, w * 2.0 ** (-1.0 / 3.0)


def _f_half(s, n):
    """F(s) for 0 < s <= 1/2 (real) or complex s, via Gauss-Jacobi."""
    v, w = _gj_rule(n)
    if isinstance(s, complex):
        g = (1.0 - s * v) ** (-2.0 / 3.0)
        return s ** (1.0 / 3.0) * np.sum(w * g)
    g = (1.0 - s * v) ** (-2.0 / 3.0)
    return s ** (1.0 / 3.0) * float(np.sum(w * g))


def side_integral(s: float, tol: float = 1e-10) -> float:
    """F(s) for s in [0, 1], accurate to tol (raises QuadratureError)."""
    if s < 0 or s > 1:
        raise ValueError("s must lie in [0, 1]")
    if s == 0:
        return 0.0
    f1 = 2.0 * _f_half(0.5, 96)

    def half(x):
        a, b = _f_half(x, 48), _f_half(x, 96)
        if abs(a - b) > tol * max(1.0, abs(b)):
            raise QuadratureError(
                f"side integral did not converge (achieved {abs(a - b):.2e})")
        return b

    if s <= 0.5:
        return half(s)
    if s == 1.0:
        return f1
    return f1 - half(1.0 - s)


def side_integral_total() -> float:
    return side_integral(1.0)


def side_fraction_inverse(frac: float) -> float:
    """s with F(s)/F(1) = frac."""
    if not 0.0 <= frac <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    if frac in (0.0, 1.0):
        return frac
    f1 = side_integral_total()
    return optimize.brentq(lambda s: side_integral(s) - frac * f1,
                           1e-15, 1 - 1e-15, xtol=1e-15, rtol=8.9e-16)


# -- Moebius utilities ----------------------------------------------------

def _mobius_to_01inf(a, b, c):
    """Real Moebius sending boundary points (a, b, c) to (0, 1, infinity).

    Any one of a, b, c (or the argument) may be math.inf: the factors
    involving the infinite point drop out of the cross ratio.
    """
    # mu(z) = (alpha z + beta) / (gamma z + delta)
    if math.isinf(a):
        alpha, beta, gamma, delta = 0.0, (b - c), 1.0, -c
    elif math.isinf(b):
        alpha, beta, gamma, delta = 1.0, -a, 1.0, -c
    elif math.isinf(c):
        alpha, beta, gamma, delta = 1.0, -a, 0.0, (b - a)
    else:
        alpha, beta = (b - c), -a * (b - c)
        gamma, delta = (b - a), -c * (b - a)

    def mu(z):
        if math.isinf(z):
            return alpha / gamma if gamma != 0.0 else INF
        den = gamma * z + delta
        if den == 0.0:
            return INF
        return (alpha * z + beta) / den

    return mu


# -- canonical conformal transport to the half plane ----------------------

@lru_cache(maxsize=64)
def rect_modulus(aspect: float) -> float:
    """Elliptic parameter m with K(1-m)/K(m) = 2 * aspect.

    This makes u = 2K * (z - 1/2) map [0,1]x[0,aspect] onto the Legendre
    rectangle [-K, K] x [0, K'], so w = sn(u, m) maps it onto the half
    plane with the bottom corners at -1, +1 and the top corners at
    -1/sqrt(m), +1/sqrt(m).  Mark images are resolved to ~1e-14.
    """
    target = 2.0 * aspect

    def g(logit):
        m = 1.0 / (1.0 + math.exp(-logit))
        return sp.ellipk(1 - m) / sp.ellipk(m) - target

    logit = optimize.brentq(g, -700.0, 700.0, xtol=1e-13, rtol=8.9e-16)
    return 1.0 / (1.0 + math.exp(-logit))


def _sn_complex(u, m):
    """Jacobi sn for complex argument via real Jacobi functions."""
    x = np.real(u)
    y = np.imag(u)
    s, c, d, _ = sp.ellipj(x, m)
    s1, c1, d1, _ = sp.ellipj(y, 1.0 - m)
    den = c1 * c1 + m * (s * s1) ** 2
    return (s * d1 + 1j * c * d * s1 * c1) / den


def rect_to_halfplane(z, aspect: float):
    """Conformal [0,1]x[0,aspect] -> H; corners -1, 1, 1/k, -1/k.

    Boundary points are computed with the exact one-sided formulas (so
    their images are real to machine precision); interior points go
    through the complex sn.  The top-middle point maps to infinity.
    """
    m = rect_modulus(aspect)
    K = sp.ellipk(m)
    k = math.sqrt(m)
    zz = complex(z)
    x, y = zz.real, zz.imag
    tol = 1e-12
    if abs(y) < tol:                      # bottom side
        s, _, _, _ = sp.ellipj(2 * K * (x - 0.5), m)
        return complex(s)
    if abs(y - aspect) < tol:             # top side
        s, _, _, _ = sp.ellipj(2 * K * (x - 0.5), m)
        if abs(s) < 1e-15:
            return INF
        return complex(1.0 / (k * s))
    if abs(x - 1.0) < tol:                # right side
        _, _, d1, _ = sp.ellipj(2 * K * y, 1.0 - m)
        return complex(1.0 / d1)
    if abs(x) < tol:                      # left side
        _, _, d1, _ = sp.ellipj(2 * K * y, 1.0 - m)
        return complex(-1.0 / d1)
    return _sn_complex(2 * K * (zz - 0.5), m)


_TRI_V = (0j, 1 + 0j, complex(0.5, 0.5 * SQRT3))


def _cyc(z: float) -> float:
    """Moebius 1/(1-z): permutes (0, 1, inf) -> (1, inf, 0)."""
    if math.isinf(z):
        return 0.0
    if z == 1.0:
        return INF
    return 1.0 / (1.0 - z)


def triangle_boundary_to_halfplane(z) -> float:
    """Boundary of the unit equilateral triangle -> real line.

    The map sends vertex 1 (origin) to 0, vertex 2 to 1, vertex 3 to
    infinity; side [V1, V2] lands on (0, 1).
    """
    zz = complex(z)
    poly = list(_TRI_V)
    for side in range(3):
        a, b = poly[side], poly[(side + 1) % 3]
        t = ((zz - a) / (b - a)).real
        if -1e-9 < t < 1 + 1e-9 and abs(zz - (a + t * (b - a))) < 1e-9:
            t = min(max(t, 0.0), 1.0)
            s = side_fraction_inverse(t)
            for _ in range(side):
                s = _cyc(s)
            return s
    raise ValueError(f"{z} does not lie on the triangle boundary")


_TRI_CTR = complex(0.5, SQRT3 / 6.0)
_OMEGA = cmath.exp(2j * math.pi / 3.0)


def _cyc_c(s: complex) -> complex:
    den = 1.0 - s
    if den == 0:
        return complex(INF, 0.0)
    return 1.0 / den


def triangle_to_halfplane(z, newton_tol: float = 1e-12):
    """Interior of the unit equilateral triangle -> H, by damped Newton on
    the Schwarz-Christoffel map.

    Points near the vertex that maps to infinity are rotated into a
    well-conditioned chart first (the map commutes with the triangle's
    120-degree symmetry up to the Moebius cycle of (0, 1, infinity)).
    """
    zz = complex(z)
    if _on_triangle_boundary(zz):
        return complex(triangle_boundary_to_halfplane(zz))

    # rotate so the apex chart (s -> infinity) is far from the point
    dists = [abs(zz - v) for v in _TRI_V]
    nearest = dists.index(min(dists))
    rot = (nearest + 1) % 3  # send the nearest vertex to V1 (s = 0)
    zz_chart = _TRI_CTR + (zz - _TRI_CTR) * _OMEGA ** (-rot)

    f1 = side_integral_total()

    def G(s):
        return _sc_incomplete(s) / f1

    s = complex(0.5, 0.8660254037844386)  # preimage of the centroid
    for _ in range(100):
        val = G(s) - zz_chart
        if abs(val) < newton_tol:
            break
        deriv = (s ** (-2.0 / 3.0) * (1 - s) ** (-2.0 / 3.0)) / f1
        step = val / deriv
        while abs(step) > 0.5 * (1 + abs(s)):
            step *= 0.5
        new = s - step
        if new.imag <= 0:
            new = complex(new.real, max(1e-12, 0.25 * s.imag))
        s = new
    else:
        raise QuadratureError("triangle inversion did not converge")
    for _ in range(rot):
        s = _cyc_c(s)
    return s


def _on_triangle_boundary(z, tol=1e-12):
    for side in range(3):
        a, b = _TRI_V[side], _TRI_V[(side + 1) % 3]
        t = ((z - a) / (b - a)).real
        if -tol < t < 1 + tol and abs(z - (a + t * (b - a))) < tol:
            return True
    return False


def _sc_incomplete(s):
    """F(s) continued to the closed upper half plane.

    Splitting at Re s = 1/2 keeps the quadrature's moving factor
    (1 - s v)^(-2/3) uniformly away from its branch point: on the direct
    side the segment [0, s] stays at distance >= 1/2 from 1, and the
    mirrored side uses F(1) - F(1 - s) with the same property.
    """
    sc = complex(s)
    if abs(sc.imag) <= 1e-14 and 0.0 <= sc.real <= 1.0:
        return complex(side_integral(sc.real))

    def eval_at(w):
        a, b = _f_half(w, 64), _f_half(w, 128)
        if abs(a - b) > 1e-10 * max(1.0, abs(b)):
            raise QuadratureError("complex side integral did not converge")
        return b

    if sc.real <= 0.5:
        return eval_at(sc)
    return 2.0 * _f_half(0.5, 128) - eval_at(1.0 - sc)


def halfplane_marks(spec: MarkedDomainSpec) -> list[float]:
    """Real images of the spec marks under the canonical map to H."""
    if spec.shape == "half_plane":
        out = []
        for mk in spec.marks:
            x = mk if isinstance(mk, (int, float)) else complex(mk).real
            out.append(float(x))
        return out
    if spec.shape == "disc":
        out = []
        for mk in spec.marks:
            z = complex(mk)
            if abs(z + 1.0) < 1e-12:
                out.append(INF)
            else:
                out.append((1j * (1 - z) / (1 + z)).real)
        return out
    if spec.shape in ("rectangle", "square"):
        ρ = spec.rect_aspect
        out = []
        for mk in spec.marks:
            w = rect_to_halfplane(mk, ρ)
            out.append(INF if w == INF else float(complex(w).real))
        return out
    if spec.shape == "equilateral_triangle":
        return [float(triangle_boundary_to_halfplane(mk)) for mk in spec.marks]
    raise ValueError(spec.shape)


# -- Carleson coordinate ---------------------------------------------------

def carleson_x(spec: MarkedDomainSpec, tol: float = 1e-8) -> TriangleCoordinate:
    """Linear coordinate of the fourth mark on the image triangle.

    The three base marks are Moebius-normalized so that (P3, P1, P2) go
    to (0, 1, infinity); the fourth mark lands at s4 in (0, 1) and

        x = F(s4) / F(1).

    x -> 0 as P4 -> P3 and x -> 1 as P4 -> P1.
    """
    if len(spec.marks) != 4:
        raise ValueError("carleson_x needs a 4-marked domain")
    t = halfplane_marks(spec)
    mu = _mobius_to_01inf(t[2], t[0], t[1])
    s4 = mu(t[3])
    if not 0.0 <= s4 <= 1.0:
        if -1e-9 < s4 < 0 or 1 < s4 < 1 + 1e-9:
            s4 = min(max(s4, 0.0), 1.0)
        else:
            raise MarkOrderError(
                f"fourth mark maps outside the expected arc (s4={s4})")
    x = side_integral(s4, tol=tol * 1e-2) / side_integral_total()
    return TriangleCoordinate(x=min(max(x, 0.0), 1.0))


def crossing_prob_exact(spec: MarkedDomainSpec) -> float:
    """Scaling-limit probability of a blue crossing between A_1 and A_3."""
    return carleson_x(spec).x


# -- Poisson-kernel Dirichlet solvers --------------------------------------

def poisson_solve(shape: str, boundary_f, z: complex, tol: float = 1e-8,
                  breakpoints=()) -> float:
    """Harmonic extension of boundary data, evaluated at interior z.

    disc: boundary_f(theta) on the unit circle; half_plane: boundary_f(t)
    on the real line.  breakpoints mark discontinuities of boundary_f.
    """
    z = complex(z)
    if shape == "disc":
        r = abs(z)
        if r >= 1.0 - 1e-14:
            raise ValueError("z must be an interior point of the disc")
        th = math.atan2(z.imag, z.real)

        def integrand(phi):
            e = r * cmath.exp(1j * (th - phi))
            ker = ((1 + e) / (1 - e)).real
            return ker * boundary_f(phi)

        pts = sorted(p % (2 * math.pi) for p in breakpoints)
        val, err = integrate.quad(integrand, 0.0, 2 * math.pi,
                                  points=pts or None, limit=200,
                                  epsabs=tol * 0.1, epsrel=tol * 0.1)
        if err > tol:
            raise QuadratureError(f"achieved tolerance {err:.2e} > {tol:.2e}")
        return val / (2 * math.pi)

    if shape == "half_plane":
        x, y = z.real, z.imag
        if y <= 1e-14:
            raise ValueError("z must be an interior point of the half plane")

        # substitute t = x + y tan(u); the kernel becomes flat in u
        def integrand(u):
            return boundary_f(x + y * math.tan(u))

        pts = sorted(math.atan((p - x) / y) for p in breakpoints)
        val, err = integrate.quad(integrand, -math.pi / 2, math.pi / 2,
                                  points=pts or None, limit=200,
                                  epsabs=tol * 0.1, epsrel=tol * 0.1)
        if err > tol:
            raise QuadratureError(f"achieved tolerance {err:.2e} > {tol:.2e}")
        return val / math.pi

    raise ValueError("shape must be 'disc' or 'half_plane'")


# -- random-walk Dirichlet oracle ------------------------------------------

@njit(cache=True, nogil=True)
def _disc_walk_chunk(x0, y0, cap, floor, seed, chunk_index, m, out):
    """Exit angles of hex-step walks in the unit disc; writes out[:m]."""
    hx = np.array([1.0, 0.5, -0.5, -1.0, -0.5, 0.5])
    hy = np.array([0.0, 0.8660254037844386, 0.8660254037844386, 0.0,
                   -0.8660254037844386, -0.8660254037844386])
    state = stream_state(np.uint64(seed), np.uint64(chunk_index))
    for w in range(m):
        x, y = x0, y0
        while True:
            d = 1.0 - math.sqrt(x * x + y * y)
            h = d * 0.1
            if h > cap:
                h = cap
            if h < floor:
                h = floor
            k = int(next_uniform(state) * 6.0)
            if k > 5:
                k = 5
            nx = x + h * hx[k]
            ny = y + h * hy[k]
            if nx * nx + ny * ny >= 1.0:
                # exact crossing of the unit circle along the segment
                dx, dy = nx - x, ny - y
                a = dx * dx + dy * dy
                b = 2.0 * (x * dx + y * dy)
                c = x * x + y * y - 1.0
                t = (-b + math.sqrt(b * b - 4 * a * c)) / (2 * a)
                ex, ey = x + t * dx, y + t * dy
                out[w] = math.atan2(ey, ex)
                break
            x, y = nx, ny


@njit(cache=True, nogil=True)
def _halfplane_walk_chunk(x0, y0, cap, floor, seed, chunk_index, m, out):
    """Exit abscissas of hex-step walks in the upper half plane."""
    hx = np.array([1.0, 0.5, -0.5, -1.0, -0.5, 0.5])
    hy = np.array([0.0, 0.8660254037844386, 0.8660254037844386, 0.0,
                   -0.8660254037844386, -0.8660254037844386])
    state = stream_state(np.uint64(seed), np.uint64(chunk_index))
    for w in range(m):
        x, y = x0, y0
        while True:
            # multiplicative steps keep half-plane excursions integrable
            h = y * 0.1
            if h < floor:
                h = floor
            k = int(next_uniform(state) * 6.0)
            if k > 5:
                k = 5
            nx = x + h * hx[k]
            ny = y + h * hy[k]
            if ny <= 0.0:
                t = y / (y - ny)
                out[w] = x + t * (nx - x)
                break
            x, y = nx, ny


def walk_dirichlet(shape: str, boundary_f, z: complex, n_walks: int,
                   seed: int, chunk: int = 8192,
                   workers: int | None = None) -> MCEstimate:
    """Dirichlet solution u(z) estimated by averaging boundary_f over the
    exit points of hexagonal-step random walks started at z.

    Step length is re-chosen each step as dist/10 (capped at 1e-2 in the
    disc, uncapped in the half plane where the cap would make excursion
    lengths heavy-tailed) and floored at 1e-4 so the walk terminates; the
    exit point is the first boundary intersection of the stepping segment.
    """
    z = complex(z)
    cap = 1e-2
    floor = 1e-4
    if shape == "disc":
        if abs(z) >= 1:
            raise ValueError("start must be interior")
        kernel = _disc_walk_chunk
    elif shape == "half_plane":
        if z.imag <= 0:
            raise ValueError("start must be interior")
        kernel = _halfplane_walk_chunk
    else:
        raise ValueError("shape must be 'disc' or 'half_plane'")

    sizes = [chunk] * (n_walks // chunk)
    if n_walks % chunk:
        sizes.append(n_walks % chunk)

    vals = np.empty(n_walks, dtype=np.float64)
    pos = 0

    def job(ci, m):
        buf = np.empty(m, dtype=np.float64)
        kernel(z.real, z.imag, cap, floor, seed, ci, m, buf)
        return buf

    bufs = [job(ci, m) for ci, m in enumerate(sizes)] if (workers or 1) <= 1 \
        else _parallel_bufs(job, sizes, workers)
    for b in bufs:
        vals[pos:pos + len(b)] = b
        pos += len(b)

    fb = np.array([boundary_f(v) for v in vals], dtype=np.float64)
    mean = float(fb.mean())
    se = float(fb.std(ddof=1) / math.sqrt(n_walks)) if n_walks > 1 else 0.0
    return MCEstimate(n=n_walks, p_hat=mean, ci_low=mean - 1.959963984540054 * se,
                      ci_high=mean + 1.959963984540054 * se, seed=seed)


def _parallel_bufs(job, sizes, workers):
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, range(len(sizes)), sizes))
