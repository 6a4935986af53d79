"""Zeros of the Selberg zeta function: argument principle, subdivision, Newton.

Resonances are the zeros of ``Z(s) = det(I - L_s)`` with the topological
zeros removed: ``Z`` also vanishes at ``s = -k`` (k = 0, 1, ...) to order
``(2k + 1) |chi(X_q)| = (2k + 1)(p - 1)|G|``.  A zero found at a
non-positive integer with larger multiplicity carries the surplus as a
resonance (at ``s = 0`` the example group has one).

Winding numbers are accumulated from ``Im log Z`` along the contour.  A
segment is bisected until the phase step is below ``max_dphase``, so a zero
hiding between two nodes cannot be skipped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .pressure import PeriodicOrbitTable
from .transfer import ZetaFunction


class ContourError(RuntimeError):
    """The contour passes (numerically) through a zero."""


@dataclass(frozen=True)
class Rectangle:
    sigma_min: float
    sigma_max: float
    t_min: float
    t_max: float

    def __post_init__(self):
        if not (self.sigma_min < self.sigma_max and self.t_min < self.t_max):
            raise ValueError(f"degenerate rectangle {self}")

    @property
    def width(self) -> float:
        return self.sigma_max - self.sigma_min

    @property
    def height(self) -> float:
        return self.t_max - self.t_min

    @property
    def size(self) -> float:
        return max(self.width, self.height)

    @property
    def center(self) -> complex:
        return complex(0.5 * (self.sigma_min + self.sigma_max), 0.5 * (self.t_min + self.t_max))

    def contains(self, s: complex, pad: float = 0.0) -> bool:
        return (
            self.sigma_min - pad <= s.real <= self.sigma_max + pad and self.t_min - pad <= s.imag <= self.t_max + pad
        )

    def corners(self) -> list[complex]:
        return [
            complex(self.sigma_min, self.t_min),
            complex(self.sigma_max, self.t_min),
            complex(self.sigma_max, self.t_max),
            complex(self.sigma_min, self.t_max),
        ]

    def split(self, frac: float = 0.5) -> tuple["Rectangle", "Rectangle"]:
        if self.width >= self.height:
            x = self.sigma_min + frac * self.width
            return (
                Rectangle(self.sigma_min, x, self.t_min, self.t_max),
                Rectangle(x, self.sigma_max, self.t_min, self.t_max),
            )
        y = self.t_min + frac * self.height
        return (
            Rectangle(self.sigma_min, self.sigma_max, self.t_min, y),
            Rectangle(self.sigma_min, self.sigma_max, y, self.t_max),
        )

    def grow(self, d: float) -> "Rectangle":
        return Rectangle(self.sigma_min - d, self.sigma_max + d, self.t_min - d, self.t_max + d)

    @property
    def symmetric(self) -> bool:
        return abs(self.t_min + self.t_max) < 1e-14 * max(1.0, self.height)

    @classmethod
    def parse(cls, text: str) -> "Rectangle":
        a, b, c, d = (float(x) for x in text.split(","))
        return cls(a, b, c, d)


@dataclass(frozen=True)
class DiscRegion:
    center: complex
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    def contains(self, s: complex, pad: float = 0.0) -> bool:
        return abs(s - self.center) <= self.radius + pad

    def bounding_rectangle(self) -> Rectangle:
        c, r = self.center, self.radius
        return Rectangle(c.real - r, c.real + r, c.imag - r, c.imag + r)


# ----------------------------------------------------------------- winding


def _wrap(x: float) -> float:
    return (x + math.pi) % (2 * math.pi) - math.pi


@dataclass
class Winding:
    value: float
    nodes: int
    min_log_abs: float


def _edge_nodes(z0: complex, z1: complex, step: float) -> list[complex]:
    """Endpoints plus the points of the lattice ``step * Z`` on an axis-parallel edge.

    Lattice nodes are shared by neighbouring cells, so the determinant cache
    serves them again during subdivision.
    """
    if z0.imag == z1.imag:
        x0, x1, y = z0.real, z1.real, z0.imag
        ks = range(math.floor(min(x0, x1) / step) + 1, math.ceil(max(x0, x1) / step))
        xs = sorted({k * step for k in ks if min(x0, x1) < k * step < max(x0, x1)}, reverse=x1 < x0)
        return [z0] + [complex(x, y) for x in xs] + [z1]
    y0, y1, x = z0.imag, z1.imag, z0.real
    ks = range(math.floor(min(y0, y1) / step) + 1, math.ceil(max(y0, y1) / step))
    ys = sorted({k * step for k in ks if min(y0, y1) < k * step < max(y0, y1)}, reverse=y1 < y0)
    return [z0] + [complex(x, y) for y in ys] + [z1]


def _phase_along(F, pts: list[complex], max_dphase: float, min_len: float) -> tuple[float, int, float]:
    """Accumulated ``arg F`` along a polyline.

    Each segment is accepted only when its two halves agree with the whole
    (no aliasing) and every step is below ``max_dphase``.
    """
    total = 0.0
    nodes = 0
    min_la = math.inf
    lds = [F.logdet(z) for z in pts]
    for k in range(len(pts) - 1):
        stack = [(pts[k], pts[k + 1], lds[k], lds[k + 1])]
        while stack:
            z0, z1, l0, l1 = stack.pop()
            if not (np.isfinite(l0.real) and np.isfinite(l1.real)):
                raise ContourError(f"Z vanishes on the contour near {z0 if not np.isfinite(l0.real) else z1}")
            zm = 0.5 * (z0 + z1)
            lm = F.logdet(zm)
            nodes += 1
            if not np.isfinite(lm.real):
                raise ContourError(f"Z vanishes on the contour at {zm}")
            d0 = _wrap(lm.imag - l0.imag)
            d1 = _wrap(l1.imag - lm.imag)
            d = _wrap(l1.imag - l0.imag)
            smooth = abs(lm.real - 0.5 * (l0.real + l1.real)) < 1.0
            if abs(d0) <= max_dphase and abs(d1) <= max_dphase and abs(d0 + d1 - d) < 1e-6 and smooth:
                total += d0 + d1
                min_la = min(min_la, l0.real, lm.real, l1.real)
                continue
            if abs(z1 - z0) < min_len:
                raise ContourError(f"unresolved phase jump near s = {zm}")
            stack.append((zm, z1, lm, l1))
            stack.append((z0, zm, l0, lm))
    return total, nodes, min_la


def winding_number(
    Z: ZetaFunction,
    region: Rectangle | DiscRegion,
    step: float = 0.05,
    max_dphase: float = 0.6,
) -> Winding:
    """Winding number of ``Z`` around the boundary of ``region``, counter-clockwise."""
    if isinstance(region, Rectangle):
        cs = region.corners()
        total, nodes, min_la = 0.0, 0, math.inf
        for k in range(4):
            pts = _edge_nodes(cs[k], cs[(k + 1) % 4], step)
            t, n, m = _phase_along(Z, pts, max_dphase, 1e-13 * max(1.0, region.size))
            total += t
            nodes += n
            min_la = min(min_la, m)
        return Winding(total / (2 * math.pi), nodes, min_la)
    c, r = region.center, region.radius
    n0 = max(16, math.ceil(2 * math.pi * r / step))
    th = 2 * math.pi * np.arange(n0 + 1) / n0
    pts = [c + r * complex(math.cos(t), math.sin(t)) for t in th]
    pts[-1] = pts[0]
    total, nodes, min_la = _phase_along(Z, pts, max_dphase, 1e-13 * max(1.0, r))
    return Winding(total / (2 * math.pi), nodes, min_la)


def _nudged(region, k: int):
    """Region perturbed outward by ``k/10`` of its scale (alternating sign)."""
    sign = 1 if k % 2 else -1
    if isinstance(region, Rectangle):
        d = sign * 0.1 * ((k + 1) // 2) * 0.1 * min(region.width, region.height)
        return region.grow(d)
    return DiscRegion(region.center, region.radius * (1 + sign * 0.01 * ((k + 1) // 2)))


def count_zeros(Z: ZetaFunction, region, step: float = 0.05, retries: int = 3) -> int:
    """Zeros of ``Z`` (topological ones included) inside ``region``.

    If the contour meets a zero the region is perturbed and the count
    retried; the perturbation actually used is in ``count_zeros.last_nudge``.
    """
    last = None
    for k in range(retries + 1):
        reg = region if k == 0 else _nudged(region, k)
        try:
            w = winding_number(Z, reg, step)
        except ContourError as e:
            last = e
            continue
        n = round(w.value)
        if abs(w.value - n) > 0.25:
            raise ContourError(f"winding {w.value} not near an integer")
        count_zeros.last_nudge = None if k == 0 else reg
        return int(n)
    raise ContourError(f"contour hits a zero after {retries} perturbations: {last}")


count_zeros.last_nudge = None


def topological_multiplicity(k: int, p: int, group_order: int) -> int:
    """Order of the topological zero of ``Z_{Gamma(q)}`` at ``s = -k``."""
    return (2 * k + 1) * (p - 1) * group_order


def topological_zeros_in(region, p: int, group_order: int) -> dict[int, int]:
    out = {}
    if isinstance(region, Rectangle):
        if not region.t_min <= 0 <= region.t_max:
            return out
        lo, hi = region.sigma_min, region.sigma_max
    else:
        if abs(region.center.imag) > region.radius:
            return out
        half = math.sqrt(region.radius**2 - region.center.imag**2)
        lo, hi = region.center.real - half, region.center.real + half
    for k in range(max(0, math.ceil(-hi)), math.floor(-lo) + 1):
        if region.contains(complex(-k, 0)):
            out[-k] = topological_multiplicity(k, p, group_order)
    return out


def count_resonances(Z: ZetaFunction, region, step: float = 0.05) -> int:
    """Zeros in ``region`` that are not topological.

    For a ``ZetaFunction`` the count is taken factor by factor over the
    irreducible constituents of G, ``sum_rho mult_rho * #zeros(Z_rho)``: the
    phase of each factor turns ``dim rho`` times faster than at q = 1 instead
    of ``|G|`` times.  Topological factors within distance 2 of the region
    are divided out first, ``(2k+1)(p-1) dim rho`` per factor; the split of the
    topological order among factors does not matter since only the weighted
    sum is used.
    """
    if isinstance(region, Rectangle):
        lo, hi, near_axis = region.sigma_min, region.sigma_max, region.t_min - 2 <= 0 <= region.t_max + 2
    else:
        lo, hi = region.center.real - region.radius, region.center.real + region.radius
        near_axis = abs(region.center.imag) <= region.radius + 2
    ks = range(max(0, math.ceil(-hi - 2)), math.floor(-lo + 2) + 1) if near_axis else ()
    if isinstance(Z, ZetaFunction):
        parts = [(f.multiplicity, f, f.rep.dim) for f in Z.factors()]
    else:
        parts = [(1, Z, Z.ctx.order)]
    total = 0
    for mult, F, d in parts:
        pins = {-k: topological_multiplicity(k, Z.g.p, d) for k in ks}
        total += mult * count_zeros(_Deflated(F, pins) if pins else F, region, step)
    return total


# ------------------------------------------------------------ localisation


@dataclass
class Zero:
    s: complex
    multiplicity: int
    residual: float
    newton_error: float
    derivative: float
    cluster: bool = False

    def to_dict(self) -> dict:
        return {
            "re": self.s.real,
            "im": self.s.imag,
            "multiplicity": self.multiplicity,
            "residual": self.residual,
            "newton_error": self.newton_error,
            "cluster": self.cluster,
        }


@dataclass
class ResonanceSet:
    """Resonances in a region, plus the topological zeros that were removed."""

    zeros: list[Zero]
    q: int
    group_order: int
    region: Rectangle
    M: int
    topological: dict[int, int] = field(default_factory=dict)
    total_zeros: int = 0
    evaluations: int = 0
    nudges: list = field(default_factory=list)

    @property
    def count(self) -> int:
        return sum(z.multiplicity for z in self.zeros)

    def points(self) -> np.ndarray:
        return np.array([z.s for z in self.zeros], dtype=complex)

    def expanded(self) -> np.ndarray:
        """Resonances repeated according to multiplicity."""
        return np.array([z.s for z in self.zeros for _ in range(z.multiplicity)], dtype=complex)

    def real_zeros(self, tol: float = 1e-8) -> list[Zero]:
        return [z for z in self.zeros if abs(z.s.imag) <= tol]

    def leading_real(self) -> float:
        re = [z.s.real for z in self.real_zeros()]
        return max(re) if re else math.nan

    def rows(self) -> list[dict]:
        return [dict(q=self.q, **z.to_dict()) for z in sorted(self.zeros, key=lambda z: (z.s.real, z.s.imag))]


def _zprime(Z, s: complex, h: float) -> tuple[complex, complex, float]:
    """``Z(s)`` and ``Z'(s)`` scaled by ``e^{-c}`` (returned third), from a
    four-point circle rule (error O(h^4))."""
    ref = Z.logdet(s)
    c = ref.real if np.isfinite(ref.real) else 0.0
    vals = [np.exp(Z.logdet(s + h * w) - c) for w in (1, 1j, -1, -1j)]
    d = (vals[0] - vals[2] - 1j * (vals[1] - vals[3])) / (4 * h)
    return complex(np.exp(ref - c)), complex(d), c


def newton(Z, s0: complex, m: int = 1, tol: float = 1e-10, max_iter: int = 40, cell=None):
    """Modified Newton ``s -> s - m Z/Z'``; returns (s, last step) or None."""
    s = complex(s0)
    step = math.inf
    h = 1e-4 if cell is None else min(1e-4, 0.05 * cell.size)
    for _ in range(max_iter):
        z, dz, _c = _zprime(Z, s, h)
        if z == 0:
            return s, 0.0
        if dz == 0 or not np.isfinite(dz):
            return None
        ds = -m * z / dz
        step = abs(ds)
        s = s + ds
        if cell is not None and not cell.contains(s, pad=0.05 * cell.size):
            return None
        h = min(h, max(step, 1e-7))
        if step < tol:
            return s, step
    return (s, step) if step < 1e3 * tol else None


class _Deflated:
    """``Z(s) / prod (s + k)^{m_k}``: removes zeros pinned at integers so that
    their floating-point splitting does not stall the subdivision."""

    def __init__(self, Z: ZetaFunction, pins: dict[int, int]):
        self.Z, self.pins = Z, pins
        self.g, self.ctx, self.M = Z.g, Z.ctx, Z.M

    @property
    def evaluations(self) -> int:
        return self.Z.evaluations

    @property
    def q(self) -> int:
        return self.Z.q

    def logdet(self, s: complex) -> complex:
        s = complex(s)
        v = self.Z.logdet(s)
        for k, m in self.pins.items():
            if s == k:
                return complex(-np.inf)
            v -= m * np.log(s - k)
        return v

    def __call__(self, s: complex) -> complex:
        return complex(np.exp(self.logdet(s)))


def _pinned_multiplicities(Z: ZetaFunction, region: Rectangle, points, radius: float = 1e-3) -> dict[int, int]:
    out = {}
    for k in points:
        gap = min(k - region.sigma_min, region.sigma_max - k, -region.t_min, region.t_max)
        r = min(radius, 0.5 * gap)
        if r <= 0:
            raise ContourError(f"topological point {k} lies on the region boundary")
        out[k] = count_zeros(Z, DiscRegion(complex(k, 0), r), step=r / 8)
    return out


def find_resonances(
    Z: ZetaFunction,
    region: Rectangle,
    tol: float = 1e-10,
    min_size: float = 1e-5,
    step: float = 0.05,
) -> ResonanceSet:
    """Subdivide until every cell holds at most one zero, then Newton.

    Zeros at the topological points ``s = -k`` are counted on small circles
    and divided out first.  Cells that reach ``min_size`` still holding
    several zeros are refined with the modified Newton step and reported as
    a cluster.  Topological zeros are removed from the returned list (kept in
    ``topological``); any surplus multiplicity at ``-k`` is a resonance.
    """
    ev0 = Z.evaluations
    nudges = []
    root = region
    topo_all = topological_zeros_in(root, Z.g.p, Z.ctx.order)
    pins = _pinned_multiplicities(Z, root, topo_all)
    F = _Deflated(Z, pins) if pins else Z
    n_root = None
    for k in range(4):
        try:
            n_root = round(winding_number(F, root, step).value)
            break
        except ContourError:
            root = _nudged(region, k + 1)
            nudges.append(root)
    if n_root is None:
        raise ContourError("region boundary passes through zeros")
    found: list[Zero] = []
    stack = [(root, n_root)]
    while stack:
        cell, n = stack.pop()
        if n == 0:
            continue
        small = cell.size <= min_size
        if n == 1 or small:
            res = newton(F, cell.center, m=n, tol=tol, cell=cell)
            if res is not None and cell.contains(res[0], pad=1e-9):
                s, err = res
                z, dz, c = _zprime(Z, s, max(1e-6, 10 * err))
                found.append(Zero(s, n, abs(z) * math.exp(c), err, abs(dz) * math.exp(c), cluster=n > 1))
                continue
            if small:
                s = cell.center
                found.append(Zero(s, n, abs(Z(s)), cell.size, math.nan, cluster=True))
                continue
        children = None
        for frac in (0.5, 0.45, 0.55, 0.4, 0.6):
            a, b = cell.split(frac)
            try:
                na = round(winding_number(F, a, step).value)
                nb = round(winding_number(F, b, step).value)
            except ContourError:
                continue
            if na + nb == n:
                children = [(a, na), (b, nb)]
                break
        if children is None:
            raise ContourError(f"could not split cell {cell} holding {n} zeros consistently")
        stack.extend(children)
    found = _merge_close(found, tol)
    for k, m in pins.items():
        surplus = m - topo_all[k]
        if surplus < 0:
            raise ContourError(f"order {m} at s = {k} is below the topological order {topo_all[k]}")
        if surplus:
            found.append(Zero(complex(k, 0.0), surplus, 0.0, 0.0, math.nan))
    found.sort(key=lambda z: (-z.s.real, z.s.imag))
    return ResonanceSet(
        zeros=found,
        q=Z.q,
        group_order=Z.ctx.order,
        region=root,
        M=Z.M,
        topological=topo_all,
        total_zeros=n_root + sum(pins.values()),
        evaluations=Z.evaluations - ev0,
        nudges=nudges,
    )


def _is_integer_point(s: complex, tol: float = 1e-6):
    k = round(s.real)
    if k <= 0 and abs(s - k) < tol:
        return int(k)
    return None


def _merge_close(zs: list[Zero], tol: float) -> list[Zero]:
    out: list[Zero] = []
    for z in sorted(zs, key=lambda z: (z.s.real, z.s.imag)):
        for o in out:
            if abs(o.s - z.s) < max(100 * tol, 1e-8):
                o.multiplicity += z.multiplicity
                o.cluster = o.cluster or z.cluster
                break
        else:
            out.append(z)
    return out


def conjugation_defects(Z: ZetaFunction, rs: ResonanceSet, slack: float = 10.0) -> list[tuple[complex, float, float]]:
    """Zeros whose conjugate is not a zero: ``|Z(conj s)|`` against the
    threshold ``slack * max(residual, |Z'(s)| * newton_error, 1e-300)``.

    Evaluated without the cache, at freshly assembled matrices."""
    bad = []
    for z in rs.zeros:
        if z.cluster or z.s.imag == 0:
            continue  # exact real points are their own conjugates
        fresh = ZetaFunction(Z.g, Z.ctx, Z.M, **Z.kw)
        val = abs(fresh(z.s.conjugate()))
        thr = slack * max(z.residual, (z.derivative if np.isfinite(z.derivative) else 0) * max(z.newton_error, 1e-12), 1e-300)
        if val > thr:
            bad.append((z.s, val, thr))
    return bad


def match_zeros(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each point of ``a`` to the nearest point of ``b``."""
    if len(a) == 0:
        return np.zeros(0)
    if len(b) == 0:
        return np.full(len(a), np.inf)
    return np.min(np.abs(a[:, None] - b[None, :]), axis=1)


# -------------------------------------------------------------- counting


@dataclass
class CountReport:
    q: int
    group_order: int
    r: list[float]
    N: list[int]
    ratio: list[float]
    monotone: bool
    M_table: dict = field(default_factory=dict)

    @property
    def C_max(self) -> float:
        finite = [x for x in self.ratio if np.isfinite(x)]
        return max(finite) if finite else math.nan

    def rows(self) -> list[dict]:
        return [{"q": self.q, "r": r, "N_q": n, "ratio": c} for r, n, c in zip(self.r, self.N, self.ratio)]


def _ratio(n: int, q: int, G: int, r: float) -> float:
    return n / (G * math.log(q) * (1 + r * r)) if q > 1 else math.nan


def counting_probe(Z: ZetaFunction, r_grid, step: float = 0.05) -> CountReport:
    """``N_q(r) = #{resonances with |s| <= r}`` by winding numbers on circles.

    Radii should avoid the integers (topological zeros) and stay where the
    determinant is well conditioned (``r <~ 3``).
    """
    r_grid = [float(r) for r in r_grid]
    N = [count_resonances(Z, DiscRegion(0j, r), step=step) for r in r_grid]
    G = Z.ctx.order
    return CountReport(
        q=Z.q,
        group_order=G,
        r=r_grid,
        N=N,
        ratio=[_ratio(n, Z.q, G, r) for r, n in zip(r_grid, N)],
        monotone=all(a <= b for a, b in zip(N, N[1:])),
    )


def counting_functions(rs: ResonanceSet, r_grid, sigma_T_grid=(), delta: float | None = None) -> CountReport:
    """``N_q(r)`` and ``M_q(sigma, T)`` from a computed resonance list.

    Only resonances inside ``rs.region`` are known.  The region must contain
    every disc ``|s| <= r`` up to its right edge, which only has to pass the
    leading real zero (no resonance lies to its right); otherwise this raises.
    """
    reg = rs.region
    lead = rs.leading_real()
    right = max(lead, 0.0) if lead == lead else 0.0
    for r in r_grid:
        if reg.t_max < r or reg.t_min > -r or reg.sigma_min > -r or reg.sigma_max < min(r, right):
            raise ValueError(f"r = {r} exceeds the computed window {reg}")
    N = [sum(z.multiplicity for z in rs.zeros if abs(z.s) <= r) for r in r_grid]
    Mt = {}
    for sigma, T in sigma_T_grid:
        if delta is None:
            raise ValueError("delta required for M_q")
        if sigma < reg.sigma_min or T + 1 > reg.t_max or T - 1 < reg.t_min:
            raise ValueError(f"(sigma, T) = ({sigma}, {T}) exceeds the computed window")
        Mt[(sigma, T)] = sum(
            z.multiplicity for z in rs.zeros if sigma <= z.s.real <= delta + 1e-9 and abs(z.s.imag - T) <= 1
        )
    G = rs.group_order
    return CountReport(
        q=rs.q,
        group_order=G,
        r=list(r_grid),
        N=N,
        ratio=[_ratio(n, rs.q, G, r) for r, n in zip(r_grid, N)],
        monotone=all(a <= b for a, b in zip(N, N[1:])),
        M_table=Mt,
    )


def growth_slope(reports: list[CountReport], index: int = -1) -> float:
    """Least-squares slope of ``log N_q(r0)`` against ``log |G|``."""
    x = np.log([r.group_order for r in reports])
    y = np.log([max(r.N[index], 1) for r in reports])
    return float(np.polyfit(x, y, 1)[0])


# -------------------------------------------------------------- Jensen


@dataclass
class JensenReport:
    w: complex
    r: float
    r_tilde: float
    mean_log: float
    log_abs_center: float
    bound: float
    direct_count: int


def jensen_count_bound(Z, w: complex, r: float, r_tilde: float, n_theta: int = 256, count=True) -> JensenReport:
    """Jensen bound on the number of zeros in the closed disc ``D(w, r_tilde)``.

    ``Z`` is any callable with a ``logdet`` method (``ZetaFunction``) or a
    plain complex function.  The circle mean uses the trapezoidal rule,
    spectrally accurate for a smooth periodic integrand.
    """
    if not 0 < r_tilde < r:
        raise ValueError("need 0 < r_tilde < r")
    logabs = (lambda s: Z.logdet(s).real) if hasattr(Z, "logdet") else (lambda s: math.log(abs(Z(s))))
    la0 = logabs(w)
    if not np.isfinite(la0) or la0 < -30:
        raise ValueError(f"|f(w)| too small at w = {w}: move the centre")
    th = 2 * math.pi * np.arange(n_theta) / n_theta
    vals = np.array([logabs(w + r * complex(math.cos(t), math.sin(t))) for t in th])
    mean = float(np.mean(vals))
    bound = (mean - la0) / math.log(r / r_tilde)
    direct = count_zeros(Z, DiscRegion(complex(w), r_tilde)) if count and hasattr(Z, "logdet") else -1
    return JensenReport(complex(w), r, r_tilde, mean, la0, bound, direct)


# ---------------------------------------------------------- trace formula


def bump(t, a: float, b: float):
    """``exp(-1/(1 - x^2))`` on (a, b) (not normalised)."""
    t = np.asarray(t, dtype=float)
    x = (2 * t - (a + b)) / (b - a)
    out = np.zeros_like(t)
    inside = np.abs(x) < 1
    out[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
    return out


@dataclass
class TestFunction:
    """Unit-mass bump on ``(a, b)`` and its Fourier-Laplace transform."""

    __test__ = False  # not a pytest class

    a: float
    b: float
    nodes: int = 400

    def __post_init__(self):
        if not 0 < self.a < self.b:
            raise ValueError("support must lie in (0, inf)")
        # Gauss-Legendre on the support; the integrand is C^inf with flat ends
        x, w = np.polynomial.legendre.leggauss(self.nodes)
        self._t = 0.5 * (self.b - self.a) * x + 0.5 * (self.a + self.b)
        self._w = 0.5 * (self.b - self.a) * w
        self.mass = float(np.sum(self._w * bump(self._t, self.a, self.b)))
        self._phi = bump(self._t, self.a, self.b) / self.mass

    def __call__(self, t):
        return bump(t, self.a, self.b) / self.mass

    def laplace(self, s) -> np.ndarray:
        """``hat phi(i(s - 1/2)) = int phi(t) e^{(s - 1/2) t} dt``."""
        s = np.atleast_1d(np.asarray(s, dtype=complex))
        out = np.empty(s.shape, dtype=complex)
        flat, res = s.ravel(), out.ravel()
        for i in range(0, flat.size, 4096):
            res[i : i + 4096] = np.exp(np.outer(flat[i : i + 4096] - 0.5, self._t)) @ (self._w * self._phi)
        return res.reshape(s.shape)

    def integral(self, f) -> float:
        return float(np.sum(self._w * self._phi * f(self._t)))

    def abs_integral(self, sigma0: float, sigma1: float, t0: float, t1: float, d: float = 0.05) -> float:
        """``int int |hat phi(i(s - 1/2))| d sigma d t`` over a box (midpoint rule)."""
        ns = max(1, math.ceil((sigma1 - sigma0) / d))
        nt = max(1, math.ceil((t1 - t0) / d))
        sig = sigma0 + (np.arange(ns) + 0.5) * (sigma1 - sigma0) / ns
        tau = t0 + (np.arange(nt) + 0.5) * (t1 - t0) / nt
        vals = np.abs(self.laplace(sig[:, None] + 1j * tau[None, :]))
        return float(vals.sum() * (sigma1 - sigma0) / ns * (t1 - t0) / nt)


def volume_term(test: TestFunction, group_order: int, p: int) -> float:
    """``-(Vol(N_q)/4 pi) int cosh(t/2)/sinh^2(t/2) phi(t) dt`` with
    ``Vol(N_q) = |G| * 2 pi (p - 1)``."""
    vol = group_order * 2 * math.pi * (p - 1)
    return -vol / (4 * math.pi) * test.integral(lambda t: np.cosh(t / 2) / np.sinh(t / 2) ** 2)


def length_term(test: TestFunction, table: PeriodicOrbitTable, q: int, group_order: int) -> tuple[float, int]:
    """``sum_{gamma in P_q} sum_k l(gamma)/(2 sinh(k l/2)) phi(k l)`` from the orbit table.

    Every closed geodesic of the cover is a cyclic word ``w = Id mod q``; it
    is counted with weight ``|G| / n``.  The 1/n undoes the n rotations and
    turns ``l(w)`` into the primitive length; the Gamma-class of w splits
    into ``|G| / |C|`` classes of Gamma(q), and the primitive length in
    Gamma(q) is ``|C|`` times larger, where C is the centraliser image.
    """
    deepest = table.lengths[table.n_max]
    if deepest.min() < test.b:
        raise ValueError(f"orbit table (n_max = {table.n_max}) too shallow for support up to {test.b}")
    total, used = 0.0, 0
    for n in range(1, table.n_max + 1):
        ell = table.lengths[n]
        sel = table.identity_mask(q, n) & (ell > test.a) & (ell < test.b)
        if np.any(sel):
            l = ell[sel]
            total += float(np.sum(group_order / n * l / (2 * np.sinh(l / 2)) * test(l)))
            used += int(sel.sum())
    return total, used


def trace_window_resonances(
    Z: ZetaFunction,
    sigma_floor: float,
    sigma_max: float,
    T: float,
    band: float = 10.0,
    tol: float = 1e-9,
    step: float = 0.05,
    start: float = 0.0,
    previous: ResonanceSet | None = None,
) -> ResonanceSet:
    """Resonances in ``[sigma_floor, sigma_max] x [-T, T]``.

    The real strip ``|Im s| <= eps`` and bands of height ``band`` above it
    are searched; bands are mirrored, Z being real on the real axis.  With
    ``previous`` (a result for a smaller T) only the new bands are searched.
    """
    eps = 1e-4
    if previous is None:
        real = find_resonances(Z, Rectangle(sigma_floor, sigma_max, -eps, eps), tol=tol, step=step)
        zeros, topo, ev, total = list(real.zeros), real.topological, real.evaluations, real.total_zeros
        lo = eps
    else:
        zeros, topo = list(previous.zeros), previous.topological
        ev, total = previous.evaluations, previous.total_zeros
        lo = previous.region.t_max
    while lo < T + eps - 1e-12:
        hi = min(lo + band, T + eps)
        rs = find_resonances(Z, Rectangle(sigma_floor, sigma_max, lo, hi), tol=tol, step=step)
        for z in rs.zeros:
            zeros.append(z)
            zeros.append(Zero(z.s.conjugate(), z.multiplicity, z.residual, z.newton_error, z.derivative, z.cluster))
        ev += rs.evaluations
        total += 2 * rs.total_zeros
        lo = hi
    zeros.sort(key=lambda z: (-z.s.real, z.s.imag))
    return ResonanceSet(
        zeros=zeros,
        q=Z.q,
        group_order=Z.ctx.order,
        region=Rectangle(sigma_floor, sigma_max, -lo, lo),
        M=Z.M,
        topological=topo,
        total_zeros=total,
        evaluations=ev,
    )


@dataclass
class TraceFormulaReport:
    q: int
    support: tuple[float, float]
    spectral: complex
    geometric: float
    volume: float
    lengths: float
    n_lengths: int
    discrepancy: float
    relative: float
    tail: float
    tail_relative: float
    window: dict
    status: str

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["spectral"] = [self.spectral.real, self.spectral.imag]
        d["support"] = list(self.support)
        return d


def tail_estimate(test: TestFunction, region: Rectangle, density: float, depth: float = 8.0, reach: float = 200.0) -> float:
    """Estimated ``sum |hat phi|`` over resonances outside ``region``.

    Resonances are modelled with uniform density per unit area (the
    quadratic counting bound ``N(r) <= C (1 + r^2)`` with C fitted on the
    window): above ``|Im s| = T`` for ``Re s`` down to ``depth`` below the
    floor, and left of the floor.  ``|hat phi|`` decays like
    ``e^{(sigma - 1/2) a}`` leftwards and faster than any power upwards, so
    ``depth`` and ``reach`` only truncate negligible mass.
    """
    T = min(region.t_max, -region.t_min)
    lo = region.sigma_min - depth
    upper = test.abs_integral(lo, region.sigma_max, T, T + reach, d=0.1)
    left = test.abs_integral(lo, region.sigma_min, 0.0, T, d=0.1)
    return 2 * density * (upper + left)


def trace_formula_check(
    rs: ResonanceSet,
    test: TestFunction,
    table: PeriodicOrbitTable,
    p: int,
    tail_target: float = 0.05,
    density: float | None = None,
) -> TraceFormulaReport:
    """Both sides of the wave-trace formula for the resonances in ``rs``.

    Spectral side: ``sum hat phi(i(s - 1/2))`` over the computed resonances
    (topological zeros excluded).  Geometric side: volume term plus the
    length sum over the orbit table.  Pass when the discrepancy is within
    ``max(tail_target, tail estimate)`` of the geometric side and the tail
    estimate itself is below ``tail_target``.
    """
    reg = rs.region
    pts = rs.expanded()
    spec = complex(np.sum(test.laplace(pts))) if pts.size else 0j
    vol = volume_term(test, rs.group_order, p)
    lens, used = length_term(test, table, rs.q, rs.group_order)
    geo = vol + lens
    area = reg.width * reg.height
    if density is None:
        density = rs.count / area
    tail = tail_estimate(test, reg, density)
    disc = abs(spec - geo)
    rel = disc / abs(geo)
    tail_rel = tail / abs(geo)
    if tail_rel > tail_target:
        status = "window insufficient"
    elif rel <= max(tail_target, tail_rel):
        status = "pass"
    else:
        status = "fail"
    return TraceFormulaReport(
        q=rs.q,
        support=(test.a, test.b),
        spectral=spec,
        geometric=geo,
        volume=vol,
        lengths=lens,
        n_lengths=used,
        discrepancy=disc,
        relative=rel,
        tail=tail,
        tail_relative=tail_rel,
        window={
            "sigma_min": reg.sigma_min,
            "sigma_max": reg.sigma_max,
            "T": reg.t_max,
            "resonances": rs.count,
            "density": density,
        },
        status=status,
    )


def run_trace_formula(
    Z: ZetaFunction,
    test: TestFunction,
    table: PeriodicOrbitTable,
    sigma_floor: float = -1.2,
    sigma_max: float = 0.3,
    band: float = 10.0,
    T_max: float = 100.0,
    tail_target: float = 0.05,
    tol: float = 1e-9,
) -> tuple[TraceFormulaReport, ResonanceSet]:
    """Grow the window band by band until the tail estimate drops below target."""
    rs = None
    T = band
    while True:
        rs = trace_window_resonances(Z, sigma_floor, sigma_max, T, band=band, tol=tol, previous=rs)
        rep = trace_formula_check(rs, test, table, Z.g.p, tail_target)
        if rep.tail_relative <= tail_target or T >= T_max:
            return rep, rs
        T += band
