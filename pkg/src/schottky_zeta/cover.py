"""Refined cover of the limit set, Bergman-kernel Hilbert-Schmidt norms, det_2.

The scale-h cover consists of the connected components of
``(Lambda + (-h, h)) cap I_j`` for each base interval ``I_j``, and the discs
orthogonal to R having these components as diameters.  ``Omega_j(h)`` is the
union of the component discs inside ``D_j``.  For large h the cover is the
2p base discs; for small h clipping never binds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .congruence import CongruenceContext, congruence_context
from .moebius import SchottkyGroup, fixed_points
from .pressure import PeriodicOrbitTable, build_orbit_table, pressure_table
from .transfer import SPARSE_THRESHOLD, assemble, logdet_I_minus, trace_orbits


# ------------------------------------------------------------------ words


@dataclass
class WordBatch:
    """All words of ``W_n^j`` for one j, as float matrices with residues."""

    j: int
    n: int
    letters: np.ndarray  # (A, n)
    mats: np.ndarray  # (A, 2, 2), normalised
    residues: np.ndarray | None  # element index mod q


def word_batches(g: SchottkyGroup, n: int, ctx: CongruenceContext | None = None) -> list[WordBatch]:
    """Reduced words of length n grouped by the disc they act on (last letter != j).

    Matrices are normalised by their max entry; Moebius action is unchanged.
    """
    nl, p = g.n_letters, g.p
    mats = g.letter_arrays()
    # build right to left: start from last letter
    lett = np.arange(nl)[:, None]
    F = mats.copy()
    res = ctx.perms[np.arange(nl), 0].copy() if ctx is not None and ctx.q > 1 else None
    for _ in range(n - 1):
        first = lett[:, 0]
        xs = np.repeat(np.arange(nl)[None, :], first.size, axis=0)
        ok = xs != ((first[:, None] + p) % nl)
        widx, x = np.nonzero(ok)
        F = np.einsum("nij,njk->nik", mats[x], F[widx])
        F /= np.max(np.abs(F), axis=(1, 2), keepdims=True)
        lett = np.concatenate([x[:, None], lett[widx]], axis=1)
        if res is not None:
            res = ctx.perms[x, res[widx]]
    out = []
    for j in range(nl):
        sel = lett[:, -1] != j
        out.append(WordBatch(j, n, lett[sel], F[sel], None if res is None else res[sel]))
    return out


def _apply(m: np.ndarray, z):
    """Moebius action of a stack of matrices (A,2,2) on points z (broadcast)."""
    a, b, c, d = (m[..., 0, 0], m[..., 0, 1], m[..., 1, 0], m[..., 1, 1])
    return (a[..., None] * z + b[..., None]) / (c[..., None] * z + d[..., None])


def _log_derivative(m: np.ndarray, z, anchor: float):
    """``log gamma'(z)`` on the branch real at ``anchor`` (a real point of the disc)."""
    a, b, c, d = (m[..., 0, 0], m[..., 0, 1], m[..., 1, 0], m[..., 1, 1])
    det = a * d - b * c
    w = c[..., None] * z + d[..., None]
    sgn = np.sign(c * anchor + d)[..., None]
    return np.log(det)[..., None] - 2.0 * np.log(sgn * w)


# ------------------------------------------------------------------ cover


@dataclass
class LimitSetCover:
    h: float
    depth: int
    intervals: np.ndarray  # (N, 2), sorted
    parent: np.ndarray  # base disc of each component
    max_cylinder: float
    max_len_over_h: float
    margins: dict = field(default_factory=dict)
    n0: int | None = None

    @property
    def N(self) -> int:
        return int(self.intervals.shape[0])

    @property
    def centers(self) -> np.ndarray:
        return self.intervals.mean(axis=1)

    @property
    def radii(self) -> np.ndarray:
        return 0.5 * (self.intervals[:, 1] - self.intervals[:, 0])

    @property
    def measure(self) -> float:
        """``m(Omega(h))``: total area of the component discs."""
        return float(np.sum(math.pi * self.radii**2))

    def component_of(self, x: np.ndarray) -> np.ndarray:
        """Index of the component containing each real x, -1 if none."""
        x = np.asarray(x, dtype=float)
        k = np.searchsorted(self.intervals[:, 0], x, side="right") - 1
        ok = (k >= 0) & (x <= self.intervals[np.clip(k, 0, None), 1])
        return np.where(ok, k, -1)

    def components_in(self, j: int) -> np.ndarray:
        return np.nonzero(self.parent == j)[0]

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "depth": self.depth,
            "N_h": self.N,
            "max_len_over_h": self.max_len_over_h,
            "measure": self.measure,
            "n0": self.n0,
            "margins": {str(k): v for k, v in self.margins.items()},
            "intervals": self.intervals.tolist(),
        }


def limit_points(g: SchottkyGroup, depth: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Points of the limit set ``gamma_alpha(xi_j)``, alpha in W_depth^j.

    ``xi_j`` is the attracting fixed point of the letter mapping into ``D_j``.
    Returns points, the base disc of each, and the largest cylinder diameter
    ``|gamma_alpha(I_j)|``; every point of the limit set is within that
    distance of a returned point.
    """
    nl, p = g.n_letters, g.p
    xi = np.array([fixed_points(g.letter((j + p) % nl))[0] for j in range(nl)])
    pts, par, diam = [], [], 0.0
    for wb in word_batches(g, depth):
        j = wb.j
        a, b = g.discs[j].interval
        ends = _apply(wb.mats, np.array([a, b]))
        diam = max(diam, float(np.max(np.abs(ends[:, 1] - ends[:, 0]))))
        x = _apply(wb.mats, np.array([xi[j]]))[:, 0]
        pts.append(x.real)
        par.append((wb.letters[:, 0] + p) % nl)
    return np.concatenate(pts), np.concatenate(par), diam


def build_cover(
    g: SchottkyGroup,
    h: float,
    depth: int | None = None,
    check_n: int | None = None,
    n_max_check: int = 6,
) -> LimitSetCover:
    """Components of ``(Lambda + (-h, h)) cap I_j`` from depth-d limit points.

    The depth is raised until the largest cylinder is below h/4.  Lemma-4.1
    containment is then checked for ``n = 1..n_max_check`` (or only
    ``check_n``); ``n0`` is the first n from which three consecutive depths
    keep every image at distance >= 0.49 h from the boundary of its target.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    d = depth or 1
    while True:
        pts, par, diam = limit_points(g, d)
        if depth is not None or diam < h / 4 or d >= 12:
            break
        d += 1
    ivs, parents = [], []
    for j in range(g.n_letters):
        x = np.sort(pts[par == j])
        a, b = g.discs[j].interval
        breaks = np.nonzero(np.diff(x) > 2 * h)[0]
        starts = np.concatenate([[0], breaks + 1])
        stops = np.concatenate([breaks, [x.size - 1]])
        for s0, s1 in zip(starts, stops):
            ivs.append((max(x[s0] - h, a), min(x[s1] + h, b)))
            parents.append(j)
    order = np.argsort([iv[0] for iv in ivs])
    intervals = np.array(ivs)[order]
    parent = np.array(parents)[order]
    lens = intervals[:, 1] - intervals[:, 0]
    cover = LimitSetCover(h, d, intervals, parent, diam, float(lens.max() / h))
    ns = [check_n] if check_n else range(1, n_max_check + 1)
    for n in ns:
        cover.margins[n] = lemma41_margin(g, cover, n)
    ok = [n for n in sorted(cover.margins) if cover.margins[n] >= 0.49 * h]
    for n in ok:
        if all(m in cover.margins and cover.margins[m] >= 0.49 * h for m in (n, n + 1, n + 2)):
            cover.n0 = n
            break
    if cover.n0 is None and ok and check_n:
        cover.n0 = ok[0]
    return cover


def _targets(cover: LimitSetCover, mats: np.ndarray, ell: int, j: int):
    """Image intervals of component ``ell`` under each word, target index, margin."""
    a, b = cover.intervals[ell]
    anchor = 0.5 * (a + b)
    ends = _apply(mats, np.array([a, b])).real
    lo, hi = ends.min(axis=1), ends.max(axis=1)
    mid = _apply(mats, np.array([anchor])).real[:, 0]
    tgt = cover.component_of(mid)
    A = cover.intervals[np.clip(tgt, 0, None)]
    margin = np.minimum(lo - A[:, 0], A[:, 1] - hi)
    margin = np.where(tgt >= 0, margin, -np.inf)
    return tgt, margin


def lemma41_margin(g: SchottkyGroup, cover: LimitSetCover, n: int) -> float:
    """``min dist(gamma_alpha(D_l), boundary of D_l')`` over alpha in W_n^j, l in Omega_j.

    Negative (or -inf) when some image is not contained in a component.
    """
    worst = math.inf
    for wb in word_batches(g, n):
        for ell in cover.components_in(wb.j):
            _tgt, margin = _targets(cover, wb.mats, ell, wb.j)
            worst = min(worst, float(margin.min()))
    return worst


@dataclass
class CoverExponents:
    hs: list[float]
    N: list[int]
    measure: list[float]
    slope_N: float
    slope_measure: float


def cover_exponents(g: SchottkyGroup, hs) -> CoverExponents:
    """Least-squares slopes of ``log N(h)`` vs ``log 1/h`` and ``log m(Omega(h))`` vs ``log h``."""
    Ns, ms = [], []
    for h in hs:
        c = build_cover(g, h, n_max_check=0)
        Ns.append(c.N)
        ms.append(c.measure)
    lh = np.log(np.asarray(hs, dtype=float))
    sN = float(np.polyfit(-lh, np.log(Ns), 1)[0])
    sm = float(np.polyfit(lh, np.log(ms), 1)[0])
    return CoverExponents(list(hs), Ns, ms, sN, sm)


# ----------------------------------------------------------- Bergman kernel


def bergman_kernel(c: float, r: float, w, z):
    """``B_D(w, z) = r^2 / (pi [r^2 - (w - c) conj(z - c)]^2)`` for the disc D(c, r)."""
    return r * r / (math.pi * (r * r - (np.asarray(w) - c) * np.conj(np.asarray(z) - c)) ** 2)


def bergman_kernel_series(c: float, r: float, w, z, K: int = 200):
    """Truncated ``sum_k e_k(w) conj(e_k(z))`` with the orthonormal monomials."""
    u = (np.asarray(w) - c) / r
    v = np.conj((np.asarray(z) - c) / r)
    k = np.arange(K)
    return np.sum((k + 1) / (math.pi * r * r) * (u[..., None] * v[..., None]) ** k, axis=-1)


def disc_quadrature(c: float, r: float, n_r: int = 24, n_t: int = 48):
    """Nodes and weights for area integrals over D(c, r): Gauss-Legendre in the
    radius, trapezoidal in the angle."""
    x, w = np.polynomial.legendre.leggauss(n_r)
    rho = 0.5 * (x + 1)
    wr = 0.5 * w * rho
    th = 2 * math.pi * np.arange(n_t) / n_t
    z = c + r * rho[:, None] * np.exp(1j * th)[None, :]
    wt = (r * r) * wr[:, None] * (2 * math.pi / n_t) * np.ones(n_t)[None, :]
    return z.ravel(), wt.ravel()


# -------------------------------------------------------------- HS norms


@dataclass
class HSReport:
    s: complex
    n: int
    h: float
    q: int
    hs_norm2: float
    hs_diagonal2: float
    offdiagonal_pairs: int
    frobenius2: float | None
    det2: complex | None
    log_abs_det2: float | None
    bound: float
    margin: float

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["s"] = [self.s.real, self.s.imag]
        d["det2"] = None if self.det2 is None else [self.det2.real, self.det2.imag]
        return d


def _groups(cover: LimitSetCover, wb: WordBatch, ell: int):
    """Words acting on component ell, grouped by (target component, residue)."""
    tgt, margin = _targets(cover, wb.mats, ell, wb.j)
    if np.any(tgt < 0) or np.any(margin <= 0):
        raise ValueError(f"images of component {ell} not contained in the cover at n = {wb.n}")
    res = wb.residues if wb.residues is not None else np.zeros(len(tgt), dtype=int)
    keys = tgt * (int(res.max()) + 1 if res.size else 1) + res
    out = {}
    for k in np.unique(keys):
        idx = np.nonzero(keys == k)[0]
        out[(int(tgt[idx[0]]), int(res[idx[0]]))] = idx
    return out, float(margin.min())


def hs_norm(
    g: SchottkyGroup,
    ctx: CongruenceContext | int,
    cover: LimitSetCover,
    s: complex,
    n: int,
    quad: tuple[int, int] = (24, 48),
) -> HSReport:
    """``||L_s^n||_HS^2`` on the scale-h space by the Bergman-kernel identity.

    Full sum: pairs of congruent words whose images of a component land in
    the same target component (the kernel vanishes across components).
    Diagonal sum: alpha = beta only.
    """
    if isinstance(ctx, int):
        ctx = congruence_context(g, ctx)
    s = complex(s)
    G = ctx.order
    full = diag = 0.0
    off_pairs = 0
    margin = math.inf
    for wb in word_batches(g, n, ctx):
        for ell in cover.components_in(wb.j):
            c0, r0 = cover.centers[ell], cover.radii[ell]
            z, wt = disc_quadrature(c0, r0, *quad)
            groups, mg = _groups(cover, wb, ell)
            margin = min(margin, mg)
            for (tgt, _res), idx in groups.items():
                mats = wb.mats[idx]
                W = _apply(mats, z)  # (A, Q)
                f = np.exp(s * _log_derivative(mats, z, c0))  # (A, Q)
                ct, rt = cover.centers[tgt], cover.radii[tgt]
                Bd = bergman_kernel(ct, rt, W, W).real
                diag += float(np.sum(wt * np.sum(np.abs(f) ** 2 * Bd, axis=0)))
                if idx.size > 1:
                    off_pairs += idx.size * (idx.size - 1)
                    # sum_{a,b} f_a conj(f_b) B(w_a, w_b)
                    Bm = bergman_kernel(ct, rt, W[:, None, :], W[None, :, :])
                    tot = np.einsum("aq,bq,abq->q", f, np.conj(f), Bm).real
                    full += float(np.sum(wt * tot))
                else:
                    full += float(np.sum(wt * np.abs(f[0]) ** 2 * Bd[0]))
    full *= G
    diag *= G
    return HSReport(s, n, cover.h, ctx.q, full, diag, off_pairs, None, None, None, 0.5 * full, margin)


def _word_block(mats: np.ndarray, c0: float, r0: float, ct: float, rt: float, s: complex, M: int, K: int):
    """Summed matrix of ``F -> sum_alpha (gamma_alpha')^s F o gamma_alpha`` from
    the Bergman basis of D(ct, rt) to that of D(c0, r0)."""
    w = np.exp(2j * math.pi * np.arange(K) / K)
    z = c0 + r0 * w
    f = np.exp(s * _log_derivative(mats, z, c0))  # (A, K)
    u = (_apply(mats, z) - ct) / rt
    ks = np.arange(M + 1)
    samples = np.sum(f[:, :, None] * u[:, :, None] ** ks[None, None, :], axis=0)
    coef = np.fft.fft(samples, axis=0)[: M + 1] / K
    src = np.sqrt((ks + 1) / math.pi) / rt
    dst = r0 * np.sqrt(math.pi / (ks + 1))
    return dst[:, None] * coef * src[None, :]


def hs_frobenius(
    g: SchottkyGroup,
    ctx: CongruenceContext | int,
    cover: LimitSetCover,
    s: complex,
    n: int,
    M: int = 16,
    K: int | None = None,
) -> float:
    """Frobenius norm^2 of the truncated matrix of ``L_s^n`` on the scale-h space.

    The G-coordinate contributes |G| times the same blocks (one per residue
    class), so the norm is accumulated without forming the matrix.
    """
    if isinstance(ctx, int):
        ctx = congruence_context(g, ctx)
    K = K or max(4 * (M + 1), 64)
    total = 0.0
    for wb in word_batches(g, n, ctx):
        for ell in cover.components_in(wb.j):
            groups, _ = _groups(cover, wb, ell)
            for (tgt, _res), idx in groups.items():
                blk = _word_block(
                    wb.mats[idx], cover.centers[ell], cover.radii[ell], cover.centers[tgt], cover.radii[tgt], s, M, K
                )
                total += float(np.sum(np.abs(blk) ** 2))
    return ctx.order * total


def matrix_trace_on_cover(
    g: SchottkyGroup,
    ctx: CongruenceContext | int,
    cover: LimitSetCover,
    s: complex,
    n: int,
    M: int = 16,
) -> complex:
    """``Tr L_s^n`` from the truncated matrix on the scale-h space: words mapping
    a component into itself with trivial residue, weighted by |G|."""
    if isinstance(ctx, int):
        ctx = congruence_context(g, ctx)
    K = max(4 * (M + 1), 64)
    total = 0j
    for wb in word_batches(g, n, ctx):
        for ell in cover.components_in(wb.j):
            groups, _ = _groups(cover, wb, ell)
            idx = groups.get((int(ell), 0))
            if idx is None:
                continue
            c0, r0 = cover.centers[ell], cover.radii[ell]
            blk = _word_block(wb.mats[idx], c0, r0, c0, r0, s, M, K)
            total += np.trace(blk)
    return complex(ctx.order * total)


# ------------------------------------------------------------------- det2


def transfer_eigenvalues(g: SchottkyGroup, ctx: CongruenceContext | int, s: complex, M: int) -> np.ndarray:
    return np.linalg.eigvals(assemble(g, ctx, s, M).dense())


def det2_from_eigenvalues(lam: np.ndarray, n: int) -> complex:
    """``det_2(I - L^n) = prod (1 - lambda^n) e^{lambda^n}``; the log is returned."""
    mu = lam.astype(complex) ** n
    return complex(np.sum(np.log(1 - mu) + mu))


def det2(g: SchottkyGroup, ctx: CongruenceContext | int, s: complex, n: int, M: int = 12) -> complex:
    """``zeta_n(s) = det_2(I - L_s^n)`` from the spectrum of the truncated matrix.

    The spectrum of ``L_s^n`` does not depend on the scale h, so the base
    discs are used.
    """
    return complex(np.exp(det2_from_eigenvalues(transfer_eigenvalues(g, ctx, s, M), n)))


def log_det2(g: SchottkyGroup, ctx: CongruenceContext | int, s: complex, n: int, M: int = 12) -> complex:
    """``log zeta_n(s)`` without an eigendecomposition.

    ``det(I - A^n) = prod_{omega^n = 1} det(I - omega A)``, each factor by LU,
    and ``Tr A^n`` from the (sparse) matrix power.  Agrees with the spectral
    route on the same truncation; used for large |G|.
    """
    tm = assemble(g, ctx, s, M)
    A = tm.matrix()
    ld = sum(logdet_I_minus(np.exp(2j * math.pi * k / n) * A) for k in range(n))
    B = A
    for _ in range(n - 1):
        B = B @ A
    tr = B.diagonal().sum()
    return complex(ld + tr)


def hs_report(
    g: SchottkyGroup,
    ctx: CongruenceContext | int,
    cover: LimitSetCover,
    s: complex,
    n: int,
    M: int = 12,
    eigenvalues: np.ndarray | None = None,
    frobenius: bool = False,
) -> HSReport:
    """HS norms plus ``log|zeta_n(s)|`` and the inequality ``log|det_2| <= HS^2/2``."""
    if isinstance(ctx, int):
        ctx = congruence_context(g, ctx)
    rep = hs_norm(g, ctx, cover, s, n)
    if eigenvalues is None and 4 * g.p * (M + 1) * ctx.order > SPARSE_THRESHOLD:
        ld = log_det2(g, ctx, s, n, M)
    else:
        lam = transfer_eigenvalues(g, ctx, s, M) if eigenvalues is None else eigenvalues
        ld = det2_from_eigenvalues(lam, n)
    rep.log_abs_det2 = ld.real
    rep.det2 = complex(np.exp(ld)) if ld.real < 700 else complex("inf")
    if frobenius:
        rep.frobenius2 = hs_frobenius(g, ctx, cover, s, n, M=max(M, 16))
    return rep


# ------------------------------------------------------ empirical Ehrenfest


def congruent_close_pairs(g: SchottkyGroup, ctx: CongruenceContext, cover: LimitSetCover, n: int) -> int:
    """Ordered pairs alpha != beta in W_n^j, congruent mod q, sending some
    component into the same target component (the off-diagonal support)."""
    count = 0
    for wb in word_batches(g, n, ctx):
        for ell in cover.components_in(wb.j):
            groups, _ = _groups(cover, wb, ell)
            for idx in groups.values():
                count += idx.size * (idx.size - 1)
    return count


def empirical_ehrenfest_depth(
    g: SchottkyGroup, ctx: CongruenceContext, cover: LimitSetCover, n_max: int = 8
) -> int:
    """Largest n such that no off-diagonal pair exists at every depth 1..n."""
    depth = 0
    for n in range(1, n_max + 1):
        if congruent_close_pairs(g, ctx, cover, n):
            break
        depth = n
    return depth


# ------------------------------------------------- scale independence


@dataclass
class ScaleReport:
    s: complex
    n: int
    h1: float
    h2: float
    orbit_trace: complex
    matrix_trace_h1: complex
    matrix_trace_h2: complex
    difference: float
    ok: bool

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        for k in ("s", "orbit_trace", "matrix_trace_h1", "matrix_trace_h2"):
            d[k] = [d[k].real, d[k].imag]
        return d


def scale_independence_check(
    g: SchottkyGroup,
    ctx: CongruenceContext | int,
    s: complex,
    n: int,
    h1: float,
    h2: float,
    M: int = 16,
    tol: float = 1e-6,
    table: PeriodicOrbitTable | None = None,
) -> ScaleReport:
    """Traces of ``L_s^n`` at two scales: the orbit route never sees h, the
    matrix route uses the two covers."""
    if isinstance(ctx, int):
        ctx = congruence_context(g, ctx)
    orbit = trace_orbits(g, ctx, s, n, table)
    t1 = matrix_trace_on_cover(g, ctx, build_cover(g, h1, check_n=n), s, n, M)
    t2 = matrix_trace_on_cover(g, ctx, build_cover(g, h2, check_n=n), s, n, M)
    diff = abs(t1 - t2)
    scale = max(1.0, abs(orbit))
    ok = diff <= tol * scale and abs(t1 - orbit) <= tol * scale
    return ScaleReport(complex(s), n, h1, h2, orbit, t1, t2, diff, ok)


# ------------------------------------------------------------- probes


def kappa_lower_bound(table: PeriodicOrbitTable, n: int, N_max: int | None = None) -> float:
    """``kappa`` with ``log|zeta_n(s)| >= -kappa`` on ``Re s >= 1``.

    Sums the majorant ``sum_N (1/N) sum_{B^{nN} w = w} lambda^{-1}/(1-lambda^{-1})``
    over the available depths and adds the geometric tail with ratio
    ``e^{n P(1)}``.
    """
    N_max = N_max or table.n_max // n
    if N_max < 1:
        raise ValueError("orbit table too shallow")
    P1 = pressure_table(table, 1.0).extrapolated

    def maj(k):
        ell = table.lengths[k]
        return float(np.sum(np.exp(-ell) / -np.expm1(-ell)))

    total = sum(maj(n * N) / N for N in range(2, N_max + 1)) if N_max >= 2 else 0.0
    r = math.exp(n * P1)
    last = maj(n * N_max)
    total += last * r / (1 - r)
    return total


def norm_bound_probe(
    g: SchottkyGroup,
    ctx: CongruenceContext | int,
    cover: LimitSetCover,
    s: complex,
    n: int,
    table: PeriodicOrbitTable,
) -> float:
    """``||L_s^n||_HS^2 / (|G| h^{-delta} e^{n P(2 sigma)})``."""
    if isinstance(ctx, int):
        ctx = congruence_context(g, ctx)
    from .pressure import bowen_dimension

    delta = bowen_dimension(table).delta
    rep = hs_norm(g, ctx, cover, s, n)
    P2 = pressure_table(table, 2 * complex(s).real).extrapolated
    return rep.hs_norm2 / (ctx.order * cover.h ** (-delta) * math.exp(n * P2))


@dataclass
class Prop46Probe:
    q: int
    T: float
    sigma: float
    n_formula: int
    n_used: int
    eta: float
    measured: float
    shape: float
    ratio: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def prop46_probe(
    g: SchottkyGroup,
    ctx: CongruenceContext | int,
    table: PeriodicOrbitTable,
    T: float,
    sigma: float,
    eps0: float,
    delta: float,
    M: int = 8,
    grid: tuple[int, int] = (3, 5),
) -> Prop46Probe:
    """``max log|zeta_n(s)|`` over ``sigma <= Re s <= delta, |Im s - T| <= 1``
    against the shape ``T^{delta - eta} q^{3 - eta}``, ``eta = -eps0 P(2 sigma)``.

    The depth ``n(T, q) = [eps0 (log q + log T)]`` is below 1 for any desk
    scale q; the probe uses ``max(1, n(T, q))`` and records both.
    """
    from .pressure import compute_eta

    if isinstance(ctx, int):
        ctx = congruence_context(g, ctx)
    n_formula = math.floor(eps0 * (math.log(ctx.q) + math.log(T)))
    n = max(1, n_formula)
    eta = compute_eta(table, sigma, eps0, delta)
    best = -math.inf
    for re in np.linspace(sigma, delta, grid[0]):
        for im in np.linspace(T - 1, T + 1, grid[1]):
            best = max(best, log_det2(g, ctx, complex(re, im), n, M).real)
    shape = T ** (delta - eta) * ctx.q ** (3 - eta)
    return Prop46Probe(ctx.q, T, sigma, n_formula, n, eta, best, shape, best / shape)
