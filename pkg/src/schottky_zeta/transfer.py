"""Finite-rank congruence transfer operator and its Fredholm determinant.

The operator acts on holomorphic functions on the 2p discs with values in
functions on the image G of the group mod q.  On the orthonormal Bergman
basis ``e_k`` of each disc it is the block matrix

    L[(g, i, m), (g', t, k)] = C_{i,j}[m, k] * [g' = Phi(gamma_j) g],

summed over letters ``j != i`` with ``t = j + p``.  Scalar blocks ``C_{i,j}``
are Taylor coefficients of ``(gamma_j')^s e_k^t o gamma_j`` on disc ``i``,
computed by FFT on a circle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .congruence import CongruenceContext, Irrep, congruence_context, regular_decomposition
from .moebius import SchottkyGroup, image_disc
from .pressure import PeriodicOrbitTable, build_orbit_table


class QuadratureError(RuntimeError):
    """Quadrature circle too close to a singularity of a branch."""


@dataclass(frozen=True)
class BasisSpec:
    M: int
    centers: tuple[float, ...]
    radii: tuple[float, ...]
    nodes: int
    rho: float = 1.0

    @classmethod
    def for_group(cls, g: SchottkyGroup, M: int, nodes: int | None = None, rho: float = 1.0):
        if M < 0:
            raise ValueError("M must be >= 0")
        nodes = nodes or max(4 * (M + 1), 32)
        return cls(M, tuple(g.centers()), tuple(g.radii()), nodes, rho)

    @property
    def size(self) -> int:
        return self.M + 1


def log_derivative_branch(m, z):
    """``log gamma'(z)``, real on the real trace of a disc avoiding the pole."""
    w = m.c * z + m.d
    sgn = 1.0 if np.real(np.mean(w)) > 0 else -1.0
    return -2.0 * np.log(sgn * w)


def _branch_block(g: SchottkyGroup, basis: BasisSpec, s: complex, i: int, j: int) -> np.ndarray:
    """Matrix of ``F -> (gamma_j')^s F o gamma_j`` from disc ``j+p`` to disc ``i``."""
    m = g.letter(j)
    t = g.inverse_letter(j)
    ci, ri = basis.centers[i], basis.radii[i]
    ct, rt = basis.centers[t], basis.radii[t]
    K = basis.nodes
    size = basis.size
    pole = -m.d / m.c if m.c else math.inf
    if abs(pole - ci) <= ri * basis.rho * (1 + 1e-9):
        raise QuadratureError(f"pole of letter {j} inside quadrature circle on disc {i}")
    img = image_disc(m, g.discs[i])
    if abs(img.c - ct) + img.radius >= rt:
        raise QuadratureError(f"letter {j} does not map disc {i} inside disc {t}")
    w = basis.rho * np.exp(2j * np.pi * np.arange(K) / K)
    z = ci + ri * w
    logd = log_derivative_branch(m, z)
    weight = np.exp(s * logd)
    u = ((m.a * z + m.b) / (m.c * z + m.d) - ct) / rt
    ks = np.arange(size)
    # columns: samples of (gamma')^s * ((gamma z - c_t)/r_t)^k
    samples = weight[:, None] * u[:, None] ** ks[None, :]
    coef = np.fft.fft(samples, axis=0) / K  # a_m * rho^m
    coef = coef[:size] / basis.rho ** ks[:, None]
    # basis normalisations: e_k = sqrt((k+1)/pi)/r (.)^k ; (.)^m = r sqrt(pi/(m+1)) e_m
    src = np.sqrt((ks + 1) / np.pi) / rt
    dst = ri * np.sqrt(np.pi / (ks + 1))
    return dst[:, None] * coef * src[None, :]


@dataclass
class TransferMatrix:
    s: complex
    q: int
    basis: BasisSpec
    blocks: dict[tuple[int, int], np.ndarray]
    perms: np.ndarray
    n_discs: int
    _dense: np.ndarray | None = field(default=None, repr=False)

    @property
    def group_order(self) -> int:
        return self.perms.shape[1]

    @property
    def dim(self) -> int:
        return self.group_order * self.n_discs * self.basis.size

    def scalar(self) -> np.ndarray:
        """The classical (q = 1) matrix: sum of blocks, G-coordinate dropped."""
        size = self.basis.size
        out = np.zeros((self.n_discs * size, self.n_discs * size), dtype=complex)
        p = self.n_discs // 2
        for (i, j), blk in self.blocks.items():
            t = (j + p) % self.n_discs
            out[i * size:(i + 1) * size, t * size:(t + 1) * size] += blk
        return out

    def dense(self) -> np.ndarray:
        if self._dense is not None:
            return self._dense
        size = self.basis.size
        nd = self.n_discs
        n = self.group_order
        bs = nd * size
        p = nd // 2
        out = np.zeros((n, bs, n, bs), dtype=complex)
        rows = np.arange(n)
        for (i, j), blk in self.blocks.items():
            t = (j + p) % nd
            cols = self.perms[j]
            out[rows, i * size:(i + 1) * size, cols, t * size:(t + 1) * size] += blk
        self._dense = out.reshape(n * bs, n * bs)
        return self._dense

    def sparse(self) -> scipy.sparse.csr_matrix:
        size = self.basis.size
        nd = self.n_discs
        n = self.group_order
        bs = nd * size
        p = nd // 2
        rows, cols, vals = [], [], []
        mi, ki = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
        for (i, j), blk in self.blocks.items():
            t = (j + p) % nd
            r = np.arange(n)[:, None, None] * bs + i * size + mi[None]
            c = self.perms[j][:, None, None] * bs + t * size + ki[None]
            rows.append(r.ravel())
            cols.append(c.ravel())
            vals.append(np.broadcast_to(blk, (n, size, size)).ravel())
        dim = n * bs
        return scipy.sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
        )

    def matrix(self):
        """Dense below ``SPARSE_THRESHOLD`` rows, sparse above."""
        return self.dense() if self.dim <= SPARSE_THRESHOLD else self.sparse()

    def nonzero_blocks_per_row(self) -> int:
        counts = {}
        for (i, _j) in self.blocks:
            counts[i] = counts.get(i, 0) + 1
        return max(counts.values())


def assemble(
    g: SchottkyGroup,
    ctx: CongruenceContext | int,
    s: complex,
    M: int,
    nodes: int | None = None,
    rho: float = 1.0,
) -> TransferMatrix:
    if isinstance(ctx, int):
        ctx = congruence_context(g, ctx)
    basis = BasisSpec.for_group(g, M, nodes, rho)
    blocks = {}
    for i in range(g.n_letters):
        for j in range(g.n_letters):
            if j == i:
                continue
            blocks[(i, j)] = _branch_block(g, basis, complex(s), i, j)
    return TransferMatrix(complex(s), ctx.q, basis, blocks, ctx.perms, g.n_letters)


# ------------------------------------------------------------------ traces


def trace_matrix(tm: TransferMatrix, N: int) -> complex:
    if N < 1:
        raise ValueError("N must be >= 1")
    A = tm.dense()
    return complex(np.trace(np.linalg.matrix_power(A, N)))


def trace_orbits(
    g: SchottkyGroup, ctx: CongruenceContext | int, s: complex, N: int, table: PeriodicOrbitTable | None = None
) -> complex:
    """``|G| * sum over cyclic words of length N with gamma = Id mod q of
    lambda^{-s} / (1 - 1/lambda)``."""
    if isinstance(ctx, int):
        ctx = congruence_context(g, ctx)
    if table is None:
        table = build_orbit_table(g, N, qs=(ctx.q,))
    if table.n_max < N:
        raise ValueError(f"orbit table depth {table.n_max} < {N}")
    ell = table.lengths[N]
    mask = table.identity_mask(ctx.q, N)
    ell = ell[mask]
    val = np.sum(np.exp(-complex(s) * ell) / (-np.expm1(-ell)))
    return complex(ctx.order * val)


def orbit_trace_bound(table: PeriodicOrbitTable, sigma: float, N: int) -> float:
    """Majorant ``sum (lambda)^{-sigma} / (1 - 1/lambda)`` over all N-periodic points."""
    ell = table.lengths[N]
    return float(np.sum(np.exp(-sigma * ell) / (-np.expm1(-ell))))


# ------------------------------------------------------------ determinants


@dataclass
class DeterminantValue:
    value: complex
    M: int
    tail: float
    log_abs: float
    s: complex = 0j
    q: int = 1


SPARSE_THRESHOLD = 1500


def _perm_parity(perm: np.ndarray) -> int:
    seen = np.zeros(perm.size, dtype=bool)
    parity = 0
    for start in range(perm.size):
        if seen[start]:
            continue
        k, length = start, 0
        while not seen[k]:
            seen[k] = True
            k = perm[k]
            length += 1
        parity ^= (length - 1) & 1
    return -1 if parity else 1


def logdet_I_minus(A) -> complex:
    """``log det(I - A)`` by LU with partial pivoting.

    Dense LAPACK for small matrices, SuperLU on the block-sparse matrix for
    large ones; the phase is the principal value.
    """
    if scipy.sparse.issparse(A):
        n = A.shape[0]
        lu = scipy.sparse.linalg.splu((scipy.sparse.identity(n, dtype=complex, format="csc") - A).tocsc())
        diag = lu.U.diagonal().astype(complex)
        sign = _perm_parity(lu.perm_r) * _perm_parity(lu.perm_c)
        if np.any(diag == 0):
            return complex(-np.inf)
        logs = np.log(diag)
        phase = np.angle(sign * np.prod(diag / np.abs(diag)))
        return complex(np.sum(logs.real) + 1j * phase)
    sign, logabs = np.linalg.slogdet(np.identity(A.shape[0]) - A)
    return complex(logabs + 1j * np.angle(sign))


def fredholm_det(
    g: SchottkyGroup,
    ctx: CongruenceContext | int,
    s: complex,
    M: int,
    tail: bool = False,
    **kw,
) -> DeterminantValue:
    """``det(I - L_s)``, equal to the Selberg zeta function of the congruence cover."""
    tm = assemble(g, ctx, s, M, **kw)
    ld = logdet_I_minus(tm.matrix())
    t = singular_tail(tm).tail if tail else float("nan")
    return DeterminantValue(complex(np.exp(ld)), M, t, ld.real, tm.s, tm.q)


class _Kernel:
    """The s-independent part of the assembly, for repeated evaluation.

    On each quadrature circle only ``(gamma')^s = exp(s log gamma')`` depends
    on ``s``; the powers of the image point and the scatter indices of the
    G-permuted block layout are computed once.
    """

    def __init__(self, g: SchottkyGroup, ctx: CongruenceContext, M: int, nodes: int | None = None, rho: float = 1.0):
        basis = BasisSpec.for_group(g, M, nodes, rho)
        probe = {(i, j): None for i in range(g.n_letters) for j in range(g.n_letters) if i != j}
        # validate geometry once through the reference path
        for i, j in probe:
            _branch_block(g, basis, 0.5, i, j)
        K, size = basis.nodes, basis.size
        nd, p = g.n_letters, g.p
        ks = np.arange(size)
        w = basis.rho * np.exp(2j * np.pi * np.arange(K) / K)
        logd, upow, scale = [], [], []
        rows, cols = [], []
        n = ctx.order
        bs = nd * size
        mi, ki = np.meshgrid(ks, ks, indexing="ij")
        for i, j in probe:
            m = g.letter(j)
            t = g.inverse_letter(j)
            ci, ri = basis.centers[i], basis.radii[i]
            ct, rt = basis.centers[t], basis.radii[t]
            z = ci + ri * w
            logd.append(log_derivative_branch(m, z))
            u = ((m.a * z + m.b) / (m.c * z + m.d) - ct) / rt
            upow.append(u[:, None] ** ks[None, :])
            src = np.sqrt((ks + 1) / np.pi) / rt
            dst = ri * np.sqrt(np.pi / (ks + 1))
            scale.append(dst[:, None] / basis.rho ** ks[:, None] * src[None, :] / K)
            rows.append((np.arange(n)[:, None, None] * bs + i * size + mi[None]).ravel())
            cols.append((ctx.perms[j][:, None, None] * bs + t * size + ki[None]).ravel())
        self.logd = np.array(logd)
        self.upow = np.array(upow)
        self.scale = np.array(scale)
        self.rows = np.concatenate(rows)
        self.cols = np.concatenate(cols)
        self.n_pairs = len(probe)
        self.pairs = [(i, j, g.inverse_letter(j)) for i, j in probe]
        self.n_letters = nd
        self.size = size
        self.G = n
        self.dim = n * bs

    def blocks(self, s: complex) -> np.ndarray:
        wgt = np.exp(complex(s) * self.logd)
        coef = np.fft.fft(wgt[:, :, None] * self.upow, axis=1)[:, : self.size, :]
        return coef * self.scale

    def logdet(self, s: complex) -> complex:
        blk = self.blocks(s)
        vals = np.broadcast_to(blk[:, None], (self.n_pairs, self.G, self.size, self.size)).ravel()
        if self.dim <= SPARSE_THRESHOLD:
            A = np.zeros((self.dim, self.dim), dtype=complex)
            A[self.rows, self.cols] = vals
        else:
            A = scipy.sparse.csr_matrix((vals, (self.rows, self.cols)), shape=(self.dim, self.dim))
        return logdet_I_minus(A)


    def letter_blocks(self, s: complex) -> np.ndarray:
        """``S_j``: the scalar matrix of letter ``j`` alone, shape (2p, 2p*size, 2p*size)."""
        blk = self.blocks(s)
        size, nd = self.size, self.n_letters
        S = np.zeros((nd, nd * size, nd * size), dtype=complex)
        for k, (i, j, t) in enumerate(self.pairs):
            S[j, i * size:(i + 1) * size, t * size:(t + 1) * size] = blk[k]
        return S


class ZetaFactor:
    """``s -> det(I - L_{s,rho})`` for one irreducible constituent ``rho`` of G.

    ``L_{s,rho} = sum_j rho(letter j) (x) S_j``; the regular determinant is
    the product of these factors raised to their multiplicities.
    """

    def __init__(self, parent: "ZetaFunction", rep: Irrep):
        self.parent, self.rep = parent, rep
        self.g, self.ctx, self.M = parent.g, parent.ctx, parent.M
        self.multiplicity = rep.multiplicity
        self._cache: dict[complex, complex] = {}
        self.evaluations = 0

    @property
    def q(self) -> int:
        return self.ctx.q

    @property
    def dim(self) -> int:
        return self.rep.dim * self.parent._kernel.n_letters * self.parent._kernel.size

    def logdet(self, s: complex) -> complex:
        s = complex(s)
        v = self._cache.get(s)
        if v is None:
            self.evaluations += 1
            S = self.parent._kernel.letter_blocks(s)
            A = sum(np.kron(r, Sj) for r, Sj in zip(self.rep.letters, S))
            v = logdet_I_minus(A)
            self._cache[s] = v
        return v

    def __call__(self, s: complex) -> complex:
        return complex(np.exp(self.logdet(s)))


class ZetaFunction:
    """Cached ``s -> det(I - L_s)`` for a fixed group, q and truncation."""

    def __init__(self, g: SchottkyGroup, ctx: CongruenceContext | int, M: int = 12, **kw):
        if isinstance(ctx, int):
            ctx = congruence_context(g, ctx)
        self.g, self.ctx, self.M, self.kw = g, ctx, M, kw
        self._kernel = _Kernel(g, ctx, M, **kw)
        self._cache: dict[complex, complex] = {}
        self._factors: list[ZetaFactor] | None = None
        self.evaluations = 0

    @property
    def q(self) -> int:
        return self.ctx.q

    @property
    def dim(self) -> int:
        return self._kernel.dim

    def factors(self) -> list[ZetaFactor]:
        """One determinant per irreducible constituent of G (computed once)."""
        if self._factors is None:
            self._factors = [ZetaFactor(self, rep) for rep in regular_decomposition(self.ctx)]
        return self._factors

    def logdet(self, s: complex) -> complex:
        s = complex(s)
        v = self._cache.get(s)
        if v is None:
            self.evaluations += 1
            v = self._kernel.logdet(s)
            if len(self._cache) < 2_000_000:
                self._cache[s] = v
        return v

    def __call__(self, s: complex) -> complex:
        return complex(np.exp(self.logdet(s)))

    def log_derivative(self, s: complex, h: float = 1e-6) -> complex:
        """``Z'/Z`` by a central difference along the imaginary direction."""
        s = complex(s)
        d = self.logdet(s + 1j * h) - self.logdet(s - 1j * h)
        # unwrap the phase difference
        d = complex(d.real, (d.imag + np.pi) % (2 * np.pi) - np.pi)
        return d / (2j * h)


def zeta_det(g: SchottkyGroup, ctx, s: complex, M: int, **kw) -> complex:
    return fredholm_det(g, ctx, s, M, **kw).value


@dataclass
class CycleZeta:
    value: complex
    last_term: float
    diverging: bool
    terms: list[complex]


def zeta_cycle(
    g: SchottkyGroup,
    ctx: CongruenceContext | int,
    s: complex,
    N_max: int,
    table: PeriodicOrbitTable | None = None,
) -> CycleZeta:
    """``exp(-sum_{N <= N_max} Tr(L_s^N) / N)`` from periodic-orbit data."""
    if isinstance(ctx, int):
        ctx = congruence_context(g, ctx)
    if table is None:
        table = build_orbit_table(g, N_max, qs=(ctx.q,))
    terms = [trace_orbits(g, ctx, s, N, table) / N for N in range(1, N_max + 1)]
    total = sum(terms)
    mags = [abs(t) for t in terms]
    diverging = len(mags) >= 3 and mags[-1] > mags[-2] > mags[-3]
    return CycleZeta(complex(np.exp(-total)), mags[-1], diverging, terms)


def euler_product(table: PeriodicOrbitTable, s: complex, k_max: int = 30, n_max: int | None = None) -> complex:
    """Truncated Selberg product over prime closed geodesics (q = 1)."""
    n_max = n_max or table.n_max
    log_z = 0j
    ks = np.arange(k_max + 1)
    for n in range(1, n_max + 1):
        ell = table.lengths[n][table.prime[n]]
        # each prime class appears n times as a rotation
        x = np.exp(-(complex(s) + ks[None, :]) * ell[:, None])
        log_z += np.sum(np.log1p(-x)) / n
    return complex(np.exp(log_z))


# ------------------------------------------------------- singular values


@dataclass
class SingularTail:
    mu: np.ndarray
    rho0: float
    C_tilde: float
    burn_in: int
    tail: float
    log_sum: float


def singular_tail(tm: TransferMatrix, burn_in: int | None = None) -> SingularTail:
    """Measured singular values and a geometric fit of their decay in ``k/|G|``.

    ``tail`` extrapolates ``sum log(1 + mu_k)`` beyond the truncation with the
    fitted rate.
    """
    mu = scipy.linalg.svdvals(tm.dense())
    G = tm.group_order
    x = np.arange(mu.size) / G
    pos = mu > 1e-300
    if burn_in is None:
        burn_in = G * tm.n_discs
    burn_in = min(burn_in, max(mu.size - 2 * G, 0))
    sel = pos.copy()
    sel[:burn_in] = False
    sel &= mu > mu[0] * 1e-14
    if sel.sum() >= 2:
        slope, _ = np.polyfit(x[sel], np.log(mu[sel]), 1)
    else:
        slope = -np.inf
    rho0 = float(np.exp(slope)) if np.isfinite(slope) else 0.0
    if rho0 >= 1.0:
        raise RuntimeError("singular values do not decay; assembly is broken")
    C = float(np.max(mu[pos] / (G * rho0 ** x[pos]))) if rho0 > 0 else float(mu[0] / G)
    k = np.arange(mu.size, mu.size + 200 * G)
    extra = C * G * rho0 ** (k / G) if rho0 > 0 else np.zeros(1)
    tail = float(np.sum(np.log1p(extra)))
    return SingularTail(mu, rho0, C, burn_in, tail, float(np.sum(np.log1p(mu))))


# ------------------------------------------------------------------ probes


def trivial_block(tm: TransferMatrix) -> np.ndarray:
    """Restriction of the matrix to functions constant in the G-coordinate.

    Computed as ``V^* A V`` with ``V = |G|^{-1/2} (1, ..., 1) (x) I`` on the
    assembled (dense or sparse) matrix; it should coincide with the q = 1
    matrix.
    """
    A = tm.matrix()
    G = tm.group_order
    bs = tm.dim // G
    V = np.tile(np.identity(bs), (G, 1)) / math.sqrt(G)
    return np.asarray(V.T @ (A @ V))


def trivial_block_det(g: SchottkyGroup, ctx: CongruenceContext | int, s: complex, M: int) -> complex:
    """``det(I - L_s)`` on the G-invariant subspace (a factor of the full determinant)."""
    tm = assemble(g, ctx, s, M)
    return complex(np.exp(logdet_I_minus(trivial_block(tm))))


def spectral_radius(tm: TransferMatrix) -> float:
    if tm.dim <= 3000:
        return float(np.max(np.abs(np.linalg.eigvals(tm.dense()))))
    vals = scipy.sparse.linalg.eigs(tm.sparse(), k=1, which="LM", return_eigenvectors=False)
    return float(np.abs(vals).max())


@dataclass
class NormProbe:
    s: complex
    pressure: float
    ratios: list[float]
    slope: float

    @property
    def finite(self) -> bool:
        return all(np.isfinite(self.ratios))

    @property
    def non_increasing(self) -> bool:
        """Trend test: fitted slope of the log-ratio is not positive (1e-3 slack)."""
        return self.slope <= 1e-3


def norm_ratio_probe(
    g: SchottkyGroup,
    ctx: CongruenceContext | int,
    s: complex,
    table: PeriodicOrbitTable,
    N_max: int = 8,
    M: int = 12,
) -> NormProbe:
    """``||L_s^N||_2 / e^{N P(Re s)}`` for ``N = 1..N_max``.

    The matrix is in an orthonormal basis, so its 2-norm is the operator norm
    of the truncation.  The slope is a least-squares fit of the log-ratio
    against N.
    """
    from .pressure import pressure_table

    tm = assemble(g, ctx, s, M)
    A = tm.dense()
    P = pressure_table(table, complex(s).real).extrapolated
    ratios = []
    B = np.identity(A.shape[0], dtype=complex)
    for N in range(1, N_max + 1):
        B = A @ B
        ratios.append(float(np.linalg.norm(B, 2) / math.exp(N * P)))
    slope = float(np.polyfit(np.arange(1, N_max + 1), np.log(ratios), 1)[0]) if N_max >= 2 else 0.0
    return NormProbe(complex(s), P, ratios, slope)


def singular_log_sum_ratio(g: SchottkyGroup, ctx: CongruenceContext | int, s: complex, M: int) -> float:
    """``sum log(1 + mu_k) / (|G| log q (1 + |s|^2))`` with the truncation tail added."""
    if isinstance(ctx, int):
        ctx = congruence_context(g, ctx)
    st = singular_tail(assemble(g, ctx, s, M))
    return (st.log_sum + st.tail) / (ctx.order * math.log(ctx.q) * (1 + abs(complex(s)) ** 2))
