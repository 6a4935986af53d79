"""Periodic orbits of the Bowen-Series map, topological pressure and Bowen's root.

Periodic points of ``B^n`` are in bijection with cyclically reduced words of
length ``n``.  For such a word the multiplier is ``lambda = e^{ell}`` with
``ell = 2 arccosh(|tr|/2)`` the length of the closed geodesic, so the table
only needs traces (double precision is plenty: ``|tr|`` is huge) and the
reduction of each word mod q (exact, through the permutation action of the
letters on the finite image).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .moebius import NotHyperbolicError, SchottkyGroup, disc_sup_inf_derivative, enumerate_words


@dataclass
class PeriodicOrbitTable:
    """Cyclic words per length ``n``: lengths, prime flags, residues mod q.

    ``letters[n]`` is kept for ``n <= keep_letters`` only.
    """

    n_max: int
    lengths: dict[int, np.ndarray]
    prime: dict[int, np.ndarray]
    residues: dict[int, dict[int, np.ndarray]] = field(default_factory=dict)
    letters: dict[int, np.ndarray] = field(default_factory=dict)
    group_digest: str = ""

    def identity_mask(self, q: int, n: int) -> np.ndarray:
        if q == 1:
            return np.ones(self.lengths[n].shape, dtype=bool)
        if q not in self.residues:
            raise KeyError(f"orbit table has no residues mod {q}")
        return self.residues[q][n] == 0

    def count(self, n: int) -> int:
        return int(self.lengths[n].size)

    def multipliers(self, n: int) -> np.ndarray:
        return np.exp(self.lengths[n])

    @property
    def min_length(self) -> float:
        return float(min(v.min() for v in self.lengths.values() if v.size))

    @classmethod
    def full_shift(cls, n_symbols: int, ell: float, n_max: int) -> "PeriodicOrbitTable":
        """Synthetic table of a full shift with constant derivative ``e^ell``."""
        lengths = {n: np.full(n_symbols**n, n * ell) for n in range(1, n_max + 1)}
        prime = {n: np.ones(n_symbols**n, dtype=bool) for n in range(1, n_max + 1)}
        return cls(n_max, lengths, prime)


def _primitive_mask(letters: np.ndarray) -> np.ndarray:
    n = letters.shape[1]
    prime = np.ones(letters.shape[0], dtype=bool)
    for d in range(1, n):
        if n % d == 0:
            prime &= ~np.all(letters == np.roll(letters, -d, axis=1), axis=1)
    return prime


def build_orbit_table(
    g: SchottkyGroup,
    n_max: int,
    qs=(),
    keep_letters: int = 10,
    contexts=None,
) -> PeriodicOrbitTable:
    """Enumerate all cyclically reduced words up to ``n_max``.

    Words of length ``n + 1`` are built by prepending a letter to words of
    length ``n``; matrices are float, residues are element indices in the
    image of the group mod q (index 0 is the identity).
    """
    from .congruence import congruence_context

    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    nl = g.n_letters
    p = g.p
    mats = g.letter_arrays()
    ctxs = {}
    for q in qs:
        if q == 1:
            continue
        ctxs[q] = contexts[q] if contexts and q in contexts else congruence_context(g, q)

    # current level: all reduced words of length n
    first = np.arange(nl)
    last = np.arange(nl)
    F = mats.copy()
    lett = np.arange(nl)[:, None]
    res = {q: c.perms[np.arange(nl), 0].copy() for q, c in ctxs.items()}

    lengths, prime, residues, letters = {}, {}, {q: {} for q in ctxs}, {}
    for n in range(1, n_max + 1):
        if n > 1:
            # prepend letter x to each word w, x != inverse of first(w)
            xs = np.repeat(np.arange(nl)[None, :], first.size, axis=0)
            ok = xs != ((first[:, None] + p) % nl)
            widx, x = np.nonzero(ok)
            F = np.einsum("nij,njk->nik", mats[x], F[widx])
            # keep entries bounded; only traces (ratios) matter
            scale = np.max(np.abs(F), axis=(1, 2), keepdims=True)
            F = F / scale
            logscale_prev = logscale[widx] if n > 2 else np.zeros(widx.size)
            logscale = logscale_prev + np.log(scale[:, 0, 0])
            first, last = x, last[widx]
            lett = np.concatenate([x[:, None], lett[widx]], axis=1)
            res = {q: ctxs[q].perms[x, r[widx]] for q, r in res.items()}
        else:
            logscale = np.zeros(nl)
        cyc = first != ((last + p) % nl)
        if n == 1:
            cyc = np.ones(nl, dtype=bool)
        tr = np.abs(F[cyc, 0, 0] + F[cyc, 1, 1])
        lsc = logscale[cyc]
        # ell = 2 arccosh(|t|/2) with |t| = tr * e^{lsc}
        with np.errstate(divide="ignore"):
            log_t = np.log(tr) + lsc
        if np.any(log_t <= math.log(2.0) + 1e-12):
            raise NotHyperbolicError(f"non-hyperbolic cyclic word at length {n}: group is not convex co-compact")
        t_half = np.exp(log_t - math.log(2.0))
        big = log_t > 30
        ell = np.empty_like(log_t)
        ell[~big] = 2.0 * np.arccosh(t_half[~big])
        # arccosh(x) = log(2x) - 1/(4x^2) - ...
        ell[big] = 2.0 * (log_t[big] - 0.25 * np.exp(-2 * (log_t[big] - math.log(2.0))))
        lengths[n] = ell
        L = lett[cyc]
        prime[n] = _primitive_mask(L)
        for q in res:
            residues[q][n] = res[q][cyc]
        if n <= keep_letters:
            letters[n] = L.astype(np.int8)
    return PeriodicOrbitTable(n_max, lengths, prime, residues, letters, g.digest())


# --------------------------------------------------------------- pressure


@dataclass
class PressureEstimate:
    x: float
    values: list[float]
    depths: list[int]
    extrapolated: float
    error: float


def _log_sums(table: PeriodicOrbitTable, x: float) -> np.ndarray:
    out = []
    for n in range(1, table.n_max + 1):
        a = -x * table.lengths[n]
        amax = a.max()
        out.append(amax + math.log(np.sum(np.exp(a - amax))))
    return np.array(out)


def orbit_traces(table: PeriodicOrbitTable, x: float) -> np.ndarray:
    """``Tr_n = sum lambda^{-x} / (1 - 1/lambda)`` for ``n = 1..n_max``."""
    return np.array(
        [np.sum(np.exp(-x * ell) / -np.expm1(-ell)) for ell in (table.lengths[n] for n in range(1, table.n_max + 1))]
    )


def cycle_coefficients(traces: np.ndarray) -> np.ndarray:
    """Power-series coefficients of ``exp(-sum_n Tr_n z^n / n)`` (Newton identities)."""
    c = np.zeros(traces.size + 1, dtype=np.result_type(traces, float))
    c[0] = 1.0
    for n in range(1, traces.size + 1):
        c[n] = -np.dot(traces[:n], c[n - 1::-1][:n]) / n
    return c


def _leading_root(c: np.ndarray) -> float:
    roots = np.roots(c[::-1])
    real = roots[(np.abs(roots.imag) < 1e-9 * np.abs(roots)) & (roots.real > 0)].real
    if real.size == 0:
        return math.nan
    return float(real.min())


def pressure_table(table: PeriodicOrbitTable, x: float) -> PressureEstimate:
    """Raw ``P_n(x) = (1/n) log sum lambda^{-x}`` and the limit ``P(x)``.

    The raw values carry ``O(1/n)`` and slowly decaying oscillating
    corrections.  The limit is read off the cycle expansion instead:
    ``e^{-P(x)}`` is the smallest positive zero of the truncated series
    ``exp(-sum Tr_n z^n / n)``, whose coefficients decay super-exponentially.
    The error indicator compares truncations at ``n_max`` and ``n_max - 1``.
    """
    ls = _log_sums(table, x)
    ns = np.arange(1, table.n_max + 1)
    raw = ls / ns
    c = cycle_coefficients(orbit_traces(table, x))
    z0 = _leading_root(c)
    ext = -math.log(z0) if z0 == z0 else float(raw[-1])
    if table.n_max >= 3:
        z1 = _leading_root(c[:-1])
        err = abs(ext + math.log(z1)) if z1 == z1 else math.inf
    else:
        err = math.inf
    return PressureEstimate(float(x), raw.tolist(), ns.tolist(), float(ext), float(err))


def pressure(g_or_table, x: float, n_max: int = 8) -> PressureEstimate:
    table = g_or_table if isinstance(g_or_table, PeriodicOrbitTable) else build_orbit_table(g_or_table, n_max)
    return pressure_table(table, x)


@dataclass
class DimensionEstimate:
    delta: float
    bracket: tuple[float, float]
    n_max: int


def bowen_dimension(g_or_table, tol: float = 1e-12, n_max: int = 8) -> DimensionEstimate:
    """Root of the extrapolated pressure in [0, 1]: bisection then secant."""
    table = g_or_table if isinstance(g_or_table, PeriodicOrbitTable) else build_orbit_table(g_or_table, n_max)

    def P(x):
        return pressure_table(table, x).extrapolated

    lo, hi = 0.0, 1.0
    plo, phi = P(lo), P(hi)
    if not (plo > 0 > phi):
        raise ValueError(f"pressure root not bracketed in [0, 1]: P(0)={plo}, P(1)={phi}")
    while hi - lo > max(tol, 1e-6):
        mid = 0.5 * (lo + hi)
        pm = P(mid)
        if pm > 0:
            lo, plo = mid, pm
        else:
            hi, phi = mid, pm
    # secant polish inside the bracket
    for _ in range(60):
        if hi - lo <= tol:
            break
        x = lo - plo * (hi - lo) / (phi - plo)
        x = min(max(x, lo + 0.25 * tol), hi - 0.25 * tol)
        px = P(x)
        if px > 0:
            lo, plo = x, px
            if P(min(x + tol, hi)) <= 0:
                hi, phi = min(x + tol, hi), P(min(x + tol, hi))
        else:
            hi, phi = x, px
            if P(max(x - tol, lo)) > 0:
                lo, plo = max(x - tol, lo), P(max(x - tol, lo))
    return DimensionEstimate(0.5 * (lo + hi), (lo, hi), table.n_max)


def compute_eta(table: PeriodicOrbitTable, sigma: float, eps0: float, delta: float | None = None) -> float:
    """``-eps0 * P(2 sigma)``, positive for ``sigma > delta/2``."""
    if delta is None:
        delta = bowen_dimension(table).delta
    if sigma <= delta / 2:
        raise ValueError(f"sigma = {sigma} <= delta/2 = {delta / 2}: P(2 sigma) >= 0")
    return -eps0 * pressure_table(table, 2 * sigma).extrapolated


def lemma_sum_ratio(g: SchottkyGroup, sigma: float, n_max: int, table: PeriodicOrbitTable) -> list[float]:
    """Ratios ``sum_j sum_{W_n^j} sup_{I_j} (gamma')^sigma / e^{n P(sigma)}``."""
    out = []
    P = pressure_table(table, sigma).extrapolated
    for n in range(1, n_max + 1):
        total = 0.0
        for j in range(g.n_letters):
            for w in enumerate_words(g, n, "last_ne", j):
                hi, _ = disc_sup_inf_derivative(w.matrix, g.discs[j])
                total += hi**sigma
        out.append(total / math.exp(n * P))
    return out
