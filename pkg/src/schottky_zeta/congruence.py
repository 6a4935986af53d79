"""Reduction mod q, the generated subgroup of SL_2(F_q), and girth checks."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .moebius import (
    DistortionConstants,
    IntMatrix2,
    SchottkyGroup,
    enumerate_words,
)


def is_prime(q: int) -> bool:
    if q < 2:
        return False
    if q < 4:
        return True
    if q % 2 == 0:
        return False
    return all(q % k for k in range(3, math.isqrt(q) + 1, 2))


@dataclass(frozen=True)
class FiniteMatrix:
    a: int
    b: int
    c: int
    d: int
    q: int

    def __post_init__(self):
        if (self.a * self.d - self.b * self.c - 1) % self.q:
            raise ValueError(f"{self} is not in SL_2(F_{self.q})")

    def __matmul__(self, o: "FiniteMatrix") -> "FiniteMatrix":
        q = self.q
        return FiniteMatrix(
            (self.a * o.a + self.b * o.c) % q,
            (self.a * o.b + self.b * o.d) % q,
            (self.c * o.a + self.d * o.c) % q,
            (self.c * o.b + self.d * o.d) % q,
            q,
        )

    @property
    def key(self) -> tuple[int, int, int, int]:
        return (self.a, self.b, self.c, self.d)

    def is_identity(self) -> bool:
        return self.key == (1, 0, 0, 1)


def reduce(m: IntMatrix2, q: int) -> FiniteMatrix:
    """Reduction map SL_2(Z) -> SL_2(F_q).  ``q = 1`` gives the trivial group."""
    if q != 1 and not is_prime(q):
        raise ValueError(f"q = {q}: q must be prime")
    if q == 1:
        return FiniteMatrix(0, 0, 0, 0, 1)
    return FiniteMatrix(m.a % q, m.b % q, m.c % q, m.d % q, q)


def sl2_order(q: int) -> int:
    return 1 if q == 1 else q * (q * q - 1)


@dataclass
class CongruenceContext:
    """The image of the group mod q, enumerated as a list of elements.

    ``elements[0]`` is the identity; ``perms[i]`` is the permutation of
    element indices induced by left multiplication with the image of
    letter ``i``: ``elements[perms[i][k]] = Phi(letter_i) @ elements[k]``.
    """

    q: int
    generators: list[FiniteMatrix]
    elements: list[FiniteMatrix]
    perms: np.ndarray
    full_order: int
    epsilon1: float
    index: dict = field(repr=False, default_factory=dict)

    @property
    def order(self) -> int:
        return len(self.elements)

    @property
    def surjective(self) -> bool:
        return self.order == self.full_order

    def element_index(self, m: IntMatrix2) -> int:
        if self.q == 1:
            return 0
        return self.index[reduce(m, self.q).key]


def verify_surjectivity(g: SchottkyGroup, q: int) -> CongruenceContext:
    """BFS closure of the letter images under left multiplication."""
    letters = [reduce(g.letter(i), q) for i in range(g.n_letters)]
    for i in range(g.p):
        if not (letters[i] @ letters[i + g.p]).is_identity() and q != 1:
            raise AssertionError("reduction is not a homomorphism")
    ident = FiniteMatrix(1 % q, 0, 0, 1 % q, q)
    elements = [ident]
    index = {ident.key: 0}
    head = 0
    while head < len(elements):
        x = elements[head]
        head += 1
        for gen in letters:
            y = gen @ x
            if y.key not in index:
                index[y.key] = len(elements)
                elements.append(y)
    perms = np.empty((g.n_letters, len(elements)), dtype=np.int64)
    for i, gen in enumerate(letters):
        for k, x in enumerate(elements):
            perms[i, k] = index[(gen @ x).key]
    return CongruenceContext(
        q=q,
        generators=letters,
        elements=elements,
        perms=perms,
        full_order=sl2_order(q),
        epsilon1=girth_constant(g),
        index=index,
    )


def congruence_context(g: SchottkyGroup, q: int) -> CongruenceContext:
    if q != 1 and not is_prime(q):
        raise ValueError(f"q = {q}: q must be prime")
    return verify_surjectivity(g, q)


@dataclass
class Irrep:
    """One irreducible constituent of the regular representation of G.

    ``letters[j]`` is the restriction of the letter-``j`` permutation matrix
    to an invariant subspace; ``multiplicity`` copies occur (equal to the
    dimension for the regular representation).
    """

    letters: np.ndarray
    multiplicity: int
    character: np.ndarray

    @property
    def dim(self) -> int:
        return self.letters.shape[1]


def regular_decomposition(ctx: CongruenceContext, seed: int = 0) -> list[Irrep]:
    """Irreducible constituents of the permutation action used by the transfer operator.

    Averaging a random Hermitian matrix over G gives a generic element of
    the commutant; its eigenspaces are irreducible invariant subspaces.
    Subspaces with equal characters are isomorphic and are merged.
    """
    n = ctx.order
    act = np.array([[ctx.index[(x @ y).key] for y in ctx.elements] for x in ctx.elements]) if n > 1 else np.zeros((1, 1), int)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    X = X + X.conj().T
    H = sum(X[np.ix_(pi, pi)] for pi in act) / n
    w, V = np.linalg.eigh(H)
    tol = 1e-8 * max(1.0, np.abs(w).max())
    cuts = [0] + [k for k in range(1, n) if w[k] - w[k - 1] > tol] + [n]
    classes: list[Irrep] = []
    for a, b in zip(cuts, cuts[1:]):
        U = V[:, a:b]
        mats = []
        for pi in ctx.perms:
            # P[g, pi[g]] = 1, the layout of the transfer matrix
            PU = U[pi]
            R = U.conj().T @ PU
            if np.abs(PU - U @ R).max() > 1e-8:
                raise ArithmeticError("eigenspace of the averaged matrix is not invariant; eigenvalues merged")
            mats.append(R)
        chi = np.einsum("gk,xgk->x", U.conj(), U[act])
        for c in classes:
            if c.dim == b - a and np.allclose(c.character, chi, atol=1e-7):
                c.multiplicity += 1
                break
        else:
            classes.append(Irrep(np.array(mats), 1, chi))
    if sum(c.multiplicity * c.dim for c in classes) != n:
        raise ArithmeticError("decomposition does not add up to |G|")
    return classes


def girth_constant(g: SchottkyGroup) -> float:
    return max(m.operator_norm() for m in g.generators) ** -2


@dataclass
class CollisionReport:
    q: int
    epsilon1: float
    threshold_depth: float
    depth: int
    min_collision_depth: int | None
    collisions_below_threshold: int
    collisions_per_depth: dict[int, int]
    certificates_ok: bool
    min_certificate_norm: float | None
    sample: list[dict]

    def to_dict(self) -> dict:
        return {
            "q": self.q,
            "epsilon1": self.epsilon1,
            "threshold_depth": self.threshold_depth,
            "depth": self.depth,
            "min_collision_depth": self.min_collision_depth,
            "collisions_below_threshold": self.collisions_below_threshold,
            "collisions_per_depth": self.collisions_per_depth,
            "certificates_ok": self.certificates_ok,
            "min_certificate_norm": self.min_certificate_norm,
            "collisions": self.sample,
        }


def collision_scan(g: SchottkyGroup, ctx: CongruenceContext, n_max: int, keep: int = 20) -> CollisionReport:
    """Exhaustive search for distinct words in W_n^j with equal reduction mod q.

    Every collision found is certified by ``||gamma_a gamma_b^{-1}|| >= q``.
    """
    q = ctx.q
    eps1 = ctx.epsilon1
    threshold = eps1 * math.log(q)
    per_depth: dict[int, int] = {}
    below = 0
    cert_ok = True
    min_norm = None
    sample: list[dict] = []
    first = None
    for n in range(1, n_max + 1):
        count = 0
        for j in range(g.n_letters):
            buckets: dict[tuple, list] = defaultdict(list)
            for w in enumerate_words(g, n, "last_ne", j):
                buckets[reduce(w.matrix, q).key].append(w)
            for ws in buckets.values():
                for ia in range(len(ws)):
                    for ib in range(ia + 1, len(ws)):
                        a, b = ws[ia], ws[ib]
                        count += 1
                        norm = (a.matrix @ b.matrix.inverse()).operator_norm()
                        min_norm = norm if min_norm is None else min(min_norm, norm)
                        if norm < q:
                            cert_ok = False
                        if len(sample) < keep:
                            sample.append({"j": j, "alpha": list(a.letters), "beta": list(b.letters), "norm": norm})
        per_depth[n] = count
        if count and first is None:
            first = n
        if count and n < threshold:
            below += count
    if below:
        raise AssertionError(f"{below} collisions below eps1*log q = {threshold:.4g}: girth lemma violated")
    return CollisionReport(
        q=q,
        epsilon1=eps1,
        threshold_depth=threshold,
        depth=n_max,
        min_collision_depth=first,
        collisions_below_threshold=below,
        collisions_per_depth=per_depth,
        certificates_ok=cert_ok,
        min_certificate_norm=min_norm,
        sample=sample,
    )


def ehrenfest_epsilon0(consts: DistortionConstants, epsilon1: float, safety: float = 0.5) -> float:
    """Largest admissible depth rate, scaled by ``safety``.

    Solves ``e0 / (1 - e0 log(1/theta_bar)) = epsilon1`` for ``e0``.
    """
    L = math.log(1.0 / consts.theta_bar)
    e0 = safety * epsilon1 / (1.0 + epsilon1 * L)
    assert e0 * L < 1.0
    return e0


def erhenfest_depth(
    g: SchottkyGroup,
    ctx: CongruenceContext,
    h: float,
    C: float,
    consts: DistortionConstants,
    epsilon0: float | None = None,
) -> tuple[int, dict]:
    """Depth ``floor(e0 (log q + log 1/h))`` below which congruent words cannot be h-close.

    Returns the depth and the audit trail of constants used.
    """
    if not 0 < h:
        raise ValueError("h must be positive")
    if epsilon0 is None:
        epsilon0 = ehrenfest_epsilon0(consts, ctx.epsilon1)
    L = math.log(1.0 / consts.theta_bar)
    C_tilde = math.log(C / consts.C_bar) - L
    logq = math.log(ctx.q) if ctx.q > 1 else 0.0
    depth = math.floor(epsilon0 * (logq + math.log(1.0 / h)))
    trail = {
        "epsilon0": epsilon0,
        "epsilon1": ctx.epsilon1,
        "log_inv_theta_bar": L,
        "C": C,
        "C_bar": consts.C_bar,
        "C_tilde": C_tilde,
        "rate": epsilon0 / (1.0 - epsilon0 * L),
        "depth": depth,
    }
    return depth, trail
