"""Exact Moebius arithmetic and Schottky group data.

Matrices are kept in exact integers (Python ``int``) because entries of
composed words grow exponentially with word length.  Discs carry a
``Fraction`` center and a float radius; everything numerical downstream is
double precision.

Letters are 0-based: index ``i`` in ``0..p-1`` is the generator
``gamma_i`` and ``i + p`` is its inverse.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np


class PoleError(ZeroDivisionError):
    """Raised when a Moebius map is evaluated at its pole ``-d/c``."""


class NotHyperbolicError(ValueError):
    """Raised for a word whose matrix has ``|trace| <= 2``."""


@dataclass(frozen=True)
class IntMatrix2:
    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        if self.a * self.d - self.b * self.c != 1:
            raise ValueError(f"determinant of {self} is not 1")

    @classmethod
    def from_rows(cls, rows) -> "IntMatrix2":
        (a, b), (c, d) = rows
        return cls(int(a), int(b), int(c), int(d))

    @classmethod
    def identity(cls) -> "IntMatrix2":
        return cls(1, 0, 0, 1)

    def __matmul__(self, o: "IntMatrix2") -> "IntMatrix2":
        return IntMatrix2(
            self.a * o.a + self.b * o.c,
            self.a * o.b + self.b * o.d,
            self.c * o.a + self.d * o.c,
            self.c * o.b + self.d * o.d,
        )

    def inverse(self) -> "IntMatrix2":
        return IntMatrix2(self.d, -self.b, -self.c, self.a)

    @property
    def trace(self) -> int:
        return self.a + self.d

    def rows(self) -> list[list[int]]:
        return [[self.a, self.b], [self.c, self.d]]

    def operator_norm(self) -> float:
        """Largest singular value, closed form for 2x2 matrices with det 1."""
        f = float(self.a) ** 2 + float(self.b) ** 2 + float(self.c) ** 2 + float(self.d) ** 2
        # sigma_max^2 + sigma_min^2 = f, sigma_max * sigma_min = 1
        return math.sqrt((f + math.sqrt(max(f * f - 4.0, 0.0))) / 2.0)

    def is_hyperbolic(self) -> bool:
        return abs(self.trace) > 2


def moebius_apply(m: IntMatrix2, z):
    """Apply ``z -> (az+b)/(cz+d)``; works on scalars and numpy arrays."""
    den = m.c * z + m.d
    if np.isscalar(den) and den == 0:
        raise PoleError(f"z = {z} is the pole of {m}")
    return (m.a * z + m.b) / den


def moebius_derivative(m: IntMatrix2, z):
    den = m.c * z + m.d
    if np.isscalar(den) and den == 0:
        raise PoleError(f"z = {z} is the pole of {m}")
    return 1.0 / den**2


@dataclass(frozen=True)
class Disc:
    center: Fraction
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("disc radius must be positive")

    @property
    def c(self) -> float:
        return float(self.center)

    @property
    def interval(self) -> tuple[float, float]:
        return (self.c - self.radius, self.c + self.radius)

    def contains(self, z, closed=True) -> bool:
        d = abs(z - self.c)
        return d <= self.radius if closed else d < self.radius


def _parse_number(x) -> Fraction:
    if isinstance(x, (int, Fraction)):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(x)
    return Fraction(str(x).strip())


def image_disc(m: IntMatrix2, disc: Disc) -> Disc:
    """Image of a disc orthogonal to the real line, pole assumed outside.

    The image is again orthogonal to the real line, so it is determined by
    the image of the real diameter.
    """
    lo, hi = disc.interval
    pole = -m.d / m.c if m.c else math.inf
    if m.c and abs(pole - disc.c) <= disc.radius:
        raise PoleError(f"pole {pole} inside disc {disc}")
    x0, x1 = moebius_apply(m, lo), moebius_apply(m, hi)
    x0, x1 = min(x0, x1), max(x0, x1)
    return Disc(Fraction((x0 + x1) / 2), (x1 - x0) / 2)


def disc_sup_inf_derivative(m: IntMatrix2, disc: Disc) -> tuple[float, float]:
    """Exact ``(sup, inf)`` of ``|m'(z)|`` over the closed disc."""
    mid = abs(m.c * disc.c + m.d)
    spread = abs(m.c) * disc.radius
    if mid <= spread:
        raise PoleError(f"pole of {m} inside {disc}")
    return 1.0 / (mid - spread) ** 2, 1.0 / (mid + spread) ** 2


@dataclass(frozen=True)
class Word:
    """A reduced word; ``matrix`` is the composed product gamma_{a1}...gamma_{an}."""

    letters: tuple[int, ...]
    matrix: IntMatrix2

    @property
    def n(self) -> int:
        return len(self.letters)

    def __len__(self):
        return len(self.letters)


@dataclass
class SchottkyGroup:
    p: int
    generators: list[IntMatrix2]
    discs: list[Disc]
    name: str = ""
    _all: list[IntMatrix2] = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.generators) != self.p:
            raise ValueError(f"expected {self.p} generators, got {len(self.generators)}")
        if len(self.discs) != 2 * self.p:
            raise ValueError(f"expected {2 * self.p} discs, got {len(self.discs)}")
        self._all = list(self.generators) + [g.inverse() for g in self.generators]

    @property
    def n_letters(self) -> int:
        return 2 * self.p

    def letter(self, i: int) -> IntMatrix2:
        """Matrix of letter ``i`` (``i >= p`` are inverses)."""
        return self._all[i]

    def inverse_letter(self, i: int) -> int:
        return (i + self.p) % (2 * self.p)

    def word(self, letters: Sequence[int]) -> Word:
        letters = tuple(letters)
        for x, y in zip(letters, letters[1:]):
            if y == self.inverse_letter(x):
                raise ValueError(f"word {letters} is not reduced")
        m = IntMatrix2.identity()
        for x in letters:
            m = m @ self._all[x]
        return Word(letters, m)

    def centers(self) -> np.ndarray:
        return np.array([d.c for d in self.discs])

    def radii(self) -> np.ndarray:
        return np.array([d.radius for d in self.discs])

    def letter_arrays(self) -> np.ndarray:
        """Float ``(2p, 2, 2)`` array of letter matrices."""
        return np.array([[[m.a, m.b], [m.c, m.d]] for m in self._all], dtype=float)

    def min_disc_gap(self) -> float:
        gaps = [
            abs(di.c - dj.c) - di.radius - dj.radius
            for i, di in enumerate(self.discs)
            for dj in self.discs[i + 1:]
        ]
        return min(gaps)

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "generators": [g.rows() for g in self.generators],
            "discs": [{"center": str(d.center), "radius": repr(d.radius)} for d in self.discs],
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict, name: str = "") -> "SchottkyGroup":
        try:
            p = int(data["p"])
            gens = [IntMatrix2.from_rows(r) for r in data["generators"]]
            raw_discs = data["discs"]
        except KeyError as e:
            raise ValueError(f"group definition missing field {e.args[0]!r}") from None
        discs = []
        for k in range(2 * p):
            if k >= len(raw_discs):
                raise ValueError(f"group definition missing disc at index {k}")
            d = raw_discs[k]
            if "center" not in d or "radius" not in d:
                raise ValueError(f"disc {k} needs 'center' and 'radius'")
            discs.append(Disc(_parse_number(d["center"]), float(_parse_number(d["radius"]))))
        return cls(p, gens, discs, name=name)

    @classmethod
    def from_json(cls, path) -> "SchottkyGroup":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), name=path.stem)


def example_group() -> SchottkyGroup:
    """The two-generator group used throughout the tests."""
    return SchottkyGroup.from_json(Path(__file__).parent / "data" / "example_group.json")


# ---------------------------------------------------------------- words


def _admissible_next(g: SchottkyGroup, last: int | None) -> range | list[int]:
    if last is None:
        return range(g.n_letters)
    bad = g.inverse_letter(last)
    return [x for x in range(g.n_letters) if x != bad]


def enumerate_words(
    g: SchottkyGroup, n: int, constraint: str = "all", j: int | None = None
) -> Iterator[Word]:
    """Yield reduced words of length ``n`` in lexicographic order.

    ``constraint`` is ``"all"``, ``"last_ne"`` (last letter differs from
    ``j``, the set W_n^j) or ``"cyclic"`` (also reduced cyclically, i.e. the
    last letter is not the inverse of the first).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if constraint not in ("all", "last_ne", "cyclic"):
        raise ValueError(f"unknown constraint {constraint!r}")
    if constraint == "last_ne" and j is None:
        raise ValueError("constraint 'last_ne' needs j")

    letters: list[int] = []
    mats: list[IntMatrix2] = [IntMatrix2.identity()]

    def rec():
        depth = len(letters)
        last = letters[-1] if letters else None
        for x in _admissible_next(g, last):
            if depth == n - 1:
                if constraint == "last_ne" and x == j:
                    continue
                if constraint == "cyclic" and n > 1 and g.inverse_letter(x) == letters[0]:
                    continue
                if constraint == "cyclic" and n == 1:
                    pass
            letters.append(x)
            mats.append(mats[-1] @ g.letter(x))
            if depth == n - 1:
                yield Word(tuple(letters), mats[-1])
            else:
                yield from rec()
            letters.pop()
            mats.pop()

    yield from rec()


def count_words(p: int, n: int) -> int:
    return 2 * p * (2 * p - 1) ** (n - 1)


def cyclic_word_count(p: int, n: int) -> int:
    """Trace of the n-th power of the 2p x 2p reduced-transition matrix."""
    t = np.ones((2 * p, 2 * p), dtype=object)
    for i in range(2 * p):
        t[i, (i + p) % (2 * p)] = 0
    m = np.identity(2 * p, dtype=object)
    for _ in range(n):
        m = m.dot(t)
    return int(np.trace(m))


def common_prefix(a: Sequence[int], b: Sequence[int]) -> int:
    r = 0
    for x, y in zip(a, b):
        if x != y:
            break
        r += 1
    return r


# ------------------------------------------------------------ validation


@dataclass
class ValidationReport:
    ok: bool
    messages: list[str]
    min_gap: float
    max_circle_error: float
    failed_pair: tuple[int, int] | None = None

    def __bool__(self):
        return self.ok


def validate_schottky(g: SchottkyGroup, tol: float = 1e-10, samples: int = 64) -> ValidationReport:
    msgs: list[str] = []
    failed = None
    if g.p < 2:
        msgs.append(f"p = {g.p}: group is elementary (need p >= 2)")
    gap = math.inf
    for i in range(g.n_letters):
        for k in range(i + 1, g.n_letters):
            di, dk = g.discs[i], g.discs[k]
            gk = abs(di.c - dk.c) - di.radius - dk.radius
            gap = min(gap, gk)
            if gk <= 0 and failed is None:
                failed = (i, k)
                msgs.append(f"closed discs {i} and {k} intersect (gap {gk:.3e})")
    theta = 2 * np.pi * (np.arange(samples) + 0.5) / samples
    worst = 0.0
    for i in range(g.n_letters):
        m, src, dst = g.letter(i), g.discs[i], g.discs[g.inverse_letter(i)]
        z = src.c + src.radius * np.exp(1j * theta)
        den = m.c * z + m.d
        if np.any(np.abs(den) < 1e-300):
            msgs.append(f"letter {i}: boundary of disc {i} meets the pole")
            worst = math.inf
            continue
        w = (m.a * z + m.b) / den
        err = float(np.max(np.abs(np.abs(w - dst.c) - dst.radius)))
        worst = max(worst, err)
        if err > tol:
            msgs.append(
                f"letter {i}: image of circle {i} misses circle {g.inverse_letter(i)} by {err:.3e}"
            )
        # orientation: an interior point must land outside the partner disc
        zin = src.c + 0.5 * src.radius
        if abs(m.c * zin + m.d) > 0:
            win = moebius_apply(m, zin)
            if abs(win - dst.c) <= dst.radius:
                msgs.append(f"letter {i}: interior of disc {i} maps inside disc {g.inverse_letter(i)}")
    ok = not msgs
    return ValidationReport(ok, msgs or ["ok"], gap, worst, failed)


# ------------------------------------------------------------ fixed points


def fixed_points(m: IntMatrix2) -> tuple[float, float]:
    """Return ``(attracting, repelling)`` real fixed points of a hyperbolic matrix."""
    t = m.trace
    if abs(t) <= 2:
        raise NotHyperbolicError(f"{m} has |trace| = {abs(t)} <= 2")
    if m.c == 0:
        raise NotHyperbolicError(f"{m} fixes infinity")
    # c x^2 + (d - a) x - b = 0
    disc = math.sqrt(float(t) ** 2 - 4.0)
    pts = []
    for sgn in (1.0, -1.0):
        # stable form of the root
        num = float(m.a - m.d) + sgn * disc
        x = num / (2.0 * m.c)
        pts.append(x)
    pts.sort(key=lambda x: abs(float(m.c) * x + float(m.d)), reverse=True)
    return pts[0], pts[1]


def attracting_fixed_point(m_or_word, g: SchottkyGroup | None = None) -> float:
    m = m_or_word.matrix if isinstance(m_or_word, Word) else m_or_word
    if isinstance(m_or_word, Word) and g is not None:
        w = m_or_word.letters
        if len(w) > 1 and g.inverse_letter(w[-1]) == w[0]:
            raise ValueError(f"word {w} is not cyclically reduced")
    return fixed_points(m)[0]


def multiplier(m: IntMatrix2) -> float:
    """``lambda = 1/gamma'(x_attracting) = e^{length}``."""
    return math.exp(closed_geodesic_length(m))


def closed_geodesic_length(m: IntMatrix2) -> float:
    t = abs(m.trace)
    if t <= 2:
        raise NotHyperbolicError(f"{m} has |trace| = {t} <= 2")
    return 2.0 * math.acosh(t / 2.0)


# ------------------------------------------------------------ distortion


@dataclass
class DistortionConstants:
    theta: float
    theta_bar: float
    C_hyp: float
    M1: float
    eps0_sep: float
    C_bar: float
    depth: int


def distortion_constants(g: SchottkyGroup, depth: int = 6) -> DistortionConstants:
    """Measured hyperbolicity/distortion certificates over words up to ``depth``.

    Sup and inf of ``|gamma_alpha'|`` over the closed disc ``D_j`` are exact for
    Moebius maps, so the certificates hold on whole discs, not samples.
    Rates are fitted on the deepest two levels; ``C_hyp`` is then the
    smallest constant making both bounds hold at every level.
    """
    sup_n, inf_n = [], []
    M1 = 0.0
    for n in range(1, depth + 1):
        s_max, s_min = 0.0, math.inf
        for j in range(g.n_letters):
            dj = g.discs[j]
            for w in enumerate_words(g, n, "last_ne", j):
                hi, lo = disc_sup_inf_derivative(w.matrix, dj)
                s_max, s_min = max(s_max, hi), min(s_min, lo)
                m = w.matrix
                M1 = max(M1, 2 * abs(m.c) / (abs(m.c * dj.c + m.d) - abs(m.c) * dj.radius))
        sup_n.append(math.log(s_max))
        inf_n.append(math.log(s_min))
    ns = np.arange(1, depth + 1)
    if depth >= 2:
        log_theta = sup_n[-1] - sup_n[-2]
        log_theta_bar = inf_n[-1] - inf_n[-2]
    else:
        log_theta, log_theta_bar = sup_n[0], inf_n[0]
    log_theta = max(log_theta, max(np.array(sup_n) / ns))
    log_theta_bar = min(log_theta_bar, min(np.array(inf_n) / ns))
    logC = max(
        max(np.array(sup_n) - ns * log_theta),
        max(ns * log_theta_bar - np.array(inf_n)),
        0.0,
    )
    C_hyp = math.exp(logC)
    eps0 = math.inf
    for i in range(g.n_letters):
        target = g.discs[g.inverse_letter(i)]
        for k in range(g.n_letters):
            if k == i:
                continue
            im = image_disc(g.letter(i), g.discs[k])
            eps0 = min(eps0, target.radius - abs(im.c - target.c) - im.radius)
    C_bar = g.min_disc_gap() / C_hyp
    return DistortionConstants(
        theta=math.exp(log_theta),
        theta_bar=math.exp(log_theta_bar),
        C_hyp=C_hyp,
        M1=M1,
        eps0_sep=eps0,
        C_bar=C_bar,
        depth=depth,
    )


@dataclass
class SeparationCheck:
    r: int
    distance: float
    bound: float
    ok: bool


def word_separation(
    g: SchottkyGroup, alpha: Word, beta: Word, z: complex, consts: DistortionConstants
) -> SeparationCheck:
    """Check ``|gamma_alpha(z) - gamma_beta(z)| >= C_bar * theta_bar^r``."""
    if alpha.n != beta.n:
        raise ValueError("words must have equal length")
    for w in (alpha, beta):
        for x, y in zip(w.letters, w.letters[1:]):
            if y == g.inverse_letter(x):
                raise ValueError(f"word {w.letters} is not reduced")
    r = common_prefix(alpha.letters, beta.letters)
    dist = abs(moebius_apply(alpha.matrix, z) - moebius_apply(beta.matrix, z))
    if r == alpha.n:
        return SeparationCheck(r, dist, 0.0, True)
    bound = consts.C_bar * consts.theta_bar**r
    return SeparationCheck(r, dist, bound, dist >= bound * (1 - 1e-12))
