import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from schottky_zeta.moebius import (
    Disc,
    IntMatrix2,
    NotHyperbolicError,
    PoleError,
    SchottkyGroup,
    attracting_fixed_point,
    closed_geodesic_length,
    count_words,
    cyclic_word_count,
    distortion_constants,
    enumerate_words,
    fixed_points,
    image_disc,
    moebius_apply,
    moebius_derivative,
    validate_schottky,
    word_separation,
)

A = IntMatrix2(17, 12, 24, 17)


def reduced_words(g, max_len=8):
    return st.integers(1, max_len).flatmap(
        lambda n: st.lists(st.integers(0, g.n_letters - 1), min_size=n, max_size=n).filter(
            lambda w: all(y != g.inverse_letter(x) for x, y in zip(w, w[1:]))
        )
    )


def test_apply_examples():
    assert moebius_apply(IntMatrix2.identity(), 1j) == 1j
    assert moebius_apply(A, 0) == pytest.approx(12 / 17, rel=1e-15)
    # fixed point from 24 x^2 - 12 = 0
    x = 1 / math.sqrt(2)
    assert moebius_apply(A, x) == pytest.approx(x, rel=1e-14)


def test_pole_is_reported():
    with pytest.raises(PoleError):
        moebius_apply(A, -17 / 24)


def test_derivative_at_fixed_point_is_inverse_multiplier():
    ell = 2 * math.acosh(17)
    x = 1 / math.sqrt(2)
    assert moebius_derivative(A, x) == pytest.approx(math.exp(-ell), rel=1e-12)
    assert moebius_derivative(IntMatrix2.identity(), 0.3 + 1j) == 1


def test_determinant_enforced():
    with pytest.raises(ValueError):
        IntMatrix2(2, 0, 0, 1)


def test_word_counts(g):
    assert len(list(enumerate_words(g, 1))) == 4
    assert len(list(enumerate_words(g, 3))) == 36
    assert len(list(enumerate_words(g, 2, "cyclic"))) == 12
    for n in range(1, 9):
        assert count_words(2, n) == 4 * 3 ** (n - 1)
    for n in range(1, 7):
        assert len(list(enumerate_words(g, n, "cyclic"))) == cyclic_word_count(2, n)


def test_cyclic_count_by_brute_force(g):
    # all 16 sequences of length 2, reject x2 = inverse(x1) or x1 = inverse(x2)
    brute = [w for w in itertools.product(range(4), repeat=2) if w[1] != (w[0] + 2) % 4 and w[0] != (w[1] + 2) % 4]
    assert len(brute) == 12


def test_lexicographic_order(g):
    ws = [w.letters for w in enumerate_words(g, 4)]
    assert ws == sorted(ws)


def test_word_matrix_concatenation(g):
    for w in enumerate_words(g, 5):
        a, b = g.word(w.letters[:2]), g.word(w.letters[2:])
        assert (a.matrix @ b.matrix).rows() == w.matrix.rows()


@settings(max_examples=60, deadline=None)
@given(data=st.data())
def test_chain_rule(g, data):
    w = data.draw(reduced_words(g))
    j = next(k for k in range(4) if k != w[-1])
    z = g.discs[j].c + 0.5 * g.discs[j].radius * complex(math.cos(1.1), math.sin(1.1))
    direct = moebius_derivative(g.word(w).matrix, z)
    chain, u = 1.0, z
    for x in reversed(w):
        chain *= moebius_derivative(g.letter(x), u)
        u = moebius_apply(g.letter(x), u)
    assert abs(direct - chain) <= 1e-12 * abs(direct)


def test_exact_integers_do_not_overflow(g):
    w = g.word([0] * 40)
    assert w.matrix.a * w.matrix.d - w.matrix.b * w.matrix.c == 1
    assert w.matrix.a > 2**200


def test_validate_example(g):
    rep = validate_schottky(g)
    assert rep.ok, rep.messages
    assert rep.max_circle_error < 1e-10


def test_validate_overlapping_discs(g):
    discs = list(g.discs)
    discs[1] = Disc(Fraction(-17, 24), Fraction(1, 12))
    bad = SchottkyGroup(2, g.generators, discs)
    rep = validate_schottky(bad)
    assert not rep.ok
    assert rep.failed_pair == (0, 1)


def test_validate_elementary():
    g1 = SchottkyGroup(1, [A], [Disc(Fraction(-17, 24), Fraction(1, 24)), Disc(Fraction(17, 24), Fraction(1, 24))])
    rep = validate_schottky(g1)
    assert not rep.ok
    assert any("elementary" in m for m in rep.messages)


def test_fixed_points(g):
    x = attracting_fixed_point(A)
    assert x == pytest.approx(1 / math.sqrt(2), abs=1e-14)
    assert g.discs[2].contains(x)
    att, rep = fixed_points(A)
    att_inv, rep_inv = fixed_points(A.inverse())
    assert att_inv == pytest.approx(rep) and rep_inv == pytest.approx(att)


def test_fixed_point_rotation_covariance(g):
    w = g.word([0, 1, 1])
    rot = g.word([1, 1, 0])
    # gamma_0^{-1} maps the fixed point of 0 1 1 to that of 1 1 0
    x = attracting_fixed_point(w, g)
    y = moebius_apply(g.letter(2), x)
    assert y == pytest.approx(attracting_fixed_point(rot, g), abs=1e-12)


def test_non_hyperbolic_rejected():
    with pytest.raises(NotHyperbolicError):
        fixed_points(IntMatrix2(1, 1, 0, 1))
    with pytest.raises(NotHyperbolicError):
        closed_geodesic_length(IntMatrix2(0, -1, 1, 0))


def test_image_disc_matches_boundary(g):
    m = g.letter(0)
    d = image_disc(m, g.discs[1])
    th = np.linspace(0, 2 * np.pi, 50)
    pts = [moebius_apply(m, g.discs[1].c + g.discs[1].radius * np.exp(1j * t)) for t in th]
    assert max(abs(abs(p - d.c) - d.radius) for p in pts) < 1e-12


def test_separation_examples(g):
    consts = distortion_constants(g, depth=6)
    a = g.word([0, 1, 1])
    z = complex(g.discs[0].c)
    assert word_separation(g, a, a, z, consts).distance == 0
    b = g.word([1, 1, 1])
    chk = word_separation(g, a, b, z, consts)
    assert chk.r == 0 and chk.distance >= g.min_disc_gap()
    with pytest.raises(ValueError):
        word_separation(g, a, g.word([0, 1]), z, consts)


def test_separation_lemma_exhaustive(g):
    consts = distortion_constants(g, depth=6)
    for n in range(1, 7):
        for j in range(4):
            ws = list(enumerate_words(g, n, "last_ne", j))
            z = complex(g.discs[j].c)
            pts = np.array([complex(moebius_apply(w.matrix, z)) for w in ws])
            letters = np.array([w.letters for w in ws])
            for i in range(len(ws)):
                r = np.argmin(np.concatenate([letters[i + 1:] == letters[i], np.zeros((len(ws) - i - 1, 1), bool)], axis=1), axis=1)
                d = np.abs(pts[i + 1:] - pts[i])
                assert np.all(d >= consts.C_bar * consts.theta_bar**r * (1 - 1e-12))


def test_distortion_certificates(g):
    c = distortion_constants(g, depth=6)
    assert 0 < c.theta_bar <= c.theta < 1
    from schottky_zeta.moebius import disc_sup_inf_derivative

    for n in range(1, 7):
        for j in range(4):
            for w in enumerate_words(g, n, "last_ne", j):
                hi, lo = disc_sup_inf_derivative(w.matrix, g.discs[j])
                assert hi <= c.C_hyp * c.theta**n * (1 + 1e-12)
                assert lo >= c.theta_bar**n / c.C_hyp * (1 - 1e-12)
