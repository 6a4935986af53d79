import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from schottky_zeta.moebius import closed_geodesic_length, cyclic_word_count, enumerate_words
from schottky_zeta.pressure import (
    PeriodicOrbitTable,
    bowen_dimension,
    compute_eta,
    cycle_coefficients,
    lemma_sum_ratio,
    orbit_traces,
    pressure_table,
)
from schottky_zeta.transfer import assemble, spectral_radius

# Bowen root of the example, frozen from a secant solve of log rho(L_x) = 0
# with the M = 20 transfer matrix (independent of the orbit table).
DELTA = 0.1743316094567584

# log rho(L_x), M = 20
PRESSURE_ORACLE = {0.5: -1.9599064558177839, 1.0: -4.748965778356264, 2.0: -9.885540105161857}


def test_table_counts(table):
    for n in range(1, 9):
        assert table.count(n) == cyclic_word_count(2, n)


def test_table_lengths_exact(g, table):
    """Lengths against exact integer traces, in the same lexicographic order."""
    for n in range(1, 5):
        ws = list(enumerate_words(g, n, "cyclic"))
        exact = np.array([closed_geodesic_length(w.matrix) for w in ws])
        assert np.allclose(np.sort(table.lengths[n]), np.sort(exact), rtol=1e-13)
    assert table.lengths[1] == pytest.approx(np.full(4, 2 * math.acosh(17)), rel=1e-14)


def test_prime_flags(table):
    # length 2 words x y with y != x^{-1}: x x is not primitive
    L = table.letters[2]
    assert np.array_equal(table.prime[2], L[:, 0] != L[:, 1])
    L4 = table.letters[4]
    periodic = np.all(L4 == np.roll(L4, -2, axis=1), axis=1)
    assert np.array_equal(table.prime[4], ~periodic)


def test_residues_mod3(table):
    # every letter is -I mod 3: a word reduces to the identity iff its length is even
    assert not table.identity_mask(3, 3).any()
    assert table.identity_mask(3, 4).all()
    with pytest.raises(KeyError):
        table.identity_mask(7, 2)


@pytest.mark.parametrize("x", sorted(PRESSURE_ORACLE))
def test_pressure_frozen(table, x):
    assert pressure_table(table, x).extrapolated == pytest.approx(PRESSURE_ORACLE[x], abs=1e-9)


def test_pressure_matches_spectral_radius(g, table):
    x = 0.7
    rho = spectral_radius(assemble(g, 1, x, 16))
    assert pressure_table(table, x).extrapolated == pytest.approx(math.log(rho), abs=1e-8)


@settings(max_examples=25, deadline=None)
@given(k=st.integers(2, 4), ell=st.floats(0.5, 5.0), x=st.floats(0.0, 2.0))
def test_full_shift_pressure(k, ell, x):
    # weak expansion slows the cycle expansion; the error indicator must cover it
    est = pressure_table(PeriodicOrbitTable.full_shift(k, ell, 6), x)
    err = abs(est.extrapolated - (math.log(k) - x * ell))
    assert err <= max(est.error, 1e-12)
    if ell >= 1.5:
        assert err < 1e-9


def test_full_shift_dimension():
    t = PeriodicOrbitTable.full_shift(3, 2.0, 6)
    assert bowen_dimension(t).delta == pytest.approx(math.log(3) / 2.0, abs=1e-11)


def test_pressure_decreasing_convex(table):
    xs = np.linspace(0, 2, 9)
    P = np.array([pressure_table(table, x).extrapolated for x in xs])
    assert np.all(np.diff(P) < 0)
    assert np.all(np.diff(P, 2) > -1e-10)
    assert P[0] == pytest.approx(math.log(3), abs=1e-6)


def test_dimension(table):
    d = bowen_dimension(table)
    assert d.delta == pytest.approx(DELTA, abs=1e-12)
    assert d.bracket[0] <= d.delta <= d.bracket[1]


def test_dimension_is_transfer_root(g):
    assert spectral_radius(assemble(g, 1, DELTA, 16)) == pytest.approx(1.0, abs=1e-10)


def test_cycle_coefficients_newton_identity():
    # traces of a 2x2 diagonal matrix: det(I - zA) = 1 - (a + b) z + a b z^2
    a, b = 0.3, 0.2
    tr = np.array([a**n + b**n for n in range(1, 6)])
    c = cycle_coefficients(tr)
    assert c[:3] == pytest.approx([1, -(a + b), a * b], abs=1e-14)
    assert np.allclose(c[3:], 0, atol=1e-14)


def test_orbit_traces_shape(table):
    assert orbit_traces(table, 1.0).shape == (8,)


def test_eta(table):
    assert compute_eta(table, 0.5, 0.01, DELTA) == pytest.approx(-0.01 * PRESSURE_ORACLE[1.0], rel=1e-9)
    with pytest.raises(ValueError):
        compute_eta(table, DELTA / 2 - 0.01, 0.01, DELTA)


def test_lemma_sum_ratio_bounded(g, table):
    r = lemma_sum_ratio(g, 0.5, 5, table)
    assert all(0 < x < 50 for x in r)
    assert max(r) / min(r) < 3
