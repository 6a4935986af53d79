import math

import numpy as np
import pytest
import scipy.sparse
from hypothesis import given, settings
from hypothesis import strategies as st

from schottky_zeta.transfer import (
    ZetaFunction,
    assemble,
    euler_product,
    fredholm_det,
    logdet_I_minus,
    norm_ratio_probe,
    orbit_trace_bound,
    singular_tail,
    spectral_radius,
    trace_matrix,
    trace_orbits,
    trivial_block,
    zeta_cycle,
)

DELTA = 0.1743316094567584
# zeros of the q = 1 determinant, M = 20 secant solve (independent of the
# contour search)
Q1_ZEROS = [0.1330788606937858 + 0.8081720329592862j, -0.015118528595331783 + 0.6302627847254761j]
Q3_ONLY_ZERO = 0.1505393536843013 + 0.5023092663242671j


@pytest.fixture(scope="module")
def Z1(g):
    return ZetaFunction(g, 1, 12)


@pytest.fixture(scope="module")
def Z3(g, ctx3):
    return ZetaFunction(g, ctx3, 12)


def test_matrix_shapes(g, ctx3, ctx5):
    tm = assemble(g, ctx3, 0.5, 6)
    assert tm.dim == 2 * 4 * 7  # degrees 0..M
    assert tm.nonzero_blocks_per_row() == 3
    big = assemble(g, ctx5, 0.5, 4)
    assert big.dim == 120 * 4 * 5
    assert scipy.sparse.issparse(big.matrix())


@pytest.mark.parametrize("N", [1, 2, 3, 4])
@pytest.mark.parametrize("q", [1, 3])
def test_traces_match_periodic_orbits(g, table, N, q):
    s = 0.6 + 1.3j
    tm = assemble(g, q, s, 14)
    a, b = trace_matrix(tm, N), trace_orbits(g, q, s, N, table)
    assert abs(a - b) <= 1e-10 * max(abs(b), orbit_trace_bound(table, s.real, N))


def test_trace_orbits_q3_odd_vanish(g, table):
    assert trace_orbits(g, 3, 0.5, 3, table) == 0


def test_det_matches_euler_product(g, table):
    s = 1.2 + 0.7j
    det = fredholm_det(g, 1, s, 16).value
    assert abs(det - euler_product(table, s)) < 1e-9 * abs(det)


@settings(max_examples=10, deadline=None)
@given(re=st.floats(0.4, 1.5), im=st.floats(-5, 5))
def test_det_matches_cycle_expansion(g, table, re, im):
    s = complex(re, im)
    det = fredholm_det(g, 1, s, 14).value
    cyc = zeta_cycle(g, 1, s, 8, table).value
    assert abs(det - cyc) <= 1e-6 * abs(det)


def test_q3_factorisation(g, ctx3):
    """Every letter is -I mod 3, so det_3(I - L) = det_1(I - L) det_1(I + L)."""
    for s in (0.3 + 0.5j, 0.05 + 2.0j, 1.0):
        A1 = assemble(g, 1, s, 12).dense()
        expect = logdet_I_minus(A1) + logdet_I_minus(-A1)
        got = logdet_I_minus(assemble(g, ctx3, s, 12).matrix())
        assert abs(np.exp(got) - np.exp(expect)) < 1e-12 * abs(np.exp(expect))


def test_trivial_block_is_q1_matrix(g, ctx5):
    s = 0.4 + 1.0j
    tb = trivial_block(assemble(g, ctx5, s, 5))
    assert np.allclose(tb, assemble(g, 1, s, 5).dense(), atol=1e-13)


def test_sparse_and_dense_logdet_agree(g, ctx3):
    A = assemble(g, ctx3, 0.2 + 1j, 8).dense()
    assert logdet_I_minus(scipy.sparse.csr_matrix(A)) == pytest.approx(logdet_I_minus(A), abs=1e-11)


def test_zeta_function_cache_and_reference(g, Z1):
    s = 0.3 + 2.1j
    assert Z1(s) == pytest.approx(fredholm_det(g, 1, s, 12).value, rel=1e-12)
    n = Z1.evaluations
    Z1(s)
    assert Z1.evaluations == n


def test_truncation_convergence(g):
    s = 0.1 + 3j
    vals = [fredholm_det(g, 1, s, M).value for M in (8, 12, 16)]
    assert abs(vals[1] - vals[2]) < abs(vals[0] - vals[2])
    assert abs(vals[1] - vals[2]) < 1e-8 * abs(vals[2])


def test_zero_at_delta(Z1, Z3):
    for Z in (Z1, Z3):
        d = Z.log_derivative(DELTA + 0.01)
        # a simple zero at delta: Z'/Z ~ 1/(s - delta)
        assert abs(d * 0.01 - 1) < 0.1
    assert abs(Z1(DELTA)) < 1e-10


def test_frozen_zeros(Z1, Z3):
    scale = abs(Z1(0.5 + 0.7j))
    for z in Q1_ZEROS:
        assert abs(Z1(z)) < 1e-8 * scale
        assert abs(Z3(z)) < 1e-8 * abs(Z3(0.5 + 0.7j))
    assert abs(Z3(Q3_ONLY_ZERO)) < 1e-8 * abs(Z3(0.5 + 0.7j))
    assert abs(Z1(Q3_ONLY_ZERO)) > 1e-3 * scale


def test_conjugation_symmetry(Z1):
    for s in (0.1 + 0.3j, -0.5 + 2j):
        assert Z1(s.conjugate()) == pytest.approx(Z1(s).conjugate(), rel=1e-10)


def test_spectral_radius_at_delta(g):
    assert spectral_radius(assemble(g, 1, DELTA, 16)) == pytest.approx(1.0, abs=1e-10)


def test_singular_values_decay(g, ctx3):
    st_ = singular_tail(assemble(g, ctx3, 0.5 + 2j, 10))
    assert 0 < st_.rho0 < 1
    assert st_.tail < 1e-3 * st_.log_sum


def test_norm_probe(g, table):
    pr = norm_ratio_probe(g, 1, 1.0, table, N_max=6)
    assert pr.finite
    # at real s the leading eigenvalue is e^{P}: ratios converge, no growth
    assert abs(pr.slope) < 0.02
    high = norm_ratio_probe(g, 1, 0.3 + 7j, table, N_max=6)
    assert high.non_increasing


def test_spectral_radius_at_zero(g):
    # e^{P(0)} = 3: the number of admissible successors
    assert spectral_radius(assemble(g, 1, 0.0, 16)) == pytest.approx(3.0, rel=1e-9)


def test_spectral_radius_bound(g, ctx3, table):
    from schottky_zeta.pressure import pressure_table

    rng = np.random.default_rng(11)
    for _ in range(10):
        s = complex(rng.uniform(0.0, 1.5), rng.uniform(-8, 8))
        P = pressure_table(table, s.real).extrapolated
        assert spectral_radius(assemble(g, ctx3, s, 12)) <= math.exp(P) * (1 + 1e-3)


@pytest.mark.parametrize("q,M", [(3, 8), (5, 4)])
def test_factor_product_is_regular_determinant(g, q, M):
    Z = ZetaFunction(g, q, M)
    for s in (0.3 + 2j, -0.4 + 0.7j, 0.9):
        full = Z.logdet(s)
        prod = sum(f.multiplicity * f.logdet(s) for f in Z.factors())
        assert prod.real == pytest.approx(full.real, rel=1e-11, abs=1e-11)
        assert abs(np.exp(1j * (prod.imag - full.imag)) - 1) < 1e-10


def test_q3_factors_are_plus_minus_scalar(g, ctx3):
    # G = {I, -I}: the two factors are det(I - L) and det(I + L) of the q = 1 matrix
    Z = ZetaFunction(g, ctx3, 8)
    Z1 = ZetaFunction(g, 1, 8)
    s = 0.2 + 1.3j
    signs = sorted(f.rep.letters[0][0, 0].real for f in Z.factors())
    assert signs == pytest.approx([-1.0, 1.0])
    plus = next(f for f in Z.factors() if f.rep.letters[0][0, 0].real > 0)
    assert plus.logdet(s).real == pytest.approx(Z1.logdet(s).real, rel=1e-12)
