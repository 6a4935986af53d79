import math

import numpy as np
import pytest

from schottky_zeta.cover import (
    bergman_kernel,
    bergman_kernel_series,
    build_cover,
    congruent_close_pairs,
    cover_exponents,
    det2,
    det2_from_eigenvalues,
    disc_quadrature,
    empirical_ehrenfest_depth,
    hs_frobenius,
    hs_norm,
    hs_report,
    kappa_lower_bound,
    limit_points,
    log_det2,
    scale_independence_check,
    transfer_eigenvalues,
)

# frozen: q = 3, h = 1/16, s = 1/2 + 2i, n = 1 (Bergman-kernel quadrature)
HS2_N1 = 0.07469847


@pytest.fixture(scope="module")
def cover16(g):
    return build_cover(g, 1 / 16)


def test_bergman_closed_form_vs_series():
    c, r = 0.3, 0.2
    w = c + 0.1 * np.exp(1j * np.linspace(0, 6, 7))
    z = c + 0.05 - 0.08j
    assert np.allclose(bergman_kernel(c, r, w, z), bergman_kernel_series(c, r, w, z), rtol=1e-12)


def test_bergman_reproducing_property():
    # int_D B(w, z) f(z) dA(z) = f(w) for holomorphic f
    c, r = -1.0, 0.5
    z, wt = disc_quadrature(c, r, 40, 80)
    f = lambda x: np.exp(2 * x) + x**3
    w = c + 0.2 + 0.1j
    assert np.sum(wt * bergman_kernel(c, r, w, z) * f(z)) == pytest.approx(f(w), rel=1e-10)


def test_disc_quadrature_area():
    z, wt = disc_quadrature(0.0, 0.3)
    assert wt.sum() == pytest.approx(math.pi * 0.09, rel=1e-12)
    assert np.sum(wt * np.abs(z) ** 2) == pytest.approx(math.pi * 0.3**4 / 2, rel=1e-12)


def test_cover_structure(g, cover16):
    iv = cover16.intervals
    assert np.all(iv[:, 0] < iv[:, 1])
    assert np.all(iv[1:, 0] > iv[:-1, 1])  # disjoint, sorted
    for k, j in enumerate(cover16.parent):
        a, b = g.discs[j].interval
        assert a <= iv[k, 0] and iv[k, 1] <= b
    assert cover16.max_cylinder < cover16.h / 4


def test_cover_contains_deeper_limit_points(g, cover16):
    pts, par, _ = limit_points(g, cover16.depth + 2)
    k = cover16.component_of(pts)
    assert np.all(k >= 0)
    assert np.array_equal(cover16.parent[k], par)


def test_cover_lemma_margin(cover16):
    # images of components sit well inside their targets for every n checked
    assert cover16.n0 == 1
    assert all(m >= 0.49 * cover16.h for m in cover16.margins.values())


def test_cover_counts_monotone(g):
    ce = cover_exponents(g, [2.0**-k for k in range(4, 8)])
    assert all(a <= b for a, b in zip(ce.N, ce.N[1:]))
    assert all(a > b for a, b in zip(ce.measure, ce.measure[1:]))


def test_hs_norm_frozen(g, ctx3, cover16):
    rep = hs_norm(g, ctx3, cover16, 0.5 + 2j, 1)
    assert rep.hs_norm2 == pytest.approx(HS2_N1, rel=1e-6)
    assert rep.hs_norm2 == pytest.approx(rep.hs_diagonal2, rel=1e-12)


def test_hs_norm_matches_frobenius(g, ctx3, cover16):
    """Kernel quadrature vs the Frobenius norm of the truncated matrix."""
    for n in (1, 2):
        rep = hs_norm(g, ctx3, cover16, 0.5 + 2j, n)
        fro = hs_frobenius(g, ctx3, cover16, 0.5 + 2j, n, M=20)
        assert fro == pytest.approx(rep.hs_norm2, rel=1e-6)


def test_det2_routes_agree(g, ctx3):
    s = 0.3 + 1.5j
    for n in (1, 2, 3):
        a = det2_from_eigenvalues(transfer_eigenvalues(g, ctx3, s, 10), n)
        b = log_det2(g, ctx3, s, n, 10)
        assert np.exp(a) == pytest.approx(np.exp(b), rel=1e-9)


def test_det2_n1_is_fredholm_times_exp_trace(g):
    from schottky_zeta.transfer import assemble, fredholm_det

    s = 0.8 + 0.4j
    tr = np.trace(assemble(g, 1, s, 12).dense())
    assert det2(g, 1, s, 1, 12) == pytest.approx(fredholm_det(g, 1, s, 12).value * np.exp(tr), rel=1e-10)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_hs_inequality(g, ctx3, cover16, n):
    rep = hs_report(g, ctx3, cover16, 0.2 + 3j, n, M=10)
    assert rep.log_abs_det2 <= 0.5 * rep.hs_norm2 + 1e-9


def test_scale_independence(g, ctx3, table):
    rep = scale_independence_check(g, ctx3, 0.6 + 1j, 2, 1 / 16, 1 / 32, table=table)
    assert rep.ok, rep.to_dict()


def test_empirical_ehrenfest(g, ctx3, ctx5):
    c = build_cover(g, 1 / 8)
    # mod 3 all words are congruent; but at n = 1 images land in different targets
    assert congruent_close_pairs(g, ctx3, c, 1) == 0
    assert empirical_ehrenfest_depth(g, ctx5, c, n_max=3) >= 1


def test_kappa_positive(table):
    k = [kappa_lower_bound(table, n) for n in (1, 2, 3)]
    assert all(x > 0 for x in k)
    assert k[0] > k[1] > k[2]


def test_scale_independence_coarse(g, ctx3, table):
    rep = scale_independence_check(g, ctx3, 0.5 + 0.5j, 2, 1 / 4, 1 / 8, table=table)
    assert rep.ok, rep.to_dict()


def test_prop46_shape_ratio_bounded(g, table, ctx3, ctx5):
    from schottky_zeta.congruence import ehrenfest_epsilon0
    from schottky_zeta.cover import prop46_probe
    from schottky_zeta.moebius import distortion_constants

    consts = distortion_constants(g)
    ratios = []
    for ctx, M in ((ctx3, 8), (ctx5, 6)):
        e0 = ehrenfest_epsilon0(consts, ctx.epsilon1)
        for T in (2, 4, 8):
            p = prop46_probe(g, ctx, table, T, 0.5, e0, 0.1743316094567584, M=M)
            assert p.n_formula == 0 and p.n_used == 1
            ratios.append(p.ratio)
    assert all(np.isfinite(ratios))
    assert max(map(abs, ratios)) / min(map(abs, ratios)) < 10
