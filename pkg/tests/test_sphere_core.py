import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import sph_harm_y

from conftest import random_coeffs
from curvflow.errors import InvalidArgument, InvalidData
from curvflow.sphere_core import (
    FOUR_PI,
    GridField,
    SpectralField,
    analyze,
    cap_weights,
    evaluate,
    gauss_legendre,
    geodesic_cap_integral,
    grad_energy,
    integrate,
    laplacian,
    lm_index,
    make_grid,
    n_coeffs,
    spectral_tail_fraction,
    synthesize,
)


def scipy_real_ylm(l, m, theta, phi):
    # scipy includes the Condon-Shortley phase; ours does not
    y = sph_harm_y(l, abs(m), theta, phi) * (-1) ** abs(m)
    if m > 0:
        return math.sqrt(2) * y.real
    if m < 0:
        return math.sqrt(2) * y.imag
    return y.real


class TestGrid:
    def test_small_grid(self):
        g = make_grid(1, 1)
        assert g.n_lat >= 2 and g.n_lon >= 3
        assert g.weights.sum() == pytest.approx(FOUR_PI, rel=1e-13)

    def test_default_sizes(self, grid32):
        assert grid32.n_lat >= 65 and grid32.n_lon >= 130
        assert grid32.lmax == 64

    @pytest.mark.parametrize("L,q", [(1, 1), (5, 1), (8, 1.5), (32, 2), (40, 3)])
    def test_total_weight(self, L, q):
        g = make_grid(L, q)
        assert abs(g.weights.sum() / FOUR_PI - 1) <= 1e-13
        assert g.n_lat >= L + 1 and g.n_lon >= 2 * L + 1

    @pytest.mark.parametrize("L,q", [(0, 1), (-3, 2), (4, 0.5), (2.5, 1)])
    def test_invalid(self, L, q):
        with pytest.raises(InvalidArgument):
            make_grid(L, q)

    def test_gauss_legendre_nodes(self):
        x, w = gauss_legendre(20)
        xr, wr = np.polynomial.legendre.leggauss(20)
        assert np.allclose(np.sort(x.astype(float)), xr, atol=1e-14)
        assert float(w.sum()) == pytest.approx(2.0, rel=1e-15)


class TestTransforms:
    def test_matches_scipy(self):
        g = make_grid(12, 1)
        th = g.theta[:, None] * np.ones(g.n_lon)
        ph = np.ones(g.n_lat)[:, None] * g.phi
        for l in range(0, 13):
            for m in range(-l, l + 1):
                a = SpectralField.zeros(12)
                c = a.coeffs.copy()
                c[lm_index(l, m)] = 1.0
                ours = synthesize(SpectralField(12, c), g).values
                assert np.max(np.abs(ours - scipy_real_ylm(l, m, th, ph))) < 1e-12

    def test_constant(self, grid32):
        a = analyze(grid32.constant(1.0))
        assert a.coeffs[0] == pytest.approx(math.sqrt(FOUR_PI), rel=1e-14)
        assert np.max(np.abs(a.coeffs[1:])) < 1e-14

    def test_x3_is_l1_m0(self, grid32):
        a = analyze(grid32.coordinate(2))
        expected = math.sqrt(FOUR_PI / 3)
        assert a.coeffs[lm_index(1, 0)] == pytest.approx(expected, rel=1e-14)
        rest = np.delete(a.coeffs, lm_index(1, 0))
        assert np.max(np.abs(rest)) < 1e-14

    def test_zero(self, grid32):
        assert np.all(synthesize(SpectralField.zeros(32), grid32).values == 0)

    @pytest.mark.parametrize("L", [8, 32])
    def test_round_trip_q1(self, L):
        g = make_grid(L, 1)
        a = random_coeffs(L, L)
        back = analyze(synthesize(a, g))
        assert np.max(np.abs(back.coeffs - a.coeffs)) <= 1e-12 * np.max(np.abs(a.coeffs))
        f = synthesize(a, g)
        again = synthesize(analyze(f), g)
        assert np.max(np.abs(again.values - f.values)) <= 1e-12 * np.max(np.abs(f.values))

    def test_round_trip_oversampled(self, grid32):
        a = random_coeffs(64, 3)
        back = analyze(synthesize(a, grid32), 64)
        assert np.max(np.abs(back.coeffs - a.coeffs)) <= 1e-12 * np.max(np.abs(a.coeffs))

    def test_synthesis_matches_pointwise_sum(self, grid16):
        a = random_coeffs(16, 4)
        pts = grid16.points[::7, ::9]
        assert np.allclose(evaluate(a, pts), synthesize(a, grid16).values[::7, ::9], atol=1e-12)

    def test_orthonormality(self):
        L = 10
        g = make_grid(L, 1)
        Y = np.stack([synthesize(SpectralField(L, np.eye(n_coeffs(L))[i]), g).values for i in range(n_coeffs(L))])
        gram = np.einsum("ajk,bjk,jk->ab", Y, Y, g.weights)
        assert np.max(np.abs(gram - np.eye(n_coeffs(L)))) < 1e-12

    def test_errors(self, grid16):
        bad = grid16.constant(0.0).values.copy()
        bad[3, 4] = np.nan
        with pytest.raises(InvalidData):
            analyze(GridField(grid16, bad))
        with pytest.raises(InvalidArgument):
            synthesize(SpectralField.zeros(grid16.lmax + 1), grid16)
        with pytest.raises(InvalidArgument):
            GridField(grid16, np.zeros((3, 3)))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), lmax=st.integers(0, 16))
    def test_round_trip_property(self, seed, lmax):
        g = make_grid(16, 1)
        a = random_coeffs(lmax, seed)
        back = analyze(synthesize(a, g), lmax)
        assert np.max(np.abs(back.coeffs - a.coeffs)) <= 1e-12 * max(1.0, np.max(np.abs(a.coeffs)))


class TestOperators:
    def test_laplacian_examples(self, grid32):
        # coefficient roundoff ~1e-15 is amplified by l(l+1) <= 1056
        assert np.max(np.abs(laplacian(analyze(grid32.constant(3.0))).coeffs)) < 1e-10
        x3 = grid32.coordinate(2)
        lap = synthesize(laplacian(analyze(x3)), grid32).values
        assert np.max(np.abs(lap + 2 * x3.values)) < 1e-10
        x3sq = x3.values**2
        lap = synthesize(laplacian(analyze(GridField(grid32, x3sq))), grid32).values
        assert np.max(np.abs(lap - (2 - 6 * x3sq))) < 1e-10

    def test_integrals(self, grid32):
        assert integrate(grid32.constant(1.0)) == pytest.approx(FOUR_PI, rel=1e-14)
        assert abs(integrate(grid32.coordinate(2))) < 1e-14
        x3 = grid32.coordinate(2).values
        assert integrate(GridField(grid32, x3**2)) == pytest.approx(FOUR_PI / 3, rel=1e-14)

    def test_grad_energy(self, grid32):
        assert grad_energy(analyze(grid32.constant(2.0))) < 1e-22
        assert grad_energy(analyze(grid32.coordinate(2))) == pytest.approx(8 * math.pi / 3, rel=1e-13)

    @pytest.mark.parametrize("seed", range(5))
    def test_parseval(self, grid32, seed):
        a = random_coeffs(32, seed)
        u = synthesize(a, grid32)
        a = a.scale(1.0 / np.max(np.abs(u.values)))
        u = synthesize(a, grid32)
        lap = synthesize(laplacian(a), grid32)
        quad = integrate(GridField(grid32, -u.values * lap.values))
        assert grad_energy(a) == pytest.approx(quad, rel=1e-10)

    def test_tail_fraction(self):
        c = np.zeros(n_coeffs(10))
        c[lm_index(2, 0)] = 1.0
        assert spectral_tail_fraction(SpectralField(10, c)) == 0.0
        c[lm_index(9, 1)] = 1.0
        assert spectral_tail_fraction(SpectralField(10, c)) == pytest.approx(0.5)
        assert spectral_tail_fraction(SpectralField.zeros(10)) == 0.0


class TestCaps:
    @pytest.mark.parametrize("r", [0.01, 0.3, math.pi / 3, 1.0, 2.5, math.pi])
    def test_constant(self, grid32, r):
        got = geodesic_cap_integral(grid32.constant(1.0), [0.3, -0.2, 0.9], r)
        assert got == pytest.approx(2 * math.pi * (1 - math.cos(r)), rel=1e-6)

    def test_pi_over_3(self, grid32):
        assert geodesic_cap_integral(grid32.constant(1.0), [0, 0, 1], math.pi / 3) == pytest.approx(math.pi, rel=1e-13)

    def test_linear_field_closed_form(self, grid32):
        # int_cap x3 = pi sin^2 r about the north pole
        r = 0.8
        got = geodesic_cap_integral(grid32.coordinate(2), [0, 0, 1], r)
        assert got == pytest.approx(math.pi * math.sin(r) ** 2, rel=1e-12)

    def test_bubble_mass(self, grid32):
        from curvflow.conformal_geometry import area_density, mobius_factor

        s, r = 0.9, 1.5
        dens = area_density(mobius_factor(np.array([0, 0, s]), grid32))
        lam = math.sqrt((1 + s) / (1 - s))
        r_img = 2 * math.atan(lam * math.tan(r / 2))
        exact = 2 * math.pi * (1 - math.cos(r_img))
        got = geodesic_cap_integral(dens, [0, 0, 1], r)
        assert got == pytest.approx(exact, rel=1e-6)
        assert got > 0.9 * FOUR_PI

    @pytest.mark.parametrize("r", [0.0, -1.0, 4.0])
    def test_bad_radius(self, grid32, r):
        with pytest.raises(InvalidArgument):
            geodesic_cap_integral(grid32.constant(1.0), [0, 0, 1], r)

    def test_weights_sum(self):
        w = cap_weights(10, math.pi)
        assert w[0] == pytest.approx(FOUR_PI)
        assert np.max(np.abs(w[1:])) < 1e-13
