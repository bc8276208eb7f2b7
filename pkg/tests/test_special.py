import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special as sp

from layerpb.special import (assoc_legendre_norm, bessel_j, bessel_j_orders, gaunt,
                             legendre_table, mod_bessel_i, mod_bessel_i_all,
                             mod_bessel_k, mod_bessel_k_all, sph_harm_table,
                             spherical_harmonic, wigner_3j)


def test_i0_at_zero_and_higher_orders_vanish():
    v = mod_bessel_i_all(6, 0.0)
    assert v[0] == 1.0
    assert np.all(v[1:] == 0.0)


def test_k0_closed_form():
    x = np.array([1e-3, 0.5, 1.0, 7.5, 40.0])
    np.testing.assert_allclose(mod_bessel_k(0, x), 0.5 * np.pi * np.exp(-x) / x, rtol=1e-15)


def test_k1_closed_form():
    x = 1.0
    assert mod_bessel_k(1, x) == pytest.approx(0.5 * np.pi * np.exp(-1.0) * 2.0, rel=1e-14)


@pytest.mark.parametrize("x", [1e-6, 0.01, 0.3, 1.0, 4.0, 25.0, 120.0])
def test_i_matches_scipy(x):
    n = np.arange(31)
    np.testing.assert_allclose(mod_bessel_i_all(30, x), sp.spherical_in(n, x), rtol=1e-13)


@pytest.mark.parametrize("x", [1e-2, 0.3, 1.0, 4.0, 25.0])
def test_k_matches_scipy(x):
    n = np.arange(21)
    np.testing.assert_allclose(mod_bessel_k_all(20, x), sp.spherical_kn(n, x), rtol=1e-13)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 25), st.floats(1e-3, 50.0))
def test_wronskian(n, x):
    # i_n k_{n+1} + i_{n+1} k_n = (pi/2)/x^2
    i = mod_bessel_i_all(n + 1, x)
    k = mod_bessel_k_all(n + 1, x)
    w = i[n] * k[n + 1] + i[n + 1] * k[n]
    assert w == pytest.approx(0.5 * np.pi / x ** 2, rel=1e-12)


def test_bessel_errors():
    with pytest.raises(ValueError):
        mod_bessel_k(0, 0.0)
    with pytest.raises(ValueError):
        mod_bessel_i(-1, 1.0)


def test_legendre_low_orders():
    x = 0.3
    c = 1.0 / np.sqrt(4 * np.pi)
    assert assoc_legendre_norm(0, 0, x) == pytest.approx(c)
    assert assoc_legendre_norm(1, 0, x) == pytest.approx(np.sqrt(3) * c * x)
    assert assoc_legendre_norm(1, 1, x) == pytest.approx(-np.sqrt(1.5) * c * np.sqrt(1 - x * x))
    assert assoc_legendre_norm(1, -1, x) == pytest.approx(np.sqrt(1.5) * c * np.sqrt(1 - x * x))


def test_legendre_continuation_polynomial():
    # beyond the unit interval both stay polynomials in x
    for x in (1.5, 3.0, 11.0):
        assert assoc_legendre_norm(2, 0, x) == pytest.approx(
            np.sqrt(5 / (4 * np.pi)) * 0.5 * (3 * x * x - 1), rel=1e-14)
        assert assoc_legendre_norm(2, 2, x) == pytest.approx(
            np.sqrt(15 / (32 * np.pi)) * (x * x - 1), rel=1e-14)


def test_legendre_parity_outside_interval():
    t = legendre_table(8, np.array([2.7, -2.7]))
    n = np.array([n for n in range(9) for _ in range(n + 1)])
    np.testing.assert_allclose(t[1], (-1.0) ** n * t[0], rtol=1e-14)


def test_legendre_overflow():
    with pytest.raises(OverflowError):
        assoc_legendre_norm(150, 0, 1e300)


def test_harmonics_match_scipy():
    rng = np.random.default_rng(3)
    th = rng.uniform(0, np.pi, 20)
    ph = rng.uniform(-np.pi, np.pi, 20)
    tab = sph_harm_table(10, th, ph)
    for n in range(11):
        for m in range(-n, n + 1):
            ref = sp.sph_harm_y(n, m, th, ph)
            np.testing.assert_allclose(tab[:, n * n + n + m], ref, atol=1e-14)


def test_harmonic_negative_order_symmetry():
    y = spherical_harmonic(5, 3, 0.7, 1.1)
    ym = spherical_harmonic(5, -3, 0.7, 1.1)
    assert ym == pytest.approx(-np.conj(y), abs=1e-15)
    with pytest.raises(IndexError):
        spherical_harmonic(2, 3, 0.1, 0.1)


def test_harmonic_orthonormality():
    x, w = np.polynomial.legendre.leggauss(20)
    ph = np.linspace(0, 2 * np.pi, 41)[:-1]
    T, P = np.meshgrid(np.arccos(x), ph, indexing="ij")
    W = np.outer(w, np.full(ph.size, 2 * np.pi / ph.size))
    Y = sph_harm_table(6, T, P).reshape(-1, 49)
    G = (Y.conj().T * W.ravel()) @ Y
    np.testing.assert_allclose(G, np.eye(49), atol=1e-13)


def test_bessel_j_orders_against_scipy():
    x = np.concatenate([[0.0], np.geomspace(1e-4, 300, 400)])
    J = bessel_j_orders(30, x)
    ref = sp.jv(np.arange(31)[:, None], x)
    assert np.max(np.abs(J - ref)) < 1e-13
    assert bessel_j(3, 2.0) == pytest.approx(sp.jv(3, 2.0))


def test_wigner_3j_known_values():
    assert wigner_3j(1, 1, 0, 0, 0, 0) == pytest.approx(-1 / np.sqrt(3))
    assert wigner_3j(2, 2, 2, 0, 0, 0) == pytest.approx(-np.sqrt(2 / 35))
    assert wigner_3j(1, 1, 1, 1, -1, 0) == pytest.approx(1 / np.sqrt(6))
    assert wigner_3j(1, 1, 3, 0, 0, 0) == 0.0


def test_gaunt_selection_rules_and_quadrature():
    assert gaunt(2, 1, 3, 0, 6) == 0.0
    assert gaunt(2, 1, 3, 0, 2) == 0.0  # odd parity
    with pytest.raises(ValueError):
        gaunt(1, 2, 1, 0, 1)
    x, w = np.polynomial.legendre.leggauss(24)
    ph = np.linspace(0, 2 * np.pi, 49)[:-1]
    T, P = np.meshgrid(np.arccos(x), ph, indexing="ij")
    W = np.outer(w, np.full(ph.size, 2 * np.pi / ph.size))
    Y = sph_harm_table(8, T, P)
    for (n, m, nu, mu, q) in [(2, 1, 3, -2, 3), (4, -3, 4, 2, 6), (1, 0, 1, 0, 2), (3, 2, 5, 1, 8)]:
        ref = np.sum(W * Y[..., n * n + n + m] * Y[..., nu * nu + nu + mu]
                     * np.conj(Y[..., q * q + q + m + mu]))
        assert gaunt(n, m, nu, mu, q) == pytest.approx(ref.real, abs=1e-13)
