"""Special functions used by the expansions.

Conventions
-----------
* Modified spherical Bessel functions use ``i_n(x) = sqrt(pi/(2x)) I_{n+1/2}(x)``
  and ``k_n(x) = sqrt(pi/(2x)) K_{n+1/2}(x)``, so that
  ``k_0(x) = (pi/2) exp(-x)/x``.  These coincide with ``spherical_in`` and
  ``spherical_kn`` of :mod:`scipy.special`, which serve as test oracles only.
* Normalized associated Legendre functions include the Condon-Shortley phase,
  ``Phat_n^m(x) = (-1)^m c_nm P_n^{(m)}(x) (1-x^2)^{m/2}`` with
  ``c_nm = sqrt((2n+1)(n-m)!/(4 pi (n+m)!))``.  For ``|x| > 1`` the factor
  ``(1-x^2)^{1/2}`` is replaced by ``sign(x) sqrt(x^2-1)``, which gives a real
  polynomial continuation with parity ``Phat(-x) = (-1)^n Phat(x)``.
* Spherical harmonics are ``Y_n^m = Phat_n^m(cos theta) exp(i m phi)`` for any
  sign of ``m``, with ``Phat_n^{-m} = (-1)^m Phat_n^m``.
* Coefficient arrays over ``(n, m)`` with ``|m| <= n <= p`` are packed with
  index ``n*n + n + m``; arrays over ``m >= 0`` only use ``n*(n+1)//2 + m``.
"""
from fractions import Fraction
from functools import lru_cache
from math import factorial, pi, sqrt

import numpy as np
from numba import njit
from scipy import special as _sp

__all__ = [
    "mod_bessel_i",
    "mod_bessel_k",
    "mod_bessel_i_all",
    "mod_bessel_k_all",
    "assoc_legendre_norm",
    "legendre_table",
    "spherical_harmonic",
    "sph_harm_table",
    "bessel_j",
    "bessel_j_orders",
    "wigner_3j",
    "gaunt",
    "nm_index",
    "ncoef",
]


def ncoef(p):
    """Number of packed ``(n, m)`` coefficients up to degree ``p``."""
    return (p + 1) * (p + 1)


def nm_index(n, m):
    """Packed index of ``(n, m)`` in a full coefficient array."""
    return n * n + n + m


# ---------------------------------------------------------------------------
# Modified spherical Bessel functions
# ---------------------------------------------------------------------------


@njit(cache=True)
def sph_i_into(nmax, x, out):
    """Fill ``out[0..nmax]`` with ``i_n(x)`` for a scalar ``x >= 0``.

    The ratios ``i_n/i_{n-1}`` are obtained from a backward continued fraction
    started well above ``nmax`` (a Miller-type scheme), then multiplied
    upward from ``i_0 = sinh(x)/x``.  No intermediate overflow can occur.
    """
    if x == 0.0:
        out[0] = 1.0
        for n in range(1, nmax + 1):
            out[n] = 0.0
        return
    if x < 1e-4:
        i0 = 1.0 + x * x / 6.0
    else:
        i0 = np.sinh(x) / x
    out[0] = i0
    if nmax == 0:
        return
    top = nmax + 40 + int(1.5 * x)
    r = 0.0
    ratios = np.empty(nmax + 1)
    for n in range(top, 0, -1):
        r = x / ((2 * n + 1) + x * r)
        if n <= nmax:
            ratios[n] = r
    v = i0
    for n in range(1, nmax + 1):
        v = v * ratios[n]
        out[n] = v


@njit(cache=True)
def sph_k_into(nmax, x, out):
    """Fill ``out[0..nmax]`` with ``k_n(x)`` for a scalar ``x > 0``.

    Upward recurrence ``k_{n+1} = k_{n-1} + (2n+1)/x k_n`` is stable because
    ``k_n`` grows with ``n``.
    """
    e = 0.5 * pi * np.exp(-x) / x
    out[0] = e
    if nmax == 0:
        return
    out[1] = e * (1.0 + 1.0 / x)
    for n in range(1, nmax):
        out[n + 1] = out[n - 1] + (2 * n + 1) / x * out[n]


@njit(cache=True)
def _i_all(nmax, x):
    res = np.empty((x.size, nmax + 1))
    for k in range(x.size):
        sph_i_into(nmax, x[k], res[k])
    return res


@njit(cache=True)
def _k_all(nmax, x):
    res = np.empty((x.size, nmax + 1))
    for k in range(x.size):
        sph_k_into(nmax, x[k], res[k])
    return res


def mod_bessel_i_all(nmax, x):
    """Return ``i_0..i_nmax`` at every ``x``; shape ``x.shape + (nmax+1,)``."""
    x = np.asarray(x, dtype=float)
    if nmax < 0:
        raise ValueError("order must be nonnegative")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValueError("i_n requires finite x >= 0")
    flat = np.ascontiguousarray(x.ravel())
    return _i_all(int(nmax), flat).reshape(x.shape + (nmax + 1,))


def mod_bessel_k_all(nmax, x):
    """Return ``k_0..k_nmax`` at every ``x``; shape ``x.shape + (nmax+1,)``."""
    x = np.asarray(x, dtype=float)
    if nmax < 0:
        raise ValueError("order must be nonnegative")
    if np.any(x <= 0):
        raise ValueError("k_n requires x > 0")
    flat = np.ascontiguousarray(x.ravel())
    return _k_all(int(nmax), flat).reshape(x.shape + (nmax + 1,))


def mod_bessel_i(n, x):
    """Modified spherical Bessel function of the first kind ``i_n(x)``.

    Parameters
    ----------
    n : int
        Order, ``n >= 0``.
    x : float or array_like
        Argument, ``x >= 0``.
    """
    if n < 0:
        raise ValueError("order must be nonnegative")
    out = mod_bessel_i_all(n, x)[..., n]
    return out[()] if out.ndim == 0 else out


def mod_bessel_k(n, x):
    """Modified spherical Bessel function of the second kind ``k_n(x)``.

    Normalized so that ``k_0(x) = (pi/2) exp(-x)/x``.
    """
    if n < 0:
        raise ValueError("order must be nonnegative")
    out = mod_bessel_k_all(n, x)[..., n]
    return out[()] if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Associated Legendre functions and spherical harmonics
# ---------------------------------------------------------------------------


@njit(cache=True)
def legendre_into(p, x, s, out):
    """Normalized associated Legendre values for ``0 <= m <= n <= p``.

    ``s`` is ``sqrt(1 - x^2)`` for ``|x| <= 1`` and ``sign(x) sqrt(x^2 - 1)``
    for the continuation beyond the unit interval; passing it separately keeps
    full accuracy near the poles.  Results go to ``out[n*(n+1)//2 + m]``.
    """
    pmm = 0.28209479177387814  # 1/sqrt(4 pi)
    for m in range(p + 1):
        if m > 0:
            pmm = -sqrt((2.0 * m + 1.0) / (2.0 * m)) * s * pmm
        base = m * (m + 1) // 2 + m
        out[base] = pmm
        if m == p:
            break
        p1 = sqrt(2.0 * m + 3.0) * x * pmm
        out[(m + 1) * (m + 2) // 2 + m] = p1
        p0 = pmm
        for n in range(m + 2, p + 1):
            a = sqrt((4.0 * n * n - 1.0) / (n * n - m * m))
            b = sqrt(((n - 1.0) ** 2 - m * m) / (4.0 * (n - 1.0) ** 2 - 1.0))
            p2 = a * (x * p1 - b * p0)
            out[n * (n + 1) // 2 + m] = p2
            p0 = p1
            p1 = p2


@njit(cache=True)
def ylm_into(p, ct, st, phi, plm, out):
    """Spherical harmonics ``Y_n^m`` for ``|m| <= n <= p`` at one direction.

    ``plm`` is scratch of length ``(p+1)(p+2)/2``; ``out`` is complex of
    length ``(p+1)^2`` in packed ``n*n + n + m`` order.
    """
    legendre_into(p, ct, st, plm)
    c1 = np.cos(phi)
    s1 = np.sin(phi)
    cr = 1.0
    ci = 0.0
    for m in range(p + 1):
        sgn = -1.0 if m % 2 else 1.0
        for n in range(m, p + 1):
            v = plm[n * (n + 1) // 2 + m]
            out[n * n + n + m] = complex(v * cr, v * ci)
            if m > 0:
                out[n * n + n - m] = complex(sgn * v * cr, -sgn * v * ci)
        t = cr * c1 - ci * s1
        ci = cr * s1 + ci * c1
        cr = t


@njit(cache=True)
def _legendre_many(p, x, s):
    res = np.empty((x.size, (p + 1) * (p + 2) // 2))
    for k in range(x.size):
        legendre_into(p, x[k], s[k], res[k])
    return res


@njit(cache=True)
def _ylm_many(p, ct, st, phi):
    res = np.empty((ct.size, (p + 1) * (p + 1)), dtype=np.complex128)
    plm = np.empty((p + 1) * (p + 2) // 2)
    for k in range(ct.size):
        ylm_into(p, ct[k], st[k], phi[k], plm, res[k])
    return res


def legendre_table(p, x):
    """Return ``Phat_n^m(x)`` for ``0 <= m <= n <= p`` in the ``m >= 0`` packing.

    Works on the unit interval and on its real continuation ``|x| > 1``.
    """
    x = np.asarray(x, dtype=float)
    flat = np.ascontiguousarray(x.ravel())
    inside = np.abs(flat) <= 1.0
    with np.errstate(over="ignore"):
        s = np.where(inside, np.sqrt(np.clip(1.0 - flat * flat, 0.0, None)),
                     np.sign(flat) * np.sqrt(np.clip(flat * flat - 1.0, 0.0, None)))
    res = _legendre_many(int(p), flat, s)
    return res.reshape(x.shape + (res.shape[-1],))


def assoc_legendre_norm(n, m, x):
    """Normalized associated Legendre function ``Phat_n^m(x)``.

    Negative ``m`` is supported through ``Phat_n^{-m} = (-1)^m Phat_n^m``.
    For ``|x| > 1`` the real polynomial continuation is returned.
    """
    if n < 0 or abs(m) > n:
        raise ValueError("need |m| <= n")
    am = abs(m)
    val = legendre_table(n, x)[..., n * (n + 1) // 2 + am]
    if m < 0 and am % 2:
        val = -val
    if np.any(~np.isfinite(val)):
        raise OverflowError("Legendre value exceeds floating point range")
    return val[()] if np.ndim(val) == 0 else val


def sph_harm_table(p, theta, phi):
    """All ``Y_n^m(theta, phi)`` up to degree ``p``, packed ``n*n+n+m``."""
    theta = np.asarray(theta, dtype=float)
    phi = np.broadcast_to(np.asarray(phi, dtype=float), theta.shape)
    ct = np.ascontiguousarray(np.cos(theta).ravel())
    st = np.ascontiguousarray(np.sin(theta).ravel())
    res = _ylm_many(int(p), ct, st, np.ascontiguousarray(phi.ravel()))
    return res.reshape(theta.shape + (res.shape[-1],))


def spherical_harmonic(n, m, theta, phi):
    """Spherical harmonic ``Y_n^m(theta, phi)`` with Condon-Shortley phase."""
    if n < 0 or abs(m) > n:
        raise IndexError("need |m| <= n")
    out = sph_harm_table(n, theta, phi)[..., n * n + n + m]
    return out[()] if np.ndim(out) == 0 else out


def bessel_j(m, x):
    """Cylindrical Bessel function ``J_m(x)`` of integer order."""
    return _sp.jv(m, x)


@njit(cache=True)
def _bessel_j_orders(mmax, x, j0, j1, out):
    """Fill ``out[m, k] = J_m(x[k])`` for ``0 <= m <= mmax``.

    Forward recurrence is used where ``x >= mmax`` (oscillatory regime, stable
    upward); otherwise a downward Miller recurrence normalized against the
    larger of ``J_0`` and ``J_1``.
    """
    for k in range(x.size):
        xk = x[k]
        out[0, k] = j0[k]
        if mmax >= 1:
            out[1, k] = j1[k]
        if xk == 0.0:
            for m in range(1, mmax + 1):
                out[m, k] = 0.0
            continue
        if xk >= mmax:
            for m in range(1, mmax):
                out[m + 1, k] = 2.0 * m / xk * out[m, k] - out[m - 1, k]
            continue
        top = mmax + 40
        vp = 0.0
        v = 1e-300
        scale = 1.0
        for m in range(top, 0, -1):
            vm = 2.0 * m / xk * v - vp
            vp = v
            v = vm
            if m - 1 <= mmax:
                out[m - 1, k] = v
            if abs(v) > 1e250:
                v *= 1e-250
                vp *= 1e-250
                for q in range(m - 1, min(mmax, top) + 1):
                    out[q, k] *= 1e-250
        if abs(j0[k]) >= abs(j1[k]):
            scale = j0[k] / out[0, k]
        else:
            scale = j1[k] / out[1, k]
        for m in range(mmax + 1):
            out[m, k] *= scale
        out[0, k] = j0[k]
        if mmax >= 1:
            out[1, k] = j1[k]


def bessel_j_orders(mmax, x):
    """``J_m(x)`` for all integer orders ``0..mmax``; shape ``(mmax+1,) + x.shape``."""
    x = np.asarray(x, dtype=float)
    flat = np.ascontiguousarray(x.ravel())
    out = np.empty((mmax + 1, flat.size))
    _bessel_j_orders(int(mmax), flat, _sp.j0(flat), _sp.j1(flat), out)
    return out.reshape((mmax + 1,) + x.shape)


# ---------------------------------------------------------------------------
# Wigner 3-j symbols and Gaunt coefficients
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def wigner_3j(j1, j2, j3, m1, m2, m3):
    """Wigner 3-j symbol for integer arguments (Racah formula, exact sums)."""
    if m1 + m2 + m3 != 0:
        return 0.0
    if j3 < abs(j1 - j2) or j3 > j1 + j2:
        return 0.0
    if abs(m1) > j1 or abs(m2) > j2 or abs(m3) > j3:
        return 0.0
    f = factorial
    tri = Fraction(f(j1 + j2 - j3) * f(j1 - j2 + j3) * f(-j1 + j2 + j3), f(j1 + j2 + j3 + 1))
    pref = tri * (f(j1 + m1) * f(j1 - m1) * f(j2 + m2) * f(j2 - m2) * f(j3 + m3) * f(j3 - m3))
    kmin = max(0, j2 - j3 - m1, j1 - j3 + m2)
    kmax = min(j1 + j2 - j3, j1 - m1, j2 + m2)
    total = 0
    for k in range(kmin, kmax + 1):
        den = (f(k) * f(j3 - j2 + k + m1) * f(j3 - j1 + k - m2) * f(j1 + j2 - j3 - k)
               * f(j1 - k - m1) * f(j2 - k + m2))
        total += Fraction((-1) ** k, den)
    if total == 0:
        return 0.0
    sign = -1.0 if (j1 - j2 - m3) % 2 else 1.0
    # sqrt(pref) * total, evaluated as sign(total) * sqrt(pref * total^2)
    mag = sqrt(pref * total * total)
    return sign * (mag if total > 0 else -mag)


@lru_cache(maxsize=None)
def gaunt(n, m, nu, mu, q):
    """Gaunt coefficient ``int Y_n^m Y_nu^mu conj(Y_q^{m+mu}) dOmega``.

    Returns an exact zero outside the selection rules (``|n-nu| <= q <= n+nu``
    with ``n+nu+q`` even and ``|m+mu| <= q``).
    """
    if abs(m) > n or abs(mu) > nu or q < 0:
        raise ValueError("need |m| <= n, |mu| <= nu and q >= 0")
    M = m + mu
    if q < abs(n - nu) or q > n + nu or (n + nu + q) % 2 or abs(M) > q:
        return 0.0
    w0 = wigner_3j(n, nu, q, 0, 0, 0)
    wm = wigner_3j(n, nu, q, m, mu, -M)
    sign = -1.0 if M % 2 else 1.0
    return sign * sqrt((2 * n + 1) * (2 * nu + 1) * (2 * q + 1) / (4.0 * pi)) * w0 * wm
