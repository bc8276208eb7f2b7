"""Sommerfeld-type spectral integrals and their recurrence-built tables.

For a reaction component the spectral factor shared by every expansion
operator is ``f(u) = Z(z, z') sigma(u) / lz`` with ``u = lambda_rho``,
``lz = sqrt(lam_l^2 + u^2)`` and

* ``Z = exp(-lz (z - d_l) - lz' (d_l - z'))`` for ``a = 1`` (target above the
  interface, polarized source below it),
* ``Z = exp(-lz (d_{l-1} - z) - lz' (z' - d_{l-1}))`` for ``a = 2``.

A table holds the scaled integrals

    V[n, m, i, j] = S^n / sqrt((n+m)! (n-m)!) *
                    int_0^inf u^n J_m(u rho) f(u) (lam/lz)^i (lam'/lz')^j du

for ``0 <= m <= n <= nmax``.  Only a few rows come from quadrature; the rest
follow from the three-term Bessel recurrence run forward in ``m`` where it is
stable and backward in ``n`` elsewhere.

Products of two normalized Legendre functions at the spectral arguments
``lz/lam >= 1`` are polynomials in ``u`` (up to the ``(lam/lz)^i`` factors),
which is what reduces every reaction operator to table lookups; see
:func:`legendre_product`.
"""
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import comb, factorial, lgamma, log, pi, sqrt

import numpy as np
from numba import njit
from scipy import special as _sp

from .errors import (DivergentIntegral, StabilityViolation, TableUnderflow,
                     ToleranceNotMet)
from .special import bessel_j_orders

GL_NODES = 16


@lru_cache(maxsize=8)
def _gauss_legendre(k):
    x, w = np.polynomial.legendre.leggauss(k)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True)
class SpectralKernel:
    """Spectral factor of one reaction component ``(l, lp, a, b)``."""

    medium: object
    l: int
    lp: int
    a: int
    b: int

    def __post_init__(self):
        self.medium.check_component(self.l, self.lp, self.a, self.b)

    @property
    def interface(self):
        """Height of the interface separating targets and polarized sources."""
        return self.medium.bottom(self.l) if self.a == 1 else self.medium.top(self.l)

    def offsets(self, z, zp):
        """Vertical distances ``(t1, t2)`` of target and polarized source.

        ``Z = exp(-lz t1 - lz' t2)``; both must be nonnegative with a
        positive sum for the spectral integral to converge.
        """
        d = self.interface
        if self.a == 1:
            t1, t2 = np.subtract(z, d), np.subtract(d, zp)
        else:
            t1, t2 = np.subtract(d, z), np.subtract(zp, d)
        return t1, t2

    def check_offsets(self, t1, t2):
        t1 = np.asarray(t1)
        t2 = np.asarray(t2)
        if np.any(t1 < 0) or np.any(t2 < 0) or np.any(t1 + t2 <= 0):
            raise DivergentIntegral("spectral integrand has no exponential decay")

    def density(self, u):
        return self.medium.density(self.l, self.lp, self.a, self.b, u)

    def factors(self, u, t1, t2):
        """Return ``f(u)`` times the four ``(lam/lz)^i (lam'/lz')^j`` weights.

        ``t1`` and ``t2`` may be arrays of length ``G``; the result has shape
        ``(G, 2, 2, K)`` for ``K`` nodes (or ``(2, 2, K)`` for scalars).
        """
        lam = self.medium.lam[self.l]
        lamp = self.medium.lam[self.lp]
        lz = np.sqrt(lam * lam + u * u)
        lzp = np.sqrt(lamp * lamp + u * u)
        base = self.density(u) / lz
        t1 = np.asarray(t1, dtype=float)
        t2 = np.asarray(t2, dtype=float)
        z = np.exp(-np.multiply.outer(t1, lz) - np.multiply.outer(t2, lzp)) * base
        ri = lam / lz
        rj = lamp / lzp
        w = np.stack([np.stack([np.ones_like(u), rj]), np.stack([ri, ri * rj])])
        return z[..., None, None, :] * w


def choose_xmax(delta, tol=1e-14, order=0):
    """Truncation point of a spectral integral with decay rate ``delta``.

    The tail of ``u^order exp(-delta u)`` is dropped once the envelope has
    fallen below ``tol`` relative to its peak.

    Parameters
    ----------
    delta : float
        Total vertical decay distance, must be positive.
    tol : float
        Relative envelope tolerance.
    order : int
        Degree of the polynomial growth factor.
    """
    if not delta > 0:
        raise DivergentIntegral("decay exponent must be positive")
    target = log(tol)
    if order == 0:
        return -target / delta
    # solve order*(ln t - t + 1) = ln tol for t > 1 with u = t*order/delta
    t = 1.0 - target / order
    for _ in range(50):
        g = order * (log(t) - t + 1.0) - target
        dg = order * (1.0 / t - 1.0)
        step = g / dg
        t -= step
        if abs(step) < 1e-12 * t:
            break
    return t * order / delta


def entries_xmax(delta, rho, entries, tol=1e-14, samples=400):
    """Truncation point for a set of table entries.

    Entry ``(n, m)`` has the envelope ``u^n min(1, (u rho/2)^m/m!) exp(-delta u)``
    (``|J_m(x)| <= (x/2)^m/m!``); for small ``rho`` it grows like ``u^(n+m)``
    before the decay takes over.  Returns the largest point beyond which
    every envelope stays below ``tol`` times its own peak.
    """
    nm = np.asarray(entries, dtype=float).reshape(-1, 2)
    n, m = nm[:, 0], nm[:, 1]
    if rho <= 0.0:
        n, m = n[m == 0], m[m == 0]
        if n.size == 0:
            return choose_xmax(delta, tol, 0)
    top = choose_xmax(delta, tol, int((n + m).max()))
    u = top * np.arange(1, samples + 1) / samples
    logj = np.minimum(0.0, m[:, None] * np.log(np.maximum(u * rho, 1e-300) / 2.0)
                      - _sp.gammaln(m + 1.0)[:, None]) if rho > 0 else 0.0
    env = n[:, None] * np.log(u) + logj - delta * u
    above = env >= env.max(axis=1, keepdims=True) + log(tol)
    last = samples - 1 - np.argmax(above[:, ::-1], axis=1)
    return float(u[min(samples - 1, int(last.max()) + 1)])


def _panel_grid(xmax, rho, delta, refine, nodes=GL_NODES, near=1.0):
    """Composite Gauss-Legendre nodes on ``[0, xmax]``.

    Panels resolve the Bessel oscillation (length at most ``pi/rho``) and are
    at most ``near`` long close to the origin where the densities vary; far
    out they stretch to the exponential decay scale.
    """
    osc = pi / (rho + 1e-300)
    h0 = min(osc, near) / refine
    h1 = min(osc, max(near, 2.0 / delta)) / refine
    u0 = min(xmax, 20.0 * near)
    n0 = max(1, int(np.ceil(u0 / h0)))
    edges = [np.linspace(0.0, u0, n0 + 1)]
    if xmax > u0:
        n1 = max(1, int(np.ceil((xmax - u0) / h1)))
        edges.append(np.linspace(u0, xmax, n1 + 1)[1:])
    e = np.concatenate(edges)
    x, w = _gauss_legendre(nodes)
    a = e[:-1, None]
    h = np.diff(e)[:, None]
    return (a + h * x).ravel(), (h * w).ravel()


def _log_norm(n, m):
    return 0.5 * (lgamma(n + m + 1) + lgamma(n - m + 1))


def _bessel_rows(entries, u, rho):
    mmax = max(m for _, m in entries)
    x = u * rho
    if mmax <= 1:
        return {0: _sp.j0(x), 1: _sp.j1(x)}
    return bessel_j_orders(mmax, x)


@njit(cache=True)
def _entry_sums(ns, ms, inv_norm, us, w, jm, ff):
    """Fused ``sum_k (u S)^n J_m(u rho) w f_ij`` and its absolute counterpart."""
    E = ns.size
    K = us.size
    nmax = 0
    for e in range(E):
        nmax = max(nmax, ns[e])
    pw = np.empty(nmax + 1)
    vals = np.zeros((E, 4))
    l1 = np.zeros((E, 4))
    for k in range(K):
        pw[0] = w[k]
        for n in range(1, nmax + 1):
            pw[n] = pw[n - 1] * us[k]
        f0, f1, f2, f3 = ff[k, 0], ff[k, 1], ff[k, 2], ff[k, 3]
        for e in range(E):
            r = pw[ns[e]] * inv_norm[e] * jm[ms[e], k]
            ar = abs(r)
            vals[e, 0] += r * f0
            vals[e, 1] += r * f1
            vals[e, 2] += r * f2
            vals[e, 3] += r * f3
            l1[e, 0] += ar * abs(f0)
            l1[e, 1] += ar * abs(f1)
            l1[e, 2] += ar * abs(f2)
            l1[e, 3] += ar * abs(f3)
    return vals, l1


def _quad_entries(kernel, entries, rho, t1, t2, S, u, w):
    """Raw quadrature of table entries on a given grid.

    Returns ``(values, l1)``, both shaped ``(E, 2, 2)``; ``l1`` is the
    integral of the absolute integrand and sets the error scale.
    """
    f = kernel.factors(u, t1, t2)  # (2, 2, K)
    jm = _bessel_rows(entries, u, rho)
    mmax = max(m for _, m in entries)
    jmat = np.empty((mmax + 1, u.size))
    for m in range(mmax + 1):
        jmat[m] = jm[m]
    ns = np.array([n for n, _ in entries], dtype=np.int64)
    ms = np.array([m for _, m in entries], dtype=np.int64)
    inv_norm = np.exp([-_log_norm(n, m) for n, m in entries])
    ff = np.ascontiguousarray(f.reshape(4, -1).T)
    vals, l1 = _entry_sums(ns, ms, inv_norm, u * S, w, jmat, ff)
    return vals.reshape(-1, 2, 2), l1.reshape(-1, 2, 2)


def quad_entries(kernel, entries, rho, z, zp, S, tol=1e-13, xmax=None,
                 nodes=GL_NODES, max_refine=6, return_l1=False):
    """Adaptive composite Gauss-Legendre quadrature of table entries.

    Parameters
    ----------
    kernel : SpectralKernel
    entries : list of (n, m)
        Table entries to integrate, ``0 <= m <= n``.
    rho : float
        In-plane distance.
    z, zp : float
        Target height and polarized source height.
    S : float
        Scale factor.
    tol : float
        Accepted change between successive panel halvings, relative to the
        integral of the absolute integrand.

    Returns
    -------
    ndarray of shape ``(len(entries), 2, 2)``
    """
    t1, t2 = kernel.offsets(z, zp)
    kernel.check_offsets(t1, t2)
    delta = float(t1 + t2)
    if xmax is None:
        xmax = entries_xmax(delta, rho, entries, min(tol, 1e-14))
    if kernel.medium.is_homogeneous() and kernel.l == kernel.lp:
        zero = np.zeros((len(entries), 2, 2))
        return (zero, zero.copy()) if return_l1 else zero
    u, w = _panel_grid(xmax, rho, delta, 1, nodes)
    prev, _ = _quad_entries(kernel, entries, rho, t1, t2, S, u, w)
    for level in range(1, max_refine + 1):
        u, w = _panel_grid(xmax, rho, delta, 2 ** level, nodes)
        cur, l1 = _quad_entries(kernel, entries, rho, t1, t2, S, u, w)
        if np.all(np.abs(cur - prev) <= tol * np.maximum(l1, 1e-300)):
            return (cur, l1) if return_l1 else cur
        prev = cur
    raise ToleranceNotMet("panel refinement cap reached")


def quad_S(n, m, i, j, kernel, rho, z, zp, S, tol=1e-13, **kw):
    """Single scaled table entry ``S^n S_{n m, i j}`` by direct quadrature."""
    if m > n or m < 0:
        raise ValueError("need 0 <= m <= n")
    if rho == 0.0 and m > 0:
        return 0.0
    return float(quad_entries(kernel, [(n, m)], rho, z, zp, S, tol, **kw)[0, i, j])


# ---------------------------------------------------------------------------
# Tables and recurrences
# ---------------------------------------------------------------------------


def _a(n):
    return sqrt(n * (n + 1.0))


def forward_stable(n, m, rho_over_s):
    """True if the forward step producing entry ``(n, m+1)`` is stable.

    The step multiplies the previous column by ``2m/(a_{n+m} S_rho)``; it is
    stable when that factor is below one.
    """
    return 2.0 * m < _a(n + m) * rho_over_s


def recurrence_regions(nmax, rho_over_s):
    """Split the table into forward- and backward-filled entries.

    Returns boolean arrays ``(fwd, bwd)`` of shape ``(nmax+1, nmax+1)``.
    Forward entries have ``m >= 2`` and are reachable through stable forward
    steps from the initial columns ``m = 0, 1``; every other entry with
    ``m >= 2`` below the top row is backward filled.
    """
    fwd = np.zeros((nmax + 1, nmax + 1), dtype=bool)
    known = np.zeros_like(fwd)
    known[:, 0] = True
    known[1:, 1] = True
    for mt in range(2, nmax + 1):
        for n in range(mt, nmax + 1):
            if (forward_stable(n, mt - 1, rho_over_s) and known[n - 1, mt - 1]
                    and known[n, mt - 2]):
                fwd[n, mt] = True
                known[n, mt] = True
    valid = np.tril(np.ones_like(fwd))
    bwd = valid & ~known
    bwd[nmax, :] = False
    return fwd, bwd


def fill_forward(values, rho_over_s, region):
    """Forward recurrence in ``m`` over the entries flagged in ``region``.

    ``values`` has shape ``(nmax+1, nmax+1, ...)`` and must hold the columns
    ``m = 0`` and ``m = 1``.  Raises :class:`StabilityViolation` if a flagged
    entry lies outside the stable region.
    """
    nmax = values.shape[0] - 1
    for mt in range(2, nmax + 1):
        m = mt - 1
        for n in range(mt, nmax + 1):
            if not region[n, mt]:
                continue
            if not forward_stable(n, m, rho_over_s):
                raise StabilityViolation(f"forward step to ({n},{mt}) is unstable")
            c1 = 2.0 * m / (_a(n + m) * rho_over_s)
            c2 = _a(n - m) / _a(n + m)
            values[n, mt] = c1 * values[n - 1, m] - c2 * values[n, m - 1]
    return values


def fill_backward(values, rho_over_s, region):
    """Backward recurrence in ``n`` for the entries flagged in ``region``.

    Uses ``V[n-1, m] = (S_rho/(2m)) (a_{n+m} V[n, m+1] + a_{n-m} V[n, m-1])``,
    which only multiplies by ``S_rho``.  Needs the top row and the ``m = 0``
    column (plus any forward entries) to be present.
    """
    nmax = values.shape[0] - 1
    for n in range(nmax, 0, -1):
        for m in range(1, n):
            if region[n - 1, m]:
                values[n - 1, m] = (rho_over_s / (2.0 * m)) * (
                    _a(n + m) * values[n, m + 1] + _a(n - m) * values[n, m - 1])
    return values


@dataclass
class SommerfeldTable:
    """Scaled spectral integrals for one geometry.

    Attributes
    ----------
    S : float
        Scale factor.
    rho, z, zp : float
        In-plane distance, target height and polarized source height.
    values : ndarray
        Shape ``(nmax+1, nmax+1, 2, 2)`` indexed ``[n, m, i, j]``.
    """

    S: float
    rho: float
    z: float
    zp: float
    values: np.ndarray

    @property
    def nmax(self):
        return self.values.shape[0] - 1

    def entry(self, n, m, i, j):
        """``S^n S_{n m, i j}`` for any sign of ``m``."""
        if n > self.nmax or abs(m) > n:
            raise TableUnderflow(f"entry ({n},{m}) outside table of order {self.nmax}")
        v = self.values[n, abs(m), i, j]
        return -v if (m < 0 and m % 2) else v


@njit(cache=True)
def _fill_best(v, err, quad, sr):
    """Fill every non-quadrature entry with the more accurate recurrence.

    ``v`` and ``err`` have shape ``(nmax+1, nmax+1, K)``; ``err`` carries a
    running bound on the rounding error.  Forward candidates exist only where
    the forward step is stable; the backward sweep then replaces an entry
    whenever its own error bound, relative to the value, is smaller.
    """
    nmax = v.shape[0] - 1
    K = v.shape[2]
    eps = 2.3e-16
    have = quad.copy()
    for mt in range(2, nmax + 1):
        m = mt - 1
        for n in range(mt, nmax + 1):
            if quad[n, mt] or not (have[n - 1, m] and have[n, m - 1]):
                continue
            anm = np.sqrt((n + m) * (n + m + 1.0))
            if not 2.0 * m < anm * sr:
                continue
            c1 = 2.0 * m / (anm * sr)
            c2 = np.sqrt((n - m) * (n - m + 1.0)) / anm
            for k in range(K):
                x1 = c1 * v[n - 1, m, k]
                x2 = c2 * v[n, m - 1, k]
                v[n, mt, k] = x1 - x2
                err[n, mt, k] = (c1 * err[n - 1, m, k] + c2 * err[n, m - 1, k]
                                 + eps * (abs(x1) + abs(x2)))
            have[n, mt] = True
    for n in range(nmax, 0, -1):
        for m in range(2, n):
            if quad[n - 1, m]:
                continue
            f = sr / (2.0 * m)
            ap = np.sqrt((n + m) * (n + m + 1.0))
            am = np.sqrt((n - m) * (n - m + 1.0))
            for k in range(K):
                x1 = f * ap * v[n, m + 1, k]
                x2 = f * am * v[n, m - 1, k]
                cand = x1 + x2
                e = f * (ap * err[n, m + 1, k] + am * err[n, m - 1, k]) + eps * (abs(x1) + abs(x2))
                if (not have[n - 1, m]) or e * abs(v[n - 1, m, k]) < err[n - 1, m, k] * abs(cand):
                    v[n - 1, m, k] = cand
                    err[n - 1, m, k] = e
            have[n - 1, m] = True


def build_table(kernel, rho, z, zp, S, nmax, tol=1e-13, method="best", xmax=None):
    """Build a :class:`SommerfeldTable` of order ``nmax``.

    Quadrature supplies the columns ``m = 0, 1`` and the top row
    ``n = nmax``.  With ``method="best"`` each remaining entry takes the
    forward (in ``m``) or backward (in ``n``) recurrence value with the
    smaller running error bound, which keeps tiny high-order entries
    accurate to full relative precision.  ``method="regions"`` uses the forward
    recurrence on its whole stable region and the backward recurrence only
    on the complement (the top row is then integrated only if needed).
    At ``rho = 0`` only the ``m = 0`` column is nonzero.  ``xmax`` overrides
    the automatic truncation of the spectral integrals.
    """
    values = np.zeros((nmax + 1, nmax + 1, 2, 2))
    if rho <= 0.0:
        entries = [(n, 0) for n in range(nmax + 1)]
        q = quad_entries(kernel, entries, 0.0, z, zp, S, tol, xmax)
        values[:, 0] = q
        return SommerfeldTable(S, 0.0, z, zp, values)
    sr = rho / S
    entries = [(n, 0) for n in range(nmax + 1)] + [(n, 1) for n in range(1, nmax + 1)]
    if method == "regions":
        fwd, bwd = recurrence_regions(nmax, sr)
        need_top = bool(bwd.any())
        if need_top:
            entries += [(nmax, m) for m in range(2, nmax + 1)]
        q = quad_entries(kernel, entries, rho, z, zp, S, tol, xmax)
        for (n, m), v in zip(entries, q):
            values[n, m] = v
        fill_forward(values, sr, fwd)
        if need_top:
            fill_backward(values, sr, bwd)
        return SommerfeldTable(S, rho, z, zp, values)
    if method != "best":
        raise ValueError("method must be 'best' or 'regions'")
    entries += [(nmax, m) for m in range(2, nmax + 1)]
    q = quad_entries(kernel, entries, rho, z, zp, S, tol, xmax)
    quad = np.zeros((nmax + 1, nmax + 1), dtype=np.bool_)
    for (n, m), v in zip(entries, q):
        values[n, m] = v
        quad[n, m] = True
    flat = values.reshape(nmax + 1, nmax + 1, 4)
    err = np.where(quad[:, :, None], 1e-15 * np.abs(flat), 0.0)
    _fill_best(flat, err, quad, sr)
    return SommerfeldTable(S, rho, z, zp, flat.reshape(values.shape))


# ---------------------------------------------------------------------------
# Legendre products
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _poly_coeffs(n, am):
    """Exact coefficients ``b^t`` of ``P_n^{(am)}(x) x^i`` in powers of ``x^2 - 1``.

    ``P_n^{(am)}(x) = x^{-i} sum_t b^t (x^2 - 1)^t`` with ``i = (n+am) mod 2``.
    """
    r = (n + am) // 2
    i = (n + am) % 2
    jmin = r + i
    out = []
    for t in range(n - r + 1):
        acc = Fraction(0)
        for j in range(max(jmin, r + t), n + 1):
            a = Fraction((-1) ** (n - j) * factorial(2 * j),
                         2 ** n * factorial(j) * factorial(n - j) * factorial(2 * j - n - am))
            acc += a * comb(j - r, t)
        out.append(acc)
    return tuple(out)


def _c_nm(n, am):
    return sqrt((2 * n + 1) / (4 * pi) * factorial(n - am) / factorial(n + am))


def legendre_poly(n, m, lam):
    """Coefficients of ``Phat_n^m(lz/lam)`` as a polynomial in ``u``.

    Returns ``(i, powers, coeffs)`` with
    ``Phat_n^m(lz/lam) = (lam/lz)^i * sum_k coeffs[k] * u^powers[k]``.
    """
    am = abs(m)
    i = (n + am) % 2
    b = _poly_coeffs(n, am)
    sign = -1.0 if am % 2 else 1.0
    if m < 0 and am % 2:
        sign = -sign
    c = _c_nm(n, am)
    powers = np.array([am + 2 * t for t in range(len(b))])
    coeffs = np.array([sign * c * float(bt) * lam ** (-(am + 2 * t)) for t, bt in enumerate(b)])
    return i, powers, coeffs


@dataclass(frozen=True)
class LegendreProductCoeffs:
    """``Phat_n^m(lz/lam) Phat_nu^mu(lz'/lam')`` as a polynomial in ``u``.

    The product equals ``(lam/lz)^i (lam'/lz')^j sum_s C[s] u^{|m|+|mu|+2s}``.
    ``Ct[s] = sqrt((N+M)! (N-M)!) C[s]`` with ``N = |m|+|mu|+2s+1`` and
    ``M = mu - m`` converts table entries into ``I`` integrals.
    """

    n: int
    m: int
    nu: int
    mu: int
    i: int
    j: int
    r: int
    rp: int
    C: np.ndarray
    Ct: np.ndarray

    def orders(self):
        base = abs(self.m) + abs(self.mu) + 1
        return base + 2 * np.arange(self.C.size)


def legendre_product(n, m, nu, mu, lam, lamp):
    """Polynomial coefficients of a product of two spectral Legendre functions."""
    i, pw1, c1 = legendre_poly(n, m, lam)
    j, pw2, c2 = legendre_poly(nu, mu, lamp)
    C = np.convolve(c1, c2)
    M = mu - m
    N = abs(m) + abs(mu) + 2 * np.arange(C.size) + 1
    fac = np.array([np.exp(0.5 * (lgamma(k + M + 1) + lgamma(k - M + 1))) for k in N])
    return LegendreProductCoeffs(n, m, nu, mu, i, j, (n + abs(m)) // 2, (nu + abs(mu)) // 2,
                                 C, C * fac)


def assemble_I(n, m, nu, mu, table, coeffs=None, lam=None, lamp=None):
    """Spectral integral ``I_{nm,nu mu}`` from a table.

    ``I = int u J_{mu-m}(u rho) f(u) Phat_n^m(lz/lam) Phat_nu^mu(lz'/lam') du``,
    a real number (all azimuthal phases are left to the caller).
    """
    if coeffs is None:
        coeffs = legendre_product(n, m, nu, mu, lam, lamp)
    M = mu - m
    total = 0.0
    for s, ct in enumerate(coeffs.Ct):
        N = abs(m) + abs(mu) + 2 * s + 1
        total += ct * table.entry(N, M, coeffs.i, coeffs.j) / table.S ** N
    return total


class ProductTerms:
    """All Legendre-product terms needed by an order-``p`` translation.

    Flattened over row ``(n, m)`` with ``n <= p_row`` and column ``(nu, mu)``
    with ``nu <= p_col``, so that a whole translation matrix is one
    weighted gather from a table.
    """

    def __init__(self, p_row, p_col, lam, lamp):
        rows, cols, Ns, Ms, iis, jjs, cts, nr, nc = [], [], [], [], [], [], [], [], []
        polys_r = {(n, m): legendre_poly(n, m, lam)
                   for n in range(p_row + 1) for m in range(-n, n + 1)}
        polys_c = {(n, m): legendre_poly(n, m, lamp)
                   for n in range(p_col + 1) for m in range(-n, n + 1)}
        for (n, m), (i, _, c1) in polys_r.items():
            for (nu, mu), (j, _, c2) in polys_c.items():
                C = np.convolve(c1, c2)
                M = mu - m
                base = abs(m) + abs(mu) + 1
                for s, cs in enumerate(C):
                    N = base + 2 * s
                    lf = 0.5 * (lgamma(N + M + 1) + lgamma(N - M + 1))
                    sgn = -1.0 if (M < 0 and M % 2) else 1.0
                    rows.append(n * n + n + m)
                    cols.append(nu * nu + nu + mu)
                    Ns.append(N)
                    Ms.append(abs(M))
                    iis.append(i)
                    jjs.append(j)
                    cts.append(sgn * cs * np.exp(lf))
                    nr.append(n)
                    nc.append(nu)
        self.p_row = p_row
        self.p_col = p_col
        self.nrow = (p_row + 1) ** 2
        self.ncol = (p_col + 1) ** 2
        self.row = np.array(rows, dtype=np.int64)
        self.col = np.array(cols, dtype=np.int64)
        self.N = np.array(Ns, dtype=np.int64)
        self.M = np.array(Ms, dtype=np.int64)
        self.i = np.array(iis, dtype=np.int64)
        self.j = np.array(jjs, dtype=np.int64)
        self.ct = np.array(cts)
        self.n_row = np.array(nr, dtype=np.int64)
        self.n_col = np.array(nc, dtype=np.int64)
        self.flat = self.row * self.ncol + self.col
        self.max_order = int(self.N.max())

    def assemble(self, table, s_row=1.0, s_col=1.0):
        """Matrix ``s_row^n s_col^nu I_{nm,nu mu}`` from a table."""
        S = table.S
        if table.nmax < self.max_order:
            raise TableUnderflow("table order too small for these products")
        v = table.values[self.N, self.M, self.i, self.j]
        w = self.ct * v * np.exp(self.n_row * np.log(s_row / S) + self.n_col * np.log(s_col / S)
                                 + (self.n_row + self.n_col - self.N) * np.log(S))
        out = np.bincount(self.flat, weights=w, minlength=self.nrow * self.ncol)
        return out.reshape(self.nrow, self.ncol)
