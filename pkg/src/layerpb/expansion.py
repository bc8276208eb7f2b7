"""Free-space Yukawa multipole and local expansions.

The internal kernel is ``k_0(lam |r - r'|)`` with ``k_0(x) = (pi/2) exp(-x)/x``.
Expansions about a center ``c`` read

    multipole:  sum_nm M_nm k_n(lam |r - c|) Y_n^m(r - c),
                M_nm = 4 pi sum_j Q_j i_n(lam |r_j - c|) conj(Y_n^m(r_j - c))
    local:      sum_nm L_nm i_n(lam |r - c|) Y_n^m(r - c),
                L_nm = 4 pi sum_j Q_j k_n(lam |r_j - c|) conj(Y_n^m(r_j - c))

and the stored coefficients are scaled by the box size ``S``:
``Mhat = M / S^n`` and ``Lhat = L S^n``.  All translations go through two
matrices built from Gaunt coefficients,

    Shat[nm, nu mu](b) = 4 pi sum_q (-1)^(nu-n+m+q) i_q(lam b) conj(Y_q^(mu-m)(b)) G(n,m; nu,-mu; q)
    S[nm, nu mu](b)    = 4 pi sum_q (-1)^(nu+m)     k_q(lam b) conj(Y_q^(mu-m)(b)) G(n,m; nu,-mu; q)

so that ``i_n Y_n^m(r + b) = sum Shat[nm, nu mu] i_nu Y_nu^mu(r)`` for all
``r`` and ``k_n Y_n^m(r + b) = sum S[nm, nu mu] i_nu Y_nu^mu(r)`` for
``|r| < |b|``.
"""
from dataclasses import dataclass
from functools import lru_cache
from math import pi

import numpy as np
from numba import njit

from .special import (legendre_table, mod_bessel_i_all, mod_bessel_k_all, ncoef,
                      sph_harm_table, sph_i_into, sph_k_into, ylm_into)

FOUR_PI = 4.0 * pi


def physical_factor(lam, eps):
    """Factor turning ``k_0(lam r)`` into ``exp(-lam r)/(4 pi eps r)``."""
    return lam / (2.0 * pi * pi * eps)


def degrees(p):
    """Degree ``n`` of every packed coefficient up to order ``p``."""
    return np.repeat(np.arange(p + 1), 2 * np.arange(p + 1) + 1)


@dataclass
class Expansion:
    """Truncated multipole or local expansion with scaled coefficients.

    Attributes
    ----------
    kind : {"multipole", "local"}
    center : ndarray of shape (3,)
    S : float
        Scale (box size) used for the stored coefficients.
    lam : float
        Screening parameter of the kernel.
    p : int
        Truncation degree.
    coeffs : ndarray of complex, shape ``((p+1)**2,)``
        ``M_nm / S^n`` or ``L_nm S^n`` in ``n*n + n + m`` order.
    """

    kind: str
    center: np.ndarray
    S: float
    lam: float
    p: int
    coeffs: np.ndarray

    def __post_init__(self):
        if self.kind not in ("multipole", "local"):
            raise ValueError("kind must be 'multipole' or 'local'")
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != (ncoef(self.p),):
            raise ValueError("coefficient array does not match the order")

    def raw(self):
        """Unscaled coefficients ``M_nm`` or ``L_nm``."""
        n = degrees(self.p)
        if self.kind == "multipole":
            return self.coeffs * self.S ** n
        return self.coeffs / self.S ** n


# ---------------------------------------------------------------------------
# Particle kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def p2m_into(p, lam, cx, cy, cz, S, x, y, z, q, out):
    """Accumulate the scaled multipole coefficients of point charges."""
    nb = p + 1
    ib = np.empty(nb)
    plm = np.empty(nb * (nb + 1) // 2)
    yv = np.empty(nb * nb, dtype=np.complex128)
    invs = 1.0 / S
    for k in range(x.size):
        dx = x[k] - cx
        dy = y[k] - cy
        dz = z[k] - cz
        rh = np.hypot(dx, dy)
        r = np.hypot(rh, dz)
        if r > 0.0:
            ct = dz / r
            st = rh / r
        else:
            ct = 1.0
            st = 0.0
        sph_i_into(p, lam * r, ib)
        ylm_into(p, ct, st, np.arctan2(dy, dx), plm, yv)
        w = FOUR_PI * q[k]
        for n in range(nb):
            wn = w * ib[n]
            for m in range(-n, n + 1):
                j = n * n + n + m
                out[j] += wn * yv[j].conjugate()
            w *= invs


@njit(cache=True)
def p2l_into(p, lam, cx, cy, cz, S, x, y, z, q, out):
    """Accumulate the scaled local coefficients of point charges."""
    nb = p + 1
    kb = np.empty(nb)
    plm = np.empty(nb * (nb + 1) // 2)
    yv = np.empty(nb * nb, dtype=np.complex128)
    for k in range(x.size):
        dx = x[k] - cx
        dy = y[k] - cy
        dz = z[k] - cz
        rh = np.hypot(dx, dy)
        r = np.hypot(rh, dz)
        sph_k_into(p, lam * r, kb)
        ylm_into(p, dz / r, rh / r, np.arctan2(dy, dx), plm, yv)
        w = FOUR_PI * q[k]
        for n in range(nb):
            wn = w * kb[n]
            for m in range(-n, n + 1):
                j = n * n + n + m
                out[j] += wn * yv[j].conjugate()
            w *= S


@njit(cache=True)
def eval_m_into(p, lam, cx, cy, cz, S, coeffs, x, y, z, out):
    """Add the multipole field at each point to ``out``."""
    nb = p + 1
    kb = np.empty(nb)
    plm = np.empty(nb * (nb + 1) // 2)
    yv = np.empty(nb * nb, dtype=np.complex128)
    for k in range(x.size):
        dx = x[k] - cx
        dy = y[k] - cy
        dz = z[k] - cz
        rh = np.hypot(dx, dy)
        r = np.hypot(rh, dz)
        sph_k_into(p, lam * r, kb)
        ylm_into(p, dz / r, rh / r, np.arctan2(dy, dx), plm, yv)
        acc = 0.0
        s = 1.0
        for n in range(nb):
            part = 0.0
            for m in range(-n, n + 1):
                j = n * n + n + m
                part += (coeffs[j] * yv[j]).real
            acc += part * kb[n] * s
            s *= S
        out[k] += acc


@njit(cache=True)
def eval_l_into(p, lam, cx, cy, cz, S, coeffs, x, y, z, out):
    """Add the local-expansion field at each point to ``out``."""
    nb = p + 1
    ib = np.empty(nb)
    plm = np.empty(nb * (nb + 1) // 2)
    yv = np.empty(nb * nb, dtype=np.complex128)
    invs = 1.0 / S
    for k in range(x.size):
        dx = x[k] - cx
        dy = y[k] - cy
        dz = z[k] - cz
        rh = np.hypot(dx, dy)
        r = np.hypot(rh, dz)
        if r > 0.0:
            ct = dz / r
            st = rh / r
        else:
            ct = 1.0
            st = 0.0
        sph_i_into(p, lam * r, ib)
        ylm_into(p, ct, st, np.arctan2(dy, dx), plm, yv)
        acc = 0.0
        s = 1.0
        for n in range(nb):
            part = 0.0
            for m in range(-n, n + 1):
                j = n * n + n + m
                part += (coeffs[j] * yv[j]).real
            acc += part * ib[n] * s
            s *= invs
        out[k] += acc


def _split(points):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return (np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1]),
            np.ascontiguousarray(pts[:, 2]))


def p2m(charges, positions, center, S, lam, p):
    """Multipole expansion of point charges about ``center``.

    Parameters
    ----------
    charges : array_like of shape (N,)
    positions : array_like of shape (N, 3)
    center : array_like of shape (3,)
    S : float
        Scale of the stored coefficients (box size).
    lam : float
        Screening parameter.
    p : int
        Truncation degree.
    """
    c = np.asarray(center, dtype=float)
    out = np.zeros(ncoef(p), dtype=complex)
    x, y, z = _split(positions)
    p2m_into(p, lam, c[0], c[1], c[2], S, x, y, z,
             np.ascontiguousarray(charges, dtype=float), out)
    return Expansion("multipole", c, S, lam, p, out)


def p2l(charges, positions, center, S, lam, p):
    """Local expansion about ``center`` of charges lying outside its ball."""
    c = np.asarray(center, dtype=float)
    out = np.zeros(ncoef(p), dtype=complex)
    x, y, z = _split(positions)
    p2l_into(p, lam, c[0], c[1], c[2], S, x, y, z,
             np.ascontiguousarray(charges, dtype=float), out)
    return Expansion("local", c, S, lam, p, out)


def eval_multipole(exp, r):
    """Evaluate a multipole expansion at one point or an ``(K, 3)`` array."""
    single = np.ndim(r) == 1
    x, y, z = _split(r)
    out = np.zeros(x.size)
    c = exp.center
    eval_m_into(exp.p, exp.lam, c[0], c[1], c[2], exp.S, exp.coeffs, x, y, z, out)
    return out[0] if single else out


def eval_local(exp, r):
    """Evaluate a local expansion at one point or an ``(K, 3)`` array."""
    single = np.ndim(r) == 1
    x, y, z = _split(r)
    out = np.zeros(x.size)
    c = exp.center
    eval_l_into(exp.p, exp.lam, c[0], c[1], c[2], exp.S, exp.coeffs, x, y, z, out)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Translation matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GauntPlan:
    """Nonzero terms of the translation sums for rows ``n <= p_row`` and
    columns ``nu <= p_col``.

    Each term contributes ``coef * f_q(lam b) * conj(Y_q^(mu-m)(b))`` to entry
    ``(row, col)``; ``sign_hat`` and ``sign_sing`` hold the two sign patterns.
    """

    p_row: int
    p_col: int
    flat: np.ndarray
    q: np.ndarray
    yidx: np.ndarray
    coef: np.ndarray
    sign_hat: np.ndarray
    sign_sing: np.ndarray
    n_row: np.ndarray
    n_col: np.ndarray


@njit(cache=True)
def _plan_terms(p_row, p_col, plm, w):
    """Enumerate the nonzero translation terms.

    The Gaunt coefficient ``G(n,m; nu,-mu; q)`` reduces to
    ``2 pi int Phat_n^m Phat_nu^-mu Phat_q^(m-mu) dx`` because the azimuthal
    integral is a Kronecker delta; the remaining polynomial integrand is
    integrated exactly by the Gauss-Legendre rule ``w`` on the nodes of
    ``plm`` (shape ``(K, packed m >= 0)``).
    """
    ncol = (p_col + 1) ** 2
    cap = (p_row + 1) ** 2 * ncol * (min(p_row, p_col) + 1)
    flat = np.empty(cap, dtype=np.int64)
    qs = np.empty(cap, dtype=np.int64)
    yidx = np.empty(cap, dtype=np.int64)
    coef = np.empty(cap)
    sh = np.empty(cap)
    ss = np.empty(cap)
    nr = np.empty(cap, dtype=np.int64)
    nc = np.empty(cap, dtype=np.int64)
    K = w.size
    cnt = 0
    for n in range(p_row + 1):
        for m in range(-n, n + 1):
            am = abs(m)
            s1 = -1.0 if (m < 0 and am % 2) else 1.0
            row = n * n + n + m
            for nu in range(p_col + 1):
                for mu in range(-nu, nu + 1):
                    amu = abs(mu)
                    s2 = -1.0 if (mu > 0 and amu % 2) else 1.0  # order -mu
                    col = nu * nu + nu + mu
                    M = m - mu
                    aM = abs(M)
                    s3 = -1.0 if (M < 0 and aM % 2) else 1.0
                    qlo = max(abs(n - nu), aM)
                    if (n + nu + qlo) % 2:
                        qlo += 1
                    for q in range(qlo, n + nu + 1, 2):
                        i1 = n * (n + 1) // 2 + am
                        i2 = nu * (nu + 1) // 2 + amu
                        i3 = q * (q + 1) // 2 + aM
                        acc = 0.0
                        for k in range(K):
                            acc += w[k] * plm[k, i1] * plm[k, i2] * plm[k, i3]
                        g = 2.0 * np.pi * s1 * s2 * s3 * acc
                        if abs(g) < 1e-15:
                            continue
                        flat[cnt] = row * ncol + col
                        qs[cnt] = q
                        yidx[cnt] = q * q + q - M
                        coef[cnt] = 4.0 * np.pi * g
                        sh[cnt] = -1.0 if (nu - n + m + q) % 2 else 1.0
                        ss[cnt] = -1.0 if (nu + m) % 2 else 1.0
                        nr[cnt] = n
                        nc[cnt] = nu
                        cnt += 1
    return (flat[:cnt], qs[:cnt], yidx[:cnt], coef[:cnt], sh[:cnt], ss[:cnt],
            nr[:cnt], nc[:cnt])


@lru_cache(maxsize=32)
def gaunt_plan(p_row, p_col):
    """Build (and cache) the sparse Gaunt structure of the translation sums."""
    qmax = p_row + p_col
    x, w = np.polynomial.legendre.leggauss(qmax + 2)
    plm = np.ascontiguousarray(legendre_table(qmax, x))
    terms = _plan_terms(int(p_row), int(p_col), plm, w)
    return GauntPlan(p_row, p_col, *terms)


@dataclass
class TranslationMatrix:
    """Dense translation matrix indexed ``[(n, m), (nu, mu)]``."""

    kind: str
    b: np.ndarray
    lam: float
    p_row: int
    p_col: int
    data: np.ndarray


def _direction(b):
    r = float(np.linalg.norm(b))
    if r == 0.0:
        return 0.0, 0.0, 0.0
    return r, float(np.arccos(np.clip(b[2] / r, -1.0, 1.0))), float(np.arctan2(b[1], b[0]))


def _translation(kind, b, lam, p_row, p_col):
    b = np.asarray(b, dtype=float)
    plan = gaunt_plan(p_row, p_col)
    r, th, ph = _direction(b)
    qmax = p_row + p_col
    if kind == "regular":
        radial = mod_bessel_i_all(qmax, lam * r)
        sign = plan.sign_hat
    else:
        if r == 0.0:
            raise ValueError("singular translation needs a nonzero shift")
        radial = mod_bessel_k_all(qmax, lam * r)
        sign = plan.sign_sing
    yq = np.conj(sph_harm_table(qmax, th, ph))
    w = plan.coef * sign * radial[plan.q] * yq[plan.yidx]
    size = ncoef(p_row) * ncoef(p_col)
    out = (np.bincount(plan.flat, weights=w.real, minlength=size)
           + 1j * np.bincount(plan.flat, weights=w.imag, minlength=size))
    return TranslationMatrix(kind, b, lam, p_row, p_col,
                             out.reshape(ncoef(p_row), ncoef(p_col)))


def translation_regular(b, lam, p_row, p_col=None):
    """Regular-to-regular translation matrix ``Shat(b)``."""
    return _translation("regular", b, lam, p_row, p_row if p_col is None else p_col)


def translation_singular(b, lam, p_row, p_col=None):
    """Singular-to-regular translation matrix ``S(b)``, valid for ``|r| < |b|``."""
    return _translation("singular", b, lam, p_row, p_row if p_col is None else p_col)


def m2m_matrix(b, lam, p, S_child, S_parent):
    """Matrix mapping scaled child multipole coefficients to the parent's.

    ``b`` is the child center minus the parent center.
    """
    t = np.conj(translation_regular(b, lam, p).data)
    n = degrees(p)
    return t * (S_child ** n[None, :] / S_parent ** n[:, None])


def l2l_matrix(b, lam, p, S_parent, S_child):
    """Matrix mapping scaled parent local coefficients to the child's.

    ``b`` is the child center minus the parent center.
    """
    t = translation_regular(b, lam, p).data.T
    n = degrees(p)
    return t * (S_child ** n[:, None] / S_parent ** n[None, :])


def m2l_matrix(b, lam, p, S_source, S_target):
    """Matrix mapping scaled multipole coefficients to scaled local ones.

    ``b`` is the target center minus the source center.
    """
    t = translation_singular(b, lam, p).data.T
    n = degrees(p)
    return t * (S_target ** n[:, None] * S_source ** n[None, :])


@njit(cache=True)
def _assemble_many(flat, q, yidx, cw, radial, yq, n, st, ss, nc):
    G = radial.shape[0]
    out = np.zeros((G, nc * nc), dtype=np.complex128)
    for g in range(G):
        for k in range(flat.size):
            out[g, flat[k]] += cw[k] * radial[g, q[k]] * yq[g, yidx[k]]
    res = np.empty((G, nc, nc), dtype=np.complex128)
    pmax = n[nc - 1]
    pt = np.empty(pmax + 1)
    ps = np.empty(pmax + 1)
    for g in range(G):
        pt[0] = 1.0
        ps[0] = 1.0
        for k in range(1, pmax + 1):
            pt[k] = pt[k - 1] * st[g]
            ps[k] = ps[k - 1] * ss[g]
        for i in range(nc):
            for j in range(nc):
                # transpose: rows index the local (target) coefficients
                res[g, i, j] = out[g, j * nc + i] * (pt[n[i]] * ps[n[j]])
    return res


def m2l_matrices(b, lam, p, S_source, S_target):
    """Batched :func:`m2l_matrix` for shifts ``b`` of shape ``(G, 3)``.

    ``S_source`` and ``S_target`` are scalars or arrays of length ``G``.
    Returns an array of shape ``(G, ncoef(p), ncoef(p))``.
    """
    b = np.atleast_2d(np.asarray(b, dtype=float))
    plan = gaunt_plan(p, p)
    r = np.linalg.norm(b, axis=1)
    if np.any(r == 0.0):
        raise ValueError("singular translation needs a nonzero shift")
    th = np.arccos(np.clip(b[:, 2] / r, -1.0, 1.0))
    ph = np.arctan2(b[:, 1], b[:, 0])
    radial = mod_bessel_k_all(2 * p, lam * r)
    yq = np.ascontiguousarray(np.conj(sph_harm_table(2 * p, th, ph)))
    st = np.ascontiguousarray(np.broadcast_to(np.asarray(S_target, dtype=float), r.shape))
    ss = np.ascontiguousarray(np.broadcast_to(np.asarray(S_source, dtype=float), r.shape))
    return _assemble_many(plan.flat, plan.q, plan.yidx, plan.coef * plan.sign_sing,
                          radial, yq, degrees(p), st, ss, ncoef(p))


def m2m(child, new_center, new_S=None):
    """Re-center a multipole expansion (parent box contains the child box)."""
    new_center = np.asarray(new_center, dtype=float)
    S = child.S if new_S is None else new_S
    mat = m2m_matrix(child.center - new_center, child.lam, child.p, child.S, S)
    return Expansion("multipole", new_center, S, child.lam, child.p, mat @ child.coeffs)


def l2l(parent, new_center, new_S=None):
    """Re-center a local expansion (child box inside the parent box)."""
    new_center = np.asarray(new_center, dtype=float)
    S = parent.S if new_S is None else new_S
    mat = l2l_matrix(new_center - parent.center, parent.lam, parent.p, parent.S, S)
    return Expansion("local", new_center, S, parent.lam, parent.p, mat @ parent.coeffs)


def m2l(source, target_center, target_S=None):
    """Convert a multipole expansion into a local expansion about a far center."""
    target_center = np.asarray(target_center, dtype=float)
    S = source.S if target_S is None else target_S
    mat = m2l_matrix(target_center - source.center, source.lam, source.p, source.S, S)
    return Expansion("local", target_center, S, source.lam, source.p, mat @ source.coeffs)
