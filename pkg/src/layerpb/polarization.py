"""Equivalent polarization sources and reaction-field expansions.

A reaction component ``(l, lp, a, b)`` of the layered Green's function is the
field of an image ("polarized") source placed on the other side of the
interface that bounds the target layer (below it for ``a = 1``, above it for
``a = 2``).  With that image the component reads

    u(r, r_pol) = 1/(4 pi) int_0^inf u J_0(u rho) Z(z, z_pol) sigma(u)/lz du,

see :class:`layerpb.sommerfeld.SpectralKernel`.  Its multipole expansion uses
the free-space coefficients with the source layer's screening ``lam_lp`` and
its local expansion the free-space basis with the target layer's ``lam_l``;
the translation between the two is

    T[nm, nu mu] = s * i^(|m|-m) * i^(|mu|+mu) * exp(i (mu-m) phi) * I_{nm, nu mu}

with ``s = (-1)^(n+m+mu)`` for ``a = 1``, ``s = (-1)^nu`` for ``a = 2``, ``phi``
the polar angle of the in-plane displacement from the source center to the
target center and ``I`` the real spectral integral assembled from a
:class:`layerpb.sommerfeld.SommerfeldTable`.  Multipole evaluation at a point
and point-to-local conversion are the ``n = 0`` and ``nu = 0`` corners of the
same operator.
"""
from dataclasses import dataclass
from functools import lru_cache
from math import pi, sqrt

import numpy as np
from scipy import special as _sp

from .errors import CenterSideViolation
from .expansion import Expansion, degrees, p2m
from .sommerfeld import (ProductTerms, SpectralKernel, _panel_grid, build_table,
                         choose_xmax)
from .special import ncoef

SQRT_4PI = sqrt(4.0 * pi)


@dataclass(frozen=True)
class PolarizationSource:
    """Image of a charge for one reaction component.

    Attributes
    ----------
    q : float
        Charge.
    position : ndarray
        Original position.
    polarized : ndarray
        Image position; same ``x``, ``y`` as ``position``.
    component : tuple of int
        ``(a, b)``.
    l, lp : int
        Target and source layers.
    """

    q: float
    position: np.ndarray
    polarized: np.ndarray
    component: tuple
    l: int
    lp: int


def polarized_z(medium, zp, l, lp, a, b):
    """Height of the image source for component ``(a, b)``; vectorized."""
    medium.check_component(l, lp, a, b)
    zp = np.asarray(zp, dtype=float)
    # distance of the source to the interface its wave leaves through
    off = zp - medium.bottom(lp) if b == 1 else medium.top(lp) - zp
    if a == 1:
        return medium.bottom(l) - off
    return medium.top(l) + off


def polarize(medium, q, position, l, lp, a, b):
    """Polarized (image) source of a charge for a reaction component.

    Raises
    ------
    InadmissibleComponent
        If ``(a, b)`` does not exist for the layer pair.
    """
    pos = np.asarray(position, dtype=float).reshape(3)
    zpol = float(polarized_z(medium, pos[2], l, lp, a, b))
    pol = np.array([pos[0], pos[1], zpol])
    return PolarizationSource(float(q), pos, pol, (a, b), l, lp)


def polarize_many(medium, positions, l, lp, a, b):
    """Image positions of an ``(N, 3)`` array of sources."""
    pts = np.array(positions, dtype=float, copy=True)
    pts[:, 2] = polarized_z(medium, pts[:, 2], l, lp, a, b)
    return pts


def check_source_center(kernel, zc):
    """Multipole centers must lie on the image side of the interface."""
    d = kernel.interface
    if (kernel.a == 1 and not zc < d) or (kernel.a == 2 and not zc > d):
        raise CenterSideViolation("multipole center on the target side of the interface")


def check_target_center(kernel, zc):
    """Local-expansion centers must lie on the target side of the interface."""
    d = kernel.interface
    if (kernel.a == 1 and not zc > d) or (kernel.a == 2 and not zc < d):
        raise CenterSideViolation("local center on the image side of the interface")


# ---------------------------------------------------------------------------
# Translation operator
# ---------------------------------------------------------------------------


@lru_cache(maxsize=64)
def product_terms(p_row, p_col, lam, lamp):
    """Cached :class:`ProductTerms` for a layer pair."""
    return ProductTerms(p_row, p_col, lam, lamp)


@lru_cache(maxsize=64)
def _phase_signs(p_row, p_col, a):
    n, m = _nm(p_row)
    nu, mu = _nm(p_col)
    ipow = np.where(m < 0, (-1.0) ** m, 1.0)[:, None] * np.where(mu > 0, (-1.0) ** mu, 1.0)[None, :]
    if a == 1:
        sgn = (-1.0) ** (n + m)[:, None] * ((-1.0) ** mu)[None, :]
    else:
        sgn = np.ones(n.size)[:, None] * ((-1.0) ** nu)[None, :]
    return sgn * ipow


def _nm(p):
    n = degrees(p)
    m = np.arange(ncoef(p)) - n * n - n
    return n, m


def phase_matrix(p_row, p_col, a, phi):
    """Sign, ``i``-power and azimuthal factors of the reaction translation."""
    _, m = _nm(p_row)
    _, mu = _nm(p_col)
    return _phase_signs(p_row, p_col, a) * np.outer(np.exp(-1j * m * phi), np.exp(1j * mu * phi))


def reaction_block(kernel, rho, zt, zs, p_row, p_col, S_target, S_source, S_table=None,
                   tol=1e-13, xmax=None):
    """Scaled spectral matrix ``S_target^n S_source^nu I_{nm, nu mu}``.

    Depends on the in-plane distance only; the azimuth enters through
    :func:`phase_matrix`.
    """
    med = kernel.medium
    terms = product_terms(p_row, p_col, float(med.lam[kernel.l]), float(med.lam[kernel.lp]))
    S = S_target if S_table is None else S_table
    table = build_table(kernel, rho, zt, zs, S, terms.max_order, tol, xmax=xmax)
    return terms.assemble(table, S_target, S_source)


def reaction_translation(kernel, target_center, source_center, p_row, p_col,
                         S_target, S_source, S_table=None, tol=1e-13, xmax=None):
    """Scaled reaction translation matrix between two centers.

    Maps scaled multipole coefficients ``Mhat = M / S_source^nu`` about the
    (image-side) ``source_center`` to scaled local coefficients
    ``Lhat = L S_target^n`` about ``target_center``.
    """
    ct = np.asarray(target_center, dtype=float)
    cs = np.asarray(source_center, dtype=float)
    dx, dy = ct[0] - cs[0], ct[1] - cs[1]
    rho = float(np.hypot(dx, dy))
    phi = float(np.arctan2(dy, dx)) if rho > 0 else 0.0
    mat = reaction_block(kernel, rho, float(ct[2]), float(cs[2]), p_row, p_col,
                         S_target, S_source, S_table, tol, xmax)
    return mat * phase_matrix(p_row, p_col, kernel.a, phi)


def reflection_signs(p):
    """Factors ``(-1)^(n+m)`` mapping multipole coefficients to mirrored sources.

    Mirroring sources and center in a horizontal plane maps
    ``conj(Y_n^m)`` to ``(-1)^(n+m) conj(Y_n^m)``.
    """
    n, m = _nm(p)
    return (-1.0) ** (n + m)


# ---------------------------------------------------------------------------
# Expansion operators
# ---------------------------------------------------------------------------


def reaction_p2m(kernel, charges, polarized, center, S, p):
    """Multipole expansion of image sources (free-space form, ``lam_lp``).

    Raises
    ------
    CenterSideViolation
        If the center is not on the image side of the interface.
    """
    center = np.asarray(center, dtype=float)
    check_source_center(kernel, center[2])
    return p2m(charges, polarized, center, S, float(kernel.medium.lam[kernel.lp]), p)


def reaction_eval_me(kernel, exp, targets, tol=1e-13):
    """Evaluate a reaction multipole expansion at target points.

    Parameters
    ----------
    kernel : SpectralKernel
    exp : Expansion
        Multipole expansion of image sources about a center on the image side.
    targets : array_like of shape (3,) or (K, 3)
        Points in the target layer.
    """
    check_source_center(kernel, exp.center[2])
    single = np.ndim(targets) == 1
    pts = np.atleast_2d(np.asarray(targets, dtype=float))
    out = np.empty(len(pts))
    for k, r in enumerate(pts):
        t = reaction_translation(kernel, r, exp.center, 0, exp.p, 1.0, exp.S, S_table=exp.S, tol=tol)
        out[k] = (t[0] @ exp.coeffs).real / SQRT_4PI
    return out[0] if single else out


def reaction_m2l(kernel, exp, target_center, target_S=None, p=None, tol=1e-13):
    """Translate a reaction multipole expansion into a target-side local one."""
    target_center = np.asarray(target_center, dtype=float)
    check_source_center(kernel, exp.center[2])
    check_target_center(kernel, target_center[2])
    St = exp.S if target_S is None else target_S
    p = exp.p if p is None else p
    t = reaction_translation(kernel, target_center, exp.center, p, exp.p, St, exp.S, tol=tol)
    return Expansion("local", target_center, St, float(kernel.medium.lam[kernel.l]), p,
                     t @ exp.coeffs)


def reaction_p2l(kernel, charges, polarized, center, S, p, tol=1e-13):
    """Target-side local expansion of image sources.

    Raises
    ------
    CenterSideViolation
        If the center is not on the target side of the interface.
    """
    center = np.asarray(center, dtype=float)
    check_target_center(kernel, center[2])
    out = np.zeros(ncoef(p), dtype=complex)
    for q, r in zip(np.atleast_1d(charges), np.atleast_2d(polarized)):
        t = reaction_translation(kernel, center, r, p, 0, S, 1.0, S_table=S, tol=tol)
        out += t[:, 0] * (SQRT_4PI * q)
    return Expansion("local", center, S, float(kernel.medium.lam[kernel.l]), p, out)


# ---------------------------------------------------------------------------
# Direct evaluation
# ---------------------------------------------------------------------------


def reaction_direct(kernel, target, polarized, tol=1e-13):
    """Reaction kernel ``u(r, r_pol)`` for one target and one image source."""
    return float(reaction_direct_pairs(kernel, np.atleast_2d(target),
                                       np.atleast_2d(polarized), tol)[0])


def reaction_direct_pairs(kernel, targets, polarized, tol=1e-13, chunk=256):
    """Reaction kernel for many (target, image source) pairs.

    Pairs are grouped by decay length and in-plane distance so that each group
    shares one composite Gauss-Legendre grid; the densities are evaluated once
    per grid.  Every grid is refined once and the refined value is returned
    when the two agree to ``tol`` relative to the absolute integral.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    polarized = np.atleast_2d(np.asarray(polarized, dtype=float))
    t1, t2 = kernel.offsets(targets[:, 2], polarized[:, 2])
    kernel.check_offsets(t1, t2)
    rho = np.hypot(targets[:, 0] - polarized[:, 0], targets[:, 1] - polarized[:, 1])
    out = np.zeros(len(targets))
    med = kernel.medium
    if med.is_homogeneous() and kernel.l == kernel.lp:
        return out
    delta = t1 + t2
    kd = np.floor(np.log2(delta)).astype(int)
    kr = np.floor(np.log2(np.maximum(rho, 1e-3))).astype(int)
    lam, lamp = med.lam[kernel.l], med.lam[kernel.lp]
    for key in set(zip(kd.tolist(), kr.tolist())):
        idx = np.nonzero((kd == key[0]) & (kr == key[1]))[0]
        dmin = float(delta[idx].min())
        rmax = float(rho[idx].max())
        xmax = choose_xmax(dmin, 1e-16, 1)
        vals = []
        for refine in (1, 2):
            u, w = _panel_grid(xmax, rmax, dmin, refine)
            lz = np.sqrt(lam * lam + u * u)
            lzp = np.sqrt(lamp * lamp + u * u)
            base = w * u * kernel.density(u) / lz
            res = np.empty(idx.size)
            l1 = np.empty(idx.size)
            for s in range(0, idx.size, chunk):
                sl = idx[s:s + chunk]
                e = np.exp(-np.multiply.outer(t1[sl], lz) - np.multiply.outer(t2[sl], lzp))
                j = _sp.j0(np.multiply.outer(rho[sl], u))
                res[s:s + chunk] = (e * j) @ base
                l1[s:s + chunk] = (e * np.abs(j)) @ np.abs(base)
            vals.append(res)
        out[idx] = vals[1] / (4.0 * pi)
        bad = np.abs(vals[1] - vals[0]) > tol * np.maximum(l1, 1e-300) * 10
        if np.any(bad):
            from .errors import ToleranceNotMet
            raise ToleranceNotMet("near-field quadrature did not converge")
    return out


def make_kernel(medium, l, lp, a, b):
    """Shorthand for :class:`SpectralKernel`."""
    return SpectralKernel(medium, l, lp, a, b)
