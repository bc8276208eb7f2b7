"""Brute-force reference potentials.

The free-space part is the pairwise screened Coulomb sum.  Reaction kernels
are evaluated from the original source position with the exponential factor
written in terms of the distances of target and source to the interfaces the
waves travel through,

    u(r, r') = 1/(4 pi) int_0^inf u J_0(u |rho - rho'|) E(z, z') sigma(u)/lz du,

and integrated with composite Gauss-Legendre panels whose width is halved
until two successive results agree.  Nothing here uses image positions,
tables or recurrences, so the oracle is independent of the expansion
machinery it checks.
"""
from math import log, pi

import numpy as np
from scipy import special as _sp

from .errors import DivergentIntegral, InterfaceCollision, ToleranceNotMet

ORACLE_NODES = 12


def direct_free(charges, positions, lam, eps):
    """Free-space screened Coulomb potentials by direct summation.

    ``phi_i = sum_{j != i} q_j exp(-lam r_ij) / (4 pi eps r_ij)``.

    Raises
    ------
    ValueError
        If two particles coincide.
    """
    q = np.asarray(charges, dtype=float)
    x = np.atleast_2d(np.asarray(positions, dtype=float))
    out = np.zeros(len(x))
    for s in range(0, len(x), 512):
        diff = x[s:s + 512, None, :] - x[None, :, :]
        r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        idx = np.arange(s, min(s + 512, len(x)))
        r[idx - s, idx] = np.inf
        if np.any(r == 0):
            raise ValueError("coincident particles")
        out[s:s + 512] = (np.exp(-lam * r) / r) @ q
    return out / (4.0 * pi * eps)


def _exponent_distances(medium, l, lp, a, b, z, zp):
    """Distances ``(t, tp)`` of target and source to the interfaces crossed."""
    t = np.asarray(z, dtype=float) - medium.d[l] if a == 1 else medium.d[l - 1] - np.asarray(z, dtype=float)
    tp = np.asarray(zp, dtype=float) - medium.d[lp] if b == 1 else medium.d[lp - 1] - np.asarray(zp, dtype=float)
    return t, tp


def direct_reaction_many(medium, l, lp, a, b, targets, sources, tol=1e-13):
    """Reaction kernel ``u^{ab}_{l lp}(r_k, r'_k)`` for paired points.

    Parameters
    ----------
    medium : LayeredMedium
    l, lp : int
        Target and source layers.
    a, b : int
        Component.
    targets, sources : array_like of shape (K, 3)
        Paired target and source positions.
    tol : float
        Agreement required between two successive panel halvings, relative
        to the integral of the absolute integrand.

    Raises
    ------
    InterfaceCollision
        If a point lies on an interface.
    ToleranceNotMet
        If panel halving does not converge.
    """
    medium.check_component(l, lp, a, b)
    tg = np.atleast_2d(np.asarray(targets, dtype=float))
    sr = np.atleast_2d(np.asarray(sources, dtype=float))
    t, tp = _exponent_distances(medium, l, lp, a, b, tg[:, 2], sr[:, 2])
    if np.any(t <= 0) or np.any(tp <= 0):
        if np.any(t == 0) or np.any(tp == 0):
            raise InterfaceCollision("point on an interface")
        raise DivergentIntegral("point outside its layer")
    rho = np.hypot(tg[:, 0] - sr[:, 0], tg[:, 1] - sr[:, 1])
    lam, lamp = medium.lam[l], medium.lam[lp]
    out = np.zeros(len(tg))
    if medium.is_homogeneous() and l == lp:
        return out
    delta = t + tp
    # pairs sharing a decay scale share one grid
    group = np.floor(np.log2(delta) * 2).astype(int)
    for g in np.unique(group):
        idx = np.nonzero(group == g)[0]
        upper = (-log(tol * 1e-5) + 10.0) / float(delta[idx].min())
        h = min(1.0, 2.0 / max(float(rho[idx].max()), 1e-12))
        prev = None
        for _ in range(5):
            val, l1 = _panel_sum(medium, l, lp, a, b, lam, lamp, upper, h,
                                 rho[idx], t[idx], tp[idx])
            if prev is not None and np.all(np.abs(val - prev) <= tol * l1):
                break
            prev = val
            h *= 0.5
        else:
            raise ToleranceNotMet("oracle quadrature did not converge")
        out[idx] = val / (4.0 * pi)
    return out


def _panel_sum(medium, l, lp, a, b, lam, lamp, upper, h, rho, t, tp, chunk=128):
    """Composite Gauss-Legendre rule with geometric panels below ``u = 1``."""
    edges = np.concatenate([[0.0], 2.0 ** np.arange(-6, 0), np.arange(1.0, upper, h), [upper]])
    edges = np.unique(edges)
    x, w = np.polynomial.legendre.leggauss(ORACLE_NODES)
    half = 0.5 * np.diff(edges)
    u = (0.5 * (edges[1:] + edges[:-1])[:, None] + half[:, None] * x).ravel()
    wt = (half[:, None] * w).ravel()
    lz = np.sqrt(lam * lam + u * u)
    lzp = np.sqrt(lamp * lamp + u * u)
    base = wt * u * medium.density(l, lp, a, b, u) / lz
    val = np.empty(len(rho))
    l1 = np.empty(len(rho))
    for s in range(0, len(rho), chunk):
        sl = slice(s, s + chunk)
        e = np.exp(-np.multiply.outer(t[sl], lz) - np.multiply.outer(tp[sl], lzp))
        j = _sp.j0(np.multiply.outer(rho[sl], u))
        val[sl] = (e * j) @ base
        l1[sl] = (e * np.abs(j)) @ np.abs(base)
    return val, l1


def direct_reaction(medium, r, rp, l, lp, a, b, tol=1e-13):
    """Reaction kernel for a single target ``r`` and source ``rp``."""
    return float(direct_reaction_many(medium, l, lp, a, b, np.atleast_2d(r),
                                      np.atleast_2d(rp), tol)[0])


def direct_potentials(medium, charges, positions, tol=1e-12, include_self=True):
    """Free, reaction and total potentials of a charge system by brute force.

    Reaction potentials include the interaction of each charge with its own
    polarization.  Returns ``(phi_total, phi_free, phi_react)``.
    """
    q = np.asarray(charges, dtype=float)
    x = np.atleast_2d(np.asarray(positions, dtype=float))
    layer = np.asarray(medium.layer_of(x[:, 2]))
    free = np.zeros(len(x))
    react = np.zeros(len(x))
    for l in range(medium.n_layers):
        it = np.nonzero(layer == l)[0]
        if it.size == 0:
            continue
        free[it] = direct_free(q[it], x[it], medium.lam[l], medium.eps[l])
        for lp in range(medium.n_layers):
            js = np.nonzero(layer == lp)[0]
            if js.size == 0:
                continue
            ti, sj = np.meshgrid(it, js, indexing="ij")
            ti, sj = ti.ravel(), sj.ravel()
            if not include_self:
                keep = ti != sj
                ti, sj = ti[keep], sj[keep]
            for a, b in medium.components(l, lp):
                u = direct_reaction_many(medium, l, lp, a, b, x[ti], x[sj], tol)
                np.add.at(react, ti, u * q[sj])
    return free + react, free, react
