"""Layered media and their spectral reaction densities.

Layer ``l`` occupies ``d[l] < z < d[l-1]``; layer 0 extends to ``+inf`` and
layer ``L`` to ``-inf``.  For a unit source in layer ``lp`` the spectral field
in layer ``l`` (after the in-plane Fourier transform) is

    u_hat = delta_{l,lp} exp(-lz' |z - z'|)/(eps' lz')
            + [A exp(-lz (z - d[l])) + B exp(-lz (d[l-1] - z))] / lz

and the amplitudes are linear in the two source waves that reach the
interfaces below (``b = 1``) and above (``b = 2``) the source.  The
coefficient of wave ``b`` in ``A`` is ``sigma^{1b}`` and in ``B`` it is
``sigma^{2b}``.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import (InadmissibleComponent, InterfaceCollision,
                     SingularTransmissionSystem, UnsupportedLayerCount)

COMPONENTS = ((1, 1), (1, 2), (2, 1), (2, 2))


@dataclass(frozen=True)
class LayeredMedium:
    """Horizontal stack of homogeneous layers.

    Attributes
    ----------
    d : ndarray
        Interface heights, strictly decreasing, length ``L``.
    eps : ndarray
        Dielectric constant of each of the ``L + 1`` layers.
    lam : ndarray
        Inverse screening length of each layer.
    """

    d: np.ndarray
    eps: np.ndarray
    lam: np.ndarray
    tol_geom: float = field(default=None)

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.d, dtype=float))
        eps = np.atleast_1d(np.asarray(self.eps, dtype=float))
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        if d.size < 1:
            raise ValueError("a layered medium needs at least one interface")
        if eps.size != d.size + 1 or lam.size != d.size + 1:
            raise ValueError("eps and lam need one entry per layer (len(d) + 1)")
        if np.any(np.diff(d) >= 0):
            raise ValueError("interfaces must be strictly decreasing")
        if np.any(eps <= 0) or np.any(lam <= 0):
            raise ValueError("eps and lam must be strictly positive")
        for a in (d, eps, lam):
            a.setflags(write=False)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "lam", lam)
        if self.tol_geom is None:
            span = max(1.0, float(d[0] - d[-1]), float(np.max(np.abs(d))))
            object.__setattr__(self, "tol_geom", 1e-12 * span)

    @property
    def n_interfaces(self):
        return self.d.size

    @property
    def n_layers(self):
        return self.d.size + 1

    def bottom(self, l):
        """Height of the interface below layer ``l`` (needs ``l < L``)."""
        return float(self.d[l])

    def top(self, l):
        """Height of the interface above layer ``l`` (needs ``l > 0``)."""
        return float(self.d[l - 1])

    def layer_of(self, z):
        """Layer index of height ``z``; vectorized over arrays."""
        z = np.asarray(z, dtype=float)
        gap = np.min(np.abs(z[..., None] - self.d), axis=-1)
        if np.any(gap < self.tol_geom):
            raise InterfaceCollision("point lies on a material interface")
        out = np.sum(z[..., None] < self.d, axis=-1)
        return int(out) if out.ndim == 0 else out

    def lambda_z(self, l, lr):
        """Vertical decay rate ``sqrt(lam_l^2 + lr^2)`` of layer ``l``."""
        lr = np.asarray(lr, dtype=float)
        return np.sqrt(self.lam[l] ** 2 + lr * lr)

    def is_admissible(self, l, lp, a, b):
        L = self.n_interfaces
        return ((a == 1 and l < L) or (a == 2 and l > 0)) and \
            ((b == 1 and lp < L) or (b == 2 and lp > 0))

    def components(self, l, lp):
        """Admissible reaction components ``(a, b)`` for targets in ``l``."""
        return [ab for ab in COMPONENTS if self.is_admissible(l, lp, *ab)]

    def all_components(self):
        """Every admissible ``(l, lp, a, b)`` in a fixed order."""
        return [(l, lp, a, b) for l in range(self.n_layers)
                for lp in range(self.n_layers) for a, b in self.components(l, lp)]

    def check_component(self, l, lp, a, b):
        if not self.is_admissible(l, lp, a, b):
            raise InadmissibleComponent(
                f"component {a}{b} does not exist for target layer {l}, source layer {lp}")

    def is_homogeneous(self):
        return bool(np.all(self.eps == self.eps[0]) and np.all(self.lam == self.lam[0]))

    def density(self, l, lp, a, b, lr):
        """Reaction density ``sigma^{ab}_{l lp}`` on a grid of ``lr``."""
        self.check_component(l, lp, a, b)
        if self.n_interfaces == 2:
            return densities_three_layer(self, lp, lr)[(l, a, b)]
        return densities_general(self, lp, lr)[(l, a, b)]


def lambda_z(medium, l, lr):
    """Module-level alias of :meth:`LayeredMedium.lambda_z`."""
    return medium.lambda_z(l, lr)


def layer_of(medium, z):
    """Module-level alias of :meth:`LayeredMedium.layer_of`."""
    return medium.layer_of(z)


def densities_general(medium, lp, lr):
    """Reaction densities for a source in layer ``lp`` by a transmission solve.

    Parameters
    ----------
    medium : LayeredMedium
    lp : int
        Source layer.
    lr : array_like
        Radial spectral variable ``lambda_rho >= 0``.

    Returns
    -------
    dict
        ``{(l, a, b): ndarray}`` for every admissible component with source
        layer ``lp``.
    """
    lr = np.atleast_1d(np.asarray(lr, dtype=float))
    L = medium.n_interfaces
    K = lr.size
    lz = np.sqrt(medium.lam[:, None] ** 2 + lr[None, :] ** 2)  # (L+1, K)
    eps = medium.eps
    thick = -np.diff(medium.d)  # thickness of layers 1..L-1
    # decay across a finite layer k (1 <= k <= L-1)
    ex = np.zeros((L + 1, K))
    for k in range(1, L):
        ex[k] = np.exp(-lz[k] * thick[k - 1])

    # unknown ordering: A_0..A_{L-1} then B_1..B_L
    def ia(k):
        return k

    def ib(k):
        return L + k - 1

    M = np.zeros((K, 2 * L, 2 * L))
    for i in range(L):
        up, lo = i, i + 1
        rv, rf = 2 * i, 2 * i + 1
        M[:, rv, ia(up)] = 1.0 / lz[up]
        M[:, rf, ia(up)] = -eps[up]
        if up > 0:
            M[:, rv, ib(up)] = ex[up] / lz[up]
            M[:, rf, ib(up)] = eps[up] * ex[up]
        M[:, rv, ib(lo)] = -1.0 / lz[lo]
        M[:, rf, ib(lo)] = -eps[lo]
        if lo < L:
            M[:, rv, ia(lo)] = -ex[lo] / lz[lo]
            M[:, rf, ia(lo)] = eps[lo] * ex[lo]

    rhs = np.zeros((K, 2 * L, 2))
    if lp < L:  # wave leaving through the interface below the source
        rhs[:, 2 * lp, 0] = -1.0 / (eps[lp] * lz[lp])
        rhs[:, 2 * lp + 1, 0] = -1.0
    if lp > 0:  # wave leaving through the interface above the source
        i = lp - 1
        rhs[:, 2 * i, 1] = 1.0 / (eps[lp] * lz[lp])
        rhs[:, 2 * i + 1, 1] = -1.0
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularTransmissionSystem(f"transmission system singular for lr in "
                                         f"[{lr.min()}, {lr.max()}]") from exc
    if not np.all(np.isfinite(sol)):
        raise SingularTransmissionSystem("non-finite densities")
    out = {}
    for l in range(L + 1):
        for a, b in medium.components(l, lp):
            col = b - 1
            idx = ia(l) if a == 1 else ib(l)
            out[(l, a, b)] = sol[:, idx, col].copy()
    return out


def _kappa_scaled(e0, e1, e2, l0, l1, l2, c, s):
    return e1 * l1 * (e0 * l0 + e2 * l2) * c + (e1 * e1 * l1 * l1 + e0 * e2 * l0 * l2) * s


def densities_three_layer(medium, lp, lr):
    """Closed-form reaction densities of a three-layer medium.

    The hyperbolic functions of the middle-layer thickness are divided by the
    common factor ``exp(h)``, ``h = (d0 - d1) lz1``, in both numerator and
    denominator, so every value is finite for all ``lr >= 0``.

    Returns the same dictionary layout as :func:`densities_general`.
    """
    if medium.n_interfaces != 2:
        raise UnsupportedLayerCount("closed forms exist only for three layers")
    lr = np.atleast_1d(np.asarray(lr, dtype=float))
    e0, e1, e2 = medium.eps
    l0, l1, l2 = (np.sqrt(medium.lam[k] ** 2 + lr * lr) for k in range(3))
    E = np.exp(-(medium.d[0] - medium.d[1]) * l1)
    c = 0.5 * (1.0 + E * E)
    s = 0.5 * (1.0 - E * E)
    kap = _kappa_scaled(e0, e1, e2, l0, l1, l2, c, s)
    if np.any(kap <= 0):
        raise SingularTransmissionSystem("denominator lost positivity")
    q0, q1, q2 = e0 * l0, e1 * l1, e2 * l2
    if lp == 0:
        return {
            (0, 1, 1): (q1 * (q0 - q2) * c - (q1 * q1 - q0 * q2) * s) / (e0 * kap),
            (1, 1, 1): e0 * l1 * (q1 - q2) * E / (e0 * kap),
            (1, 2, 1): e0 * l1 * (q1 + q2) / (e0 * kap),
            (2, 2, 1): 2.0 * e0 * q1 * l2 * E / (e0 * kap),
        }
    if lp == 1:
        return {
            (0, 1, 1): e1 * l0 * (q1 - q2) * E / (e1 * kap),
            (0, 1, 2): e1 * l0 * (q1 + q2) / (e1 * kap),
            (1, 1, 1): (q1 - q2) * (q1 + q0) / (2.0 * e1 * kap),
            (1, 1, 2): (q1 - q2) * (q1 - q0) * E / (2.0 * e1 * kap),
            (1, 2, 1): (q1 - q2) * (q1 - q0) * E / (2.0 * e1 * kap),
            (1, 2, 2): (q1 + q2) * (q1 - q0) / (2.0 * e1 * kap),
            (2, 2, 1): e1 * l2 * (q0 + q1) / (e1 * kap),
            (2, 2, 2): e1 * l2 * (q1 - q0) * E / (e1 * kap),
        }
    if lp == 2:
        return {
            (0, 1, 2): 2.0 * q1 * e2 * l0 * E / (e2 * kap),
            (1, 1, 2): e2 * l1 * (q0 + q1) / (e2 * kap),
            (1, 2, 2): e2 * l1 * (q1 - q0) * E / (e2 * kap),
            (2, 2, 2): (q1 * (q2 - q0) * c - (q1 * q1 - q0 * q2) * s) / (e2 * kap),
        }
    raise ValueError("source layer must be 0, 1 or 2")
