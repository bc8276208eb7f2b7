"""Adaptive octrees and the free-space and reaction-field FMMs.

Free-space potentials of each layer come from a standard Yukawa FMM.  A
reaction component ``(l, lp, a, b)`` is the field of the image sources of the
layer ``lp`` charges, seen by the layer ``l`` targets across one interface.
Its FMM runs between two half-space octrees: a cube whose face lies on the
target-side interface holds the targets, and the image of a cube whose face
lies on the source-side interface holds the image sources.  Because the image
map is a mirror or a shift in ``z``, one tree per (layer, interface) serves
every component:

* as a source tree, its upward pass (free-space P2M and M2M with the layer's
  screening) is reused by all components with that source layer and ``b``;
  mirroring only flips the signs ``(-1)^(n+m)`` of the coefficients;
* as a target tree, the local expansions of all components with that target
  layer and ``a`` are accumulated before a single downward pass.

Tree traversal is a dual-tree walk with the acceptance test
``|c_t - c_s| * theta >= r_t + r_s`` (``r`` the radius of a box's particles
about its center).  Reaction trees are refined near their interface until
no leaf pair fails the test, so reaction fields need no direct sums.  Translation
matrices are cached per run by the exact box geometry; reaction tables are
keyed by the in-plane distance and the two heights, and the azimuth enters as
a phase.
"""
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import pi, sqrt

import numpy as np
from numba import njit

from .errors import EmptyInput, MixedSides
from .expansion import (eval_l_into, l2l_matrix, m2l_matrices, m2m_matrix, p2m_into,
                        physical_factor)
from .polarization import (make_kernel, phase_matrix, polarized_z, reaction_block,
                           reaction_direct_pairs, reflection_signs)
from .special import ncoef

HALF_DIAG = 0.5 * sqrt(3.0)


@dataclass(frozen=True)
class RunConfig:
    """Numerical and execution parameters of an FMM run.

    Attributes
    ----------
    p : int
        Truncation degree of all expansions.
    leaf_capacity : int
        Maximum number of particles in a leaf box.
    tol : float
        Relative accuracy of the spectral quadratures.
    xmax : float or None
        Override of the spectral truncation point.
    workers : int
        Threads used to run independent layers and components.
    theta : float
        Opening parameter of the far-field acceptance test.
    breakdown : bool
        Run every reaction component on its own and keep its potentials.
    """

    p: int = 10
    leaf_capacity: int = 40
    tol: float = 1e-13
    xmax: float = None
    workers: int = 1
    theta: float = 0.4
    breakdown: bool = False

    def __post_init__(self):
        if int(self.p) < 1:
            raise ValueError("p must be at least 1")
        if int(self.leaf_capacity) < 1:
            raise ValueError("leaf_capacity must be at least 1")
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        if int(self.workers) < 1:
            raise ValueError("workers must be at least 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass
class OpCounts:
    """Operation counters of one FMM pass."""

    p2m: int = 0
    m2m: int = 0
    m2l: int = 0
    l2l: int = 0
    l2p: int = 0
    near_pairs: int = 0
    matrices: int = 0
    tables: int = 0

    def add(self, other):
        for k in self.__dataclass_fields__:
            setattr(self, k, getattr(self, k) + getattr(other, k))
        return self


# ---------------------------------------------------------------------------
# Trees
# ---------------------------------------------------------------------------


@dataclass
class Octree:
    """Adaptive octree over a cube; boxes are stored level by level.

    Attributes
    ----------
    origin : ndarray of shape (3,)
        Lower corner of the root cube.
    width : float
        Root cube size.
    perm : ndarray of int
        Original index of each particle in tree order.
    x, y, z : ndarray
        Particle coordinates in tree order.
    center, size, radius, level, parent, child, octant, start, end, leaf : ndarray
        Box data; ``radius`` is the largest distance of a box's particles
        from its center, ``child[b]`` lists up to eight children (``-1`` if
        absent) and ``start:end`` is the box's particle range in tree order.
    face : float or None
        Height of the interface the cube rests on (half-space trees).
    """

    origin: np.ndarray
    width: float
    perm: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    center: np.ndarray
    size: np.ndarray
    radius: np.ndarray
    level: np.ndarray
    parent: np.ndarray
    child: np.ndarray
    octant: np.ndarray
    start: np.ndarray
    end: np.ndarray
    leaf: np.ndarray
    face: float = None

    @property
    def nboxes(self):
        return self.size.size

    @property
    def depth(self):
        return int(self.level.max())

    @property
    def leaves(self):
        return np.nonzero(self.leaf)[0]

    def boxes_at(self, level):
        return np.nonzero(self.level == level)[0]

    def sorted(self, values):
        """Reorder a per-particle array into tree order."""
        return np.ascontiguousarray(np.asarray(values)[self.perm])


@dataclass
class JointTree:
    """Reaction tree: a cube whose horizontal mid-plane is the interface.

    Its level-1 boxes lie entirely above or below the interface; ``upper``
    and ``lower`` are the octrees under them.
    """

    interface: float
    width: float
    upper: Octree
    lower: Octree


def build_octree(points, origin, width, leaf_capacity, max_depth=30, face=None, gap_ratio=None):
    """Adaptive octree of ``points`` inside a given cube.

    A box is split while it holds more than ``leaf_capacity`` points or, when
    ``gap_ratio`` is given, while its size exceeds ``gap_ratio`` times the
    distance of its closest point to the plane ``z = face``.

    Raises
    ------
    EmptyInput
        If there are no points.
    ValueError
        If a point lies outside the cube.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        raise EmptyInput("cannot build a tree without points")
    origin = np.asarray(origin, dtype=float)
    if np.any(pts < origin) or np.any(pts > origin + width):
        raise ValueError("points outside the root cube")
    order = np.arange(len(pts))
    centers = [origin + 0.5 * width]
    sizes = [float(width)]
    levels = [0]
    parents = [-1]
    octants = [-1]
    starts = [0]
    ends = [len(pts)]
    children = [[-1] * 8]
    gap = None if gap_ratio is None else np.abs(pts[:, 2] - face)
    b = 0
    while b < len(sizes):
        s, e = starts[b], ends[b]
        split = e - s > leaf_capacity
        if not split and gap is not None:
            split = sizes[b] > gap_ratio * gap[order[s:e]].min()
        if split and levels[b] < max_depth:
            idx = order[s:e]
            c = centers[b]
            p = pts[idx]
            oc = (p[:, 0] >= c[0]).astype(np.int64) + 2 * (p[:, 1] >= c[1]) + 4 * (p[:, 2] >= c[2])
            srt = np.argsort(oc, kind="stable")
            order[s:e] = idx[srt]
            counts = np.bincount(oc, minlength=8)
            h = 0.25 * sizes[b]
            off = s
            for o in range(8):
                if counts[o] == 0:
                    continue
                shift = np.array([h if o & 1 else -h, h if o & 2 else -h, h if o & 4 else -h])
                children[b][o] = len(sizes)
                centers.append(c + shift)
                sizes.append(0.5 * sizes[b])
                levels.append(levels[b] + 1)
                parents.append(b)
                octants.append(o)
                starts.append(off)
                ends.append(off + counts[o])
                children.append([-1] * 8)
                off += counts[o]
        b += 1
    child = np.array(children, dtype=np.int64)
    sorted_pts = pts[order]
    center = np.array(centers)
    start = np.array(starts, dtype=np.int64)
    end = np.array(ends, dtype=np.int64)
    radius = _box_radii(center, start, end, sorted_pts[:, 0].copy(), sorted_pts[:, 1].copy(),
                        sorted_pts[:, 2].copy())
    return Octree(origin=origin, width=float(width), perm=order,
                  x=np.ascontiguousarray(sorted_pts[:, 0]),
                  y=np.ascontiguousarray(sorted_pts[:, 1]),
                  z=np.ascontiguousarray(sorted_pts[:, 2]),
                  center=center, size=np.array(sizes), radius=radius,
                  level=np.array(levels, dtype=np.int64), parent=np.array(parents, dtype=np.int64),
                  child=child, octant=np.array(octants, dtype=np.int64),
                  start=start, end=end,
                  leaf=np.all(child < 0, axis=1), face=face)


def bounding_cube(points, pad=1e-9):
    """Smallest axis-aligned cube (slightly padded) containing the points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        raise EmptyInput("no points")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    w = float(np.max(hi - lo))
    w = w * (1.0 + 2 * pad) + pad + 1e-300
    return lo - 0.5 * (w - (hi - lo)), w


def half_space_tree(points, face, side, origin_xy, width, leaf_capacity, gap_ratio=None):
    """Octree over a cube resting on the plane ``z = face``.

    ``side = 1`` puts the cube above the plane, ``side = 2`` below it.
    """
    z0 = face if side == 1 else face - width
    origin = np.array([origin_xy[0], origin_xy[1], z0])
    return build_octree(points, origin, width, leaf_capacity, face=face, gap_ratio=gap_ratio)


def gap_ratio(theta):
    """Leaf-size to interface-distance ratio that rules out reaction near fields.

    Two leaves on opposite sides of an interface, each no larger than this
    multiple of its points' distance to the interface, always pass the
    acceptance test.
    """
    return 0.9 * theta / (HALF_DIAG + 0.5 * theta)


def build_tree(targets, sources=None, interface=None, leaf_capacity=40, gap_ratio=None):
    """Build a free-space octree or a reaction joint tree.

    Parameters
    ----------
    targets : array_like of shape (N, 3)
        Points of the tree (free space) or targets (reaction).
    sources : array_like of shape (M, 3), optional
        Polarized sources of a reaction tree.
    interface : float, optional
        Height of the interface separating targets and polarized sources.
    leaf_capacity : int
    gap_ratio : float, optional
        Refinement near the interface, see :func:`build_octree`.

    Returns
    -------
    Octree or JointTree

    Raises
    ------
    EmptyInput
        If no points are given.
    MixedSides
        If targets and polarized sources are not strictly on opposite sides.
    """
    tg = np.atleast_2d(np.asarray(targets, dtype=float)).reshape(-1, 3)
    if interface is None:
        pts = tg if sources is None else np.vstack([tg, np.asarray(sources, float).reshape(-1, 3)])
        origin, w = bounding_cube(pts)
        return build_octree(pts, origin, w, leaf_capacity)
    sr = np.atleast_2d(np.asarray(sources, dtype=float)).reshape(-1, 3)
    if tg.shape[0] == 0 or sr.shape[0] == 0:
        raise EmptyInput("a reaction tree needs targets and sources")
    above_t = tg[:, 2] > interface
    above_s = sr[:, 2] > interface
    if not ((np.all(above_t) and not np.any(above_s) and np.all(sr[:, 2] < interface))
            or (np.all(tg[:, 2] < interface) and np.all(above_s))):
        raise MixedSides("targets and polarized sources must be on opposite sides of the interface")
    up, lo = (tg, sr) if above_t[0] else (sr, tg)
    allp = np.vstack([tg, sr])
    xy0 = allp[:, :2].min(axis=0)
    span = max(float(np.ptp(allp[:, 0])), float(np.ptp(allp[:, 1])),
               float(up[:, 2].max() - interface), float(interface - lo[:, 2].min()))
    w = span * (1.0 + 1e-9) + 1e-12
    xy0 = xy0 - 1e-9 * w
    w *= 1.0 + 2e-9
    return JointTree(interface, 2.0 * w,
                     half_space_tree(up, interface, 1, xy0, w, leaf_capacity, gap_ratio),
                     half_space_tree(lo, interface, 2, xy0, w, leaf_capacity, gap_ratio))


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _box_radii(center, start, end, x, y, z):
    out = np.zeros(start.size)
    for b in range(start.size):
        r2 = 0.0
        for i in range(start[b], end[b]):
            dx = x[i] - center[b, 0]
            dy = y[i] - center[b, 1]
            dz = z[i] - center[b, 2]
            r2 = max(r2, dx * dx + dy * dy + dz * dz)
        out[b] = np.sqrt(r2)
    return out


@njit(cache=True, nogil=True)
def _p2m_leaves(p, lam, leaves, center, size, start, end, x, y, z, q, out):
    for k in range(leaves.size):
        b = leaves[k]
        s, e = start[b], end[b]
        p2m_into(p, lam, center[b, 0], center[b, 1], center[b, 2], size[b],
                 x[s:e], y[s:e], z[s:e], q[s:e], out[b])


@njit(cache=True, nogil=True)
def _l2p_leaves(p, lam, leaves, center, size, start, end, coeffs, x, y, z, out):
    for k in range(leaves.size):
        b = leaves[k]
        s, e = start[b], end[b]
        eval_l_into(p, lam, center[b, 0], center[b, 1], center[b, 2], size[b], coeffs[b],
                    x[s:e], y[s:e], z[s:e], out[s:e])


@njit(cache=True, nogil=True)
def _p2p_yukawa(lam, tpairs, spairs, tstart, tend, sstart, send, tx, ty, tz,
                sx, sy, sz, q, same, out):
    """Add ``sum_j q_j exp(-lam r)/r`` over leaf pairs; skips ``i == j`` if ``same``."""
    for k in range(tpairs.size):
        t, s = tpairs[k], spairs[k]
        for i in range(tstart[t], tend[t]):
            acc = 0.0
            for j in range(sstart[s], send[s]):
                if same and i == j:
                    continue
                dx = tx[i] - sx[j]
                dy = ty[i] - sy[j]
                dz = tz[i] - sz[j]
                r = np.sqrt(dx * dx + dy * dy + dz * dz)
                acc += q[j] * np.exp(-lam * r) / r
            out[i] += acc


@njit(cache=True)
def _traverse(tc, th, tsize, tchild, tleaf, sc, sh, ssize, schild, sleaf, theta):
    """Dual-tree walk; returns far (M2L) and near (P2P) box pairs."""
    far_t = [0]
    far_s = [0]
    near_t = [0]
    near_s = [0]
    far_t.pop()
    far_s.pop()
    near_t.pop()
    near_s.pop()
    stack = [(0, 0)]
    while len(stack) > 0:
        t, s = stack.pop()
        dx = tc[t, 0] - sc[s, 0]
        dy = tc[t, 1] - sc[s, 1]
        dz = tc[t, 2] - sc[s, 2]
        if np.sqrt(dx * dx + dy * dy + dz * dz) * theta > th[t] + sh[s]:
            far_t.append(t)
            far_s.append(s)
            continue
        if tleaf[t] and sleaf[s]:
            near_t.append(t)
            near_s.append(s)
            continue
        split_t = (not tleaf[t]) and (sleaf[s] or tsize[t] >= ssize[s])
        split_s = (not sleaf[s]) and (tleaf[t] or ssize[s] >= tsize[t])
        if split_t and split_s:
            for a in range(8):
                ct = tchild[t, a]
                if ct < 0:
                    continue
                for b in range(8):
                    cs = schild[s, b]
                    if cs >= 0:
                        stack.append((ct, cs))
        elif split_t:
            for a in range(8):
                ct = tchild[t, a]
                if ct >= 0:
                    stack.append((ct, s))
        else:
            for b in range(8):
                cs = schild[s, b]
                if cs >= 0:
                    stack.append((t, cs))
    return (np.array(far_t, dtype=np.int64), np.array(far_s, dtype=np.int64),
            np.array(near_t, dtype=np.int64), np.array(near_s, dtype=np.int64))


def interaction_lists(target, source, theta, source_center=None):
    """Far and near box pairs between two trees.

    ``source_center`` replaces the source tree's box centers (image trees).
    """
    sc = source.center if source_center is None else source_center
    return _traverse(np.ascontiguousarray(target.center), target.radius, target.size,
                     target.child, target.leaf, np.ascontiguousarray(sc),
                     source.radius, source.size, source.child, source.leaf, theta)


def _groups(keys):
    """Split row indices into groups of identical integer key rows."""
    if keys.shape[0] == 0:
        return []
    order = np.lexsort(keys.T[::-1])
    k = keys[order]
    brk = np.nonzero(np.any(k[1:] != k[:-1], axis=1))[0] + 1
    return np.split(order, brk)


# ---------------------------------------------------------------------------
# Passes
# ---------------------------------------------------------------------------


def upward_pass(tree, charges_sorted, lam, p, counts=None):
    """Scaled multipole coefficients of every box, shape ``(nboxes, ncoef)``."""
    nc = ncoef(p)
    me = np.zeros((tree.nboxes, nc), dtype=complex)
    leaves = tree.leaves
    _p2m_leaves(p, lam, leaves, tree.center, tree.size, tree.start, tree.end,
                tree.x, tree.y, tree.z, charges_sorted, me)
    cache = {}
    for lev in range(tree.depth, 0, -1):
        boxes = tree.boxes_at(lev)
        S_child = tree.width / 2 ** lev
        for o in range(8):
            sel = boxes[tree.octant[boxes] == o]
            if sel.size == 0:
                continue
            b = tree.center[sel[0]] - tree.center[tree.parent[sel[0]]]
            key = (lev, o)
            if key not in cache:
                cache[key] = m2m_matrix(b, lam, p, S_child, 2 * S_child)
            me[tree.parent[sel]] += me[sel] @ cache[key].T
        if counts is not None:
            counts.m2m += boxes.size
    if counts is not None:
        counts.p2m += leaves.size
    return me


def downward_pass(tree, le, lam, p, counts=None):
    """Push local expansions to the leaves and evaluate them at the particles."""
    cache = {}
    for lev in range(1, tree.depth + 1):
        boxes = tree.boxes_at(lev)
        S_child = tree.width / 2 ** lev
        for o in range(8):
            sel = boxes[tree.octant[boxes] == o]
            if sel.size == 0:
                continue
            b = tree.center[sel[0]] - tree.center[tree.parent[sel[0]]]
            key = (lev, o)
            if key not in cache:
                cache[key] = l2l_matrix(b, lam, p, 2 * S_child, S_child)
            le[sel] += le[tree.parent[sel]] @ cache[key].T
        if counts is not None:
            counts.l2l += boxes.size
    out = np.zeros(tree.x.size)
    leaves = tree.leaves
    _l2p_leaves(p, lam, leaves, tree.center, tree.size, tree.start, tree.end, le,
                tree.x, tree.y, tree.z, out)
    if counts is not None:
        counts.l2p += leaves.size
    return out


def _grid_unit(*trees):
    return min(t.width for t in trees) / 2.0 ** (max(t.depth for t in trees) + 3)


def free_space_fmm(tree, charges_sorted, lam, config, me=None, counts=None):
    """Free-space Yukawa FMM on one tree, in ``k_0`` units and tree order.

    Returns ``sum_{j != i} q_j k_0(lam r_ij)``.
    """
    counts = OpCounts() if counts is None else counts
    p = config.p
    if me is None:
        me = upward_pass(tree, charges_sorted, lam, p, counts)
    far_t, far_s, near_t, near_s = interaction_lists(tree, tree, config.theta)
    le = np.zeros_like(me)
    unit = _grid_unit(tree)
    d = tree.center[far_t] - tree.center[far_s]
    keys = np.column_stack([tree.level[far_t], tree.level[far_s], np.rint(d / unit).astype(np.int64)])
    groups = _groups(keys)
    for c0 in range(0, len(groups), 1024):
        chunk = groups[c0:c0 + 1024]
        rep_t = far_t[[g[0] for g in chunk]]
        rep_s = far_s[[g[0] for g in chunk]]
        mats = m2l_matrices(tree.center[rep_t] - tree.center[rep_s], lam, p,
                            tree.size[rep_s], tree.size[rep_t])
        for g, mat in zip(chunk, mats):
            le[far_t[g]] += me[far_s[g]] @ mat.T
    counts.matrices += len(groups)
    counts.m2l += far_t.size
    out = downward_pass(tree, le, lam, p, counts)
    near = np.zeros(tree.x.size)
    _p2p_yukawa(lam, near_t, near_s, tree.start, tree.end, tree.start, tree.end,
                tree.x, tree.y, tree.z, tree.x, tree.y, tree.z, charges_sorted, True, near)
    counts.near_pairs += int(np.sum((tree.end - tree.start)[near_t] * (tree.end - tree.start)[near_s]))
    # exp(-lam r)/r = (2 lam/pi) k_0(lam r)
    return out + near * (pi / (2.0 * lam))


@dataclass
class ReactionSource:
    """A source tree seen through the image map of one reaction component.

    The image of a source at height ``z`` sits at ``zsign * z + zshift``.
    """

    kernel: object
    tree: Octree
    charges: np.ndarray
    me: np.ndarray
    zsign: float
    zshift: float


def image_map(medium, l, lp, a, b):
    """``(zsign, zshift)`` of the affine image map of a component."""
    z0 = float(polarized_z(medium, 0.0, l, lp, a, b))
    z1 = float(polarized_z(medium, 1.0, l, lp, a, b))
    return (1.0 if z1 > z0 else -1.0), z0


def reaction_far_near(target, src, config, cache, counts):
    """Reaction M2L into ``le`` contributions and near-field potentials.

    Returns ``(le, near)`` with ``le`` of shape ``(target.nboxes, ncoef)`` and
    ``near`` per target particle in tree order.
    """
    p = config.p
    kernel = src.kernel
    tree = src.tree
    ic = tree.center.copy()
    ic[:, 2] = src.zsign * ic[:, 2] + src.zshift
    far_t, far_s, near_t, near_s = interaction_lists(target, tree, config.theta, ic)
    le = np.zeros((target.nboxes, ncoef(p)), dtype=complex)
    me = src.me if src.zsign > 0 else src.me * reflection_signs(p)
    iface = kernel.interface
    unit = _grid_unit(target, tree)
    dxy = target.center[far_t, :2] - ic[far_s, :2]
    kz_t = np.rint(np.abs(target.center[far_t, 2] - iface) / unit).astype(np.int64)
    kz_s = np.rint(np.abs(ic[far_s, 2] - iface) / unit).astype(np.int64)
    ixy = np.rint(dxy / unit).astype(np.int64)
    keys = np.column_stack([target.level[far_t], tree.level[far_s], ixy, kz_t, kz_s])
    ckey = (kernel.l, kernel.lp, kernel.a, kernel.b)
    # with equal screening on both sides only the total decay distance matters
    merge = kernel.medium.lam[kernel.l] == kernel.medium.lam[kernel.lp]
    for g in _groups(keys):
        t0, s0 = far_t[g[0]], far_s[g[0]]
        k = keys[g[0]]
        kz = (int(k[4] + k[5]), 0) if merge else (int(k[4]), int(k[5]))
        tkey = ckey + (int(k[0]), int(k[1]), int(k[2] * k[2] + k[3] * k[3])) + kz
        block = cache.get(tkey)
        if block is None:
            rho = float(np.hypot(*dxy[g[0]]))
            block = reaction_block(kernel, rho, float(target.center[t0, 2]), float(ic[s0, 2]),
                                   p, p, float(target.size[t0]), float(tree.size[s0]),
                                   tol=config.tol, xmax=config.xmax)
            cache[tkey] = block
            counts.tables += 1
        phi = float(np.arctan2(dxy[g[0], 1], dxy[g[0], 0])) if np.any(k[2:4]) else 0.0
        mat = block * phase_matrix(p, p, kernel.a, phi)
        le[far_t[g]] += me[far_s[g]] @ mat.T
        counts.matrices += 1
    counts.m2l += far_t.size
    near = np.zeros(target.x.size)
    if near_t.size:
        tt, ss = [], []
        for t, s in zip(near_t, near_s):
            ti = np.arange(target.start[t], target.end[t])
            si = np.arange(tree.start[s], tree.end[s])
            tt.append(np.repeat(ti, si.size))
            ss.append(np.tile(si, ti.size))
        tt = np.concatenate(tt)
        ss = np.concatenate(ss)
        tpts = np.column_stack([target.x[tt], target.y[tt], target.z[tt]])
        spts = np.column_stack([tree.x[ss], tree.y[ss], src.zsign * tree.z[ss] + src.zshift])
        u = reaction_direct_pairs(kernel, tpts, spts, tol=config.tol)
        near += np.bincount(tt, weights=u * src.charges[ss], minlength=target.x.size)
        counts.near_pairs += tt.size
    return le, near


def reaction_fmm(target, lam_target, sources, config, cache=None, counts=None):
    """Sum of reaction components sharing a target tree, in tree order."""
    counts = OpCounts() if counts is None else counts
    cache = {} if cache is None else cache
    le = np.zeros((target.nboxes, ncoef(config.p)), dtype=complex)
    near = np.zeros(target.x.size)
    for src in sources:
        l_c, n_c = reaction_far_near(target, src, config, cache, counts)
        le += l_c
        near += n_c
    return downward_pass(target, le, lam_target, config.p, counts) + near


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------


def run_free_space(charges, positions, lam, eps, config=RunConfig()):
    """Free-space potentials ``sum_{j != i} q_j exp(-lam r)/(4 pi eps r)``."""
    q = np.asarray(charges, dtype=float)
    x = np.atleast_2d(np.asarray(positions, dtype=float))
    if x.shape[0] == 0:
        return np.zeros(0)
    tree = build_tree(x, leaf_capacity=config.leaf_capacity)
    res = free_space_fmm(tree, tree.sorted(q), lam, config)
    out = np.empty_like(res)
    out[tree.perm] = res
    return out * physical_factor(lam, eps)


def run_reaction_component(medium, charges, sources, targets, l, lp, a, b, config=RunConfig()):
    """Potentials at ``targets`` of one reaction component of the ``sources``.

    Parameters
    ----------
    medium : LayeredMedium
    charges : array_like of shape (M,)
    sources : array_like of shape (M, 3)
        Original source positions in layer ``lp``.
    targets : array_like of shape (N, 3)
        Target positions in layer ``l``.
    l, lp, a, b : int
        Component.
    """
    from .polarization import polarize_many

    kernel = make_kernel(medium, l, lp, a, b)
    src = np.atleast_2d(np.asarray(sources, dtype=float))
    tg = np.atleast_2d(np.asarray(targets, dtype=float))
    q = np.asarray(charges, dtype=float)
    images = polarize_many(medium, src, l, lp, a, b)
    jt = build_tree(tg, images, kernel.interface, config.leaf_capacity, gap_ratio(config.theta))
    ttree, stree = (jt.upper, jt.lower) if a == 1 else (jt.lower, jt.upper)
    qs = stree.sorted(q)
    me = upward_pass(stree, qs, float(medium.lam[lp]), config.p)
    rs = ReactionSource(kernel, stree, qs, me, 1.0, 0.0)
    res = reaction_fmm(ttree, float(medium.lam[l]), [rs], config)
    out = np.empty_like(res)
    out[ttree.perm] = res
    return out


@dataclass
class PotentialReport:
    """Potentials of a charge system and run statistics.

    Attributes
    ----------
    total, free, reaction : ndarray
        Per-particle potentials in input order.
    layer : ndarray of int
        Layer of each particle.
    components : dict
        ``(l, lp, a, b) -> potentials`` at the layer ``l`` particles (input
        order within the layer); filled when ``config.breakdown`` is set.
    timings : dict
        Wall-clock seconds of the free-space and reaction parts.
    counts : dict
        :class:`OpCounts` of the free-space and reaction parts.
    """

    total: np.ndarray
    free: np.ndarray
    reaction: np.ndarray
    layer: np.ndarray
    components: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)


def _layer_trees(medium, positions, layer, leaf_capacity, ratio):
    """Half-space trees of every layer, keyed by ``(l, side)``."""
    occupied = [l for l in range(medium.n_layers) if np.any(layer == l)]
    xy0 = positions[:, :2].min(axis=0)
    span = float(np.max(np.ptp(positions[:, :2], axis=0)))
    for l in occupied:
        z = positions[layer == l, 2]
        if l < medium.n_layers - 1:
            span = max(span, float(z.max() - medium.bottom(l)))
        if l > 0:
            span = max(span, float(medium.top(l) - z.min()))
    w = span * (1.0 + 1e-9) + 1e-12
    xy0 = xy0 - 1e-9 * w
    w *= 1.0 + 2e-9
    trees = {}
    for l in occupied:
        idx = np.nonzero(layer == l)[0]
        sides = [s for s in (1, 2) if (s == 1 and l < medium.n_layers - 1) or (s == 2 and l > 0)]
        for s in sides:
            face = medium.bottom(l) if s == 1 else medium.top(l)
            t = half_space_tree(positions[idx], face, s, xy0, w, leaf_capacity, ratio)
            trees[(l, s)] = (t, idx)
    return trees


def _run_tasks(fns, workers):
    if workers <= 1:
        return [f() for f in fns]
    with ThreadPoolExecutor(workers) as ex:
        futs = [ex.submit(f) for f in fns]
        return [f.result() for f in futs]


def compute_all(medium, charges, positions, config=RunConfig(), parts=("free", "reaction")):
    """Free-space and reaction potentials of charges in a layered medium.

    Parameters
    ----------
    medium : LayeredMedium
    charges : array_like of shape (N,)
    positions : array_like of shape (N, 3)
    config : RunConfig
    parts : tuple of str
        Subset of ``("free", "reaction")`` to compute.

    Returns
    -------
    PotentialReport
    """
    q = np.asarray(charges, dtype=float)
    x = np.atleast_2d(np.asarray(positions, dtype=float))
    if x.shape[0] == 0:
        raise EmptyInput("no particles")
    layer = np.asarray(medium.layer_of(x[:, 2]))
    n = x.shape[0]
    free = np.zeros(n)
    react = np.zeros(n)
    timings = {}
    counts = {"free": OpCounts(), "reaction": OpCounts()}
    components = {}

    if "free" in parts:
        t0 = time.perf_counter()
        layers = [l for l in range(medium.n_layers) if np.any(layer == l)]

        def free_task(l):
            idx = np.nonzero(layer == l)[0]
            c = OpCounts()
            lam = float(medium.lam[l])
            tree = build_tree(x[idx], leaf_capacity=config.leaf_capacity)
            res = free_space_fmm(tree, tree.sorted(q[idx]), lam, config, counts=c)
            vals = np.empty_like(res)
            vals[tree.perm] = res
            return idx, vals * physical_factor(lam, float(medium.eps[l])), c

        for idx, vals, c in _run_tasks([lambda l=l: free_task(l) for l in layers], config.workers):
            free[idx] = vals
            counts["free"].add(c)
        timings["free"] = time.perf_counter() - t0

    if "reaction" in parts:
        t0 = time.perf_counter()
        trees = _layer_trees(medium, x, layer, config.leaf_capacity, gap_ratio(config.theta))
        c_up = OpCounts()
        me = {key: upward_pass(t, t.sorted(q[idx]), float(medium.lam[key[0]]), config.p, c_up)
              for key, (t, idx) in trees.items()}

        def sources_for(l, a, only=None):
            out = []
            for lp in range(medium.n_layers):
                for aa, b in medium.components(l, lp):
                    if aa != a or (lp, b) not in trees:
                        continue
                    if only is not None and (l, lp, aa, b) != only:
                        continue
                    st, sidx = trees[(lp, b)]
                    sg, sh = image_map(medium, l, lp, a, b)
                    out.append(ReactionSource(make_kernel(medium, l, lp, a, b), st,
                                              st.sorted(q[sidx]), me[(lp, b)], sg, sh))
            return out

        def react_task(key, only=None):
            l, a = key
            tree, idx = trees[key]
            c = OpCounts()
            res = reaction_fmm(tree, float(medium.lam[l]), sources_for(l, a, only), config, {}, c)
            return key, only, res, c

        if config.breakdown:
            jobs = [lambda key=key, comp=comp: react_task(key, comp)
                    for key in trees
                    for comp in [(key[0], lp, key[1], b) for lp in range(medium.n_layers)
                                 for aa, b in medium.components(key[0], lp)
                                 if aa == key[1] and (lp, b) in trees]]
        else:
            jobs = [lambda key=key: react_task(key) for key in trees]
        for key, only, res, c in _run_tasks(jobs, config.workers):
            tree, idx = trees[key]
            vals = np.empty_like(res)
            vals[tree.perm] = res
            react[idx] += vals
            counts["reaction"].add(c)
            if only is not None:
                components[only] = vals
        counts["reaction"].add(c_up)
        timings["reaction"] = time.perf_counter() - t0
    return PotentialReport(free + react, free, react, layer, components, timings, counts)
