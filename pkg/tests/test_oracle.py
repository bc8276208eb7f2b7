import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from layerpb.errors import DivergentIntegral, InterfaceCollision
from layerpb.medium import LayeredMedium
from layerpb.oracle import (direct_free, direct_potentials, direct_reaction,
                            direct_reaction_many)
from layerpb.polarization import make_kernel, polarize, reaction_direct

MED = LayeredMedium([0.0, -1.2], [1.0, 8.6, 20.5], [1.2, 0.5, 2.1])
HOMOG = LayeredMedium([0.0, -1.2], [2.0, 2.0, 2.0], [0.7, 0.7, 0.7])


def test_direct_free_two_charges():
    x = np.array([[0.0, 0.0, 0.0], [0.3, -0.4, 0.0]])
    phi = direct_free([2.0, -1.0], x, 1.2, 3.0)
    d = 0.5
    assert phi[0] == pytest.approx(-np.exp(-1.2 * d) / (4 * np.pi * 3.0 * d), rel=1e-14)
    assert phi[1] == pytest.approx(2 * np.exp(-1.2 * d) / (4 * np.pi * 3.0 * d), rel=1e-14)


def test_direct_free_coincident_raises():
    with pytest.raises(ValueError):
        direct_free([1.0, 1.0], np.zeros((2, 3)), 1.0, 1.0)


def test_direct_free_permutation():
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, (40, 3))
    q = rng.normal(size=40)
    perm = rng.permutation(40)
    a = direct_free(q, x, 0.8, 1.5)
    b = direct_free(q[perm], x[perm], 0.8, 1.5)
    np.testing.assert_allclose(b, a[perm], rtol=1e-13, atol=1e-15)


def test_homogeneous_reaction_zero():
    r = direct_reaction(HOMOG, [0.1, 0.2, -0.3], [0.0, 0.0, -0.8], 1, 1, 1, 1)
    assert r == 0.0


@settings(max_examples=15, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_inplane_translation_invariance(dx, dy):
    r = np.array([0.2, -0.1, 0.5])
    rp = np.array([-0.3, 0.4, 0.9])
    shift = np.array([dx, dy, 0.0])
    a = direct_reaction(MED, r, rp, 0, 0, 1, 1)
    b = direct_reaction(MED, r + shift, rp + shift, 0, 0, 1, 1)
    assert b == pytest.approx(a, rel=1e-12)


def test_reaction_symmetric_in_swapped_points():
    # same-layer 11 kernel depends on the heights only through their sum
    r = np.array([0.2, -0.1, 0.5])
    rp = np.array([-0.3, 0.4, 0.9])
    a = direct_reaction(MED, r, rp, 0, 0, 1, 1)
    b = direct_reaction(MED, rp, r, 0, 0, 1, 1)
    assert b == pytest.approx(a, rel=1e-12)


def test_tighter_tolerance_agrees():
    r = np.array([0.1, 0.0, -0.5])
    rp = np.array([0.4, 0.3, -2.0])
    a = direct_reaction(MED, r, rp, 1, 2, 2, 2, tol=1e-10)
    b = direct_reaction(MED, r, rp, 1, 2, 2, 2, tol=1e-13)
    assert a == pytest.approx(b, rel=1e-8)


def test_point_on_interface_raises():
    with pytest.raises(InterfaceCollision):
        direct_reaction(MED, [0, 0, 0.0], [0, 0, 0.5], 0, 0, 1, 1)


def test_point_outside_layer_raises():
    with pytest.raises(DivergentIntegral):
        direct_reaction(MED, [0, 0, -0.5], [0, 0, 0.5], 0, 0, 1, 1)


@pytest.mark.parametrize("l,lp", [(0, 0), (0, 1), (1, 1), (1, 2), (2, 1), (2, 2)])
def test_agrees_with_polarized_kernel(l, lp):
    rng = np.random.default_rng(10 * l + lp)
    zr = {0: (0.1, 1.0), 1: (-1.1, -0.1), 2: (-2.2, -1.3)}
    for a, b in MED.components(l, lp):
        r = np.array([*rng.uniform(-0.5, 0.5, 2), rng.uniform(*zr[l])])
        rp = np.array([*rng.uniform(-0.5, 0.5, 2), rng.uniform(*zr[lp])])
        src = polarize(MED, 1.0, rp, l, lp, a, b)
        u = direct_reaction(MED, r, rp, l, lp, a, b)
        ut = reaction_direct(make_kernel(MED, l, lp, a, b), r, src.polarized)
        assert ut == pytest.approx(u, rel=1e-10)


def test_vectorized_matches_scalar():
    rng = np.random.default_rng(4)
    tg = np.column_stack([rng.uniform(-1, 1, (6, 2)), rng.uniform(-1.1, -0.1, 6)])
    sr = np.column_stack([rng.uniform(-1, 1, (6, 2)), rng.uniform(-2.5, -1.3, 6)])
    many = direct_reaction_many(MED, 1, 2, 1, 2, tg, sr)
    one = [direct_reaction(MED, t, s, 1, 2, 1, 2) for t, s in zip(tg, sr)]
    np.testing.assert_allclose(many, one, rtol=1e-12)


def test_direct_potentials_linear_and_split():
    rng = np.random.default_rng(5)
    x = np.vstack([
        np.column_stack([rng.uniform(-0.5, 0.5, (4, 2)), rng.uniform(0.1, 1.0, 4)]),
        np.column_stack([rng.uniform(-0.5, 0.5, (4, 2)), rng.uniform(-1.1, -0.1, 4)]),
        np.column_stack([rng.uniform(-0.5, 0.5, (4, 2)), rng.uniform(-2.0, -1.3, 4)]),
    ])
    q = rng.choice([-1.0, 1.0], 12)
    tot, free, react = direct_potentials(MED, q, x)
    np.testing.assert_allclose(tot, free + react)
    tot2, _, _ = direct_potentials(MED, 2 * q, x)
    np.testing.assert_allclose(tot2, 2 * tot, rtol=1e-13)
    # the self term makes a lone charge see its own polarization
    t1, f1, r1 = direct_potentials(MED, [1.0], x[:1])
    assert f1[0] == 0.0 and r1[0] != 0.0
    _, _, r0 = direct_potentials(MED, [1.0], x[:1], include_self=False)
    assert r0[0] == 0.0
