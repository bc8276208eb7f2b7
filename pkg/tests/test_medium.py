import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from layerpb.errors import (InadmissibleComponent, InterfaceCollision,
                            UnsupportedLayerCount)
from layerpb.medium import (LayeredMedium, densities_general, densities_three_layer,
                            lambda_z, layer_of)

THREE_LAYER = dict(d=[0.0, -1.2], eps=[1.0, 8.6, 20.5], lam=[1.2, 0.5, 2.1])


@pytest.fixture
def med():
    return LayeredMedium(**THREE_LAYER)


def test_validation():
    with pytest.raises(ValueError):
        LayeredMedium([0.0, 1.0], [1, 1, 1], [1, 1, 1])
    with pytest.raises(ValueError):
        LayeredMedium([0.0], [1, 1, 1], [1, 1])
    with pytest.raises(ValueError):
        LayeredMedium([0.0], [1, -1], [1, 1])


def test_layer_of(med):
    assert layer_of(med, 0.3) == 0
    assert layer_of(med, -0.3) == 1
    assert layer_of(med, -5.0) == 2
    np.testing.assert_array_equal(med.layer_of(np.array([1.0, -1.0, -2.0])), [0, 1, 2])
    with pytest.raises(InterfaceCollision):
        med.layer_of(-1.2)


def test_lambda_z(med):
    assert lambda_z(med, 2, 0.0) == pytest.approx(2.1)
    assert med.lambda_z(1, 1.2) == pytest.approx(np.hypot(0.5, 1.2))


def test_components(med):
    assert med.components(0, 0) == [(1, 1)]
    assert med.components(0, 1) == [(1, 1), (1, 2)]
    assert med.components(1, 1) == [(1, 1), (1, 2), (2, 1), (2, 2)]
    assert len(med.all_components()) == 16
    with pytest.raises(InadmissibleComponent):
        med.check_component(2, 1, 1, 1)


def test_three_layer_matches_general(med):
    lr = np.linspace(0.0, 50.0, 100)
    for lp in range(3):
        a = densities_three_layer(med, lp, lr)
        b = densities_general(med, lp, lr)
        assert a.keys() == b.keys()
        for key in a:
            np.testing.assert_allclose(a[key], b[key], rtol=1e-10, atol=1e-300)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.5, 30.0), min_size=3, max_size=3),
       st.lists(st.floats(0.1, 4.0), min_size=3, max_size=3),
       st.floats(0.1, 3.0), st.floats(-2.0, 2.0))
def test_three_layer_matches_general_random_media(eps, lam, h, d0):
    m = LayeredMedium([d0, d0 - h], eps, lam)
    lr = np.linspace(0.0, 40.0, 60)
    for lp in range(3):
        a = densities_three_layer(m, lp, lr)
        b = densities_general(m, lp, lr)
        for key in a:
            np.testing.assert_allclose(a[key], b[key], rtol=1e-9, atol=1e-14)


def test_two_layer_reflection_coefficient():
    m = LayeredMedium([0.3], [2.0, 7.0], [0.8, 1.6])
    lr = np.linspace(0, 10, 11)
    q0 = 2.0 * np.sqrt(0.8 ** 2 + lr ** 2)
    q1 = 7.0 * np.sqrt(1.6 ** 2 + lr ** 2)
    out = densities_general(m, 0, lr)
    np.testing.assert_allclose(out[(0, 1, 1)], (q0 - q1) / (2.0 * (q0 + q1)), rtol=1e-13)
    l1z = np.sqrt(1.6 ** 2 + lr ** 2)
    np.testing.assert_allclose(out[(1, 2, 1)], 2.0 * l1z / (q0 + q1), rtol=1e-13)


def test_homogeneous_same_layer_densities_vanish():
    m = LayeredMedium([0.0, -1.0], [3.0] * 3, [0.7] * 3)
    lr = np.linspace(0, 20, 30)
    for lp in range(3):
        for f in (densities_general, densities_three_layer):
            out = f(m, lp, lr)
            for (l, a, b), v in out.items():
                if l == lp:
                    assert np.max(np.abs(v)) < 1e-15
    assert m.is_homogeneous()


def test_homogeneous_transmission_carries_free_field():
    # a transmitted wave in a homogeneous stack reproduces exp(-lz|z - z'|)/(eps lz)
    m = LayeredMedium([0.0, -1.0], [3.0] * 3, [0.7] * 3)
    lr = np.array([0.0, 1.0, 5.0])
    lz = np.sqrt(0.49 + lr ** 2)
    out = densities_general(m, 0, lr)
    # the downward wave from layer 0 reaches layer 1 as B_1 exp(-lz (d0 - z))/lz; one
    # layer thickness below d0 it must equal the unscreened free wave
    np.testing.assert_allclose(out[(1, 2, 1)] * np.exp(-lz * 1.0) / lz,
                               np.exp(-lz * 1.0) / (3.0 * lz), rtol=1e-13)


def test_density_dispatch(med):
    lr = np.array([0.5, 2.0])
    np.testing.assert_allclose(med.density(1, 1, 2, 1, lr),
                               densities_general(med, 1, lr)[(1, 2, 1)], rtol=1e-12)
    with pytest.raises(UnsupportedLayerCount):
        densities_three_layer(LayeredMedium([0.0], [1, 2], [1, 1]), 0, lr)


def test_scaled_densities_finite_at_large_lr(med):
    lr = np.geomspace(1e-3, 1e4, 200)
    for lp in range(3):
        for v in densities_three_layer(med, lp, lr).values():
            assert np.all(np.isfinite(v))
