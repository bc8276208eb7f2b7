import numpy as np
import pytest

from layerpb.errors import EmptyInput, MixedSides
from layerpb.fmm import (RunConfig, build_tree, compute_all, gap_ratio, interaction_lists,
                         run_free_space, run_reaction_component)
from layerpb.medium import LayeredMedium
from layerpb.oracle import direct_free, direct_potentials, direct_reaction_many
from layerpb.polarization import polarize_many

MED = LayeredMedium([0.0, -1.2], [1.0, 8.6, 20.5], [1.2, 0.5, 2.1])
HOMOG = LayeredMedium([0.0, -1.2], [2.0, 2.0, 2.0], [0.7, 0.7, 0.7])


def blob(rng, n, center, radius=0.45):
    pts = rng.normal(size=(n, 3))
    pts *= radius * rng.uniform(0, 1, (n, 1)) ** (1 / 3) / np.linalg.norm(pts, axis=1)[:, None]
    return pts + np.asarray(center)


def three_layer_system(n=300, seed=0):
    rng = np.random.default_rng(seed)
    x = np.vstack([blob(rng, n // 3, [0, 0, 0.6]), blob(rng, n // 3, [0, 0, -0.6]),
                   blob(rng, n - 2 * (n // 3), [0, 0, -1.8])])
    q = rng.choice([-1.0, 1.0], n)
    return q, x


def rel2(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# --- trees ------------------------------------------------------------------

def test_leaves_respect_capacity():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (2000, 3))
    t = build_tree(x, leaf_capacity=30)
    counts = t.end[t.leaves] - t.start[t.leaves]
    assert counts.max() <= 30
    assert counts.sum() == 2000
    np.testing.assert_array_equal(np.sort(t.perm), np.arange(2000))


def test_children_inside_parent():
    rng = np.random.default_rng(1)
    t = build_tree(rng.uniform(-1, 1, (500, 3)), leaf_capacity=10)
    for b in range(1, t.nboxes):
        par = t.parent[b]
        assert t.size[b] == pytest.approx(0.5 * t.size[par])
        assert np.all(np.abs(t.center[b] - t.center[par]) <= 0.25 * t.size[par] + 1e-14)


def test_joint_tree_splits_at_interface():
    rng = np.random.default_rng(2)
    tg = np.column_stack([rng.uniform(-1, 1, (50, 2)), rng.uniform(0.1, 1.0, 50)])
    sr = np.column_stack([rng.uniform(-1, 1, (50, 2)), rng.uniform(-1.0, -0.1, 50)])
    jt = build_tree(tg, sr, interface=0.0, leaf_capacity=8)
    assert np.all(jt.upper.center[:, 2] - 0.5 * jt.upper.size >= -1e-12)
    assert np.all(jt.lower.center[:, 2] + 0.5 * jt.lower.size <= 1e-12)


def test_component_22_tree_centers_above_interface():
    # targets of a 22 component lie below the top of their layer and the
    # polarized sources above it
    rng = np.random.default_rng(3)
    src = np.column_stack([rng.uniform(-0.5, 0.5, (60, 2)), rng.uniform(-1.1, -0.1, 60)])
    tg = np.column_stack([rng.uniform(-0.5, 0.5, (60, 2)), rng.uniform(-1.1, -0.1, 60)])
    images = polarize_many(MED, src, 1, 1, 2, 2)
    jt = build_tree(tg, images, MED.top(1), leaf_capacity=8)
    sel = jt.upper.level >= 1
    assert np.all(jt.upper.center[sel, 2] > MED.top(1))


def test_mixed_sides_raise():
    with pytest.raises(MixedSides):
        build_tree([[0, 0, 0.5], [0, 0, -0.5]], [[0, 0, -0.3]], interface=0.0)


def test_empty_input_raises():
    with pytest.raises(EmptyInput):
        build_tree(np.zeros((0, 3)), np.zeros((0, 3)), interface=0.0)


def test_gap_refinement_removes_reaction_near_field():
    rng = np.random.default_rng(4)
    tg = np.column_stack([rng.uniform(-1, 1, (400, 2)), rng.uniform(0.05, 1.0, 400)])
    sr = np.column_stack([rng.uniform(-1, 1, (400, 2)), rng.uniform(-1.0, -0.05, 400)])
    plain = build_tree(tg, sr, interface=0.0, leaf_capacity=20)
    refined = build_tree(tg, sr, interface=0.0, leaf_capacity=20, gap_ratio=gap_ratio(0.5))
    _, _, near_t, _ = interaction_lists(plain.upper, plain.lower, 0.5)
    assert near_t.size > 0
    _, _, near_t, _ = interaction_lists(refined.upper, refined.lower, 0.5)
    assert near_t.size == 0


# --- free space ---------------------------------------------------------------

def test_free_two_body_closed_form():
    x = np.array([[0.1, 0.2, 0.3], [0.5, -0.1, 0.0]])
    phi = run_free_space([1.0, -2.0], x, 0.9, 2.5)
    d = np.linalg.norm(x[0] - x[1])
    assert phi[0] == pytest.approx(-2.0 * np.exp(-0.9 * d) / (4 * np.pi * 2.5 * d), rel=1e-13)


def test_free_matches_direct_sum():
    rng = np.random.default_rng(5)
    x = rng.uniform(-1, 1, (500, 3))
    q = rng.normal(size=500)
    phi = run_free_space(q, x, 1.2, 1.0, RunConfig(p=10))
    ref = direct_free(q, x, 1.2, 1.0)
    assert rel2(phi, ref) < 1e-8


def test_free_linearity():
    rng = np.random.default_rng(6)
    x = rng.uniform(-1, 1, (300, 3))
    q = rng.normal(size=300)
    cfg = RunConfig(p=6, leaf_capacity=10)
    a = run_free_space(q, x, 0.5, 1.0, cfg)
    b = run_free_space(2 * q, x, 0.5, 1.0, cfg)
    np.testing.assert_allclose(b, 2 * a, rtol=1e-12, atol=1e-14)


def test_free_zero_charges():
    x = np.random.default_rng(7).uniform(-1, 1, (200, 3))
    assert np.all(run_free_space(np.zeros(200), x, 0.5, 1.0, RunConfig(leaf_capacity=10)) == 0)


# --- reaction components --------------------------------------------------------

@pytest.mark.parametrize("l,lp,a,b", [(1, 1, 1, 1), (1, 1, 2, 2), (0, 1, 1, 2), (2, 1, 2, 1)])
def test_reaction_component_matches_oracle(l, lp, a, b):
    rng = np.random.default_rng(8)
    zr = {0: (0.1, 1.0), 1: (-1.1, -0.1), 2: (-2.2, -1.3)}
    src = np.column_stack([rng.uniform(-0.5, 0.5, (100, 2)), rng.uniform(*zr[lp], 100)])
    tg = np.column_stack([rng.uniform(-0.5, 0.5, (100, 2)), rng.uniform(*zr[l], 100)])
    q = rng.choice([-1.0, 1.0], 100)
    phi = run_reaction_component(MED, q, src, tg, l, lp, a, b, RunConfig(p=10, leaf_capacity=8))
    ti, sj = np.meshgrid(np.arange(100), np.arange(100), indexing="ij")
    u = direct_reaction_many(MED, l, lp, a, b, tg[ti.ravel()], src[sj.ravel()])
    ref = (u.reshape(100, 100) * q).sum(axis=1)
    assert rel2(phi, ref) < 1e-6


def test_reaction_component_zero_charges():
    rng = np.random.default_rng(9)
    src = np.column_stack([rng.uniform(-0.5, 0.5, (50, 2)), rng.uniform(-1.1, -0.1, 50)])
    phi = run_reaction_component(MED, np.zeros(50), src, src, 1, 1, 1, 1, RunConfig(p=4))
    assert np.all(phi == 0)


def test_reaction_far_work_below_free_work():
    q, x = three_layer_system(3000, seed=10)
    rep = compute_all(MED, q, x, RunConfig(p=3, leaf_capacity=20, theta=0.5))
    assert rep.counts["reaction"].near_pairs == 0
    assert rep.counts["reaction"].m2l < rep.counts["free"].m2l


# --- whole pipeline -------------------------------------------------------------

@pytest.fixture(scope="module")
def system_and_oracle():
    q, x = three_layer_system(150, seed=11)
    return q, x, direct_potentials(MED, q, x)


def test_compute_all_matches_oracle(system_and_oracle):
    q, x, (tot, free, react) = system_and_oracle
    rep = compute_all(MED, q, x, RunConfig(p=8, leaf_capacity=8, theta=0.4))
    for l in range(3):
        i = rep.layer == l
        assert rel2(rep.total[i], tot[i]) < 1e-6
    np.testing.assert_allclose(rep.total, rep.free + rep.reaction)


def test_error_decreases_with_p(system_and_oracle):
    q, x, (tot, _, _) = system_and_oracle
    errs = [rel2(compute_all(MED, q, x, RunConfig(p=p, leaf_capacity=8)).total, tot)
            for p in (2, 4, 6, 8, 10)]
    for e0, e1 in zip(errs, errs[1:]):
        assert e1 <= 3 * e0


def test_breakdown_has_sixteen_components(system_and_oracle):
    q, x, _ = system_and_oracle
    plain = compute_all(MED, q, x, RunConfig(p=4, leaf_capacity=8))
    split = compute_all(MED, q, x, RunConfig(p=4, leaf_capacity=8, breakdown=True))
    assert len(split.components) == 16
    np.testing.assert_allclose(split.reaction, plain.reaction, rtol=1e-10, atol=1e-14)
    summed = np.zeros_like(split.reaction)
    for (l, lp, a, b), vals in split.components.items():
        summed[split.layer == l] += vals
    np.testing.assert_allclose(summed, split.reaction, rtol=1e-12, atol=1e-15)


def test_single_particle_is_self_reaction():
    x = np.array([[0.1, -0.2, -0.5]])
    rep = compute_all(MED, [1.0], x, RunConfig(p=12))
    _, f, r = direct_potentials(MED, [1.0], x)
    assert rep.free[0] == 0.0
    assert rep.total[0] == pytest.approx(r[0], rel=1e-9)


def test_homogeneous_medium_reduces_to_free_space():
    # with no contrast the cross-layer reaction carries the whole interaction
    # between layers and the total is a single free-space sum
    q, x = three_layer_system(90, seed=12)
    rep = compute_all(HOMOG, q, x, RunConfig(p=10, leaf_capacity=8))
    ref = direct_free(q, x, 0.7, 2.0)
    assert rel2(rep.total, ref) < 1e-6


def test_pipeline_linear_and_deterministic():
    q, x = three_layer_system(120, seed=13)
    cfg = RunConfig(p=5, leaf_capacity=8)
    a = compute_all(MED, q, x, cfg)
    b = compute_all(MED, 3 * q, x, cfg)
    c = compute_all(MED, q, x, cfg)
    np.testing.assert_allclose(b.total, 3 * a.total, rtol=1e-12, atol=1e-14)
    np.testing.assert_array_equal(a.total, c.total)


def test_workers_do_not_change_results():
    q, x = three_layer_system(120, seed=14)
    a = compute_all(MED, q, x, RunConfig(p=4, leaf_capacity=8))
    b = compute_all(MED, q, x, RunConfig(p=4, leaf_capacity=8, workers=3))
    np.testing.assert_allclose(b.total, a.total, rtol=1e-13, atol=1e-15)


def test_config_validation():
    with pytest.raises(ValueError):
        RunConfig(p=0)
    with pytest.raises(ValueError):
        RunConfig(theta=1.5)
