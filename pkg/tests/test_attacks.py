import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from shapely.geometry import Point, Polygon

from drivesafe.attacks import effects as E
from drivesafe.attacks import patch as PA
from drivesafe.attacks.pgd import PerturbationConfig, pgd_attack, pgd_perturb, sign_ascent
from drivesafe.generator import generate_suite, make_scenario
from drivesafe.perception import surrogate as S
from drivesafe.scenario import INTENTIONS, Intention, adjacent_lane
from drivesafe.seeding import rng_for


@pytest.fixture(scope="module")
def det():
    return S.load_default()


def scene(seed, n=2):
    rng = np.random.default_rng(seed)
    labels = S.random_layout(rng, n)
    return S.render(labels), labels


# --- pgd ------------------------------------------------------------------


def test_zero_iterations_is_identity(det):
    img, labels = scene(0)
    out = pgd_perturb(det, img, labels, PerturbationConfig(0.1, 0.1, 0))
    assert np.array_equal(out.left, img.left) and np.array_equal(out.right, img.right)


@pytest.mark.parametrize("eps,alpha,n", [(0.1, 0.1, 5), (1.0, 0.5, 4), (0.3, 2.0, 3)])
def test_step_and_total_bounds(det, eps, alpha, n):
    img, labels = scene(1)
    tr = pgd_attack(det, img, labels, PerturbationConfig(eps, alpha, n))
    assert len(tr.step_linf) == n and len(tr.losses) == n + 1
    assert all(s <= eps for s in tr.step_linf)
    total = max(np.abs(tr.image.left - img.left).max(), np.abs(tr.image.right - img.right).max())
    assert total <= n * eps + 1e-9
    assert tr.image.left.min() >= 0 and tr.image.left.max() <= 255


def test_loss_does_not_decrease(det):
    for seed in range(5):
        img, labels = scene(10 + seed)
        tr = pgd_attack(det, img, labels, PerturbationConfig(0.1, 0.1, 5))
        assert all(b >= a for a, b in zip(tr.losses, tr.losses[1:]))
        assert tr.final_loss >= tr.losses[0]


def test_scalar_quadratic_hand_case():
    c = 5.0

    def lg(left, right):
        x = left[0, 0, 0]
        return (x - c) ** 2, 2 * (x - c) * np.ones_like(left), np.zeros_like(right)

    x0 = np.full((1, 1, 1), 2.0)
    left, right, losses, norms = sign_ascent(x0, np.zeros((1, 1, 1)), lg, PerturbationConfig(1.0, 1.0, 1))
    assert left[0, 0, 0] == 1.0  # gradient -6 < 0 -> step -1
    assert losses == [9.0, 16.0] and norms == [1.0]


def test_config_validation():
    with pytest.raises(ValueError):
        PerturbationConfig(-1.0, 0.1, 1)
    with pytest.raises(ValueError):
        PerturbationConfig(0.1, 0.1, -1)
    assert PerturbationConfig(0.1, 0.1, 10).typical_range


# --- patch ----------------------------------------------------------------


def gray_spec(r=10, loc=(60, 100), lam=12, rot=0.0, value=128.0):
    p = np.full((2 * r + 1, 2 * r + 1, 3), value)
    return PA.PatchSpec(p, loc, (loc[0], loc[1] - lam), rot)


def test_gray_patch_changes_exactly_the_disc():
    img = S.StereoImagePair(np.zeros((S.HEIGHT, S.WIDTH, 3)), np.zeros((S.HEIGHT, S.WIDTH, 3)))
    spec = gray_spec()
    out = PA.apply_patch(img, spec)
    r = spec.radius
    expect = np.zeros((S.HEIGHT, S.WIDTH), bool)
    expect[60 : 60 + 2 * r + 1, 100 : 100 + 2 * r + 1] = PA.disc_mask(r)
    assert np.array_equal(out.left.any(-1), expect)
    assert np.array_equal(out.right.any(-1), np.roll(expect, -12, axis=1))


def test_zero_disparity_same_columns():
    rng = np.random.default_rng(0)
    img = S.StereoImagePair(rng.uniform(0, 255, (S.HEIGHT, S.WIDTH, 3)), rng.uniform(0, 255, (S.HEIGHT, S.WIDTH, 3)))
    spec = gray_spec(lam=0, value=3.0)
    out = PA.apply_patch(img, spec)
    assert np.array_equal(out.left != img.left, out.right != img.right)


@given(st.integers(2, PA.MAX_RADIUS), st.floats(-PA.MAX_ROTATION, PA.MAX_ROTATION))
def test_modified_pixel_count_near_disc_area(r, rot):
    img = S.StereoImagePair(np.zeros((S.HEIGHT, S.WIDTH, 3)), np.zeros((S.HEIGHT, S.WIDTH, 3)))
    spec = gray_spec(r=r, loc=(10, 60), lam=5, rot=rot)
    n = int(PA.apply_patch(img, spec).left.any(-1).sum())
    assert abs(n - math.pi * r * r) <= 2 * math.pi * r


def test_rotation_free_paste_is_idempotent():
    rng = np.random.default_rng(1)
    img = S.StereoImagePair(rng.uniform(0, 255, (S.HEIGHT, S.WIDTH, 3)), rng.uniform(0, 255, (S.HEIGHT, S.WIDTH, 3)))
    p = rng.uniform(0, 255, (21, 21, 3))
    spec = PA.PatchSpec(p, (30, 90), (30, 70), 0.0)
    once = PA.apply_patch(img, spec)
    twice = PA.apply_patch(once, spec)
    assert np.array_equal(once.left, twice.left) and np.array_equal(once.right, twice.right)


def test_patch_gradient_is_the_adjoint_of_pasting():
    rng = np.random.default_rng(2)
    zero = S.StereoImagePair(np.zeros((S.HEIGHT, S.WIDTH, 3)), np.zeros((S.HEIGHT, S.WIDTH, 3)))
    p = rng.normal(size=(15, 15, 3))
    spec = PA.PatchSpec(p, (40, 80), (40, 60), 0.13)
    gl, gr = rng.normal(size=(2, S.HEIGHT, S.WIDTH, 3))
    pasted = PA.apply_patch(zero, spec)
    lhs = np.sum(pasted.left * gl) + np.sum(pasted.right * gr)
    rhs = np.sum(p * PA.patch_gradient(spec, gl, gr))
    assert lhs == pytest.approx(rhs)


def test_spec_validation():
    with pytest.raises(ValueError):
        gray_spec(r=PA.MAX_RADIUS + 1)
    with pytest.raises(ValueError):
        gray_spec(rot=0.3)
    with pytest.raises(PA.PatchOutOfBounds):
        PA.apply_patch(S.render([]), gray_spec(loc=(S.HEIGHT - 5, 100)))


@given(st.integers(0, 10_000), st.sampled_from([None, *INTENTIONS]), st.integers(4, 24))
def test_sampled_placements_stay_inside(seed, intention, r):
    policy = PA.PlacementPolicy("specific", intention) if intention else PA.PlacementPolicy()
    patch = np.zeros((2 * r + 1, 2 * r + 1, 3))
    spec = PA.sample_placement(np.random.default_rng(seed), patch, policy)
    img = S.render([])
    PA.apply_patch(img, spec)  # raises when outside
    assert spec.disparity in PA.DISPARITIES and abs(spec.rotation) <= PA.MAX_ROTATION
    x, y = spec.center_world()
    assert PA.PATCH_X_RANGE[0] - 1 <= x <= PA.PATCH_X_RANGE[1] + 1
    if intention:
        y0 = intention.lane_offset * PA.LANE_WIDTH
        assert abs(y - y0) <= PA.LANE_WIDTH / 2


def test_zero_step_returns_initialization(det):
    data = [scene(3)]
    cfg = PA.PatchTrainingConfig(epochs=1, step_size=0.0, radius=6, seed=9)
    res = PA.train_patch(det, data, cfg)
    init = rng_for(9, "patch-init").uniform(0.0, S.CAR_INTENSITY, (13, 13, 3))
    assert np.array_equal(res.patch, init)
    assert len(res.curve) == 2


def test_training_is_seeded_and_improves(det):
    data = [scene(s) for s in range(3)]
    cfg = PA.PatchTrainingConfig(epochs=8, radius=8, seed=4)
    a = PA.train_patch(det, data, cfg)
    b = PA.train_patch(det, data, cfg)
    assert np.array_equal(a.patch, b.patch) and a.curve == b.curve
    assert len(a.curve) == 9 and min(a.curve) <= a.curve[0]
    with pytest.raises(ValueError):
        PA.train_patch(det, [], cfg)


def test_patch_file_round_trip(tmp_path):
    p = np.random.default_rng(0).integers(0, 256, (9, 9, 3)).astype(float)
    PA.save_patch(tmp_path / "p.ppm", p, {"seed": 3})
    q, meta = PA.load_patch(tmp_path / "p.ppm")
    assert np.array_equal(p, q) and meta == {"seed": 3, "radius": 4}


# --- detection-level effects ----------------------------------------------


def objects_of(s):
    return list(s.objects)


def test_zero_intensity_is_identity():
    s = make_scenario(0, 3)
    for kind in E.EffectKind:
        m = E.EffectModel(kind, 0.0)
        assert E.inject_effect(objects_of(s), s, m) == objects_of(s)


def test_roadside_ghosts_are_off_road():
    for s in generate_suite(4, 40):
        out = E.inject_effect(objects_of(s), s, E.EffectModel("roadside-ghosts", 6.0))
        ghosts = [o for o in out if o.box.ghost]
        lanes = [Polygon(l.polygon()) for l in s.lanes]
        for g in ghosts:
            assert not any(p.covers(Point(*g.box.xy)) for p in lanes)
            assert 0 < g.box.center[0] - s.ego.x <= E.MAX_RANGE
            assert not g.is_moving and E.SCORE_RANGE[0] <= g.box.score <= E.SCORE_RANGE[1]


def test_specific_right_ghost_in_right_lane():
    hits = 0
    for s in generate_suite(5, 60):
        m = E.EffectModel("on-road-patch-ghost", 1.0, "specific", Intention.RIGHT)
        out = E.inject_effect(objects_of(s), s, m)
        ghosts = [o for o in out if o.box.ghost]
        right = adjacent_lane(s.lanes, s.ego_lane(), Intention.RIGHT.lane_offset)
        if right is None:
            assert not ghosts
            continue
        assert len(ghosts) == 1
        hits += 1
        assert Polygon(s.lanes[right].polygon()).contains(Point(*ghosts[0].box.xy))
        assert E.ghost_intention(s, ghosts[0]) is Intention.RIGHT
    assert hits > 10


def test_random_ghost_on_road():
    for s in generate_suite(6, 40):
        out = E.inject_effect(objects_of(s), s, E.EffectModel("on-road-patch-ghost", 1.0))
        (g,) = [o for o in out if o.box.ghost]
        assert any(Polygon(l.polygon()).contains(Point(*g.box.xy)) for l in s.lanes)


@given(st.integers(0, 1000), st.sampled_from(list(E.EffectKind)), st.floats(0, 8))
def test_real_objects_kept(seed, kind, intensity):
    s = make_scenario(seed, 0)
    if kind is E.EffectKind.BOX_DRIFT:
        intensity = min(intensity, 0.5)
    out = E.inject_effect(objects_of(s), s, E.EffectModel(kind, intensity, seed=seed))
    real = [o for o in out if not o.box.ghost]
    assert len(real) == len(s.objects)
    for a, b in zip(real, s.objects):
        assert a.is_moving == b.is_moving and a.velocity == b.velocity and a.box.dims == b.box.dims
        if kind is not E.EffectKind.BOX_DRIFT:
            assert a == b


def test_drift_statistics():
    rng = np.random.default_rng(0)
    s = make_scenario(1, 2)
    while not s.objects:
        s = make_scenario(1, int(rng.integers(100)))
    m = E.EffectModel("box-drift", 0.2)
    dx = []
    for k in range(400):
        out = E.inject_effect(objects_of(s), s, m, rng=np.random.default_rng(k))
        dx += [o.box.center[0] - r.box.center[0] for o, r in zip(out, s.objects)]
    dx = np.array(dx)
    assert abs(dx.mean()) < 0.03 and dx.std() == pytest.approx(0.2, rel=0.1)


def test_effect_model_validation():
    with pytest.raises(ValueError):
        E.EffectModel("box-drift", -1.0)
    with pytest.raises(ValueError):
        E.EffectModel("on-road-patch-ghost", 1.0, "specific")
    assert E.perturbation_effect(0)[0].intensity == 0 and E.perturbation_effect(4)[1].intensity == 0.2
