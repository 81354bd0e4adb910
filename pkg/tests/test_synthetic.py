import numpy as np
import pytest

from srnseg.camera import CameraView, Intrinsics, Pose, look_at, sample_sphere_poses
from srnseg.synthetic import (
    DEPTH_MISS,
    TEMPLATES,
    PartScene,
    Primitive,
    make_block_object,
    reference_render,
    trace,
)


def test_same_seed_same_scene():
    a = make_block_object("chair", 42)
    b = make_block_object("chair", 42)
    assert len(a.primitives) == len(b.primitives)
    for p, q in zip(a.primitives, b.primitives):
        assert p.kind == q.kind and p.class_id == q.class_id
        assert np.array_equal(p.center, q.center) and np.array_equal(p.size, q.size)
        assert np.array_equal(p.albedo, q.albedo)


def test_chair_with_arms_has_four_foreground_classes():
    scene = make_block_object("chair", 1, arms=True)
    assert scene.class_ids == {1, 2, 3, 4}
    assert sum(p.class_id == 1 for p in scene.primitives) == 4


def test_chair_without_arms():
    assert make_block_object("chair", 1, arms=False).class_ids == {1, 2, 3}


@pytest.mark.parametrize("template", sorted(TEMPLATES))
def test_hundred_seeds_inside_unit_sphere(template):
    for seed in range(100):
        scene = make_block_object(template, seed)
        assert max(p.max_extent() for p in scene.primitives) <= 1.0
        assert len(scene.class_ids) >= 2
        assert max(scene.class_ids) < len(TEMPLATES[template])


@pytest.mark.parametrize("template", sorted(TEMPLATES))
def test_class_coverage_over_twenty_consecutive_seeds(template):
    for start in (0, 100, 777):
        seen = set()
        for seed in range(start, start + 20):
            seen |= make_block_object(template, seed).class_ids
        assert seen == set(range(1, len(TEMPLATES[template])))


def test_unknown_template():
    with pytest.raises(ValueError):
        make_block_object("sofa", 0)


def test_primitive_validation():
    with pytest.raises(ValueError):
        Primitive("box", [0, 0, 0], [1, -1, 1], [1, 1, 1], 1)
    with pytest.raises(ValueError):
        Primitive("box", [0, 0, 0], [1, 1, 1], [1, 1, 1], 0)


def _unit_box_scene():
    return PartScene([Primitive("box", [0, 0, 0], [1, 1, 1], [0.5, 0.5, 0.5], 1)], 0, "chair")


def test_box_depth_along_axis():
    o = np.array([[0.0, 0.0, -2.5]])
    d = np.array([[0.0, 0.0, 1.0]])
    rgb, label, depth = trace(_unit_box_scene(), o, d)
    assert depth[0] == pytest.approx(1.5, abs=1e-12)
    assert label[0] == 1


def test_box_depth_in_rendered_view():
    view = CameraView(Intrinsics(20.0, 20.0, 15.5, 15.5), look_at([0, 0, -2.5]), 31, 31)
    _, mask, depth = reference_render(_unit_box_scene(), view)
    assert depth[15, 15] == pytest.approx(1.5, abs=1e-12)
    assert mask[15, 15] == 1


def test_miss_is_white_background():
    o = np.array([[0.0, 5.0, -2.5]])
    d = np.array([[0.0, 0.0, 1.0]])
    rgb, label, depth = trace(_unit_box_scene(), o, d)
    assert label[0] == 0 and depth[0] == DEPTH_MISS
    assert np.array_equal(rgb[0], [1.0, 1.0, 1.0])


@pytest.mark.parametrize("kind,size", [("sphere", [0.4]), ("cylinder", [0.3, 0.5]), ("box", [0.2, 0.3, 0.4])])
def test_hits_agree_with_brute_force_marching(kind, size):
    prim = Primitive(kind, [0.1, -0.05, 0.2], size, [1, 0, 0], 1)
    scene = PartScene([prim], 0, "chair")
    rng = np.random.default_rng(0)
    o = np.tile([[0.0, 0.3, -2.5]], (200, 1))
    target = rng.uniform(-0.6, 0.6, size=(200, 3)) + prim.center
    d = target - o
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    _, _, depth = trace(scene, o, d)

    def inside(p):
        q = p - prim.center
        if kind == "sphere":
            return np.linalg.norm(q, axis=-1) <= size[0]
        if kind == "box":
            return np.all(np.abs(q) <= size, axis=-1)
        return (q[..., 0] ** 2 + q[..., 2] ** 2 <= size[0] ** 2) & (np.abs(q[..., 1]) <= size[1])

    ts = np.arange(0.0, 5.0, 1e-4)
    for i in range(200):
        pts = o[i] + ts[:, None] * d[i]
        hit = np.flatnonzero(inside(pts))
        if hit.size == 0:
            assert depth[i] == np.inf
        else:
            assert depth[i] == pytest.approx(ts[hit[0]], abs=2e-4)


def test_sphere_silhouette_area():
    r, dist, res = 0.5, 2.5, 128
    scene = PartScene([Primitive("sphere", [0, 0, 0], [r], [1, 1, 1], 1)], 0, "chair")
    k = Intrinsics.for_resolution(res)
    view = CameraView(k, look_at([0, 0, -dist]), res, res)
    _, mask, _ = reference_render(scene, view)
    radius_px = k.fx * r / np.sqrt(dist**2 - r**2)
    expected = np.pi * radius_px**2
    assert abs(mask.astype(bool).sum() - expected) / expected < 0.02


def test_mask_zero_iff_depth_sentinel():
    scene = make_block_object("chair", 5)
    for pose in sample_sphere_poses(4, seed=5):
        _, mask, depth = reference_render(scene, CameraView(Intrinsics.for_resolution(32), pose, 32, 32))
        assert np.array_equal(mask == 0, depth == DEPTH_MISS)


def test_shading_within_unit_range():
    scene = make_block_object("table", 2)
    rgb, _, _ = reference_render(scene, CameraView(Intrinsics.for_resolution(32), sample_sphere_poses(1, seed=0)[0], 32, 32))
    assert rgb.min() >= 0 and rgb.max() <= 1


def test_rotated_primitive():
    rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])  # cylinder axis along -x
    prim = Primitive("cylinder", [0, 0, 0], [0.2, 0.8], [1, 1, 1], 1, rotation=rot)
    scene = PartScene([prim], 0, "chair")
    o = np.array([[0.7, 0.0, -3.0], [0.0, 0.7, -3.0]])
    d = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    _, label, depth = trace(scene, o, d)
    assert label.tolist() == [1, 0]
    assert depth[0] == pytest.approx(3.0 - 0.2)
