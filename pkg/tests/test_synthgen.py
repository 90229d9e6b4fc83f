"""Synthetic category generator: surfaces, descriptors, scenes, poses."""

import numpy as np
import pytest

from semshape import (
    CategorySpec,
    Pose,
    SceneSpec,
    SemanticCloud,
    Space,
    Symmetry,
    TooSparseError,
    chamfer_distance,
    generate_category,
    knn,
    normalize_points,
    object_aware_filter,
    random_pose,
    render_partial,
)


def _nn_spacing(points: np.ndarray) -> float:
    cloud = SemanticCloud(points)
    idx = knn(points, cloud, 2)[:, 1]  # index 0 is the point itself
    return float(np.linalg.norm(points - points[idx], axis=1).mean())


# -------------------------------------------------------------------------
# Category generation
# -------------------------------------------------------------------------


def test_spec_validation():
    with pytest.raises(ValueError):
        CategorySpec(family="teapot", instance_count=4)
    with pytest.raises(ValueError):
        CategorySpec(family="box", instance_count=1)
    with pytest.raises(ValueError):
        CategorySpec(family="box", instance_count=4, points_per_instance=8)
    with pytest.raises(ValueError):
        CategorySpec(family="box", instance_count=4, mode_ranges={"length": (0.0, 1.0)})
    spec = CategorySpec(family="BOTTLE", instance_count=4)
    assert spec.symmetry is Symmetry.AXIAL_Z
    assert spec.mode_ranges == {"height": (0.85, 1.15), "neck": (0.7, 1.3)}


def test_zero_width_modes_give_one_shape():
    spec = CategorySpec(
        family="box", instance_count=3, points_per_instance=512,
        mode_ranges={"length": (1.0, 1.0), "height": (1.0, 1.0)}, seed=61,
    )
    data = generate_category(spec)
    assert np.array_equal(data.mode_values, np.ones((3, 2)))
    # same underlying surface, independent samplings: symmetric chamfer sums
    # both one-way means, so the sampling floor sits near 2x the NN spacing
    floor = _nn_spacing(data.instances[0].points)
    for other in data.instances[1:]:
        cd = chamfer_distance(data.instances[0], other, squared=False)
        assert cd < 3.0 * floor


def test_mode_values_span_ranges():
    spec = CategorySpec(family="bottle", instance_count=20, points_per_instance=64, seed=62)
    data = generate_category(spec)
    assert data.mode_names == ["height", "neck"]
    assert data.mode_values.shape == (20, 2)
    for j, name in enumerate(data.mode_names):
        lo, hi = spec.mode_ranges[name]
        col = data.mode_values[:, j]
        assert np.all((col >= lo) & (col <= hi))
        assert col.max() - col.min() > 0.7 * (hi - lo)


def test_instances_are_normalized():
    for family in ("box", "cylinder", "bottle", "mug"):
        spec = CategorySpec(family=family, instance_count=2, points_per_instance=256, seed=63)
        for inst in generate_category(spec).instances:
            assert inst.space is Space.NOCS
            diag = np.linalg.norm(inst.points.max(axis=0) - inst.points.min(axis=0))
            assert abs(diag - 1.0) < 1e-9
            assert np.linalg.norm(inst.points.mean(axis=0)) < 1e-9


def test_generation_deterministic():
    spec = CategorySpec(family="mug", instance_count=3, points_per_instance=128, seed=64)
    a = generate_category(spec)
    b = generate_category(CategorySpec(family="mug", instance_count=3,
                                       points_per_instance=128, seed=64))
    for x, y in zip(a.instances, b.instances):
        assert np.array_equal(x.points, y.points)
        assert np.array_equal(x.descriptors, y.descriptors)
    c = generate_category(CategorySpec(family="mug", instance_count=3,
                                       points_per_instance=128, seed=65))
    assert not np.array_equal(a.instances[0].points, c.instances[0].points)


def test_descriptor_structure():
    spec = CategorySpec(family="bottle", instance_count=2, points_per_instance=256, seed=66)
    inst = generate_category(spec).instances[0]
    desc = inst.descriptors
    assert desc.shape == (256, 16)
    # blurred part one-hots stay a convex weighting
    part = desc[:, :8]
    assert np.allclose(part.sum(axis=1), 1.0, atol=1e-6)
    assert np.all((part >= 0) & (part <= 1))
    # coordinate harmonics are bounded
    assert np.all(np.abs(desc[:, 8:]) <= 1.0 + 1e-6)


def test_axial_symmetry():
    spec = CategorySpec(family="bottle", instance_count=2, points_per_instance=1024, seed=67)
    inst = generate_category(spec).instances[0]
    quarter = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    rotated = SemanticCloud(inst.points @ quarter.T, None, Space.NOCS)
    cd = chamfer_distance(inst, rotated, squared=False)
    assert cd < 2.0 * _nn_spacing(inst.points)


def test_normalize_points_rejects_degenerate():
    with pytest.raises(ValueError):
        normalize_points(np.zeros((5, 3)))


# -------------------------------------------------------------------------
# Scene rendering
# -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def bottle_instance():
    spec = CategorySpec(family="bottle", instance_count=2, points_per_instance=512, seed=68)
    return generate_category(spec).instances[0]


def test_scene_spec_validation():
    pose = Pose(np.eye(3), np.zeros(3), np.ones(3))
    with pytest.raises(ValueError):
        SceneSpec(pose, cull_fraction=0.9)
    with pytest.raises(ValueError):
        SceneSpec(pose, noise_sigma=-0.1)
    with pytest.raises(ValueError):
        SceneSpec(pose, outlier_count=-1)
    with pytest.raises(ValueError):
        SceneSpec(pose, view_direction=np.zeros(3))
    spec = SceneSpec(pose, view_direction=np.array([0.0, 0.0, 3.0]))
    assert np.allclose(spec.view_direction, [0.0, 0.0, 1.0])


def test_identity_view_is_posed_instance(bottle_instance):
    rng = np.random.Generator(np.random.PCG64(69))
    pose = random_pose(rng, bottle_instance)
    scene = render_partial(bottle_instance, SceneSpec(pose, 0.0, 0.0, 0, seed=1))
    assert scene.cloud.space is Space.CAMERA
    assert np.array_equal(scene.cloud.points, pose.to_camera(bottle_instance.points))
    assert np.array_equal(scene.cloud.descriptors, bottle_instance.descriptors)
    assert scene.outlier_ids.size == 0


def test_cull_budget(bottle_instance):
    rng = np.random.Generator(np.random.PCG64(70))
    pose = random_pose(rng, bottle_instance)
    scene = render_partial(bottle_instance, SceneSpec(pose, 0.5, 0.0, 0, seed=2))
    assert len(scene.cloud) == round(0.5 * 512)
    # survivors are a subset of the posed points, original order preserved
    posed = pose.to_camera(bottle_instance.points)
    rows = {tuple(r) for r in posed}
    assert all(tuple(r) in rows for r in scene.cloud.points)


def test_render_too_sparse():
    spec = CategorySpec(family="box", instance_count=2, points_per_instance=32, seed=71)
    inst = generate_category(spec).instances[0]
    pose = Pose(np.eye(3), np.zeros(3), np.full(3, 0.2))
    with pytest.raises(TooSparseError):
        render_partial(inst, SceneSpec(pose, cull_fraction=0.8, seed=3))
    with pytest.raises(ValueError):
        render_partial(SemanticCloud(inst.points, None, Space.CAMERA), SceneSpec(pose, seed=3))


def test_render_determinism(bottle_instance):
    rng = np.random.Generator(np.random.PCG64(72))
    pose = random_pose(rng, bottle_instance)
    spec = SceneSpec(pose, 0.5, 0.005, 5, seed=4)
    a = render_partial(bottle_instance, spec)
    b = render_partial(bottle_instance, SceneSpec(pose, 0.5, 0.005, 5, seed=4))
    assert np.array_equal(a.cloud.points, b.cloud.points)
    assert np.array_equal(a.cloud.descriptors, b.cloud.descriptors)
    assert np.array_equal(a.view_direction, b.view_direction)
    c = render_partial(bottle_instance, SceneSpec(pose, 0.5, 0.005, 5, seed=5))
    assert not np.array_equal(a.cloud.points, c.cloud.points)


def test_planted_outliers(bottle_instance):
    rng = np.random.Generator(np.random.PCG64(73))
    pose = random_pose(rng, bottle_instance)
    scene = render_partial(bottle_instance, SceneSpec(pose, 0.5, 0.0, 8, seed=6))
    n = len(scene.cloud)
    assert np.array_equal(scene.outlier_ids, np.arange(n - 8, n))
    # outliers keep clear of the object surface
    posed = pose.to_camera(bottle_instance.points)
    for out in scene.cloud.points[-8:]:
        d = np.sqrt(((posed - out) ** 2).sum(axis=1).min())
        assert d >= 0.1 * pose.scale
    # junk descriptors exist for outliers
    assert scene.cloud.descriptors.shape == (n, 16)


def test_filter_recovers_planted_outliers(bottle_instance):
    rng = np.random.Generator(np.random.PCG64(74))
    pose = random_pose(rng, bottle_instance)
    scene = render_partial(bottle_instance, SceneSpec(pose, 0.5, 0.005, 10, seed=7))
    model = SemanticCloud(bottle_instance.points, None, Space.NOCS)
    kept = object_aware_filter(scene.cloud, model, pose, tau1=0.1)

    kept_rows = {tuple(r) for r in kept.points}
    outlier_rows = [tuple(r) for r in scene.cloud.points[scene.outlier_ids]]
    surviving_outliers = sum(r in kept_rows for r in outlier_rows)
    assert surviving_outliers <= 1  # >= 90% of 10 removed

    inlier_rows = [tuple(r) for r in scene.cloud.points[: len(scene.cloud) - 10]]
    kept_inliers = sum(r in kept_rows for r in inlier_rows)
    assert kept_inliers >= 0.99 * len(inlier_rows)


def test_random_pose_properties(bottle_instance):
    rng = np.random.Generator(np.random.PCG64(75))
    for _ in range(20):
        pose = random_pose(rng, bottle_instance, scale_range=(0.22, 0.4))
        r = pose.rotation
        assert np.allclose(r.T @ r, np.eye(3), atol=1e-9)
        assert np.linalg.det(r) > 0
        assert 0.22 <= pose.scale <= 0.4
        assert np.all(np.abs(pose.translation) <= 0.5)
        ext = bottle_instance.extents()
        assert np.allclose(pose.size, pose.scale * ext / np.linalg.norm(ext))
