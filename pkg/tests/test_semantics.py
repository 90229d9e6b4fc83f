"""Descriptor aggregation, the category semantic prototype, PCA coloring."""

import math

import numpy as np
import pytest

from semshape import (
    DescriptorCloud,
    SemanticCloud,
    ShapeParams,
    Space,
    aggregate_instance_features,
    build_semantic_prototype,
    export_feature_pca,
    knn,
    pooled_pca_projection,
    read_ply,
    transfer_semantics,
)


def _dense(rng, n=256, c=16):
    return SemanticCloud(
        rng.uniform(-0.5, 0.5, (n, 3)), rng.uniform(size=(n, c)), Space.NOCS
    )


# -------------------------------------------------------------------------
# Aggregation
# -------------------------------------------------------------------------


def test_aggregate_self_k1():
    rng = np.random.Generator(np.random.PCG64(41))
    dense = _dense(rng, n=64, c=5)
    out = aggregate_instance_features(dense, dense, k_agg=1)
    assert np.array_equal(out, dense.descriptors)


def test_aggregate_global_mean():
    d1 = np.array([1.0, 3.0, -2.0])
    d2 = np.array([5.0, 1.0, 4.0])
    dense = SemanticCloud(np.array([[0.0, 0, 0], [1.0, 0, 0]]), np.vstack([d1, d2]), Space.NOCS)
    recon = SemanticCloud(np.array([[0.2, 0, 0], [0.9, 0, 0], [5.0, 0, 0]]), None, Space.NOCS)
    out = aggregate_instance_features(recon, dense, k_agg=2)
    assert np.allclose(out, (d1 + d2) / 2.0)
    # oversized k_agg clamps to the dense cloud size
    clamped = aggregate_instance_features(recon, dense, k_agg=500)
    assert np.array_equal(out, clamped)


def test_aggregate_matches_brute_force():
    rng = np.random.Generator(np.random.PCG64(42))
    dense = _dense(rng, n=512)
    recon = SemanticCloud(rng.uniform(-0.5, 0.5, (96, 3)), None, Space.NOCS)
    out = aggregate_instance_features(recon, dense, k_agg=200)

    diffs = recon.points[:, None, :] - dense.points[None, :, :]
    order = np.argsort((diffs**2).sum(-1), axis=1, kind="stable")[:, :200]
    want = dense.descriptors[order].mean(axis=1)
    assert np.max(np.abs(out - want)) < 1e-6

    # every output row stays inside its neighborhood's componentwise envelope
    idx = knn(recon.points, dense, 200)
    neigh = dense.descriptors[idx]
    assert np.all(out >= neigh.min(axis=1) - 1e-12)
    assert np.all(out <= neigh.max(axis=1) + 1e-12)


def test_aggregate_validation():
    rng = np.random.Generator(np.random.PCG64(43))
    dense = _dense(rng, n=16, c=4)
    bare = SemanticCloud(dense.points.copy(), None, Space.NOCS)
    with pytest.raises(ValueError):
        aggregate_instance_features(bare, bare, k_agg=4)
    with pytest.raises(ValueError):
        aggregate_instance_features(bare, dense, k_agg=0)
    with pytest.raises(ValueError):
        DescriptorCloud(bare)
    wrapped = DescriptorCloud(dense)
    out = aggregate_instance_features(bare, wrapped, k_agg=3)
    assert out.shape == (16, 4)


# -------------------------------------------------------------------------
# Prototype construction
# -------------------------------------------------------------------------


def test_prototype_singleton_and_cancellation():
    rng = np.random.Generator(np.random.PCG64(44))
    f = rng.normal(size=(12, 6))
    assert np.array_equal(build_semantic_prototype([f]), f)
    assert np.array_equal(build_semantic_prototype([f, -f]), np.zeros((12, 6)))


def test_prototype_matches_two_pass_mean():
    rng = np.random.Generator(np.random.PCG64(45))
    mats = [rng.normal(size=(8, 5)) for _ in range(20)]
    got = build_semantic_prototype(mats)
    want = np.empty((8, 5))
    for i in range(8):
        for j in range(5):
            want[i, j] = math.fsum(m[i, j] for m in mats) / 20.0
    assert np.max(np.abs(got - want)) < 1e-7


def test_prototype_permutation_invariant():
    rng = np.random.Generator(np.random.PCG64(46))
    mats = [rng.normal(size=(10, 4)) for _ in range(7)]
    base = build_semantic_prototype(mats)
    for seed in range(3):
        perm = np.random.Generator(np.random.PCG64(seed)).permutation(7)
        shuffled = build_semantic_prototype([mats[i] for i in perm])
        assert np.array_equal(base, shuffled)


def test_prototype_validation():
    with pytest.raises(ValueError):
        build_semantic_prototype([])
    with pytest.raises(ValueError):
        build_semantic_prototype([np.zeros((3, 2)), np.zeros((4, 2))])
    with pytest.raises(ValueError):
        build_semantic_prototype([np.full((2, 2), np.nan)])


# -------------------------------------------------------------------------
# Semantic inheritance
# -------------------------------------------------------------------------


def test_transfer_inherits_prototype_rows(mini_setup):
    model = mini_setup["model"]
    rng = np.random.Generator(np.random.PCG64(47))
    for _ in range(5):
        params = ShapeParams(rng.normal(size=model.basis_dim), rng.uniform(0.5, 2.0, 3))
        cloud = transfer_semantics(model, params)
        assert np.array_equal(cloud.descriptors, model.semantic_prototype)


def test_transfer_category_invariance(mini_setup):
    model = mini_setup["model"]
    a = transfer_semantics(model, mini_setup["result"].params[0])
    b = transfer_semantics(model, mini_setup["result"].params[1])
    assert np.array_equal(a.descriptors, b.descriptors)
    assert not np.array_equal(a.points, b.points)
    # shared-basis PCA projections are identical across instances too
    pa, pb = pooled_pca_projection([a.descriptors, b.descriptors])
    assert np.array_equal(pa, pb)


# -------------------------------------------------------------------------
# PCA coloring
# -------------------------------------------------------------------------


def test_pca_recovers_orthogonal_axes():
    m = np.array([
        [4.0, 0.0, 0.0], [-4.0, 0.0, 0.0],
        [0.0, 2.0, 0.0], [0.0, -2.0, 0.0],
        [0.0, 0.0, 1.0], [0.0, 0.0, -1.0],
    ])
    (proj,) = pooled_pca_projection([m])
    assert np.max(np.abs(proj - m)) < 1e-12


def test_pca_matches_eigen_oracle():
    rng = np.random.Generator(np.random.PCG64(48))
    mats = [rng.normal(size=(n, 6)) * rng.uniform(0.5, 2.0, 6) for n in (40, 25)]
    got = pooled_pca_projection(mats)

    pooled = np.concatenate(mats, axis=0)
    centered = pooled - pooled.mean(axis=0)
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:3]
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    want = [(m - pooled.mean(axis=0)) @ comps.T for m in mats]
    for g, w in zip(got, want):
        assert np.max(np.abs(g - w)) < 1e-6

    # pooled projection differs from fitting each cloud alone
    (solo,) = pooled_pca_projection([mats[0]])
    assert not np.allclose(solo, got[0])

    again = pooled_pca_projection(mats)
    for g, a in zip(got, again):
        assert np.array_equal(g, a)

    with pytest.raises(ValueError):
        pooled_pca_projection([rng.normal(size=(10, 2))])


def test_export_feature_pca(tmp_path):
    rng = np.random.Generator(np.random.PCG64(49))
    cloud = _dense(rng, n=32, c=8)
    twin = SemanticCloud(cloud.points.copy(), cloud.descriptors.copy(), Space.NOCS)
    paths = [tmp_path / "a.ply", tmp_path / "b.ply"]
    colors = export_feature_pca([cloud, twin], paths)
    assert np.array_equal(colors[0], colors[1])
    assert colors[0].dtype == np.uint8 and colors[0].shape == (32, 3)
    for p in paths:
        assert np.allclose(read_ply(p), cloud.points, atol=1e-5)

    with pytest.raises(ValueError):
        export_feature_pca([cloud], paths)
    bare = SemanticCloud(cloud.points.copy(), None, Space.NOCS)
    with pytest.raises(ValueError):
        export_feature_pca([bare], [tmp_path / "c.ply"])
