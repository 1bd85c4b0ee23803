import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from vpet.geometry import RigidTransform, quat_about_axis
from vpet.skeleton import (
    Skeleton,
    SkeletonError,
    bone_endpoints,
    forward_kinematics,
    gaussian_bones,
    limb_vertices,
    load_skeleton,
    pose_mesh,
    qbs_warp,
    save_skeleton,
    skinning_weights,
    strided_resample,
    wrap_axis_angle,
)


def coaxial_pair(pivot=(0.3, -0.2, 0.1)):
    """Two root-attached joints sharing one pivot, so both bones rotate about the same point."""
    p = np.asarray(pivot, dtype=float)
    return Skeleton([-1, -1], [p, p], np.full((3, 3), 0.1))


def one_hot(n, k, rng):
    w = np.zeros((n, k))
    w[np.arange(n), rng.integers(0, k, n)] = 1.0
    return w


def test_zero_articulation_is_identity(quad):
    verts = quad.mesh.vertices
    out = qbs_warp(quad.skeleton, quad.weights, np.zeros((quad.skeleton.num_joints, 3)), verts)
    np.testing.assert_allclose(out, verts, atol=1e-12)


def test_weights_are_convex(quad):
    w = quad.weights
    assert w.shape == (len(quad.mesh.vertices), quad.skeleton.num_bones)
    assert np.all(w >= 0)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)


def test_one_hot_weights_give_rigid_bone_motion(quad):
    rng = np.random.default_rng(0)
    skel = quad.skeleton
    verts = quad.mesh.vertices
    for _ in range(5):
        art = rng.normal(scale=0.6, size=(skel.num_joints, 3))
        w = one_hot(len(verts), skel.num_bones, rng)
        out = qbs_warp(skel, w, art, verts)
        pose = forward_kinematics(skel, art)
        bone = w.argmax(axis=1)
        for b in np.unique(bone):
            m = bone == b
            np.testing.assert_allclose(out[m], pose.transform(b).apply(verts[m]), atol=1e-9)


def test_joint_positions_follow_parent_bone(quad):
    # a child joint's rest position moves rigidly with its parent bone
    rng = np.random.default_rng(1)
    skel = quad.skeleton
    art = rng.normal(scale=0.5, size=(skel.num_joints, 3))
    pose = forward_kinematics(skel, art)
    for j in range(skel.num_joints):
        parent_bone = skel.parents[j] + 1
        own = pose.transform(j + 1).apply(skel.rest_joints[j][None])
        via_parent = pose.transform(parent_bone).apply(skel.rest_joints[j][None])
        np.testing.assert_allclose(own, via_parent, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3.0, 3.0), st.floats(-3.0, 3.0))
def test_coaxial_blend_bisects(a1, a2):
    skel = coaxial_pair()
    axis = np.array([0.0, 0.0, 1.0])
    art = np.stack([a1 * axis, a2 * axis])
    assume(abs(abs(a1 - a2) - np.pi) > 1e-3)
    pts = np.random.default_rng(2).standard_normal((16, 3))
    w = np.tile([0.0, 0.5, 0.5], (16, 1))
    # the blend follows the shorter arc, so unwrap the pair first
    if a1 - a2 > np.pi:
        a2 += 2 * np.pi
    elif a2 - a1 > np.pi:
        a1 += 2 * np.pi
    mid = RigidTransform(quat_about_axis(axis, 0.5 * (a1 + a2)), np.zeros(3))
    pivot = skel.rest_joints[0]
    expect = mid.apply(pts - pivot) + pivot
    np.testing.assert_allclose(qbs_warp(skel, w, art, pts), expect, atol=1e-9)


def test_blend_is_deterministic(quad):
    art = np.random.default_rng(3).normal(size=(quad.skeleton.num_joints, 3))
    a = qbs_warp(quad.skeleton, quad.weights, art, quad.mesh.vertices)
    b = qbs_warp(quad.skeleton, quad.weights, art, quad.mesh.vertices)
    np.testing.assert_array_equal(a, b)


def test_wrap_axis_angle_same_rotation():
    a = np.array([[0.0, 0.0, 1.5 * np.pi], [0.5, 0.0, 0.0]])
    w = wrap_axis_angle(a)
    assert np.all(np.linalg.norm(w, axis=1) <= np.pi + 1e-12)
    np.testing.assert_allclose(w[0], [0.0, 0.0, -0.5 * np.pi])
    np.testing.assert_array_equal(w[1], a[1])
    skel = coaxial_pair()
    pts = np.ones((1, 3))
    w1 = np.array([[0.0, 1.0, 0.0]])
    np.testing.assert_allclose(
        qbs_warp(skel, w1, np.stack([a[0], a[0]]), pts), qbs_warp(skel, w1, np.stack([w[0], w[0]]), pts), atol=1e-12
    )


def test_pose_mesh_applies_global_pose(quad):
    g = RigidTransform(quat_about_axis([0, 1, 0], 0.4), [1.0, 0.2, -0.5])
    art = np.zeros((quad.skeleton.num_joints, 3))
    posed = pose_mesh(quad.mesh, quad.skeleton, art, g, weights=quad.weights)
    np.testing.assert_allclose(posed.vertices, g.apply(quad.mesh.vertices), atol=1e-12)


def test_weight_shape_mismatch(quad):
    with pytest.raises(SkeletonError):
        qbs_warp(quad.skeleton, quad.weights[:, :-1], np.zeros((quad.skeleton.num_joints, 3)), quad.mesh.vertices)


def test_skeleton_validation():
    with pytest.raises(SkeletonError):
        Skeleton([1, 0], np.zeros((2, 3)), np.ones((3, 3)))  # cycle
    with pytest.raises(SkeletonError):
        Skeleton([-1], np.zeros((1, 3)), np.ones((1, 3)))  # too few bone scales
    with pytest.raises(SkeletonError):
        Skeleton([-1], np.zeros((1, 3)), np.zeros((2, 3)))  # zero scale


def test_skeleton_json_round_trip(tmp_path, quad):
    save_skeleton(tmp_path / "s.json", quad.skeleton)
    back = load_skeleton(tmp_path / "s.json")
    np.testing.assert_array_equal(back.parents, quad.skeleton.parents)
    np.testing.assert_array_equal(back.rest_joints, quad.skeleton.rest_joints)
    np.testing.assert_array_equal(back.bone_scales, quad.skeleton.bone_scales)
    assert back.limb_bones == quad.skeleton.limb_bones
    assert back.names == quad.skeleton.names


def test_leaf_bones_extend_past_joint(quad):
    starts, ends = bone_endpoints(quad.skeleton)
    for j in range(quad.skeleton.num_joints):
        if not quad.skeleton.children(j):
            assert np.linalg.norm(ends[j + 1] - starts[j + 1]) > 0


def test_gaussian_bones_nearest_dominates():
    skel = Skeleton([-1, 0], [[0, 0, 0], [1, 0, 0]], np.full((3, 3), 0.2))
    bones = gaussian_bones(skel)
    w = skinning_weights(bones.centers[1:], bones)
    assert w[0].argmax() == 1 and w[1].argmax() == 2


def test_limb_vertices_resampled(quad):
    pts = limb_vertices(quad.mesh, quad.skeleton, 100, weights=quad.weights)
    assert pts.shape == (100, 3)
    # paws sit low on the canonical body
    assert pts[:, 1].max() < 0


def test_strided_resample_shrinks_and_pads():
    pts = np.arange(30, dtype=float).reshape(10, 3)
    assert strided_resample(pts, 5).shape == (5, 3)
    padded = strided_resample(pts, 13)
    np.testing.assert_array_equal(padded[10:], pts[:3])
