import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vpet.autodiff.tensor import ShapeError, Tensor
from vpet.encoders import (
    DFG_FREQS,
    PointNetEncoder,
    PoseEmbedder,
    build_condition,
    build_condition_traj,
    embed_delta_sequence,
    embed_dfg,
    embed_pose,
    pointnet_encode,
    pose_vector,
    traj_condition_dim,
)
from vpet.geometry import RigidTransform


@pytest.fixture(scope="module")
def pointnet():
    return PointNetEncoder(np.random.default_rng(0), (3, 16, 16, 8))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**31 - 1))
def test_pointnet_permutation_invariant(pointnet, n, seed):
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((n, 3))
    a = pointnet_encode(pointnet, pts).data
    b = pointnet_encode(pointnet, pts[rng.permutation(n)]).data
    np.testing.assert_array_equal(a, b)


def test_pointnet_batched_matches_single(pointnet):
    rng = np.random.default_rng(1)
    clouds = rng.standard_normal((3, 12, 3))
    batched = pointnet(clouds).data
    assert batched.shape == (3, 8)
    for i in range(3):
        np.testing.assert_allclose(batched[i], pointnet(clouds[i]).data, atol=1e-12)


def test_pointnet_rejects_empty(pointnet):
    with pytest.raises(ShapeError):
        pointnet(np.zeros((0, 3)))


def test_pose_vector_accepts_transforms():
    g = RigidTransform([0.0, 1.0, 0.0, 0.0], [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(pose_vector(g), [0, 1, 0, 0, 1, 2, 3])
    assert pose_vector([g, g]).shape == (2, 7)


def test_pose_embedding_is_row_wise():
    emb = PoseEmbedder(np.random.default_rng(2), out_dim=5, hidden=8)
    rng = np.random.default_rng(3)
    seq = rng.standard_normal((2, 4, 7))
    out = embed_delta_sequence(emb, seq).data
    assert out.shape == (2, 4, 5)
    np.testing.assert_allclose(out[1, 2], embed_pose(emb, seq[1, 2]).data, atol=1e-12)


def test_delta_sequence_rejects_bad_shape():
    emb = PoseEmbedder(np.random.default_rng(2), out_dim=5, hidden=8)
    with pytest.raises(ShapeError):
        embed_delta_sequence(emb, np.zeros(7))


def test_dfg_embedding_width():
    assert embed_dfg(np.array([[0.2], [0.3]])).shape == (2, 2 * DFG_FREQS + 1)
    assert embed_dfg(0.2).shape == (2 * DFG_FREQS + 1,)


def test_condition_layout_and_dropping_dfg():
    z = [Tensor(np.full((2, 4), float(k))) for k in range(3)]
    full = build_condition_traj(*z, np.array([[0.1], [0.2]]))
    assert full.dim == traj_condition_dim(True, 4) == full.tensor.shape[-1]
    np.testing.assert_array_equal(full.tensor.data[:, full.span("z_bg")], 2.0)
    no_d = build_condition_traj(*z)
    assert no_d.dim == traj_condition_dim(False, 4) == 12
    with pytest.raises(KeyError):
        no_d.span("d_fg")
    assert full.metadata()["layout"][-1][0] == "d_fg"


def test_condition_rejects_mismatched_batch():
    with pytest.raises(ShapeError):
        build_condition([("a", Tensor(np.zeros((2, 3)))), ("b", Tensor(np.zeros((3, 3))))])
