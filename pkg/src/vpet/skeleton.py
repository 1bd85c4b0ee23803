"""Skeleton, forward kinematics and dual-quaternion blend skinning.

A skeleton has ``B`` joints and ``B + 1`` bones. Bone 0 is the root bone and
never moves under articulation; bone ``j + 1`` is the segment distal to joint
``j`` and is rotated about that joint's rest position.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import (
    GeometryError,
    RigidTransform,
    TriMesh,
    as_points,
    dq_from_rigid,
    dq_normalize,
    dq_transform_points,
    quat_from_axis_angle,
    quat_from_two_vectors,
    quat_mul,
    quat_rotate,
    quat_to_matrix,
)

LEAF_TIP_RATIO = 0.5


class SkeletonError(ValueError):
    pass


@dataclass(frozen=True)
class Skeleton:
    parents: np.ndarray  # (B,), -1 for root-attached joints
    rest_joints: np.ndarray  # (B, 3) canonical joint positions
    bone_scales: np.ndarray  # (B + 1, 3) Gaussian axis scales
    limb_bones: tuple[int, ...] = ()
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        parents = np.array(self.parents, dtype=np.int64).reshape(-1)
        joints = np.array(self.rest_joints, dtype=np.float64).reshape(-1, 3)
        scales = np.array(self.bone_scales, dtype=np.float64).reshape(-1, 3)
        b = len(parents)
        if b == 0:
            raise SkeletonError("skeleton needs at least one joint")
        if len(joints) != b:
            raise SkeletonError(f"{b} parents but {len(joints)} rest joints")
        if len(scales) != b + 1:
            raise SkeletonError(f"need {b + 1} bone scales, got {len(scales)}")
        if np.any(scales <= 0):
            raise SkeletonError("bone scales must be strictly positive")
        if np.any((parents < -1) | (parents >= b)):
            raise SkeletonError("parent index out of range")
        limbs = tuple(int(x) for x in self.limb_bones)
        if any(x < 0 or x > b for x in limbs):
            raise SkeletonError("limb bone index out of range")
        for arr in (parents, joints, scales):
            arr.setflags(write=False)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "rest_joints", joints)
        object.__setattr__(self, "bone_scales", scales)
        object.__setattr__(self, "limb_bones", limbs)
        object.__setattr__(self, "_order", _topological_order(parents))

    @property
    def num_joints(self) -> int:
        return len(self.parents)

    @property
    def num_bones(self) -> int:
        return len(self.parents) + 1

    @property
    def order(self) -> tuple[int, ...]:
        return self._order

    def children(self, j: int) -> list[int]:
        return [int(c) for c in np.flatnonzero(self.parents == j)]

    def to_json(self) -> dict:
        doc = {
            "parents": self.parents.tolist(),
            "rest_joints": self.rest_joints.tolist(),
            "bone_scales": self.bone_scales.tolist(),
            "limb_bones": list(self.limb_bones),
        }
        if self.names is not None:
            doc["names"] = list(self.names)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "Skeleton":
        try:
            return cls(
                doc["parents"],
                doc["rest_joints"],
                doc["bone_scales"],
                tuple(doc.get("limb_bones", ())),
                tuple(doc["names"]) if "names" in doc else None,
            )
        except KeyError as exc:
            raise SkeletonError(f"skeleton document missing field {exc}") from None


def _topological_order(parents: np.ndarray) -> tuple[int, ...]:
    order: list[int] = []
    state = np.zeros(len(parents), dtype=np.int8)  # 0 new, 1 visiting, 2 done
    for start in range(len(parents)):
        chain = []
        j = start
        while j >= 0 and state[j] == 0:
            state[j] = 1
            chain.append(j)
            j = int(parents[j])
        if j >= 0 and state[j] == 1:
            raise SkeletonError(f"cycle in parent array through joint {j}")
        for k in reversed(chain):
            state[k] = 2
            order.append(k)
    return tuple(order)


def save_skeleton(path: str | Path, skel: Skeleton) -> None:
    Path(path).write_text(json.dumps(skel.to_json(), indent=1))


def load_skeleton(path: str | Path) -> Skeleton:
    return Skeleton.from_json(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# articulation


def wrap_axis_angle(a: np.ndarray) -> np.ndarray:
    """Map axis-angle vectors to the equivalent rotation with angle <= pi."""
    a = np.asarray(a, dtype=np.float64)
    angle = np.linalg.norm(a, axis=-1, keepdims=True)
    wrapped = np.mod(angle + np.pi, 2 * np.pi) - np.pi
    scale = np.where(angle > np.pi, wrapped / np.where(angle > 0, angle, 1.0), 1.0)
    return a * scale


@dataclass(frozen=True)
class BonePose:
    rotations: np.ndarray  # (B + 1, 4)
    translations: np.ndarray  # (B + 1, 3)

    def transform(self, b: int) -> RigidTransform:
        return RigidTransform(self.rotations[b], self.translations[b])


def forward_kinematics(skel: Skeleton, articulation: np.ndarray) -> BonePose:
    """Per-bone canonical-to-posed transforms for one frame of joint rotations."""
    a = wrap_axis_angle(np.asarray(articulation, dtype=np.float64).reshape(skel.num_joints, 3))
    local_q = quat_from_axis_angle(a)
    rots = np.zeros((skel.num_bones, 4))
    trans = np.zeros((skel.num_bones, 3))
    rots[0] = [1.0, 0.0, 0.0, 0.0]
    for j in skel.order:
        pb = skel.parents[j] + 1  # parent bone (0 = root bone)
        pivot = skel.rest_joints[j]
        # rotate about the joint's rest position: x -> R (x - J) + J
        lt = pivot - quat_rotate(local_q[j], pivot)
        rots[j + 1] = quat_mul(rots[pb], local_q[j])
        trans[j + 1] = quat_rotate(rots[pb], lt) + trans[pb]
    return BonePose(rots, trans)


# ---------------------------------------------------------------------------
# Gaussian bones and skinning


@dataclass(frozen=True)
class GaussianBones:
    centers: np.ndarray  # (B + 1, 3)
    orientations: np.ndarray  # (B + 1, 4), local x axis along the bone
    scales: np.ndarray  # (B + 1, 3)

    def __len__(self) -> int:
        return len(self.centers)


def bone_endpoints(skel: Skeleton) -> tuple[np.ndarray, np.ndarray]:
    """Start/end points for every bone in the rest pose."""
    J = skel.rest_joints
    starts = np.zeros((skel.num_bones, 3))
    ends = np.zeros((skel.num_bones, 3))
    starts[0] = ends[0] = J[0]
    for j in range(skel.num_joints):
        kids = skel.children(j)
        starts[j + 1] = J[j]
        if kids:
            ends[j + 1] = J[kids[0]]
        elif skel.parents[j] >= 0:
            # leaf: extend along the incoming segment
            ends[j + 1] = J[j] + LEAF_TIP_RATIO * (J[j] - J[skel.parents[j]])
        else:
            ends[j + 1] = J[j]
    return starts, ends


def gaussian_bones(skel: Skeleton) -> GaussianBones:
    starts, ends = bone_endpoints(skel)
    centers = 0.5 * (starts + ends)
    orient = np.zeros((skel.num_bones, 4))
    orient[:, 0] = 1.0
    for b in range(1, skel.num_bones):
        d = ends[b] - starts[b]
        if np.linalg.norm(d) > 1e-12:
            orient[b] = quat_from_two_vectors(np.array([1.0, 0.0, 0.0]), d)
    return GaussianBones(centers, orient, skel.bone_scales.copy())


def mahalanobis_sq(points, bones: GaussianBones) -> np.ndarray:
    """Squared Mahalanobis distance of each point to each bone, ``(N, B + 1)``."""
    x = as_points(points)
    rot = quat_to_matrix(bones.orientations)  # (K, 3, 3)
    diff = x[:, None, :] - bones.centers[None, :, :]
    local = np.einsum("kji,nkj->nki", rot, diff)  # R^T (x - c)
    return np.sum((local / bones.scales[None]) ** 2, axis=-1)


def skinning_weights(points, bones: GaussianBones, temperature: float = 1.0) -> np.ndarray:
    """Softmax over bones of ``-d_M^2 / temperature``; rows sum to one."""
    logits = -mahalanobis_sq(points, bones) / temperature
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=1, keepdims=True)


def blend_transforms(pose: BonePose, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-vertex blended unit dual quaternions ``(real, dual)``."""
    weights = np.asarray(weights, dtype=np.float64)
    real, dual = dq_from_rigid(pose.rotations, pose.translations)
    ref = real[np.argmax(weights, axis=1)]  # (N, 4)
    sign = np.where(ref @ real.T < 0.0, -1.0, 1.0)  # (N, K)
    sw = weights * sign
    return dq_normalize(sw @ real, sw @ dual)


def qbs_warp(skel: Skeleton, weights: np.ndarray, articulation: np.ndarray, verts) -> np.ndarray:
    """Deform canonical vertices by dual-quaternion linear blending."""
    verts = as_points(verts)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(verts), skel.num_bones):
        raise SkeletonError(
            f"weights shape {weights.shape} does not match ({len(verts)}, {skel.num_bones})"
        )
    pose = forward_kinematics(skel, articulation)
    real, dual = blend_transforms(pose, weights)
    return dq_transform_points(real, dual, verts)


def pose_mesh(
    mesh: TriMesh,
    skel: Skeleton,
    articulation: np.ndarray,
    g: RigidTransform,
    weights: np.ndarray | None = None,
    temperature: float = 1.0,
) -> TriMesh:
    """Articulate the canonical mesh, then place it with the global pose ``g``."""
    if weights is None:
        weights = skinning_weights(mesh.vertices, gaussian_bones(skel), temperature)
    warped = qbs_warp(skel, weights, articulation, mesh.vertices)
    return mesh.with_vertices(g.apply(warped))


def limb_mask(weights: np.ndarray, limb_bones: Sequence[int]) -> np.ndarray:
    return np.isin(np.argmax(weights, axis=1), np.asarray(limb_bones, dtype=np.int64))


def strided_resample(pts: np.ndarray, n: int) -> np.ndarray:
    """Deterministically pick ``n`` rows: strided when shrinking, cyclic when padding."""
    m = len(pts)
    if m >= n:
        idx = (np.arange(n) * m) // n
    else:
        idx = np.arange(n) % m
    return pts[idx]


def limb_vertices(
    mesh: TriMesh,
    skel: Skeleton,
    n: int = 256,
    weights: np.ndarray | None = None,
    temperature: float = 1.0,
) -> np.ndarray:
    """Canonical vertices whose dominant bone is a limb bone, resampled to ``n``."""
    if weights is None:
        weights = skinning_weights(mesh.vertices, gaussian_bones(skel), temperature)
    mask = limb_mask(weights, skel.limb_bones)
    if not mask.any():
        raise GeometryError("no vertex is dominated by a limb bone")
    return strided_resample(mesh.vertices[mask], n)
