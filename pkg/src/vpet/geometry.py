"""3D math used across the package.

Conventions
-----------
- Quaternions are stored ``(w, x, y, z)`` and every constructor renormalizes.
- Point clouds are plain ``(N, 3)`` float64 arrays; :func:`as_points` validates.
- ``+y`` is up. Scenes sit on the ``y = 0`` plane before normalization.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree


class GeometryError(ValueError):
    pass


class DegenerateMeshError(GeometryError):
    pass


# ---------------------------------------------------------------------------
# quaternions


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-300):
        raise GeometryError("cannot normalize a zero quaternion")
    return q / n


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product, broadcasting over leading axes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.asarray(q, dtype=np.float64) * np.array([1.0, -1.0, -1.0, -1.0])


def quat_canonical(q: np.ndarray) -> np.ndarray:
    """Pick the ``w >= 0`` representative of the double cover."""
    q = np.asarray(q, dtype=np.float64)
    sign = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    return q * sign


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return m.reshape(q.shape[:-1] + (3, 3))


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors ``v (..., 3)`` by unit quaternions ``q (..., 4)``."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_from_axis_angle(rotvec: np.ndarray) -> np.ndarray:
    """Axis-angle vectors (radians * unit axis) to unit quaternions."""
    rotvec = np.asarray(rotvec, dtype=np.float64)
    angle = np.linalg.norm(rotvec, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(half)/angle, with the small-angle series near zero
    small = angle < 1e-8
    safe = np.where(small, 1.0, angle)
    k = np.where(small, 0.5 - angle**2 / 48.0, np.sin(half) / safe)
    return np.concatenate([np.cos(half), rotvec * k], axis=-1)


def quat_to_axis_angle(q: np.ndarray) -> np.ndarray:
    q = quat_canonical(quat_normalize(q))
    s = np.linalg.norm(q[..., 1:], axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, q[..., :1])
    small = s < 1e-12
    k = np.where(small, 2.0, angle / np.where(small, 1.0, s))
    return q[..., 1:] * k


def quat_about_axis(axis: Sequence[float], angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return quat_from_axis_angle(axis * angle)


def quat_from_two_vectors(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Shortest-arc rotation taking direction ``a`` onto direction ``b``."""
    a = np.asarray(a, dtype=np.float64) / np.linalg.norm(a)
    b = np.asarray(b, dtype=np.float64) / np.linalg.norm(b)
    d = float(np.dot(a, b))
    if d < -1.0 + 1e-12:
        # antiparallel: any orthogonal axis works
        ortho = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(ortho) < 1e-6:
            ortho = np.cross(a, [0.0, 1.0, 0.0])
        return quat_about_axis(ortho, np.pi)
    q = np.concatenate([[1.0 + d], np.cross(a, b)])
    return quat_normalize(q)


# ---------------------------------------------------------------------------
# rigid transforms


@dataclass(frozen=True)
class RigidTransform:
    """Rotation (unit quaternion) followed by translation: ``x -> R x + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = quat_normalize(np.array(self.rotation, dtype=np.float64).reshape(4))
        trans = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(trans))):
            raise GeometryError("non-finite rigid transform")
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_vec7(cls, v: Sequence[float]) -> "RigidTransform":
        v = np.asarray(v, dtype=np.float64)
        return cls(v[:4], v[4:7])

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        return cls(_matrix_to_quat(m[:3, :3]), m[:3, 3])

    def to_vec7(self) -> np.ndarray:
        """``[qw, qx, qy, qz, tx, ty, tz]`` with the ``w >= 0`` hemisphere."""
        return np.concatenate([quat_canonical(self.rotation), self.translation])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.rotation)
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "RigidTransform":
        inv = quat_conj(self.rotation)
        return RigidTransform(inv, -quat_rotate(inv, self.translation))

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return quat_rotate(self.rotation, pts) + self.translation

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def allclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        same_t = np.allclose(self.translation, other.translation, atol=atol, rtol=0)
        d = abs(float(np.dot(self.rotation, other.rotation)))
        return same_t and (1.0 - d) <= atol


def _matrix_to_quat(r: np.ndarray) -> np.ndarray:
    tr = np.trace(r)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
        q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
    elif r[1, 1] > r[2, 2]:
        s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
        q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
    else:
        s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
        q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    return quat_normalize(np.array(q))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """``a ∘ b``: apply ``b`` first, then ``a``."""
    return RigidTransform(
        quat_mul(a.rotation, b.rotation),
        quat_rotate(a.rotation, b.translation) + a.translation,
    )


def invert(p: RigidTransform) -> RigidTransform:
    return p.inverse()


def relative(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """The delta ``d`` with ``compose(a, d) == b``."""
    return compose(a.inverse(), b)


def apply_points(p: RigidTransform, pts: np.ndarray) -> np.ndarray:
    return p.apply(as_points(pts))


def yaw_transform(yaw: float, translation: Sequence[float]) -> RigidTransform:
    return RigidTransform(quat_about_axis([0.0, 1.0, 0.0], yaw), translation)


def transforms_to_array(seq: Iterable[RigidTransform]) -> np.ndarray:
    return np.stack([g.to_vec7() for g in seq])


def transforms_from_array(arr: np.ndarray) -> list[RigidTransform]:
    return [RigidTransform.from_vec7(row) for row in np.asarray(arr)]


# batched 7-vector pose algebra; rows are [qw qx qy qz tx ty tz]


def compose_vec7(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    q = quat_canonical(quat_normalize(quat_mul(a[..., :4], b[..., :4])))
    t = quat_rotate(a[..., :4], b[..., 4:]) + a[..., 4:]
    return np.concatenate([q, t], axis=-1)


def relative_vec7(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a^-1 * b`` row-wise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    qi = quat_conj(a[..., :4])
    q = quat_canonical(quat_normalize(quat_mul(qi, b[..., :4])))
    t = quat_rotate(qi, b[..., 4:] - a[..., 4:])
    return np.concatenate([q, t], axis=-1)


def integrate_vec7(g0: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """``(..., 7)`` start and ``(..., T, 7)`` deltas to ``(..., T + 1, 7)`` absolute poses."""
    g = np.asarray(g0, dtype=np.float64)
    g = np.concatenate([quat_canonical(quat_normalize(g[..., :4])), g[..., 4:]], axis=-1)
    deltas = np.asarray(deltas, dtype=np.float64)
    out = [g]
    for t in range(deltas.shape[-2]):
        g = compose_vec7(g, deltas[..., t, :])
        out.append(g)
    return np.stack(out, axis=-2)


def apply_vec7(g: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Apply poses ``(..., 7)`` to a shared cloud ``(N, 3)`` -> ``(..., N, 3)``."""
    g = np.asarray(g, dtype=np.float64)
    rot = quat_to_matrix(quat_normalize(g[..., :4]))
    return np.asarray(pts, dtype=np.float64) @ np.swapaxes(rot, -1, -2) + g[..., None, 4:]


# ---------------------------------------------------------------------------
# dual quaternions


def dq_from_rigid(rotation: np.ndarray, translation: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit dual quaternion ``(real, dual)`` for ``x -> R x + t``; batched."""
    real = quat_normalize(rotation)
    t = np.asarray(translation, dtype=np.float64)
    tq = np.concatenate([np.zeros(t.shape[:-1] + (1,)), t], axis=-1)
    dual = 0.5 * quat_mul(tq, real)
    return real, dual


def dq_normalize(real: np.ndarray, dual: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project onto unit dual quaternions (unit real, ``real · dual = 0``)."""
    n = np.linalg.norm(real, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise GeometryError("dual quaternion blend has a zero-norm real part")
    real = real / n
    dual = dual / n
    dual = dual - real * np.sum(real * dual, axis=-1, keepdims=True)
    return real, dual


def dq_to_rigid(real: np.ndarray, dual: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    t = 2.0 * quat_mul(dual, quat_conj(real))
    return real, t[..., 1:]


def dq_transform_points(real: np.ndarray, dual: np.ndarray, pts: np.ndarray) -> np.ndarray:
    rot, t = dq_to_rigid(real, dual)
    return quat_rotate(rot, pts) + t


# ---------------------------------------------------------------------------
# point clouds and meshes


def as_points(pts) -> np.ndarray:
    arr = np.asarray(pts, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise GeometryError(f"expected an (N, 3) point array, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise GeometryError("empty point cloud")
    if not np.all(np.isfinite(arr)):
        raise GeometryError("point cloud has non-finite coordinates")
    return arr


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(f) == 0:
            raise GeometryError("mesh needs at least one face")
        if f.min() < 0 or f.max() >= len(v):
            raise GeometryError("face index out of range")
        if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise GeometryError("degenerate face with a repeated vertex index")
        if not np.all(np.isfinite(v)):
            raise GeometryError("mesh has non-finite vertices")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if self.labels is not None:
            lab = np.array(self.labels, dtype=np.int64).reshape(-1)
            if len(lab) != len(v):
                raise GeometryError("labels must have one entry per vertex")
            object.__setattr__(self, "labels", lab)

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        return TriMesh(vertices, self.faces, self.labels)

    def face_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def bbox_diagonal(self) -> float:
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))


def merge_meshes(meshes: Sequence[TriMesh]) -> TriMesh:
    verts, faces, labels = [], [], []
    offset = 0
    has_labels = all(m.labels is not None for m in meshes)
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        if has_labels:
            labels.append(m.labels)
        offset += len(m.vertices)
    return TriMesh(
        np.concatenate(verts), np.concatenate(faces), np.concatenate(labels) if has_labels else None
    )


def sample_surface(mesh: TriMesh, n: int, seed: int, return_faces: bool = False):
    """Area-weighted uniform samples on the mesh surface."""
    if n < 1:
        raise GeometryError("need n >= 1 samples")
    areas = mesh.face_areas()
    total = areas.sum()
    if not total > 0:
        raise DegenerateMeshError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    face_idx = rng.choice(len(areas), size=n, p=areas / total)
    r1 = rng.random(n)
    r2 = rng.random(n)
    s = np.sqrt(r1)
    u, v, w = 1.0 - s, s * (1.0 - r2), s * r2
    a, b, c = (mesh.vertices[mesh.faces[face_idx, k]] for k in range(3))
    pts = u[:, None] * a + v[:, None] * b + w[:, None] * c
    if return_faces:
        return pts, face_idx
    return pts


class NnIndex:
    """Exact nearest-neighbour index over a fixed point cloud (k-d tree)."""

    def __init__(self, points):
        self.points = as_points(points).copy()
        self.points.setflags(write=False)
        self._tree = cKDTree(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def query(self, queries: np.ndarray, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Distances and indices of the nearest indexed point, batched."""
        q = np.asarray(queries, dtype=np.float64)
        dist, idx = self._tree.query(q.reshape(-1, 3), k=1, workers=workers)
        # recompute so distances are bit-compatible with a direct norm
        dist = np.linalg.norm(q.reshape(-1, 3) - self.points[idx], axis=1)
        return dist.reshape(q.shape[:-1]), idx.reshape(q.shape[:-1])

    def nearest(self, q: Sequence[float]) -> tuple[np.ndarray, float]:
        dist, idx = self.query(np.asarray(q, dtype=np.float64).reshape(1, 3))
        return self.points[idx[0]].copy(), float(dist[0])


def chamfer_one_sided(src, dst, index: NnIndex | None = None) -> float:
    """Mean distance from each ``src`` point to its nearest ``dst`` point."""
    src = as_points(src)
    if index is None:
        index = NnIndex(dst)
    dist, _ = index.query(src)
    return float(dist.mean())


def chamfer_symmetric(a, b) -> float:
    return chamfer_one_sided(a, b) + chamfer_one_sided(b, a)


def centroid(pts) -> np.ndarray:
    return as_points(pts).mean(axis=0)


def recenter(obj):
    """Shift a mesh or point cloud so its (vertex) centroid is the origin."""
    if isinstance(obj, TriMesh):
        return obj.with_vertices(obj.vertices - obj.vertices.mean(axis=0))
    pts = as_points(obj)
    return pts - pts.mean(axis=0)


def center_distance(fg: TriMesh, bg_points, index: NnIndex | None = None) -> float:
    """Distance from the foreground vertex centroid to the nearest background point."""
    if index is None:
        index = NnIndex(bg_points)
    _, d = index.nearest(fg.vertices.mean(axis=0))
    return d


# ---------------------------------------------------------------------------
# file formats


def read_obj(path: str | Path) -> TriMesh:
    """Load ``v``/``f`` records; polygons are fan-triangulated."""
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                if len(idx) < 3:
                    raise GeometryError(f"{path}:{lineno}: face with fewer than 3 vertices")
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    return TriMesh(np.array(verts), np.array(faces))


def write_obj(path: str | Path, mesh: TriMesh) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_xyz(path: str | Path) -> np.ndarray:
    return as_points(np.loadtxt(path, dtype=np.float64, ndmin=2))


def write_xyz(path: str | Path, pts) -> None:
    pts = as_points(pts)
    Path(path).write_text("".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in pts.tolist()))
