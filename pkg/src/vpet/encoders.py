"""Conditioning encoders: point clouds, poses, delta sequences, condition vectors."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import tensor as T
from .autodiff.nn import MLP, Module, fourier_dim, fourier_embed
from .autodiff.tensor import ShapeError, Tensor
from .geometry import RigidTransform, transforms_to_array

POSE_DIM = 7
POSE_FREQS = 6
DFG_FREQS = 4
EMBED_DIM = 128


class PointNetEncoder(Module):
    """Shared per-point MLP followed by a max over points."""

    def __init__(self, rng: np.random.Generator, widths: Sequence[int] = (3, 64, 128, 128)):
        self.mlp = MLP(list(widths), rng)
        self.out_dim = widths[-1]

    def __call__(self, points) -> Tensor:
        points = T.as_tensor(points)
        if points.shape[-2] == 0:
            raise ShapeError("pointnet_encode: empty point cloud")
        return T.tmax(self.mlp(points), axis=-2)


def pointnet_encode(encoder: PointNetEncoder, cloud) -> Tensor:
    return encoder(cloud)


def pose_vector(g) -> np.ndarray:
    """7-number pose encoding; accepts a transform, a sequence of them or raw arrays."""
    if isinstance(g, RigidTransform):
        return g.to_vec7()
    if isinstance(g, (list, tuple)) and g and isinstance(g[0], RigidTransform):
        return transforms_to_array(g)
    return np.asarray(g, dtype=np.float64)


class PoseEmbedder(Module):
    """Fourier features of a 7-number pose followed by an MLP; works per row."""

    def __init__(
        self,
        rng: np.random.Generator,
        in_dim: int = POSE_DIM,
        out_dim: int = EMBED_DIM,
        num_freqs: int = POSE_FREQS,
        hidden: int = EMBED_DIM,
        zero_last: bool = False,
    ):
        self.num_freqs = num_freqs
        self.mlp = MLP([fourier_dim(in_dim, num_freqs), hidden, out_dim], rng, zero_last=zero_last)
        self.out_dim = out_dim

    def __call__(self, pose) -> Tensor:
        x = pose if isinstance(pose, Tensor) else Tensor(pose_vector(pose))
        return self.mlp(fourier_embed(x, self.num_freqs))


def embed_pose(embedder: PoseEmbedder, g) -> Tensor:
    return embedder(g)


def embed_delta_sequence(embedder: PoseEmbedder, deltas) -> Tensor:
    """Row-wise embedding of a ``(..., T, 7)`` delta sequence."""
    x = deltas if isinstance(deltas, Tensor) else Tensor(pose_vector(deltas))
    if x.ndim < 2 or x.shape[-2] < 1:
        raise ShapeError(f"delta sequence needs shape (..., T>=1, 7), got {x.shape}")
    return embedder(x)


@dataclass(frozen=True)
class ConditionVector:
    tensor: Tensor
    layout: tuple[tuple[str, int], ...]

    @property
    def dim(self) -> int:
        return sum(w for _, w in self.layout)

    def span(self, name: str) -> slice:
        start = 0
        for key, width in self.layout:
            if key == name:
                return slice(start, start + width)
            start += width
        raise KeyError(name)

    def metadata(self) -> dict:
        return {"dim": self.dim, "layout": [list(item) for item in self.layout]}


def embed_dfg(d_fg) -> Tensor:
    d = T.as_tensor(d_fg)
    if d.ndim == 0 or d.shape[-1] != 1:
        d = T.reshape(d, d.shape + (1,))
    return fourier_embed(d, DFG_FREQS)


def build_condition(parts: Sequence[tuple[str, Tensor]]) -> ConditionVector:
    tensors = [T.as_tensor(t) for _, t in parts]
    lead = tensors[0].shape[:-1]
    for (name, t) in zip((n for n, _ in parts), tensors):
        if t.shape[:-1] != lead:
            raise ShapeError(f"condition part {name!r} has shape {t.shape}, expected leading {lead}")
    layout = tuple((name, t.shape[-1]) for (name, _), t in zip(parts, tensors))
    return ConditionVector(T.concat(tensors, axis=-1), layout)


def build_condition_traj(z_g0, z_limb, z_bg, d_fg=None) -> ConditionVector:
    """``[z_G0 | z_limb | z_bg | fourier(D_fg)]``; ``d_fg=None`` drops the distance slot."""
    parts = [("z_g0", z_g0), ("z_limb", z_limb), ("z_bg", z_bg)]
    if d_fg is not None:
        parts.append(("d_fg", embed_dfg(d_fg)))
    return build_condition(parts)


def traj_condition_dim(use_dfg: bool = True, embed: int = EMBED_DIM) -> int:
    return 3 * embed + (fourier_dim(1, DFG_FREQS) if use_dfg else 0)
