"""Trajectory and articulation VAEs, their losses, training and sampling.

The trajectory model predicts per-step relative poses ``dG_1..dG_T`` given a
start pose and the environment; integrating them from ``G_0`` yields the
absolute trajectory. The articulation model predicts joint rotations
``A_1..A_T`` given ``A_0`` and the trajectory (expressed relative to ``G_0``).
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import checkpoint as ckpt
from .autodiff import tensor as T
from .autodiff.nn import (
    MLP,
    Conv1d,
    Module,
    clamp_log_sigma,
    kl_diag_gaussian,
    reparameterize,
    time_embeddings,
)
from .autodiff.optim import AdamState, adam_step
from .autodiff.tensor import ShapeError, Tensor
from .data import MotionClip, augment
from .encoders import PointNetEncoder, PoseEmbedder, build_condition_traj, traj_condition_dim
from .geometry import (
    NnIndex,
    RigidTransform,
    TriMesh,
    apply_vec7,
    center_distance,
    integrate_vec7,
    relative_vec7,
    sample_surface,
)
from .skeleton import (
    Skeleton,
    gaussian_bones,
    limb_vertices,
    pose_mesh,
    skinning_weights,
    strided_resample,
    wrap_axis_angle,
)

CSV_HEADER = ("epoch", "traj_recon", "traj_kl", "artic_recon", "artic_kl", "floating", "total")
IDENTITY7 = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])


def worker_threads() -> int:
    """Thread cap for nearest-neighbour queries, from ``VPET_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("VPET_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# configuration


@dataclass
class TrainConfig:
    t_frames: int = 32
    latent_traj: int = 64
    latent_artic: int = 64
    embed: int = 128
    hidden: int = 128
    delta_scale: float = 0.1  # per-step pose deltas are small; shrink the head's output range
    use_dfg: bool = True
    lambda_traj_kl: float = 1e-2
    lambda_artic_kl: float = 1e-4
    lambda_cdd: float = 0.1
    recon_weight: float = 1.0
    lr: float = 5e-4
    batch: int = 16
    epochs: int = 50
    max_steps: int = 0  # 0 means no cap
    seed: int = 0
    n_fg: int = 256
    n_bg: int = 2048
    augment: bool = True
    aug_translation: tuple[float, float, float] = (0.5, 0.1, 0.5)
    checkpoint_every: int = 10

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            cfg = cfg.with_value(key, value)
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text())

    def with_value(self, key: str, value: str) -> "TrainConfig":
        types = {f.name: f.type for f in fields(self)}
        if key not in types:
            raise ValueError(f"unknown config key {key!r}")
        current = getattr(self, key)
        try:
            if isinstance(current, bool):
                low = value.lower()
                if low not in ("1", "0", "true", "false", "yes", "no"):
                    raise ValueError(value)
                parsed = low in ("1", "true", "yes")
            elif isinstance(current, int):
                parsed = int(value)
            elif isinstance(current, float):
                parsed = float(value)
            elif isinstance(current, tuple):
                parsed = tuple(float(v) for v in value.replace(",", " ").split())
                if len(parsed) != len(current):
                    raise ValueError(value)
            else:
                parsed = value
        except ValueError:
            raise ValueError(f"config key {key!r}: cannot parse {value!r}") from None
        return replace(self, **{key: parsed})

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = int(v)
            elif isinstance(v, tuple):
                v = " ".join(repr(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["aug_translation"] = list(self.aug_translation)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "aug_translation" in d:
            d["aug_translation"] = tuple(d["aug_translation"])
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


# ---------------------------------------------------------------------------
# batches


@dataclass
class Batch:
    g0: np.ndarray  # (B, 7)
    dg: np.ndarray  # (B, T, 7)
    a: np.ndarray  # (B, T + 1, 3J)
    p_limb: np.ndarray  # (B, N_fg, 3)
    p_bg: np.ndarray  # (B, N_bg, 3)
    d_fg: np.ndarray  # (B, 1)
    traj: np.ndarray  # (B, T + 1, 7) integrated ground truth
    indexes: list[NnIndex] = field(repr=False)
    gt_chamfer: np.ndarray = field(repr=False)  # (B, T + 1)

    @property
    def size(self) -> int:
        return len(self.g0)

    @property
    def t_frames(self) -> int:
        return self.dg.shape[1]


def limb_chamfer(traj: np.ndarray, p_limb: np.ndarray, index: NnIndex, workers: int = 1) -> np.ndarray:
    """Per-frame one-sided chamfer of ``G_t * P_limb`` against an indexed cloud, ``(T + 1,)``."""
    dist, _ = index.query(apply_vec7(traj, p_limb), workers=workers)
    return dist.mean(axis=-1)


def make_batch(
    clips: Sequence[MotionClip],
    n_fg: int | None = None,
    n_bg: int | None = None,
    gt_chamfer: np.ndarray | None = None,
) -> Batch:
    """Stack clips; ``gt_chamfer`` may be passed in when already known (it is augmentation invariant)."""
    if not clips:
        raise ValueError("empty batch")
    t = clips[0].t_frames
    if any(c.t_frames != t for c in clips):
        raise ShapeError("clips in a batch must share T")
    workers = worker_threads()

    def pts(arr, n):
        return arr if n is None or len(arr) == n else strided_resample(arr, n)

    p_limb = np.stack([pts(c.p_limb, n_fg) for c in clips])
    p_bg = np.stack([pts(c.p_bg, n_bg) for c in clips])
    g0 = np.stack([c.g0 for c in clips])
    dg = np.stack([c.dg for c in clips])
    traj = integrate_vec7(g0, dg)
    indexes = [NnIndex(p) for p in p_bg]
    if gt_chamfer is None:
        gt_chamfer = np.stack([limb_chamfer(traj[i], p_limb[i], indexes[i], workers) for i in range(len(clips))])
    return Batch(
        g0,
        dg,
        np.stack([c.a for c in clips]),
        p_limb,
        p_bg,
        np.array([[c.d_fg] for c in clips]),
        traj,
        indexes,
        np.asarray(gt_chamfer, dtype=np.float64),
    )


# ---------------------------------------------------------------------------
# trajectory algebra on tensors


def decode_pose_head(raw: Tensor) -> Tensor:
    """Unit quaternion (w >= 0) + translation from a raw 7-wide head."""
    q = T.getitem(raw, (..., slice(0, 4)))
    t = T.getitem(raw, (..., slice(4, 7)))
    q = q / T.norm(q, axis=-1, keepdims=True, eps=1e-12)
    sign = np.where(q.data[..., :1] < 0.0, -1.0, 1.0)
    return T.concat([q * sign, t], axis=-1)


def integrate_trajectory(g0, dg) -> Tensor:
    """``G_t = G_{t-1} * dG_t`` for ``(..., 7)`` start and ``(..., T, 7)`` deltas.

    Returns ``(..., T + 1, 7)``; differentiable in both arguments.
    """
    g0, dg = T.as_tensor(g0), T.as_tensor(dg)
    if dg.ndim < 2 or dg.shape[-1] != 7 or g0.shape[-1] != 7:
        raise ShapeError(f"integrate_trajectory: bad shapes {g0.shape}, {dg.shape}")
    steps = dg.shape[-2]
    q = T.getitem(g0, (..., slice(0, 4)))
    s = T.getitem(g0, (..., slice(4, 7)))
    out = [g0]
    for t in range(steps):
        d = T.getitem(dg, (..., t, slice(None)))
        dq = T.getitem(d, (..., slice(0, 4)))
        ds = T.getitem(d, (..., slice(4, 7)))
        rot = T.quat_to_matrix(q)
        s = T.reshape(T.matmul(rot, T.reshape(ds, ds.shape + (1,))), s.shape) + s
        q = T.quat_mul(q, dq)
        out.append(T.concat([q, s], axis=-1))
    return T.stack(out, axis=-2)


def integrate_poses(g0: np.ndarray, dg: np.ndarray) -> np.ndarray:
    """Numpy trajectory integration with hemisphere-canonical output rows."""
    return integrate_vec7(g0, dg)


def relative_to_start(traj: np.ndarray) -> np.ndarray:
    """``G_0^-1 G_t`` for every frame of ``(..., T + 1, 7)`` trajectories."""
    traj = np.asarray(traj, dtype=np.float64)
    return relative_vec7(traj[..., :1, :], traj)


def traj_recon_loss(dg_hat, dg_gt) -> Tensor:
    """Mean L1 over the 7 pose numbers of every step."""
    dg_hat, dg_gt = T.as_tensor(dg_hat), T.as_tensor(dg_gt)
    if dg_hat.shape != dg_gt.shape:
        raise ShapeError(f"traj_recon_loss: {dg_hat.shape} vs {dg_gt.shape}")
    return T.mean(T.tabs(dg_hat - dg_gt))


def _transform_clouds(traj: Tensor, p_limb: np.ndarray) -> Tensor:
    """``(B, S, 7)`` poses applied to ``(B, N, 3)`` clouds -> ``(B, S, N, 3)``."""
    q = T.getitem(traj, (..., slice(0, 4)))
    s = T.getitem(traj, (..., slice(4, 7)))
    rot = T.quat_to_matrix(q)  # (B, S, 3, 3)
    pts = p_limb[:, None, :, :]  # (B, 1, N, 3)
    moved = T.matmul(pts, T.transpose(rot, (0, 1, 3, 2)))
    return moved + T.reshape(s, s.shape[:-1] + (1, 3))


def floating_loss_batch(
    pred_traj: Tensor,
    p_limb: np.ndarray,
    indexes: Sequence[NnIndex],
    gt_chamfer: np.ndarray,
    workers: int = 1,
) -> Tensor:
    """Batched floating loss over frames ``1..T``.

    Nearest neighbours are found once per call with the predicted points and then
    held fixed, so the loss is differentiable in the predicted poses.
    """
    pred_traj = T.as_tensor(pred_traj)
    b, s = pred_traj.shape[0], pred_traj.shape[1]
    if s < 2:
        raise ShapeError("floating loss needs at least one step")
    if p_limb.shape[1] == 0 or any(len(ix) == 0 for ix in indexes):
        raise ValueError("floating loss: empty point cloud")
    tail = T.getitem(pred_traj, (slice(None), slice(1, None)))
    moved = _transform_clouds(tail, p_limb)  # (B, T, N, 3)
    targets = np.empty(moved.shape)
    for i in range(b):
        _, idx = indexes[i].query(moved.data[i], workers=workers)
        targets[i] = indexes[i].points[idx]
    dist = T.norm(moved - targets, axis=-1)  # (B, T, N)
    pred_ch = T.mean(dist, axis=-1)  # (B, T)
    return T.mean(T.tabs(pred_ch - gt_chamfer[:, 1:]))


def floating_loss(g_gt, g_pred, p_limb, p_bg) -> Tensor:
    """``(1/T) sum_t |CD(G_t^gt P_limb, P_bg) - CD(G_t^pred P_limb, P_bg)|`` over ``t = 1..T``."""
    g_gt = np.asarray(g_gt, dtype=np.float64)
    g_pred = T.as_tensor(g_pred)
    if g_gt.shape != g_pred.shape:
        raise ShapeError(f"floating_loss: trajectories {g_gt.shape} vs {g_pred.shape}")
    p_limb = np.asarray(p_limb, dtype=np.float64).reshape(-1, 3)
    p_bg = np.asarray(p_bg, dtype=np.float64).reshape(-1, 3)
    if len(p_limb) == 0 or len(p_bg) == 0:
        raise ValueError("floating loss: empty point cloud")
    index = NnIndex(p_bg)
    gt = limb_chamfer(g_gt, p_limb, index)[None]
    return floating_loss_batch(T.reshape(g_pred, (1,) + g_pred.shape), p_limb[None], [index], gt)


# ---------------------------------------------------------------------------
# networks


def _broadcast_steps(x: Tensor, steps: int) -> Tensor:
    """``(B, C) -> (B, steps, C)``."""
    b, c = x.shape
    return T.broadcast_to(T.reshape(x, (b, 1, c)), (b, steps, c))


def _conv_stack(convs: Sequence[Conv1d], x: Tensor) -> Tensor:
    for conv in convs:
        x = T.relu(conv(x))
    return x


def wrap_articulation(a: Tensor) -> Tensor:
    """Rescale axis-angle triples longer than pi to the equivalent short rotation."""
    a = T.as_tensor(a)
    trip = a.data.reshape(a.shape[:-1] + (-1, 3))
    scale = wrap_axis_angle(trip)
    ratio = np.ones_like(trip)
    big = np.linalg.norm(trip, axis=-1) > np.pi
    ratio[big] = scale[big] / trip[big]
    return a * ratio.reshape(a.shape)


class TrajectoryVAE(Module):
    def __init__(self, cfg: TrainConfig, rng: np.random.Generator):
        e, h, z = cfg.embed, cfg.hidden, cfg.latent_traj
        self.use_dfg = cfg.use_dfg
        self.latent = z
        self.embed = e
        self.limb_net = PointNetEncoder(rng, (3, 64, 128, e))
        self.bg_net = PointNetEncoder(rng, (3, 64, 128, e))
        self.g0_embed = PoseEmbedder(rng, out_dim=e, hidden=h)
        self.delta_embed = PoseEmbedder(rng, out_dim=e, hidden=h)
        cdim = traj_condition_dim(cfg.use_dfg, e)
        self.enc_convs = [Conv1d(2 * e + cdim, h, rng), Conv1d(h, h, rng)]
        self.enc_head = MLP([h, h, 2 * z], rng)
        self.dec_convs = [Conv1d(z + cdim + e, h, rng), Conv1d(h, h, rng)]
        self.dec_head = MLP([h, h, 7], rng, zero_last=True)
        self.delta_scale = cfg.delta_scale

    def condition(self, g0, p_limb, p_bg, d_fg):
        z_g0 = self.g0_embed(T.as_tensor(g0))
        z_limb = self.limb_net(p_limb)
        z_bg = self.bg_net(p_bg)
        return build_condition_traj(z_g0, z_limb, z_bg, d_fg if self.use_dfg else None)

    def encode(self, dg, cond: Tensor) -> tuple[Tensor, Tensor]:
        dg = T.as_tensor(dg)
        b, steps = dg.shape[0], dg.shape[1]
        if cond.shape[0] != b:
            raise ShapeError(f"traj_encode: batch {b} vs condition {cond.shape}")
        tau = T.broadcast_to(time_embeddings(steps, self.embed), (b, steps, self.embed))
        x = T.concat([self.delta_embed(dg), tau, _broadcast_steps(cond, steps)], axis=-1)
        pooled = T.mean(_conv_stack(self.enc_convs, x), axis=1)
        out = self.enc_head(pooled)
        mu = T.getitem(out, (slice(None), slice(0, self.latent)))
        log_sigma = clamp_log_sigma(T.getitem(out, (slice(None), slice(self.latent, None))))
        return mu, log_sigma

    def decode(self, z, cond: Tensor, steps: int) -> Tensor:
        z = T.as_tensor(z)
        if z.shape[-1] != self.latent:
            raise ShapeError(f"traj_decode: latent width {z.shape[-1]}, expected {self.latent}")
        b = z.shape[0]
        tau = T.broadcast_to(time_embeddings(steps, self.embed), (b, steps, self.embed))
        x = T.concat([_broadcast_steps(z, steps), _broadcast_steps(cond, steps), tau], axis=-1)
        raw = self.dec_head(_conv_stack(self.dec_convs, x)) * self.delta_scale + IDENTITY7
        return decode_pose_head(raw)


class ArticulationVAE(Module):
    def __init__(self, cfg: TrainConfig, num_joints: int, rng: np.random.Generator):
        e, h, z = cfg.embed, cfg.hidden, cfg.latent_artic
        self.latent = z
        self.embed = e
        self.width = 3 * num_joints
        self.pose_embed = PoseEmbedder(rng, out_dim=e, hidden=h)
        self.artic_embed = MLP([self.width, h, e], rng)
        self.a0_embed = MLP([self.width, h, e], rng)
        self.enc_convs = [Conv1d(4 * e, h, rng), Conv1d(h, h, rng)]
        self.enc_head = MLP([h, h, 2 * z], rng)
        self.dec_convs = [Conv1d(z + 3 * e, h, rng), Conv1d(h, h, rng)]
        self.dec_head = MLP([h, h, self.width], rng, zero_last=True)

    def _context(self, rel_traj, a0) -> tuple[Tensor, Tensor]:
        rel = T.as_tensor(rel_traj)
        z_g = self.pose_embed(T.getitem(rel, (slice(None), slice(1, None))))  # frames 1..T
        z_a0 = self.a0_embed(T.as_tensor(a0))
        return z_g, z_a0

    def encode(self, a, rel_traj) -> tuple[Tensor, Tensor]:
        a = T.as_tensor(a)
        if a.shape[-1] != self.width:
            raise ShapeError(f"artic_encode: articulation width {a.shape[-1]}, expected {self.width}")
        b, steps = a.shape[0], a.shape[1] - 1
        z_g, z_a0 = self._context(rel_traj, T.getitem(a, (slice(None), 0)))
        z_a = self.artic_embed(T.getitem(a, (slice(None), slice(1, None))))
        tau = T.broadcast_to(time_embeddings(steps, self.embed), (b, steps, self.embed))
        x = T.concat([z_g, z_a, _broadcast_steps(z_a0, steps), tau], axis=-1)
        out = self.enc_head(T.mean(_conv_stack(self.enc_convs, x), axis=1))
        mu = T.getitem(out, (slice(None), slice(0, self.latent)))
        log_sigma = clamp_log_sigma(T.getitem(out, (slice(None), slice(self.latent, None))))
        return mu, log_sigma

    def decode(self, z, a0, rel_traj) -> Tensor:
        """Articulations for frames ``1..T``, ``(B, T, 3J)``."""
        z = T.as_tensor(z)
        if z.shape[-1] != self.latent:
            raise ShapeError(f"artic_decode: latent width {z.shape[-1]}, expected {self.latent}")
        b = z.shape[0]
        z_g, z_a0 = self._context(rel_traj, a0)
        steps = z_g.shape[1]
        tau = T.broadcast_to(time_embeddings(steps, self.embed), (b, steps, self.embed))
        x = T.concat([_broadcast_steps(z, steps), _broadcast_steps(z_a0, steps), z_g, tau], axis=-1)
        return wrap_articulation(self.dec_head(_conv_stack(self.dec_convs, x)))


# ---------------------------------------------------------------------------
# combined model


@dataclass
class LossBreakdown:
    traj_recon: float
    traj_kl: float
    artic_recon: float
    artic_kl: float
    floating: float
    total: float

    def row(self) -> list[float]:
        return [self.traj_recon, self.traj_kl, self.artic_recon, self.artic_kl, self.floating, self.total]


def combine_losses(parts: dict, cfg: TrainConfig):
    """Weighted objective; works on tensors and on plain floats."""
    return (
        cfg.recon_weight * (parts["traj_recon"] + parts["artic_recon"])
        + cfg.lambda_traj_kl * parts["traj_kl"]
        + cfg.lambda_cdd * parts["floating"]
        + cfg.lambda_artic_kl * parts["artic_kl"]
    )


def total_loss(parts: dict, cfg: TrainConfig) -> LossBreakdown:
    vals = {k: float(v.item() if isinstance(v, Tensor) else v) for k, v in parts.items()}
    return LossBreakdown(
        vals["traj_recon"], vals["traj_kl"], vals["artic_recon"], vals["artic_kl"], vals["floating"],
        float(combine_losses(vals, cfg)),
    )


class MotionModel:
    """Both VAEs plus the configuration they were built with."""

    def __init__(self, cfg: TrainConfig, num_joints: int, seed: int | None = None):
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        self.cfg = cfg
        self.num_joints = num_joints
        self.traj = TrajectoryVAE(cfg, rng)
        self.artic = ArticulationVAE(cfg, num_joints, rng)

    # -- parameters

    def parameters(self) -> dict[str, Tensor]:
        out = {f"traj.{k}": v for k, v in self.traj.named_parameters()}
        out.update({f"artic.{k}": v for k, v in self.artic.named_parameters()})
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.traj.load_state_dict(state, prefix="traj.")
        self.artic.load_state_dict(state, prefix="artic.")

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def metadata(self) -> dict:
        return {"config": self.cfg.to_dict(), "num_joints": self.num_joints}

    # -- forward passes

    def condition(self, batch: Batch):
        cond = self.traj.condition(batch.g0, batch.p_limb, batch.p_bg, batch.d_fg)
        return cond.tensor

    def losses(self, batch: Batch, rng: np.random.Generator) -> dict[str, Tensor]:
        cfg = self.cfg
        cond = self.condition(batch)
        mu, log_sigma = self.traj.encode(batch.dg, cond)
        z = reparameterize(mu, log_sigma, rng)
        dg_hat = self.traj.decode(z, cond, batch.t_frames)
        parts = {
            "traj_recon": traj_recon_loss(dg_hat, batch.dg),
            "traj_kl": kl_diag_gaussian(mu, log_sigma),
        }
        if cfg.lambda_cdd != 0.0:
            pred = integrate_trajectory(batch.g0, dg_hat)
            parts["floating"] = floating_loss_batch(
                pred, batch.p_limb, batch.indexes, batch.gt_chamfer, worker_threads()
            )
        else:
            parts["floating"] = Tensor(np.array(0.0))
        rel = relative_to_start(batch.traj)  # teacher forcing on ground truth
        amu, als = self.artic.encode(batch.a, rel)
        za = reparameterize(amu, als, rng)
        a_hat = self.artic.decode(za, batch.a[:, 0], rel)
        parts["artic_recon"] = T.mean(T.tabs(a_hat - batch.a[:, 1:]))
        parts["artic_kl"] = kl_diag_gaussian(amu, als)
        return parts

    def reconstruct_batch(self, batch: Batch) -> np.ndarray:
        """Posterior-mean reconstruction, integrated: ``(B, T + 1, 7)``."""
        cond = self.condition(batch)
        mu, _ = self.traj.encode(batch.dg, cond)
        dg_hat = self.traj.decode(mu, cond, batch.t_frames)
        return integrate_poses(batch.g0, dg_hat.data)

    def sample_batch(self, batch: Batch, seed) -> np.ndarray:
        """Prior-sampled trajectories for every clip, ``(B, T + 1, 7)``."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        cond = self.condition(batch)
        z = rng.standard_normal((batch.size, self.cfg.latent_traj))
        dg_hat = self.traj.decode(z, cond, batch.t_frames)
        return integrate_poses(batch.g0, dg_hat.data)

    def sample_articulation(self, traj: np.ndarray, a0: np.ndarray, seed) -> np.ndarray:
        """``A_0..A_T`` conditioned on trajectories ``(B, T + 1, 7)``."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        traj = np.asarray(traj, dtype=np.float64)
        a0 = np.asarray(a0, dtype=np.float64).reshape(len(traj), -1)
        z = rng.standard_normal((len(traj), self.cfg.latent_artic))
        a_hat = self.artic.decode(z, a0, relative_to_start(traj)).data
        return np.concatenate([a0[:, None, :], a_hat], axis=1)

    # single-clip conveniences used by the metrics

    def reconstruct(self, clip: MotionClip) -> np.ndarray:
        return self.reconstruct_batch(make_batch([clip], self.cfg.n_fg, self.cfg.n_bg))[0]

    def sample(self, clip: MotionClip, seed) -> np.ndarray:
        return self.sample_batch(make_batch([clip], self.cfg.n_fg, self.cfg.n_bg), seed)[0]

    def sample_many(self, clip: MotionClip, n: int, seed) -> np.ndarray:
        """``n`` prior samples for one clip in a single batched pass."""
        return self.sample_batch(make_batch([clip] * n, self.cfg.n_fg, self.cfg.n_bg), seed)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | Path, model: MotionModel, opt: AdamState | None = None, extra: dict | None = None) -> None:
    entries = dict(model.state_dict())
    meta = model.metadata()
    if opt is not None:
        for k, v in opt.m.items():
            entries[f"adam.m.{k}"] = v
        for k, v in opt.v.items():
            entries[f"adam.v.{k}"] = v
        meta["adam"] = {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps, "step": opt.step}
    if extra:
        meta.update(extra)
    ckpt.save(path, entries, meta)


def load_checkpoint(path: str | Path) -> tuple[MotionModel, AdamState | None, dict]:
    entries, meta = ckpt.load(path)
    try:
        cfg = TrainConfig.from_dict(meta["config"])
        model = MotionModel(cfg, int(meta["num_joints"]))
    except (KeyError, TypeError) as exc:
        raise ckpt.CheckpointError(f"checkpoint metadata incomplete: {exc}") from None
    model.load_state_dict({k: v for k, v in entries.items() if not k.startswith("adam.")})
    opt = None
    if "adam" in meta:
        a = meta["adam"]
        opt = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], step=a["step"])
        opt.m = {k[len("adam.m."):]: v for k, v in entries.items() if k.startswith("adam.m.")}
        opt.v = {k[len("adam.v."):]: v for k, v in entries.items() if k.startswith("adam.v.")}
    return model, opt, meta


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: MotionModel
    history: list[LossBreakdown]
    step: int
    epoch: int
    initial: LossBreakdown | None = None


def _epoch_rng(seed: int, epoch: int, what: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, what])


def train(
    clips: Sequence[MotionClip],
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
    on_step: Callable[[int, LossBreakdown], None] | None = None,
    extra_meta: dict | None = None,
) -> TrainResult:
    """Joint training of both VAEs with Adam; deterministic given ``cfg.seed``.

    One epoch is one pass over a seeded permutation of ``clips`` in batches of
    ``cfg.batch``. Per-epoch averages go to ``loss.csv`` when ``out_dir`` is set.
    """
    if not clips:
        raise ValueError("training needs a nonempty dataset")
    t = clips[0].t_frames
    if any(c.t_frames != t for c in clips):
        raise ShapeError("all clips must share T")
    num_joints = clips[0].a.shape[1] // 3
    cfg = replace(cfg, t_frames=t)
    start_epoch, history = 0, []
    if resume is not None:
        model, opt, meta = load_checkpoint(resume)
        if opt is None:
            opt = AdamState(lr=cfg.lr)
        model.cfg = replace(model.cfg, epochs=cfg.epochs, max_steps=cfg.max_steps, checkpoint_every=cfg.checkpoint_every)
        cfg = model.cfg
        start_epoch = int(meta.get("epoch", 0))
    else:
        model = MotionModel(cfg, num_joints)
        opt = AdamState(lr=cfg.lr)
    params = model.parameters()
    out = Path(out_dir) if out_dir is not None else None
    writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "loss.csv"
        append = resume is not None and csv_path.exists()
        fh = open(csv_path, "a" if append else "w", newline="")
        writer = csv.writer(fh)
        if not append:
            writer.writerow(CSV_HEADER)
    n = len(clips)
    steps_per_epoch = math.ceil(n / cfg.batch)
    # ground-truth limb chamfers are invariant under augmentation, so compute them once
    gt_cache = make_batch(clips, cfg.n_fg, cfg.n_bg).gt_chamfer if n <= 64 else np.concatenate(
        [make_batch(clips[i : i + 64], cfg.n_fg, cfg.n_bg).gt_chamfer for i in range(0, n, 64)]
    )
    initial = None
    epoch = start_epoch
    try:
        for epoch in range(start_epoch + 1, cfg.epochs + 1):
            if cfg.max_steps and opt.step >= cfg.max_steps:
                epoch -= 1
                break
            order = _epoch_rng(cfg.seed, epoch, 0).permutation(n)
            sums = np.zeros(6)
            count = 0
            for k in range(steps_per_epoch):
                if cfg.max_steps and opt.step >= cfg.max_steps:
                    break
                idx = order[k * cfg.batch : (k + 1) * cfg.batch]
                step_rng = np.random.default_rng([cfg.seed, opt.step, 1])
                chosen = [clips[i] for i in idx]
                if cfg.augment:
                    chosen = [
                        augment(c, int(step_rng.integers(2**63)), cfg.aug_translation) for c in chosen
                    ]
                batch = make_batch(chosen, cfg.n_fg, cfg.n_bg, gt_cache[idx])
                model.zero_grad()
                parts = model.losses(batch, step_rng)
                loss = combine_losses(parts, cfg)
                loss.backward()
                adam_step(opt, params)
                br = total_loss(parts, cfg)
                if initial is None:
                    initial = br
                sums += br.row()
                count += 1
                if on_step is not None:
                    on_step(opt.step, br)
            mean = LossBreakdown(*(sums / max(count, 1)))
            history.append(mean)
            if writer is not None:
                writer.writerow([epoch] + [repr(float(v)) for v in mean.row()])
                fh.flush()
            if out is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                save_checkpoint(out / f"ckpt_epoch{epoch:04d}.vpet", model, opt, _meta(epoch, extra_meta))
    finally:
        if writer is not None:
            fh.close()
    if out is not None:
        save_checkpoint(out / "final.vpet", model, opt, _meta(epoch, extra_meta))
    return TrainResult(model, history, opt.step, epoch, initial)


def _meta(epoch: int, extra: dict | None) -> dict:
    d = {"epoch": epoch}
    if extra:
        d.update(extra)
    return d


# ---------------------------------------------------------------------------
# generation


@dataclass
class Generated:
    trajectory: np.ndarray  # (T + 1, 7)
    articulations: np.ndarray  # (T + 1, J, 3)
    d_fg: float


def generate(
    model: MotionModel,
    fg_mesh: TriMesh,
    skeleton: Skeleton,
    bg_mesh: TriMesh,
    g0: RigidTransform,
    a0: np.ndarray,
    t_frames: int,
    seed: int,
    weights: np.ndarray | None = None,
) -> Generated:
    """Sample a trajectory from the prior, then articulations conditioned on it."""
    cfg = model.cfg
    if skeleton.num_joints != model.num_joints:
        raise ShapeError(f"model was trained for {model.num_joints} joints, skeleton has {skeleton.num_joints}")
    if weights is None:
        weights = skinning_weights(fg_mesh.vertices, gaussian_bones(skeleton))
    p_limb = limb_vertices(fg_mesh, skeleton, cfg.n_fg, weights=weights)
    p_bg = sample_surface(bg_mesh, cfg.n_bg, seed)
    a0 = np.asarray(a0, dtype=np.float64).reshape(-1)
    d_fg = center_distance(pose_mesh(fg_mesh, skeleton, a0, g0, weights=weights), p_bg)
    clip = MotionClip(
        g0.to_vec7(),
        np.tile(IDENTITY7, (t_frames, 1)),
        np.tile(a0, (t_frames + 1, 1)),
        p_limb,
        p_bg,
        d_fg,
        "walk",
    )
    rng = np.random.default_rng(seed)
    traj = model.sample_batch(make_batch([clip], cfg.n_fg, cfg.n_bg), rng)
    traj[:, 0] = g0.to_vec7()  # start pose is pinned exactly
    artic = model.sample_articulation(traj, a0[None], rng)[0]
    return Generated(traj[0], artic.reshape(t_frames + 1, -1, 3), d_fg)
