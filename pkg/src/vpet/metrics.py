"""Evaluation metrics: reconstruction error, diversity and floating error."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .data import MotionClip
from .geometry import NnIndex, apply_vec7, quat_canonical

REPORT_CSV_HEADER = ("recon", "diversity", "floating_err", "n", "clips")
DEFAULT_N = 8


class MetricError(ValueError):
    pass


class AllFramesExcluded(MetricError):
    pass


class MotionSource(Protocol):
    def reconstruct(self, clip: MotionClip) -> np.ndarray: ...

    def sample(self, clip: MotionClip, seed) -> np.ndarray: ...


class OracleCopy:
    """Stand-in model that returns the ground-truth trajectory for every request."""

    def reconstruct(self, clip: MotionClip) -> np.ndarray:
        return clip.trajectory()

    def sample(self, clip: MotionClip, seed) -> np.ndarray:
        return clip.trajectory()


def trajectory_distance(a: np.ndarray, b: np.ndarray) -> float:
    """L1 over every pose number of every frame, quaternions taken with ``w >= 0``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.shape[-1] != 7:
        raise MetricError(f"trajectory shapes differ: {a.shape} vs {b.shape}")
    ca = np.concatenate([quat_canonical(a[..., :4]), a[..., 4:]], axis=-1)
    cb = np.concatenate([quat_canonical(b[..., :4]), b[..., 4:]], axis=-1)
    return float(np.abs(ca - cb).sum())


def recon_error(model: MotionSource, clip: MotionClip) -> float:
    return trajectory_distance(model.reconstruct(clip), clip.trajectory())


def _draw(model: MotionSource, clip: MotionClip, n: int, seed: int) -> list[np.ndarray]:
    if hasattr(model, "sample_many"):
        return list(model.sample_many(clip, n, seed))
    seeds = np.random.default_rng(seed).integers(0, 2**63 - 1, size=n)
    return [np.asarray(model.sample(clip, int(s))) for s in seeds]


def diversity(model: MotionSource, clip: MotionClip, n: int = DEFAULT_N, seed: int = 0, samples=None) -> float:
    """Mean distance of ``n`` prior samples to the ground-truth trajectory."""
    if n < 2:
        raise MetricError("diversity needs at least two samples")
    samples = _draw(model, clip, n, seed) if samples is None else samples
    gt = clip.trajectory()
    return float(np.mean([trajectory_distance(s, gt) for s in samples]))


def pairwise_spread(samples: Sequence[np.ndarray]) -> float:
    """Mean distance between distinct samples; zero means the sampler collapsed."""
    k = len(samples)
    if k < 2:
        return 0.0
    d = [trajectory_distance(samples[i], samples[j]) for i in range(k) for j in range(i + 1, k)]
    return float(np.mean(d))


def frame_chamfers(traj: np.ndarray, clip: MotionClip, index: NnIndex | None = None) -> np.ndarray:
    """One-sided chamfer from ``G_t * P_limb`` to ``P_bg`` for every frame."""
    index = NnIndex(clip.p_bg) if index is None else index
    dist, _ = index.query(apply_vec7(np.asarray(traj, dtype=np.float64), clip.p_limb))
    return dist.mean(axis=-1)


def floating_error(motion, clip: MotionClip, exclude_jumps: bool = True, seed: int = 0) -> float:
    """Mean limb-to-scene chamfer over the frames of ``motion``.

    ``motion`` is a ``(T + 1, 7)`` trajectory or a model, in which case one
    prior sample is drawn with ``seed``. Jump-tagged clips are dropped when
    ``exclude_jumps`` is set, which leaves nothing to average here.
    """
    if exclude_jumps and clip.tag == "jump":
        raise AllFramesExcluded("every frame belongs to a jump clip")
    if len(clip.p_bg) == 0:
        raise MetricError("empty background cloud")
    traj = motion.sample(clip, seed) if hasattr(motion, "sample") else motion
    return float(frame_chamfers(traj, clip).mean())


@dataclass
class EvalReport:
    recon: float
    diversity: float
    floating_err: float
    n: int
    clips: int
    t_frames: int
    floating_err_gt: float = 0.0
    spread: float = 0.0
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))

    def write(self, json_path: str | Path, csv_path: str | Path | None = None) -> None:
        Path(json_path).write_text(self.to_json())
        if csv_path is not None:
            with open(csv_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(REPORT_CSV_HEADER)
                w.writerow([repr(self.recon), repr(self.diversity), repr(self.floating_err), self.n, self.clips])


def evaluate_suite(
    model: MotionSource,
    clips: Sequence[MotionClip],
    n: int = DEFAULT_N,
    seed: int = 0,
    exclude_jumps: bool = True,
    config: dict | None = None,
) -> EvalReport:
    """Aggregate the three metrics over ``clips``.

    Recon and diversity average over all clips. Floating error averages the
    frames of the same diversity samples over the retained (non-jump) clips.
    """
    if not clips:
        raise MetricError("empty evaluation set")
    seeds = np.random.default_rng(seed).integers(0, 2**63 - 1, size=len(clips))
    recon, div, spread, flo, flo_gt = [], [], [], [], []
    for clip, s in zip(clips, seeds):
        recon.append(recon_error(model, clip))
        samples = _draw(model, clip, n, int(s))
        div.append(diversity(model, clip, n, samples=samples))
        spread.append(pairwise_spread(samples))
        if exclude_jumps and clip.tag == "jump":
            continue
        index = NnIndex(clip.p_bg)
        flo.append(np.mean([frame_chamfers(x, clip, index).mean() for x in samples]))
        flo_gt.append(frame_chamfers(clip.trajectory(), clip, index).mean())
    if not flo:
        raise AllFramesExcluded("every evaluation clip is jump-tagged")
    return EvalReport(
        recon=float(np.mean(recon)),
        diversity=float(np.mean(div)),
        floating_err=float(np.mean(flo)),
        n=n,
        clips=len(clips),
        t_frames=clips[0].t_frames,
        floating_err_gt=float(np.mean(flo_gt)),
        spread=float(np.mean(spread)),
        config=dict(config or {}),
    )
