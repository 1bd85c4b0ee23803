"""Command-line entry point: ``vpet synth | train | generate | eval``."""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff.checkpoint import CheckpointError
from .data import (
    DataError,
    Quadruped,
    SchemaError,
    SynthConfig,
    read_dataset,
    synthesize_dataset,
    write_dataset,
)
from .geometry import GeometryError, RigidTransform, read_obj, write_obj
from .metrics import DEFAULT_N, MetricError, OracleCopy, evaluate_suite
from .motion_vae import TrainConfig, generate, load_checkpoint, train
from .skeleton import (
    SkeletonError,
    forward_kinematics,
    gaussian_bones,
    load_skeleton,
    pose_mesh,
    save_skeleton,
    skinning_weights,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_MODEL = 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _echo(out: Path, command: str, args: argparse.Namespace, extra: dict | None = None) -> None:
    doc = {"command": command, "version": __version__}
    # the echo lives in the output directory, so its path is left out to keep reruns byte-identical
    doc["args"] = {k: v for k, v in vars(args).items() if k not in ("func", "out")}
    if extra:
        doc.update(extra)
    (out / f"{command}_config.json").write_text(json.dumps(doc, indent=1, sort_keys=True, default=str))


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc}", EXIT_DATA) from None
    return out


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args: argparse.Namespace) -> int:
    out = _out_dir(args.out)
    cfg = SynthConfig(
        n_clips=args.records,
        n_scenes=args.scenes,
        t_frames=args.frames,
        n_bg=args.n_bg,
        n_fg=args.n_fg,
        seed=args.seed,
    )
    quad = Quadruped.build(n_fg=cfg.n_fg)
    result = synthesize_dataset(cfg, quad)
    files = []
    scene_dir = out / "scenes"
    scene_dir.mkdir(exist_ok=True)
    for i, scene in enumerate(result.scenes):
        p = scene_dir / f"scene_{i:04d}.obj"
        write_obj(p, scene.mesh)
        files.append(p)
    write_obj(out / "quadruped.obj", quad.mesh)
    save_skeleton(out / "skeleton.json", quad.skeleton)
    write_dataset(out / "dataset.jsonl", result.clips)
    stats = {
        "clips": len(result.clips),
        "records": len(result.records),
        "scenes": len(result.scenes),
        "t_frames": cfg.t_frames,
        "mean_scene_diagonal": result.mean_scene_diagonal,
        "tags": {t: sum(c.tag == t for c in result.clips) for t in ("walk", "jump", "idle")},
    }
    (out / "stats.json").write_text(json.dumps(stats, indent=1, sort_keys=True))
    _echo(out, "synth", args, {"synth_config": vars(cfg)})
    files += [out / n for n in ("quadruped.obj", "skeleton.json", "dataset.jsonl", "stats.json", "synth_config.json")]
    manifest = {
        str(p.relative_to(out)): {"sha256": _sha256(p), "bytes": p.stat().st_size} for p in sorted(files)
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    print(f"wrote {len(result.clips)} clips from {len(result.records)} records to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _resolve_train_config(args: argparse.Namespace) -> TrainConfig:
    try:
        cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
        for item in args.set or []:
            if "=" not in item:
                raise ValueError(f"--set expects key=value, got {item!r}")
            key, value = item.split("=", 1)
            cfg = cfg.with_value(key.strip(), value.strip())
        if args.lambda_cdd is not None:
            cfg = cfg.with_value("lambda_cdd", repr(args.lambda_cdd))
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}", EXIT_USAGE) from None
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    return cfg


def _load_clips(path: str):
    try:
        return read_dataset(path)
    except (SchemaError, DataError) as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    except OSError as exc:
        raise CliError(f"cannot read dataset: {exc}", EXIT_DATA) from None


def _dataset_stats(path: str) -> dict:
    p = Path(path).with_name("stats.json")
    if p.exists():
        return json.loads(p.read_text())
    return {}


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve_train_config(args)
    clips = _load_clips(args.data)
    if not clips:
        raise CliError("dataset is empty", EXIT_DATA)
    out = _out_dir(args.out)
    stats = _dataset_stats(args.data)
    extra = {"mean_scene_diagonal": stats.get("mean_scene_diagonal", 0.0)}
    (out / "config.txt").write_text(cfg.to_text())
    _echo(out, "train", args, {"train_config": cfg.to_dict()})
    try:
        result = train(clips, cfg, out_dir=out, resume=args.resume, extra_meta=extra)
    except CheckpointError as exc:
        raise CliError(f"cannot resume: {exc}", EXIT_MODEL) from None
    last = result.history[-1] if result.history else None
    print(f"trained {result.step} steps over {result.epoch} epochs; final total loss "
          f"{last.total if last else float('nan'):.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# generate


def _parse_start(text: str) -> RigidTransform:
    try:
        vals = [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise CliError(f"--start must be 7 numbers, got {text!r}", EXIT_USAGE) from None
    if len(vals) != 7 or not np.all(np.isfinite(vals)):
        raise CliError(f"--start must be 7 finite numbers, got {text!r}", EXIT_USAGE)
    try:
        return RigidTransform.from_vec7(vals)
    except GeometryError as exc:
        raise CliError(f"--start: {exc}", EXIT_USAGE) from None


def normalize_room(mesh, target_diagonal: float):
    """Recenter a room mesh and scale it so its bbox diagonal matches ``target_diagonal``."""
    center = mesh.vertices.mean(axis=0)
    diag = mesh.bbox_diagonal()
    scale = target_diagonal / diag if target_diagonal > 0 and diag > 0 else 1.0
    return mesh.with_vertices((mesh.vertices - center) * scale), center, scale


def cmd_generate(args: argparse.Namespace) -> int:
    if args.frames < 1:
        raise CliError("--frames must be >= 1", EXIT_USAGE)
    start = _parse_start(args.start)
    try:
        model, _, meta = load_checkpoint(args.ckpt)
    except (OSError, CheckpointError) as exc:
        raise CliError(f"cannot load checkpoint: {exc}", EXIT_MODEL) from None
    try:
        fg = read_obj(args.fg)
        bg = read_obj(args.bg)
        skel = load_skeleton(args.skel)
    except OSError as exc:
        raise CliError(f"cannot read input: {exc}", EXIT_DATA) from None
    except (GeometryError, SkeletonError, ValueError) as exc:
        raise CliError(f"invalid input geometry: {exc}", EXIT_MODEL) from None
    room, center, scale = normalize_room(bg, float(meta.get("mean_scene_diagonal", 0.0)))
    # the start pose is given in the input room's frame; move it with the room
    g0 = RigidTransform(start.rotation, (start.translation - center) * scale)
    try:
        weights = skinning_weights(fg.vertices, gaussian_bones(skel))
        gen = generate(model, fg, skel, room, g0, np.zeros((skel.num_joints, 3)), args.frames, args.seed, weights)
    except (GeometryError, SkeletonError, ValueError) as exc:
        raise CliError(f"foreground mesh and skeleton are incompatible with the model: {exc}", EXIT_MODEL) from None
    out = _out_dir(args.out)
    frame_dir = out / "frames"
    frame_dir.mkdir(exist_ok=True)
    frames = []
    for t in range(args.frames + 1):
        g = RigidTransform.from_vec7(gen.trajectory[t])
        posed = pose_mesh(fg, skel, gen.articulations[t], g, weights=weights)
        if not np.all(np.isfinite(posed.vertices)):
            raise CliError(f"frame {t} produced non-finite vertices", EXIT_MODEL)
        write_obj(frame_dir / f"frame_{t:04d}.obj", posed)
        bones = forward_kinematics(skel, gen.articulations[t])
        world = [(g @ bones.transform(b)).to_vec7().tolist() for b in range(skel.num_bones)]
        frames.append({"t": t, "global": gen.trajectory[t].tolist(), "bones": world})
    write_obj(out / "scene.obj", room)
    motion = {
        "frames": args.frames,
        "seed": args.seed,
        "G": gen.trajectory.tolist(),
        "A": gen.articulations.tolist(),
        "d_fg": gen.d_fg,
        "room_center": center.tolist(),
        "room_scale": scale,
    }
    (out / "motion.json").write_text(json.dumps(motion, indent=1))
    anim = {"fps": 30, "num_bones": skel.num_bones, "pose_layout": "qw qx qy qz tx ty tz", "frames": frames}
    (out / "animation.json").write_text(json.dumps(anim))
    _echo(out, "generate", args, {"room_scale": scale, "room_center": center.tolist()})
    print(f"wrote {args.frames + 1} frames to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args: argparse.Namespace) -> int:
    if args.n < 2:
        raise CliError("--n must be >= 2", EXIT_USAGE)
    if not args.oracle_copy and not args.ckpt:
        raise CliError("--ckpt is required unless --oracle-copy is given", EXIT_USAGE)
    clips = _load_clips(args.data)
    if args.oracle_copy:
        model = OracleCopy()
    else:
        try:
            model, _, _ = load_checkpoint(args.ckpt)
        except (OSError, CheckpointError) as exc:
            raise CliError(f"cannot load checkpoint: {exc}", EXIT_MODEL) from None
    echo = {"ckpt": args.ckpt, "data": args.data, "n": args.n, "seed": args.seed,
            "oracle_copy": args.oracle_copy, "exclude_jumps": not args.include_jumps}
    try:
        report = evaluate_suite(model, clips, n=args.n, seed=args.seed,
                                exclude_jumps=not args.include_jumps, config=echo)
    except MetricError as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    except ValueError as exc:
        raise CliError(f"checkpoint does not fit the dataset: {exc}", EXIT_MODEL) from None
    out = _out_dir(args.out)
    report.write(out / "report.json", out / "report.csv")
    _echo(out, "eval", args)
    print(f"recon={report.recon:.6g} diversity={report.diversity:.6g} "
          f"floating_err={report.floating_err:.6g} n={report.n} clips={report.clips}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vpet", description="Environment-aware quadruped motion generation.")
    p.add_argument("--version", action="version", version=f"vpet {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="synthesize scenes, motions and a clip dataset")
    s.add_argument("--scenes", type=int, default=64, help="distinct scenes (0 = one per record)")
    s.add_argument("--records", type=_positive, default=512, help="number of clips to write")
    s.add_argument("--frames", type=_positive, default=32, help="steps per clip (T)")
    s.add_argument("--n-bg", type=_positive, default=2048)
    s.add_argument("--n-fg", type=_positive, default=256)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train both motion VAEs")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="key=value config file")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    t.add_argument("--lambda-cdd", type=float, help="floating-loss weight")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("generate", help="sample a motion in a room and export it")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--fg", required=True, help="foreground OBJ in canonical pose")
    g.add_argument("--skel", required=True, help="skeleton JSON")
    g.add_argument("--bg", required=True, help="room OBJ")
    g.add_argument("--start", required=True, help='start pose "qw qx qy qz tx ty tz"')
    g.add_argument("--frames", type=int, default=32)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--ckpt")
    e.add_argument("--data", required=True)
    e.add_argument("--n", type=int, default=DEFAULT_N, help="samples per clip for diversity")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--oracle-copy", action="store_true", help="evaluate a model that copies ground truth")
    e.add_argument("--include-jumps", action="store_true", help="keep jump clips in the floating error")
    e.add_argument("--out", default="eval")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"vpet {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
