"""Command-line entry point: gen-data, train, sample, eval, compare and replay.

Every command writes ``run_manifest.json`` into its ``--out`` directory before
producing results; ``robodiff replay <manifest>`` reruns the recorded command.
Exit codes: 0 success, 2 usage error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .backbone import VARIANTS
from .checkpoint import file_sha256, load_checkpoint
from .dataset import (TRAJECTORY_KINDS, RobotSprite, build_record, export_dataset, load_dataset,
                      load_frame_png, make_scene)
from .metrics import MASK_SOURCE_NOTE, evaluate_sequence
from .sampler import generate_video, plan_from_record, write_generated
from .schedule import make_schedule
from .trainer import TrainConfig, read_config_file, train_loop

log = logging.getLogger("robodiff")

EXIT_USAGE = 2
EXIT_RUNTIME = 3
MANIFEST = "run_manifest.json"

# option name -> TrainConfig field; flags override config-file values
TRAIN_FLAGS = {
    "variant": str, "steps": int, "batch": int, "lr": float, "max_dk": int, "T": int,
    "beta_start": float, "beta_end": float, "seed": int, "n_blocks": int, "width": int,
    "cond_dim": int, "kernel_size": int, "expansion": int, "ckpt_every": int, "ema_decay": float,
    "cond_noise": float,
}

PRESETS = {
    "desk": {},
    # the configuration used by the variant-ordering acceptance check
    "small": {"n_blocks": 4, "width": 32, "cond_dim": 32, "kernel_size": 5, "expansion": 2,
              "lr": 1e-3, "steps": 1500},
    "paper": {"n_blocks": 16, "T": 1000, "beta_start": 1e-4, "beta_end": 0.02},
}


class RuntimeFailure(Exception):
    """A failure worth reporting without a traceback (exit code 3)."""


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        w, h = int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 64x36, got {text!r}") from None
    if w < 11 or h < 11:
        raise argparse.ArgumentTypeError("frames must be at least 11x11")
    return w, h


def dir_digest(path) -> str:
    """sha256 over the relative names and contents of every file below ``path``."""
    h = hashlib.sha256()
    root = Path(path)
    for p in sorted(q for q in root.rglob("*") if q.is_file()):
        h.update(str(p.relative_to(root)).encode())
        h.update(b"\0")
        h.update(p.read_bytes())
    return h.hexdigest()


def write_manifest(out: Path, argv: list[str], command: str, **fields) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    payload = {"tool": "robodiff", "version": __version__, "command": command, "argv": argv}
    payload.update(fields)
    path = out / MANIFEST
    tmp = out / (MANIFEST + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)
    return path


def _train_config(args) -> TrainConfig:
    values = dict(PRESETS[args.preset])
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for name in TRAIN_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    return TrainConfig.from_mapping(values)


# --- commands ---------------------------------------------------------------

def cmd_gen_data(args, argv):
    out = Path(args.out)
    w, h = args.size
    classes = 2 if args.masks == "robot+bg" else 1
    write_manifest(out, argv, "gen-data", seeds={"scene": args.seed},
                   config={"frames": args.frames, "size": f"{w}x{h}", "trajectory": args.trajectory,
                           "masks": args.masks, "background": args.background,
                           "speed": args.speed, "turn_rate": args.turn_rate,
                           "pixels_per_metre": args.ppm, "sprite_scale": args.sprite_scale},
                   outputs={"dataset": str(out)})
    spec = make_scene(args.frames, w, h, args.trajectory, args.seed, classes, args.background,
                      args.ppm, args.speed, args.turn_rate,
                      sprite=RobotSprite().scaled(args.sprite_scale))
    export_dataset(build_record(spec), out)
    return 0


def cmd_train(args, argv):
    cfg = _train_config(args)
    out = Path(args.out)
    rec = load_dataset(args.data)
    write_manifest(out, argv, "train", config=asdict(cfg), seeds={"train": cfg.seed},
                   inputs={"data": args.data, "data_sha256": dir_digest(args.data)},
                   outputs={"checkpoint": str(out / "checkpoint.bin"), "loss_log": str(out / "loss.csv")})
    (out / "train.cfg").write_text(cfg.to_lines())
    train_loop(rec, cfg, out)
    return 0


def _load_net(path):
    try:
        net, header = load_checkpoint(path)
    except FileNotFoundError:
        raise RuntimeFailure(f"checkpoint {path} not found; run `robodiff train` first") from None
    defaults = TrainConfig()
    schedule = make_schedule(net.cfg.T, float(header.get("beta_start", defaults.beta_start)),
                             float(header.get("beta_end", defaults.beta_end)))
    return net, schedule


def _generate(net, schedule, rec, n_frames, seed, start, out, extra):
    plan = plan_from_record(rec, n_frames, seed, start, net.cfg.use_pose, net.cfg.use_mask)
    manifest = {
        "seed": seed, "start_frame": start, "n_frames": n_frames, "variant": net.cfg.variant,
        "masks": "ground-truth plan masks" if net.cfg.use_mask else "unused",
        "conditions": [
            {"frame": start + i + 1,
             "pose_delta": None if dp is None else [round(float(v), 6) for v in dp.as_array()],
             "mask": m is not None}
            for i, (dp, m) in enumerate(plan.conditions)
        ],
    }
    manifest.update(extra)
    frames = generate_video(plan, net, schedule)
    write_generated(frames, out, manifest)
    return frames


def cmd_sample(args, argv):
    out = Path(args.out)
    ckpt_hash = file_sha256(args.checkpoint) if Path(args.checkpoint).exists() else None
    write_manifest(out, argv, "sample", seeds={"sample": args.seed},
                   config={"frames": args.frames, "start": args.start},
                   inputs={"checkpoint": args.checkpoint, "checkpoint_sha256": ckpt_hash, "data": args.data},
                   outputs={"frames": str(out / "frames_gen")})
    net, schedule = _load_net(args.checkpoint)
    rec = load_dataset(args.data)
    _generate(net, schedule, rec, args.frames, args.seed, args.start, out,
              {"checkpoint_sha256": ckpt_hash})
    return 0


def _gen_frames_of(gen_dir: Path):
    if (gen_dir / "frames_gen").is_dir():
        files = sorted((gen_dir / "frames_gen").glob("*.png"))
        start = 0
        mf = gen_dir / "generation_manifest.json"
        if mf.exists():
            start = int(json.loads(mf.read_text()).get("start_frame", 0))
        return [load_frame_png(p) for p in files], start + 1
    if (gen_dir / "frames").is_dir():
        return [load_frame_png(p) for p in sorted((gen_dir / "frames").glob("*.png"))], 0
    raise RuntimeFailure(f"{gen_dir} has neither frames_gen/ nor frames/")


def cmd_eval(args, argv):
    out = Path(args.out)
    write_manifest(out, argv, "eval", inputs={"orig": args.orig, "gen": args.gen},
                   config={"offset": args.offset}, outputs={"report": str(out / "report.csv")})
    rec = load_dataset(args.orig)
    frames, offset = _gen_frames_of(Path(args.gen))
    if args.offset is not None:
        offset = args.offset
    if offset + len(frames) > len(rec):
        raise RuntimeFailure(f"{len(frames)} generated frames starting at original frame {offset} "
                             f"exceed the {len(rec)}-frame dataset")
    report = evaluate_sequence(rec.slice(offset, offset + len(frames)), frames)
    report.write_csv(out / "report.csv")
    s = report.summary()
    print(f"ssim={s['ssim_mean']:.6f} hu_distance={s['hu_distance_mean']:.6f} iou={s['iou_mean']:.6f}")
    return 0


COMPARE_COLUMNS = ["variant", "ssim_mean", "ssim_std", "hu_distance_mean", "hu_distance_std",
                   "iou_mean", "iou_std", "rank_ssim", "rank_hu_distance", "rank_iou"]


def _ranks(values, higher_is_better):
    order = sorted(range(len(values)), key=lambda i: (-values[i] if higher_is_better else values[i], i))
    ranks = [0] * len(values)
    for r, i in enumerate(order, start=1):
        ranks[i] = r
    return ranks


def write_comparison(summaries: dict, path) -> None:
    names = list(summaries)
    ssim_r = _ranks([summaries[n]["ssim_mean"] for n in names], True)
    hu_r = _ranks([summaries[n]["hu_distance_mean"] for n in names], False)
    iou_r = _ranks([summaries[n]["iou_mean"] for n in names], True)
    with open(path, "w", newline="") as fh:
        fh.write(MASK_SOURCE_NOTE + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARE_COLUMNS)
        for k, n in enumerate(names):
            s = summaries[n]
            w.writerow([n] + [f"{s[c]:.6f}" for c in COMPARE_COLUMNS[1:7]] + [ssim_r[k], hu_r[k], iou_r[k]])


def cmd_compare(args, argv):
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    bad = [v for v in variants if v not in VARIANTS]
    if bad or not variants:
        raise RuntimeFailure(f"unknown variant(s) {bad}; choose from {sorted(VARIANTS)}")
    base = _train_config(args)
    out = Path(args.out)
    rec = load_dataset(args.data)
    write_manifest(out, argv, "compare", config=asdict(base), variants=variants,
                   seeds={"train": base.seed, "sample": args.sample_seed},
                   inputs={"data": args.data, "data_sha256": dir_digest(args.data)},
                   outputs={"comparison": str(out / "compare.csv")})
    (out / "reports").mkdir(parents=True, exist_ok=True)
    summaries = {}
    try:
        for v in variants:
            cfg = TrainConfig(**{**asdict(base), "variant": v})
            vdir = out / v
            log.info("training variant %s", v)
            ckpt, _ = train_loop(rec, cfg, vdir)
            net, schedule = _load_net(ckpt)
            frames = _generate(net, schedule, rec, args.frames, args.sample_seed, 0, vdir,
                               {"checkpoint_sha256": file_sha256(ckpt)})
            report = evaluate_sequence(rec.slice(1, 1 + args.frames), frames)
            report.write_csv(out / "reports" / f"{v}.csv")
            summaries[v] = report.summary()
    finally:
        if summaries:
            write_comparison(summaries, out / "compare.csv")
    return 0


def cmd_replay(args, argv):
    manifest = json.loads(Path(args.manifest).read_text())
    old = list(manifest["argv"])
    if args.out:
        i = old.index("--out")
        old[i + 1] = args.out
    return main(old)


# --- parser -----------------------------------------------------------------

def _add_train_flags(p):
    p.add_argument("--config", help="key = value file with TrainConfig fields")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--variant", choices=sorted(VARIANTS))
    for name, kind in TRAIN_FLAGS.items():
        if name == "variant":
            continue
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robodiff", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic robot video dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=21)
    p.add_argument("--size", type=_parse_size, default=(64, 36))
    p.add_argument("--trajectory", choices=list(TRAJECTORY_KINDS), default="arc")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--masks", choices=["robot", "robot+bg"], default="robot")
    p.add_argument("--background", type=int, choices=[0, 1], default=0)
    p.add_argument("--speed", type=float, default=1.0, help="metres per frame")
    p.add_argument("--turn-rate", dest="turn_rate", type=float, default=0.251, help="radians per frame")
    p.add_argument("--ppm", type=float, default=2.5, help="pixels per metre")
    p.add_argument("--sprite-scale", dest="sprite_scale", type=float, default=1.0,
                   help="robot size relative to the default 6x4 px body")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model variant")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate frames autoregressively from a dataset's first frame")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset supplying the seed frame and conditions")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--start", type=int, default=0, help="index of the seed frame")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score generated frames against a dataset")
    p.add_argument("--orig", required=True)
    p.add_argument("--gen", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--offset", type=int, help="original frame index of the first generated frame")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="train, sample and score several variants on one dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variants", default="mask_pose,mask,pose,none")
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--sample-seed", dest="sample_seed", type=int, default=0)
    _add_train_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("replay", help="rerun the command recorded in a run manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="write to this directory instead of the recorded one")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except (RuntimeFailure, ValueError, FileNotFoundError, FloatingPointError, OSError) as exc:
        print(f"robodiff {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
