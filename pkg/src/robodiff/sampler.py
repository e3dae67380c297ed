"""Reverse-diffusion frame generation and autoregressive video rollout."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .backbone import Denoiser, network_forward
from .dataset import save_frame_png
from .embeddings import PoseDelta
from .schedule import VarianceSchedule, predict_x0, reverse_step
from .validation import check_frames


@dataclass
class GenerationPlan:
    """Seed frame plus one (pose delta, mask or None) condition per frame to generate."""

    seed_frame: np.ndarray
    conditions: list = field(default_factory=list)
    seed: int = 0

    @property
    def n_frames(self) -> int:
        return len(self.conditions)


def _check_variant(net, dp, mask):
    cfg = getattr(net, "cfg", None)
    if cfg is None:
        return
    if cfg.use_pose and dp is None:
        raise ValueError(f"checkpoint variant {cfg.variant!r} needs pose deltas; "
                         "supply poses.csv or use a 'mask'/'none' checkpoint")
    if cfg.use_mask and mask is None:
        raise ValueError(f"checkpoint variant {cfg.variant!r} needs masks; "
                         "supply masks or use a 'pose'/'none' checkpoint")


@torch.no_grad()
def denoise_frame(net, cond_frame, dp: PoseDelta | None, mask, dk: int,
                  schedule: VarianceSchedule, rng: torch.Generator, callback=None) -> torch.Tensor:
    """Sample one frame by running the full T..1 reverse chain.

    ``net`` is a :class:`Denoiser` or any callable with the signature of
    :func:`network_forward` minus the network argument. ``callback(t, x_t, x0_hat)``
    is invoked before every reverse step.
    """
    _check_variant(net, dp, mask)
    cond = check_frames(cond_frame, "cond_frame")
    x = torch.randn(cond.shape, generator=rng, dtype=cond.dtype)
    for t in range(schedule.T, 0, -1):
        if isinstance(net, Denoiser):
            eps = network_forward(net, cond, x, t, dk, dp, mask)
        else:
            eps = net(cond, x, t, dk, dp, mask)
        if callback is not None:
            callback(t, x, predict_x0(x, eps, t, schedule))
        x = reverse_step(x, eps, t, schedule, rng)
    return x.clamp(-1.0, 1.0)


def generate_frames(net, seed_frame, conditions, schedule: VarianceSchedule,
                    rng: torch.Generator) -> list[np.ndarray]:
    """Chain ``denoise_frame`` with gap 1: each output conditions the next step."""
    frames = []
    cond = check_frames(seed_frame, "seed_frame")
    for i, (dp, mask) in enumerate(conditions):
        x = denoise_frame(net, cond, dp, mask, 1, schedule, rng)
        if not torch.isfinite(x).all():
            raise FloatingPointError(f"non-finite values in generated frame {i}")
        frames.append(x[0].numpy().copy())
        cond = x
    return frames


def generate_video(plan: GenerationPlan, net, schedule: VarianceSchedule) -> list[np.ndarray]:
    return generate_frames(net, plan.seed_frame, plan.conditions, schedule,
                           torch.Generator().manual_seed(plan.seed))


def plan_from_record(rec, n_frames: int, seed: int = 0, start: int = 0,
                     use_pose: bool = True, use_mask: bool = True) -> GenerationPlan:
    """Seed with frame ``start`` and take ground-truth conditions for the next ``n_frames`` frames."""
    if n_frames < 0 or start + n_frames > len(rec) - 1:
        raise ValueError(f"record has {len(rec)} frames; cannot generate {n_frames} after frame {start}")
    conditions = []
    for i in range(start + 1, start + n_frames + 1):
        dp = rec.pose_deltas[i - 1] if use_pose else None
        mask = rec.masks[i] if use_mask else None
        conditions.append((dp, mask))
    return GenerationPlan(rec.frames[start], conditions, seed)


def write_generated(frames, out_dir, manifest: dict) -> Path:
    """frames_gen/%05d.png plus generation_manifest.json under ``out_dir``."""
    out = Path(out_dir)
    (out / "frames_gen").mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        save_frame_png(f, out / "frames_gen" / f"{i:05d}.png")
    path = out / "generation_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
