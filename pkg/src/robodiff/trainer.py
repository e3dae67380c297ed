"""Epsilon-regression training on (condition frame, target frame, gap) pairs of one video."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F
from torch.optim.swa_utils import AveragedModel, get_ema_multi_avg_fn

from .backbone import VARIANTS, BlockConfig, Denoiser, build_network, network_forward
from .checkpoint import save_checkpoint
from .embeddings import PoseDelta, sum_deltas
from .schedule import VarianceSchedule, forward_sample, make_schedule

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 2000
    batch: int = 8
    lr: float = 2e-4
    max_dk: int = 3
    variant: str = "mask_pose"
    T: int = 200
    # 1e-4 -> 0.02 over 1000 steps, rescaled by 1000 / T so x_T is ~pure noise
    beta_start: float = 5e-4
    beta_end: float = 0.1
    seed: int = 0
    n_blocks: int = 8
    width: int = 64
    cond_dim: int = 64
    kernel_size: int = 7
    expansion: int = 4
    ckpt_every: int = 500
    log_every: int = 1
    # opt-in extras, off by default: an exponential moving average of the weights
    # used for sampling, and Gaussian noise with std ~ U(0, cond_noise) on the
    # condition frames so rollouts learn to pull drifting frames back
    ema_decay: float = 0.0
    cond_noise: float = 0.0

    def __post_init__(self):
        if self.max_dk < 1:
            raise ValueError("max_dk must be >= 1")
        if self.lr < 0 or not math.isfinite(self.lr):
            raise ValueError("lr must be a finite non-negative number")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {sorted(VARIANTS)}")
        if self.batch < 1 or self.steps < 0:
            raise ValueError("batch must be >= 1 and steps >= 0")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must be in [0, 1)")
        if self.cond_noise < 0:
            raise ValueError("cond_noise must be >= 0")

    def block_config(self, mask_classes: int = 1) -> BlockConfig:
        return BlockConfig.for_variant(
            self.variant, n_blocks=self.n_blocks, width=self.width, cond_dim=self.cond_dim,
            mask_classes=mask_classes, T=self.T, kernel_size=self.kernel_size,
            expansion=self.expansion)

    def schedule(self) -> VarianceSchedule:
        return make_schedule(self.T, self.beta_start, self.beta_end)

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ValueError(f"unknown training option {key!r}")
            kind = known[key].type
            if kind == "int":
                kwargs[key] = int(raw)
            elif kind == "float":
                kwargs[key] = float(raw)
            else:
                kwargs[key] = str(raw)
        return cls(**kwargs)

    def to_lines(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


class Pair(NamedTuple):
    cond: np.ndarray
    target: np.ndarray
    dk: int
    dp: PoseDelta
    mask: np.ndarray
    n: int


def admissible_pairs(n_frames: int, max_dk: int) -> list[tuple[int, int]]:
    return [(n, dk) for dk in range(1, max_dk + 1) for n in range(n_frames - dk)]


def sample_pair(rec, max_dk: int, rng: np.random.Generator) -> Pair:
    """Uniform draw over all (n, dk) with 1 <= dk <= max_dk and n + dk inside the video."""
    if len(rec) < max_dk + 1:
        raise ValueError(f"dataset has {len(rec)} frames; max_dk={max_dk} needs at least {max_dk + 1}")
    pairs = admissible_pairs(len(rec), max_dk)
    n, dk = pairs[int(rng.integers(len(pairs)))]
    dp = sum_deltas(rec.pose_deltas[n:n + dk])
    return Pair(rec.frames[n], rec.frames[n + dk], dk, dp, rec.masks[n + dk], n)


@dataclass
class TrainState:
    net: Denoiser
    optimizer: torch.optim.Optimizer
    schedule: VarianceSchedule
    generator: torch.Generator
    rng: np.random.Generator
    ema: AveragedModel | None = None
    step: int = 0
    running_loss: float = float("nan")

    @property
    def sampling_net(self) -> Denoiser:
        """The weights to sample with: the running average when one is kept."""
        return self.ema.module if self.ema is not None else self.net


def init_state(cfg: TrainConfig, mask_classes: int = 1) -> TrainState:
    net = build_network(cfg.block_config(mask_classes), seed=cfg.seed)
    net.train()
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr, betas=(0.9, 0.999))
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    ema = None
    if cfg.ema_decay > 0:
        ema = AveragedModel(net, multi_avg_fn=get_ema_multi_avg_fn(cfg.ema_decay), use_buffers=True)
    return TrainState(net, opt, cfg.schedule(), gen, np.random.default_rng(cfg.seed + 2), ema)


def collate(pairs):
    cond = torch.from_numpy(np.stack([p.cond for p in pairs]))
    target = torch.from_numpy(np.stack([p.target for p in pairs]))
    dk = torch.tensor([p.dk for p in pairs])
    dp = torch.from_numpy(np.stack([p.dp.as_array() for p in pairs])).float()
    mask = torch.from_numpy(np.stack([p.mask for p in pairs]))
    return cond, target, dk, dp, mask


def train_step(state: TrainState, pairs, cfg: TrainConfig, t=None, eps=None) -> tuple[TrainState, float]:
    """One Adam step on the noise-regression loss of ``pairs``.

    ``t`` and ``eps`` are drawn from the state's generator unless given.
    """
    if not pairs:
        raise ValueError("empty batch")
    cond, x0, dk, dp, mask = collate(pairs)
    B = x0.shape[0]
    if t is None:
        t = torch.randint(1, state.schedule.T + 1, (B,), generator=state.generator)
    t = torch.as_tensor(t).reshape(-1).expand(B)
    if eps is None:
        eps = torch.randn(x0.shape, generator=state.generator)
    eps = torch.as_tensor(eps, dtype=torch.float32)
    xt = forward_sample(x0, t.numpy(), eps, state.schedule).float()
    if cfg.cond_noise > 0:
        sd = torch.rand(B, 1, 1, 1, generator=state.generator) * cfg.cond_noise
        cond = cond + sd * torch.randn(cond.shape, generator=state.generator)
    pred = network_forward(state.net, cond, xt, t, dk, dp, mask)
    loss = F.mse_loss(pred, eps)
    value = float(loss.detach())
    if not math.isfinite(value):
        raise FloatingPointError(f"non-finite loss {value} at step {state.step + 1} "
                                 f"(t={t.tolist()}, lr={cfg.lr}); try a smaller learning rate")
    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    state.optimizer.step()
    if state.ema is not None:
        state.ema.update_parameters(state.net)
    state.step += 1
    state.running_loss = value if math.isnan(state.running_loss) else 0.98 * state.running_loss + 0.02 * value
    return state, value


def checkpoint_extra(cfg: TrainConfig, state: TrainState) -> dict[str, str]:
    return {"beta_start": repr(cfg.beta_start), "beta_end": repr(cfg.beta_end),
            "seed": str(cfg.seed), "step": str(state.step)}


def train_loop(rec, cfg: TrainConfig, out_dir, state: TrainState | None = None):
    """Run ``cfg.steps`` steps; write ``checkpoint.bin`` every ``ckpt_every`` steps and ``loss.csv``.

    Returns (checkpoint path, list of (step, loss)).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = state or init_state(cfg, rec.mask_classes)
    ckpt = out / "checkpoint.bin"
    curve = []
    with open(out / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for _ in range(cfg.steps):
            pairs = [sample_pair(rec, cfg.max_dk, state.rng) for _ in range(cfg.batch)]
            state, loss = train_step(state, pairs, cfg)
            curve.append((state.step, loss))
            if state.step % cfg.log_every == 0:
                w.writerow([state.step, repr(loss)])
            if cfg.ckpt_every and state.step % cfg.ckpt_every == 0:
                save_checkpoint(ckpt, state.sampling_net, checkpoint_extra(cfg, state))
            if state.step % 250 == 0:
                log.info("step %d loss %.5f (running %.5f)", state.step, loss, state.running_loss)
    save_checkpoint(ckpt, state.sampling_net, checkpoint_extra(cfg, state))
    state.net.eval()
    state.sampling_net.eval()
    return ckpt, curve
