"""Input checking and coercion shared by the network, trainer and sampler."""
from __future__ import annotations

import numpy as np
import torch

from .embeddings import PoseDelta

MIN_SIDE = 8


def check_frames(x, name: str = "frame", dtype=torch.float32) -> torch.Tensor:
    """Coerce to a finite (B, 3, H, W) tensor; a single (3, H, W) frame gets a batch axis."""
    x = torch.as_tensor(x, dtype=dtype)
    if x.dim() == 3:
        x = x.unsqueeze(0)
    if x.dim() != 4 or x.shape[1] != 3:
        raise ValueError(f"{name} must be (B, 3, H, W) or (3, H, W), got {tuple(x.shape)}")
    if x.shape[2] < MIN_SIDE or x.shape[3] < MIN_SIDE:
        raise ValueError(f"{name} must be at least {MIN_SIDE}x{MIN_SIDE}, got {tuple(x.shape[2:])}")
    if not torch.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite values")
    return x


def check_mask(m, batch: int, classes: int, dtype=torch.float32) -> torch.Tensor:
    m = torch.as_tensor(m, dtype=dtype)
    if m.dim() == 3:
        m = m.unsqueeze(0)
    if m.dim() != 4:
        raise ValueError(f"mask must be (B, S, h, w), got {tuple(m.shape)}")
    if m.shape[0] == 1 and batch > 1:
        m = m.expand(batch, -1, -1, -1)
    if m.shape[0] != batch or m.shape[1] != classes:
        raise ValueError(f"mask shape {tuple(m.shape)} incompatible with batch {batch} and {classes} classes")
    if not ((m == 0) | (m == 1)).all():
        raise ValueError("mask values must be 0 or 1")
    return m


def as_batch_index(v, batch: int, name: str) -> torch.Tensor:
    v = torch.as_tensor(v)
    if v.is_floating_point():
        if not torch.equal(v, v.round()):
            raise ValueError(f"{name} must be integer-valued")
    v = v.to(torch.int64).reshape(-1)
    if v.numel() == 1:
        v = v.expand(batch)
    if v.numel() != batch:
        raise ValueError(f"{name} has {v.numel()} entries for a batch of {batch}")
    return v


def as_pose_batch(dp, batch: int, dtype=torch.float32) -> torch.Tensor:
    if isinstance(dp, PoseDelta):
        arr = dp.as_array()[None]
    elif isinstance(dp, (list, tuple)) and dp and isinstance(dp[0], PoseDelta):
        arr = np.stack([d.as_array() for d in dp])
    else:
        arr = dp
    out = torch.as_tensor(arr, dtype=dtype)
    if out.dim() == 1:
        out = out.unsqueeze(0)
    if out.dim() != 2 or out.shape[1] != 6:
        raise ValueError(f"pose deltas must be (B, 6), got {tuple(out.shape)}")
    if out.shape[0] == 1 and batch > 1:
        out = out.expand(batch, 6)
    if out.shape[0] != batch:
        raise ValueError(f"{out.shape[0]} pose deltas for a batch of {batch}")
    if not torch.isfinite(out).all():
        raise ValueError("non-finite pose delta")
    return out
