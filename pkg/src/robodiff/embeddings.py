"""Step / frame-gap encodings, the linear pose-delta embedding and their fusion."""
from __future__ import annotations

import math
from dataclasses import astuple, dataclass

import numpy as np
import torch
from torch import nn

POSE_FIELDS = ("dx", "dy", "dz", "dphi", "dtheta", "dpsi")

# Frame gaps are integers; sin(2^j pi k) vanishes for every integer k, so the
# gap is divided by this constant before encoding (see README, "Embeddings").
DK_SCALE = 16.0


@dataclass(frozen=True)
class PoseDelta:
    """Change of robot pose between two frames (metres, radians)."""

    dx: float = 0.0
    dy: float = 0.0
    dz: float = 0.0
    dphi: float = 0.0
    dtheta: float = 0.0
    dpsi: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in astuple(self)):
            raise ValueError(f"non-finite pose delta {astuple(self)}")

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "PoseDelta":
        values = [float(v) for v in np.asarray(values, dtype=np.float64).reshape(-1)]
        if len(values) != 6:
            raise ValueError(f"a pose delta has 6 components, got {len(values)}")
        return cls(*values)

    def __add__(self, other: "PoseDelta") -> "PoseDelta":
        return PoseDelta.from_array(self.as_array() + other.as_array())


def sum_deltas(deltas) -> PoseDelta:
    total = np.zeros(6)
    for d in deltas:
        total = total + d.as_array()
    return PoseDelta.from_array(total)


def sinusoidal_embed(p, L: int) -> torch.Tensor:
    """Interleaved (sin(2^j pi p), cos(2^j pi p)) pairs for j = 0..L-1.

    ``p`` may be a scalar (returns shape ``(2L,)``) or a 1-D batch (``(B, 2L)``).
    """
    if int(L) != L or L < 1:
        raise ValueError(f"L must be a positive integer, got {L}")
    if not (isinstance(p, torch.Tensor) and p.is_floating_point()):
        p = torch.as_tensor(p, dtype=torch.float64)
    if not torch.isfinite(p).all():
        raise ValueError("sinusoidal_embed needs finite input")
    freqs = (2.0 ** torch.arange(int(L), dtype=p.dtype)) * math.pi
    angles = p.unsqueeze(-1) * freqs
    out = torch.stack([torch.sin(angles), torch.cos(angles)], dim=-1)
    return out.flatten(-2)


def pose_embed(dp, A: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """A @ dp + b. ``dp`` is a PoseDelta, a 6-vector, or a ``(B, 6)`` batch."""
    if isinstance(dp, PoseDelta):
        dp = dp.as_array()
    dp = torch.as_tensor(dp, dtype=A.dtype)
    if dp.shape[-1] != 6 or A.shape[-1] != 6:
        raise ValueError("pose embedding expects 6-component deltas and a (D, 6) matrix")
    if not torch.isfinite(dp).all():
        raise ValueError("non-finite pose delta")
    return dp @ A.T + b


def fuse_conditions(t_emb, k_emb, pose_emb, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """Concatenate the available encodings and map them affinely to the conditioning width.

    ``pose_emb`` may be None for networks without pose conditioning.
    """
    parts = [t_emb, k_emb] + ([] if pose_emb is None else [pose_emb])
    z = torch.cat(parts, dim=-1)
    if z.shape[-1] != weight.shape[1]:
        raise ValueError(f"fused input width {z.shape[-1]} does not match the fusion map ({weight.shape[1]})")
    return z @ weight.T + bias


class ConditionEmbedding(nn.Module):
    """Learned part of the conditioning path: pose map (A, b) and the fusion affine."""

    def __init__(self, T: int, cond_dim: int, n_freqs: int = 8, use_pose: bool = True):
        super().__init__()
        self.T = T
        self.cond_dim = cond_dim
        self.n_freqs = n_freqs
        self.use_pose = use_pose
        fused = 4 * n_freqs
        if use_pose:
            self.pose = nn.Linear(6, cond_dim)
            fused += cond_dim
        self.fuse = nn.Linear(fused, cond_dim)

    def forward(self, t: torch.Tensor, dk: torch.Tensor, dp: torch.Tensor | None = None) -> torch.Tensor:
        dtype = self.fuse.weight.dtype
        t_emb = sinusoidal_embed(t.to(dtype) / self.T, self.n_freqs).to(dtype)
        k_emb = sinusoidal_embed(dk.to(dtype) / DK_SCALE, self.n_freqs).to(dtype)
        pose_emb = None
        if self.use_pose:
            pose_emb = pose_embed(dp, self.pose.weight, self.pose.bias)
        return fuse_conditions(t_emb, k_emb, pose_emb, self.fuse.weight, self.fuse.bias)
