"""ConvNext denoiser with SPADE mask regulation and fused step/gap/pose conditioning.

The network predicts the noise in ``noisy_frame`` given a clean condition frame
(both RGB, concatenated to six channels), the diffusion step, the frame gap and,
depending on the variant, the pose delta and the target frame's semantic mask.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import torch
import torch.nn.functional as F
from torch import nn

from .embeddings import ConditionEmbedding
from .validation import as_batch_index, as_pose_batch, check_frames, check_mask

# variant name -> (use_mask, use_pose)
VARIANTS = {
    "mask_pose": (True, True),
    "mask": (True, False),
    "pose": (False, True),
    "none": (False, False),
}


@dataclass
class BlockConfig:
    n_blocks: int = 8
    width: int = 64
    cond_dim: int = 64
    mask_classes: int = 1
    use_mask: bool = True
    use_pose: bool = True
    T: int = 200
    n_freqs: int = 8
    kernel_size: int = 7
    expansion: int = 4
    mask_hidden: int = 16

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        if self.width < 4:
            raise ValueError("width must be >= 4")
        if self.mask_classes < 1:
            raise ValueError("mask_classes must be >= 1")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd")

    @classmethod
    def for_variant(cls, variant: str, **kwargs) -> "BlockConfig":
        try:
            use_mask, use_pose = VARIANTS[variant]
        except KeyError:
            raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}") from None
        return cls(use_mask=use_mask, use_pose=use_pose, **kwargs)

    @property
    def variant(self) -> str:
        for name, flags in VARIANTS.items():
            if flags == (self.use_mask, self.use_pose):
                return name
        raise AssertionError("unreachable")

    def to_items(self) -> list[tuple[str, str]]:
        return [(k, str(v)) for k, v in asdict(self).items()]

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "BlockConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in items:
                continue
            raw = items[f.name]
            if f.type in ("bool", bool):
                if raw not in ("True", "False"):
                    raise ValueError(f"bad boolean {raw!r} for {f.name}")
                kwargs[f.name] = raw == "True"
            else:
                kwargs[f.name] = int(raw)
        return cls(**kwargs)


def channel_layer_norm(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor,
                       eps: float = 1e-6) -> torch.Tensor:
    """LayerNorm over the channel axis of a (B, C, H, W) tensor, per pixel."""
    y = F.layer_norm(x.permute(0, 2, 3, 1), (x.shape[1],), weight, bias, eps)
    return y.permute(0, 3, 1, 2)


class ChannelLayerNorm(nn.Module):
    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x):
        return channel_layer_norm(x, self.weight, self.bias, self.eps)


def spade_modulate(x, m, norm_weight, norm_bias, gamma_weight, gamma_bias,
                   sigma_weight, sigma_bias):
    """Regulate activations ``x`` with mask features ``m``.

    m is resized to x's grid with nearest-neighbour interpolation and
    layer-normalized over channels; gamma = conv(m), sigma = conv(gamma), and the
    result is ``x * (1 + gamma) + sigma``. Zero conv weights give back ``x``.
    """
    if gamma_weight.shape[0] != x.shape[1] or sigma_weight.shape[0] != x.shape[1]:
        raise ValueError(f"SPADE produces {gamma_weight.shape[0]} channels, activations have {x.shape[1]}")
    if m.shape[0] != x.shape[0]:
        raise ValueError("mask and activation batch sizes differ")
    if m.shape[-2:] != x.shape[-2:]:
        m = F.interpolate(m, size=x.shape[-2:], mode="nearest")
    m_bar = channel_layer_norm(m, norm_weight, norm_bias)
    gamma = F.conv2d(m_bar, gamma_weight, gamma_bias, padding=gamma_weight.shape[-1] // 2)
    sigma = F.conv2d(gamma, sigma_weight, sigma_bias, padding=sigma_weight.shape[-1] // 2)
    return x * (1 + gamma) + sigma


class SPADE(nn.Module):
    def __init__(self, mask_channels: int, width: int, kernel_size: int = 3, zero_init: bool = True):
        super().__init__()
        self.norm = ChannelLayerNorm(mask_channels)
        self.gamma = nn.Conv2d(mask_channels, width, kernel_size, padding=kernel_size // 2)
        self.sigma = nn.Conv2d(width, width, kernel_size, padding=kernel_size // 2)
        if zero_init:
            for conv in (self.gamma, self.sigma):
                nn.init.zeros_(conv.weight)
                nn.init.zeros_(conv.bias)

    def forward(self, x, m):
        return spade_modulate(x, m, self.norm.weight, self.norm.bias,
                              self.gamma.weight, self.gamma.bias,
                              self.sigma.weight, self.sigma.bias)


class ConvNextBlock(nn.Module):
    """depthwise conv -> [SPADE] -> LayerNorm -> cond scale/shift -> 1x1 -> GELU -> 1x1, plus residual."""

    def __init__(self, width: int, cond_dim: int, mask_channels: int | None = None,
                 kernel_size: int = 7, expansion: int = 4):
        super().__init__()
        self.dwconv = nn.Conv2d(width, width, kernel_size, padding=kernel_size // 2, groups=width)
        self.spade = SPADE(mask_channels, width) if mask_channels else None
        self.norm = ChannelLayerNorm(width)
        self.cond = nn.Linear(cond_dim, 2 * width)
        self.pw1 = nn.Conv2d(width, expansion * width, 1)
        self.pw2 = nn.Conv2d(expansion * width, width, 1)

    def forward(self, x, cond, m=None):
        if cond.shape[-1] != self.cond.in_features:
            raise ValueError(f"conditioning width {cond.shape[-1]} != {self.cond.in_features}")
        if self.spade is None and m is not None:
            raise ValueError("mask supplied to a block built without mask regulation")
        if self.spade is not None and m is None:
            raise ValueError("this block requires a mask")
        h = self.dwconv(x)
        if self.spade is not None:
            h = self.spade(h, m)
        h = self.norm(h)
        scale, shift = self.cond(F.gelu(cond)).chunk(2, dim=-1)
        h = h * (1 + scale[:, :, None, None]) + shift[:, :, None, None]
        h = self.pw2(F.gelu(self.pw1(h)))
        return x + h


class Denoiser(nn.Module):
    """The noise predictor. Build with :class:`BlockConfig`; call via :func:`network_forward`."""

    def __init__(self, cfg: BlockConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = ConditionEmbedding(cfg.T, cfg.cond_dim, cfg.n_freqs, cfg.use_pose)
        self.inp = nn.Conv2d(6, cfg.width, 3, padding=1)
        # masks get their own conv before entering SPADE, as frames do
        self.mask_stem = nn.Conv2d(cfg.mask_classes, cfg.mask_hidden, 3, padding=1) if cfg.use_mask else None
        mask_ch = cfg.mask_hidden if cfg.use_mask else None
        self.blocks = nn.ModuleList(
            ConvNextBlock(cfg.width, cfg.cond_dim, mask_ch, cfg.kernel_size, cfg.expansion)
            for _ in range(cfg.n_blocks)
        )
        self.out_norm = ChannelLayerNorm(cfg.width)
        self.out = nn.Conv2d(cfg.width, 3, 3, padding=1)

    def forward(self, cond_frame, noisy_frame, t, dk, dp=None, mask=None):
        x = self.inp(torch.cat([cond_frame, noisy_frame], dim=1))
        c = self.embed(t, dk, dp)
        m = self.mask_stem(mask) if self.mask_stem is not None else None
        for block in self.blocks:
            x = block(x, c, m)
        return self.out(F.gelu(self.out_norm(x)))


def build_network(cfg: BlockConfig, seed: int | None = None, dtype=torch.float32) -> Denoiser:
    if seed is not None:
        torch.manual_seed(seed)
    return Denoiser(cfg).to(dtype)


def network_forward(net: Denoiser, cond_frame, noisy_frame, t, dk, dp=None, mask=None) -> torch.Tensor:
    """Validate the inputs against the network's variant and predict the noise (B, 3, H, W)."""
    cfg = net.cfg
    dtype = net.inp.weight.dtype
    cond_frame = check_frames(cond_frame, "cond_frame", dtype)
    noisy_frame = check_frames(noisy_frame, "noisy_frame", dtype)
    if cond_frame.shape != noisy_frame.shape:
        raise ValueError(f"condition frame {tuple(cond_frame.shape)} and noisy frame "
                         f"{tuple(noisy_frame.shape)} differ in shape")
    B = cond_frame.shape[0]
    t = as_batch_index(t, B, "t")
    if int(t.min()) < 1 or int(t.max()) > cfg.T:
        raise ValueError(f"diffusion step outside [1, {cfg.T}]")
    dk = as_batch_index(dk, B, "dk")
    if cfg.use_pose:
        if dp is None:
            raise ValueError("this network is pose-conditioned; a pose delta is required")
        dp = as_pose_batch(dp, B, dtype)
    else:
        dp = None
    if cfg.use_mask:
        if mask is None:
            raise ValueError("this network is mask-conditioned; a mask is required")
        mask = check_mask(mask, B, cfg.mask_classes, dtype)
    else:
        mask = None
    return net(cond_frame, noisy_frame, t, dk, dp, mask)


def network_backward(eps_pred: torch.Tensor, loss_grad: torch.Tensor, net: Denoiser) -> dict[str, torch.Tensor]:
    """Back-propagate ``loss_grad`` (dLoss/d eps_pred) and return dLoss/d parameter by name.

    Gradient slots of ``net`` are overwritten, not accumulated.
    """
    if eps_pred.grad_fn is None:
        raise RuntimeError("backward without a matching recorded forward pass")
    if loss_grad.shape != eps_pred.shape:
        raise ValueError("upstream gradient must match the prediction's shape")
    net.zero_grad(set_to_none=True)
    eps_pred.backward(loss_grad.to(eps_pred.dtype))
    grads = {}
    for name, p in net.named_parameters():
        grads[name] = p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
    return grads
