"""Variance schedule, forward noising and the single reverse step.

Everything here is network-agnostic. Step indices are 1-based (``1 <= t <= T``)
and ``alpha_bar(0)`` is defined as 1 so that the first step is well-posed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class VarianceSchedule:
    """Tables of beta_t, alpha_t = 1 - beta_t and their running product.

    Arrays are float64 and indexed from 0, so step ``t`` lives at ``[t - 1]``.
    """

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def beta_at(self, t: int) -> float:
        return float(self.beta[t - 1])

    def alpha_at(self, t: int) -> float:
        return float(self.alpha[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        if t == 0:
            return 1.0
        return float(self.alpha_bar[t - 1])

    def check_step(self, t: int, allow_zero: bool = False) -> int:
        t = int(t)
        lo = 0 if allow_zero else 1
        if not lo <= t <= self.T:
            raise ValueError(f"step t={t} outside [{lo}, {self.T}]")
        return t


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02,
                  kind: str = "linear") -> VarianceSchedule:
    if kind != "linear":
        raise ValueError(f"unsupported schedule kind {kind!r}; only 'linear' is available")
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")
    if not (0.0 < beta_start < 1.0 and 0.0 < beta_end < 1.0):
        raise ValueError("beta endpoints must lie strictly inside (0, 1)")
    if beta_start > beta_end:
        raise ValueError("beta_start must not exceed beta_end")
    T = int(T)
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return VarianceSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def _per_item(values, like: torch.Tensor) -> torch.Tensor:
    # broadcast a per-batch-item coefficient over (C, H, W)
    v = torch.as_tensor(values, dtype=like.dtype)
    return v.reshape(-1, *([1] * (like.dim() - 1)))


def forward_sample(x0: torch.Tensor, t, eps: torch.Tensor, s: VarianceSchedule) -> torch.Tensor:
    """Noise ``x0`` to step ``t`` in one shot: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.

    ``t`` may be an int or a 1-D sequence with one step per batch item.
    """
    _check_same_shape(x0, eps, "forward_sample")
    if np.ndim(t) == 0:
        t = s.check_step(t)
        ab = s.alpha_bar_at(t)
        return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps
    steps = [s.check_step(int(k)) for k in np.asarray(t).reshape(-1)]
    if len(steps) != x0.shape[0]:
        raise ValueError("one step index per batch item is required")
    ab = np.array([s.alpha_bar_at(k) for k in steps])
    return _per_item(np.sqrt(ab), x0) * x0 + _per_item(np.sqrt(1.0 - ab), x0) * eps


def iterate_forward(x0: torch.Tensor, t: int, s: VarianceSchedule,
                    rng: torch.Generator | None = None) -> torch.Tensor:
    """Run the Markov chain x_k = sqrt(1 - beta_k) x_{k-1} + sqrt(beta_k) eps_k for k = 1..t."""
    t = s.check_step(t, allow_zero=True)
    x = x0
    for k in range(1, t + 1):
        b = s.beta_at(k)
        noise = torch.randn(x.shape, generator=rng, dtype=x.dtype)
        x = math.sqrt(1.0 - b) * x + math.sqrt(b) * noise
    return x


def posterior_coefficients(t: int, s: VarianceSchedule) -> tuple[float, float, float]:
    """(coef on x0, coef on xt, variance) of q(x_{t-1} | x_t, x_0)."""
    t = s.check_step(t)
    ab_t = s.alpha_bar_at(t)
    ab_prev = s.alpha_bar_at(t - 1)
    beta_t = s.beta_at(t)
    denom = 1.0 - ab_t
    c0 = math.sqrt(ab_prev) * beta_t / denom
    ct = math.sqrt(s.alpha_at(t)) * (1.0 - ab_prev) / denom
    var = beta_t * (1.0 - ab_prev) / denom
    return c0, ct, var


def posterior_params(x0: torch.Tensor, xt: torch.Tensor, t: int,
                     s: VarianceSchedule) -> tuple[torch.Tensor, float]:
    _check_same_shape(x0, xt, "posterior_params")
    c0, ct, var = posterior_coefficients(t, s)
    return c0 * x0 + ct * xt, var


def predict_x0(xt: torch.Tensor, eps_pred: torch.Tensor, t: int, s: VarianceSchedule) -> torch.Tensor:
    """Invert the closed-form noising given a noise estimate (no clamping)."""
    _check_same_shape(xt, eps_pred, "predict_x0")
    t = s.check_step(t)
    ab = s.alpha_bar_at(t)
    return (xt - math.sqrt(1.0 - ab) * eps_pred) / math.sqrt(ab)


def reverse_step(xt: torch.Tensor, eps_pred: torch.Tensor, t: int, s: VarianceSchedule,
                 rng: torch.Generator | None = None) -> torch.Tensor:
    """One ancestral step x_t -> x_{t-1} under the epsilon parameterization.

    The reconstructed x0 is clamped to [-1, 1] before it enters the posterior;
    at ``t == 1`` the posterior mean is returned without noise.
    """
    t = s.check_step(t)
    x0_hat = predict_x0(xt, eps_pred, t, s).clamp(-1.0, 1.0)
    mean, var = posterior_params(x0_hat, xt, t, s)
    if t == 1:
        return mean
    noise = torch.randn(xt.shape, generator=rng, dtype=xt.dtype)
    return mean + math.sqrt(var) * noise
