import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from robodiff.embeddings import (
    ConditionEmbedding,
    PoseDelta,
    fuse_conditions,
    pose_embed,
    sinusoidal_embed,
    sum_deltas,
)


@pytest.mark.parametrize("L", [1, 3, 8])
def test_sinusoid_at_zero(L):
    out = sinusoidal_embed(0.0, L)
    assert out.tolist() == [0.0, 1.0] * L


def test_sinusoid_half():
    out = sinusoidal_embed(0.5, 1)
    assert out.tolist() == pytest.approx([1.0, 0.0], abs=1e-15)


def test_sinusoid_quarter_two_frequencies():
    # direct evaluation: (sin pi/4, cos pi/4, sin pi/2, cos pi/2)
    out = sinusoidal_embed(0.25, 2)
    assert out.tolist() == pytest.approx([0.70710678, 0.70710678, 1.0, 0.0], abs=1e-8)


def test_sinusoid_batch_and_errors():
    p = torch.tensor([0.0, 0.25, 0.5], dtype=torch.float64)
    out = sinusoidal_embed(p, 4)
    assert out.shape == (3, 8)
    for i, v in enumerate(p.tolist()):
        assert torch.allclose(out[i], sinusoidal_embed(v, 4))
    with pytest.raises(ValueError):
        sinusoidal_embed(0.3, 0)
    with pytest.raises(ValueError):
        sinusoidal_embed(float("nan"), 2)


@settings(max_examples=100, deadline=None)
@given(p=st.floats(-1e3, 1e3), L=st.integers(1, 12))
def test_sinusoid_bounded(p, L):
    out = sinusoidal_embed(p, L)
    assert out.shape == (2 * L,)
    assert torch.all(out.abs() <= 1.0)


def test_pose_embed_identity_and_constant():
    dp = PoseDelta(0.3, -0.2, 0.0, 0.0, 0.0, 0.1)
    eye = torch.eye(6, dtype=torch.float64)
    assert pose_embed(dp, eye, torch.zeros(6, dtype=torch.float64)).tolist() == pytest.approx(list(dp.as_array()))
    b0 = torch.arange(4, dtype=torch.float64)
    assert torch.equal(pose_embed(dp, torch.zeros(4, 6, dtype=torch.float64), b0), b0)


def test_pose_embed_pose_table_row():
    dp = PoseDelta(-1, 0, 0, 0, 0, 0.251)
    out = pose_embed(dp, torch.eye(6, dtype=torch.float64), torch.zeros(6, dtype=torch.float64))
    assert out.tolist() == [-1.0, 0.0, 0.0, 0.0, 0.0, 0.251]


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-10, 10), seed=st.integers(0, 2**16))
def test_pose_embed_superposition(a, seed):
    g = np.random.default_rng(seed)
    A = torch.from_numpy(g.normal(size=(7, 6)))
    zero = torch.zeros(7, dtype=torch.float64)
    p1, p2 = g.normal(size=6), g.normal(size=6)
    lhs = pose_embed(a * p1 + p2, A, zero)
    rhs = a * pose_embed(p1, A, zero) + pose_embed(p2, A, zero)
    assert torch.max(torch.abs(lhs - rhs)) < 1e-12


def test_pose_delta_rejects_non_finite():
    with pytest.raises(ValueError):
        PoseDelta(float("inf"))
    with pytest.raises(ValueError):
        PoseDelta.from_array([1, 2, 3])


def test_sum_deltas():
    d = PoseDelta(1.0, 0.5, 0, 0, 0, 0.25)
    assert sum_deltas([d, d, d]) == PoseDelta(3.0, 1.5, 0, 0, 0, 0.75)


def test_fuse_zero_inputs_give_bias():
    beta0 = torch.linspace(-1, 1, 5, dtype=torch.float64)
    z = torch.zeros(4, dtype=torch.float64)
    out = fuse_conditions(z, z, z, torch.zeros(5, 12, dtype=torch.float64), beta0)
    assert torch.equal(out, beta0)


def test_fuse_is_deterministic():
    g = torch.Generator().manual_seed(0)
    args = [torch.randn(4, generator=g) for _ in range(3)]
    w, b = torch.randn(6, 12, generator=g), torch.randn(6, generator=g)
    assert torch.equal(fuse_conditions(*args, w, b), fuse_conditions(*args, w, b))


def test_fuse_output_width_over_random_configs():
    rng = np.random.default_rng(3)
    for _ in range(10):
        wt, wk, wp, D = (int(v) for v in rng.integers(1, 20, size=4))
        out = fuse_conditions(torch.randn(wt), torch.randn(wk), torch.randn(wp),
                              torch.randn(D, wt + wk + wp), torch.randn(D))
        assert out.shape == (D,)


def test_fuse_width_mismatch():
    with pytest.raises(ValueError):
        fuse_conditions(torch.zeros(4), torch.zeros(4), torch.zeros(4), torch.zeros(5, 11), torch.zeros(5))


def test_fuse_depends_on_every_input():
    g = torch.Generator().manual_seed(1)
    parts = [torch.randn(4, generator=g, dtype=torch.float64) for _ in range(3)]
    w = torch.randn(6, 12, generator=g, dtype=torch.float64)
    b = torch.randn(6, generator=g, dtype=torch.float64)
    base = fuse_conditions(*parts, w, b)
    for i in range(3):
        bumped = [p.clone() for p in parts]
        bumped[i] = bumped[i] + 0.1
        assert not torch.allclose(fuse_conditions(*bumped, w, b), base)


def test_condition_embedding_module():
    emb = ConditionEmbedding(T=100, cond_dim=16, n_freqs=4, use_pose=True)
    t = torch.tensor([1, 50])
    dk = torch.tensor([1, 3])
    out = emb(t, dk, torch.zeros(2, 6))
    assert out.shape == (2, 16)
    # distinct gaps give distinct encodings
    assert not torch.allclose(out[0], emb(torch.tensor([1]), torch.tensor([3]), torch.zeros(1, 6))[0])
    no_pose = ConditionEmbedding(T=100, cond_dim=16, n_freqs=4, use_pose=False)
    assert not hasattr(no_pose, "pose")
    assert no_pose(t, dk).shape == (2, 16)
    assert math.isfinite(float(out.detach().sum()))
