import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from robodiff.schedule import (
    VarianceSchedule,
    forward_sample,
    iterate_forward,
    make_schedule,
    posterior_coefficients,
    posterior_params,
    predict_x0,
    reverse_step,
)


def running_product(T, b0, b1):
    # independent of numpy: explicit interpolation and product
    out, p = [], 1.0
    for k in range(T):
        beta = b0 + (b1 - b0) * k / (T - 1) if T > 1 else b0
        p *= 1.0 - beta
        out.append(p)
    return out


def test_single_step_schedule():
    s = make_schedule(1, 0.02, 0.02)
    assert s.alpha_bar.tolist() == pytest.approx([0.98], abs=1e-15)


def test_constant_beta_is_geometric():
    b = 0.05
    s = make_schedule(30, b, b)
    for t in range(1, 31):
        assert s.alpha_bar_at(t) == pytest.approx((1 - b) ** t, rel=1e-13)


def test_linear_schedule_matches_running_product():
    s = make_schedule(1000, 1e-4, 0.02)
    oracle = running_product(1000, 1e-4, 0.02)
    assert np.max(np.abs(s.alpha_bar - np.array(oracle))) < 1e-12
    # frozen from the oracle above
    assert s.alpha_bar_at(1000) == pytest.approx(4.0358297653756754e-05, rel=1e-9)


@pytest.mark.parametrize("args", [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 1e-4, 1.0),
                                  (10, 0.03, 0.02), (10, -0.1, 0.5)])
def test_make_schedule_rejects_bad_input(args):
    with pytest.raises(ValueError):
        make_schedule(*args)


def test_make_schedule_rejects_unknown_kind():
    with pytest.raises(ValueError):
        make_schedule(10, kind="cosine")


@settings(max_examples=50, deadline=None)
@given(T=st.integers(1, 400), lo=st.floats(1e-5, 0.5), span=st.floats(0, 0.49))
def test_alpha_bar_strictly_decreasing_in_unit_interval(T, lo, span):
    s = make_schedule(T, lo, lo + span)
    assert np.all((s.beta > 0) & (s.beta < 1))
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert np.all((s.alpha_bar > 0) & (s.alpha_bar <= 1))
    assert np.allclose(s.alpha_bar[1:], s.alpha_bar[:-1] * s.alpha[1:], rtol=1e-14)
    assert s.alpha_bar[0] == s.alpha[0]


def test_forward_sample_zero_noise_and_zero_image():
    s = make_schedule(50, 1e-4, 0.02)
    x0 = torch.randn(2, 3, 8, 8, dtype=torch.float64)
    eps = torch.randn_like(x0)
    t = 17
    ab = s.alpha_bar_at(t)
    assert torch.allclose(forward_sample(x0, t, torch.zeros_like(x0), s), math.sqrt(ab) * x0)
    assert torch.allclose(forward_sample(torch.zeros_like(x0), t, eps, s), math.sqrt(1 - ab) * eps)


def test_forward_sample_scalar_plugin():
    # schedule whose only step has abar = 0.25
    s = VarianceSchedule(1, np.array([0.75]), np.array([0.25]), np.array([0.25]))
    x = torch.ones(1, 3, 8, 8, dtype=torch.float64)
    out = forward_sample(x, 1, x.clone(), s)
    assert torch.allclose(out, torch.full_like(x, 1.3660254037844386), atol=1e-12)


def test_forward_sample_per_item_steps():
    s = make_schedule(100, 1e-4, 0.02)
    x0 = torch.randn(3, 3, 8, 8, dtype=torch.float64)
    eps = torch.randn_like(x0)
    out = forward_sample(x0, [1, 50, 100], eps, s)
    for i, t in enumerate([1, 50, 100]):
        assert torch.allclose(out[i], forward_sample(x0[i:i + 1], t, eps[i:i + 1], s)[0])


def test_forward_sample_errors():
    s = make_schedule(10)
    x = torch.zeros(1, 3, 8, 8)
    with pytest.raises(ValueError):
        forward_sample(x, 0, x, s)
    with pytest.raises(ValueError):
        forward_sample(x, 11, x, s)
    with pytest.raises(ValueError):
        forward_sample(x, 3, torch.zeros(1, 3, 8, 9), s)


def test_iterate_forward_trivial_cases():
    s = make_schedule(10)
    x0 = torch.randn(4, 3, 8, 8, dtype=torch.float64)
    assert torch.equal(iterate_forward(x0, 0, s), x0)
    still = VarianceSchedule(5, np.zeros(5), np.ones(5), np.ones(5))
    assert torch.equal(iterate_forward(x0, 5, still, torch.Generator().manual_seed(0)), x0)


@pytest.mark.parametrize("t", [10, 100, 200])
def test_iterate_forward_matches_closed_form_moments(t):
    s = make_schedule(200, 1e-4, 0.02)
    g = torch.Generator().manual_seed(t)
    x0 = torch.ones(100_000, dtype=torch.float64)
    xt = iterate_forward(x0, t, s, g)
    ab = s.alpha_bar_at(t)
    assert float(xt.var()) == pytest.approx(1 - ab, rel=0.02)
    assert float(xt.mean()) == pytest.approx(math.sqrt(ab), rel=0.02)


def test_posterior_at_first_step_is_deterministic_reconstruction():
    s = make_schedule(100, 1e-4, 0.02)
    c0, ct, var = posterior_coefficients(1, s)
    assert c0 == pytest.approx(1.0, abs=1e-12)
    assert ct == 0.0
    assert var == 0.0


def test_posterior_constant_inputs():
    s = make_schedule(100, 1e-4, 0.02)
    t, c = 37, 0.3
    x = torch.full((1, 3, 8, 8), c, dtype=torch.float64)
    mean, _ = posterior_params(x, x, t, s)
    ab, abp, b, a = s.alpha_bar_at(t), s.alpha_bar_at(t - 1), s.beta_at(t), s.alpha_at(t)
    expected = c * (math.sqrt(abp) * b + math.sqrt(a) * (1 - abp)) / (1 - ab)
    assert torch.allclose(mean, torch.full_like(x, expected), atol=1e-14)


def test_posterior_coefficients_reproduce_noiseless_chain():
    s = make_schedule(1000, 1e-4, 0.02)
    x0 = torch.randn(1, 3, 8, 8, dtype=torch.float64)
    for t in range(1, 51):
        xt = math.sqrt(s.alpha_bar_at(t)) * x0
        mean, _ = posterior_params(x0, xt, t, s)
        assert torch.allclose(mean, math.sqrt(s.alpha_bar_at(t - 1)) * x0, atol=1e-12)


def test_posterior_variance_bounded_by_beta():
    s = make_schedule(1000, 1e-4, 0.02)
    for t in range(1, 1001):
        _, _, var = posterior_coefficients(t, s)
        assert 0.0 <= var <= s.beta_at(t)


def test_posterior_rejects_step_zero():
    s = make_schedule(10)
    x = torch.zeros(1, 3, 8, 8)
    with pytest.raises(ValueError):
        posterior_params(x, x, 0, s)


def test_reverse_inversion_with_true_noise():
    s = make_schedule(1000, 1e-4, 0.02)
    g = torch.Generator().manual_seed(0)
    for t in (1, 10, 500, 1000):
        x0 = torch.rand(1, 3, 8, 8, generator=g, dtype=torch.float64) * 2 - 1
        eps = torch.randn(x0.shape, generator=g, dtype=torch.float64)
        xt = forward_sample(x0, t, eps, s)
        assert torch.max(torch.abs(predict_x0(xt, eps, t, s) - x0)) < 1e-5


def test_reverse_step_first_step_is_deterministic():
    s = make_schedule(50)
    xt = torch.randn(1, 3, 8, 8)
    eps = torch.randn(1, 3, 8, 8)
    a = reverse_step(xt, eps, 1, s, torch.Generator().manual_seed(1))
    b = reverse_step(xt, eps, 1, s, torch.Generator().manual_seed(2))
    assert torch.equal(a, b)


def test_reverse_step_seeded_determinism():
    s = make_schedule(50)
    xt = torch.randn(1, 3, 8, 8)
    eps = torch.randn(1, 3, 8, 8)
    a = reverse_step(xt, eps, 30, s, torch.Generator().manual_seed(5))
    b = reverse_step(xt, eps, 30, s, torch.Generator().manual_seed(5))
    assert torch.equal(a, b)


def test_reverse_step_range_check():
    s = make_schedule(50)
    x = torch.zeros(1, 3, 8, 8)
    for t in (0, 51):
        with pytest.raises(ValueError):
            reverse_step(x, x, t, s)
