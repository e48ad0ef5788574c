import math

import mpmath
import numpy as np
import pytest
import torch

from pudm.errors import ValidationError
from pudm.schedule import (
    build_schedule,
    eps_from_score,
    forward_sample,
    make_stride_plan,
    mean_from_eps,
    posterior_mean_variance,
    score_from_eps,
    x0_from_eps,
)

S = build_schedule()


def test_first_alpha_bar_and_shapes():
    assert S.alpha_bar[1] == pytest.approx(0.9999, abs=1e-15)
    assert len(S.beta) == S.T + 1 and S.beta[0] == 0 and S.alpha_bar[0] == 1
    assert S.beta[1] == 1e-4 and S.beta[S.T] == pytest.approx(0.02, abs=1e-16)


def test_alpha_bar_against_extended_precision():
    mpmath.mp.dps = 50
    acc = mpmath.mpf(1)
    for t in range(1, S.T + 1):
        acc *= 1 - mpmath.mpf(float(S.beta[t]))
        assert abs(S.alpha_bar[t] - float(acc)) <= 1e-12 * float(acc) + 1e-300
    assert np.all(np.diff(S.alpha_bar[1:]) < 0)
    # linear beta on [1e-4, 0.02] leaves exp(-sum beta) ~ 4.04e-5 of the signal at T = 1000
    assert float(acc) == pytest.approx(4.0358e-5, rel=1e-4)
    assert S.alpha_bar[S.T] < 5e-5


def test_two_step_hand_product():
    s = build_schedule(2, 0.1, 0.2)
    assert s.alpha_bar[2] == pytest.approx(0.72, abs=1e-15)


@pytest.mark.parametrize("args", [(1, 1e-4, 0.02), (10, 0.2, 0.1), (10, 0.0, 0.1), (10, 0.1, 1.0)])
def test_invalid_schedule(args):
    with pytest.raises(ValidationError):
        build_schedule(*args)


def test_posterior_variance_bounds():
    assert S.posterior_var[1] == 0
    assert np.all(S.posterior_var[1:] >= 0) and np.all(S.posterior_var[1:] <= S.beta[1:])


def test_forward_sample_special_cases_and_range():
    x0 = np.random.default_rng(0).standard_normal((5, 3))
    eps = np.random.default_rng(1).standard_normal((5, 3))
    t = 300
    np.testing.assert_allclose(forward_sample(x0, t, 0 * eps, S), np.sqrt(S.alpha_bar[t]) * x0)
    np.testing.assert_allclose(forward_sample(0 * x0, t, eps, S), np.sqrt(1 - S.alpha_bar[t]) * eps)
    with pytest.raises(ValidationError):
        forward_sample(x0, 0, eps, S)
    with pytest.raises(ValidationError):
        forward_sample(x0, S.T + 1, eps, S)
    with pytest.raises(ValidationError):
        forward_sample(x0, 5, eps[:2], S)


def test_two_step_composition_variance():
    a1, a2 = S.alpha[1], S.alpha[2]
    assert a2 * (1 - a1) + (1 - a2) == pytest.approx(1 - a1 * a2, abs=1e-16)
    assert 1 - S.alpha_bar[2] == pytest.approx(1 - a1 * a2, abs=1e-16)


def test_forward_sample_variance_monte_carlo():
    rng = np.random.default_rng(2)
    x0 = rng.normal(0, 0.5, (100_000, 1))
    eps = rng.standard_normal(x0.shape)
    for t in (10, 500, 1000):
        ab = S.alpha_bar[t]
        expected = ab * x0.var() + 1 - ab
        assert forward_sample(x0, t, eps, S).var() == pytest.approx(expected, rel=0.02)


def test_batched_timesteps_torch():
    x0 = torch.randn(4, 6, 3, dtype=torch.float64)
    eps = torch.randn_like(x0)
    t = np.array([1, 10, 100, 1000])
    out = forward_sample(x0, t, eps, S)
    for b in range(4):
        ab = S.alpha_bar[t[b]]
        torch.testing.assert_close(out[b], ab ** 0.5 * x0[b] + (1 - ab) ** 0.5 * eps[b])


def test_posterior_zero_and_eps_form_identity():
    rng = np.random.default_rng(3)
    m, v = posterior_mean_variance(np.zeros(3), np.zeros(3), 5, S)
    assert np.all(m == 0) and v == S.posterior_var[5]
    for _ in range(100):
        t = int(rng.integers(1, S.T + 1))
        xt, eps = rng.standard_normal((2, 8, 3))
        x0 = (xt - np.sqrt(1 - S.alpha_bar[t]) * eps) / np.sqrt(S.alpha_bar[t])
        direct = (xt - (1 - S.alpha[t]) / np.sqrt(1 - S.alpha_bar[t]) * eps) / np.sqrt(S.alpha[t])
        np.testing.assert_allclose(posterior_mean_variance(x0, xt, t, S)[0], direct, atol=1e-10, rtol=0)
        np.testing.assert_allclose(mean_from_eps(xt, eps, t, S), direct, atol=1e-12, rtol=0)
        np.testing.assert_allclose(x0_from_eps(xt, eps, t, S), x0, atol=1e-9)


def test_posterior_variance_formula_recomputed():
    for t in (1, 2, 17, 500, 1000):
        ab_prev = math.prod(1 - S.beta[j] for j in range(1, t))
        ab = ab_prev * (1 - S.beta[t])
        assert S.posterior_var[t] == pytest.approx((1 - ab_prev) / (1 - ab) * S.beta[t], rel=1e-12, abs=1e-300)


def test_score_relation():
    rng = np.random.default_rng(4)
    v = rng.standard_normal((10, 3))
    t = 250
    assert np.all(score_from_eps(np.zeros(3), t, S) == 0)
    np.testing.assert_allclose(score_from_eps(np.sqrt(1 - S.alpha_bar[t]) * v, t, S), -v, atol=1e-15)
    for t in (1, 2, 999, 1000):
        np.testing.assert_allclose(eps_from_score(score_from_eps(v, t, S), t, S), v, atol=1e-12, rtol=0)


@pytest.mark.parametrize(
    "interval,distance", [(50, 49), (40, 39), (30, 9), (20, 19), (12, 3), (10, 9), (1, 1)]
)
def test_stride_terminal_distance(interval, distance):
    plan = make_stride_plan(1000, interval)
    assert plan.terminal_distance == distance
    steps = plan.timesteps
    assert steps[0] == 999 and steps[-1] == distance
    gaps = np.diff(steps)
    assert np.all(gaps[:-1] == -interval) and -interval <= gaps[-1] < 0 if len(gaps) else True


def test_stride_call_counts():
    assert make_stride_plan(1000, 12).network_calls == math.ceil(999 / 12) + 1 == 85
    assert make_stride_plan(1000, 1).network_calls == 1000
    assert make_stride_plan(1000, 1).timesteps == tuple(range(999, 0, -1))
    assert make_stride_plan(1000, 30).network_calls == 35


@pytest.mark.parametrize("interval", [0, 1000, 2.5])
def test_stride_invalid(interval):
    with pytest.raises(ValidationError):
        make_stride_plan(1000, interval)
