import numpy as np
import pytest
import torch

from pudm.errors import ValidationError
from pudm.gradcheck import randomize
from pudm.harness import ShapeSpec, generate_shape
from pudm.network import NetworkConfig, UpsampleDenoiser, preset
from pudm.sampling import SamplerConfig, reverse_step, sampling_steps, upsample, upsample_batch, upsample_strided
from pudm.schedule import build_schedule, posterior_mean_variance, x0_from_eps

S = build_schedule()


def reference_step(x, t, eh, i, e, gamma):
    a, ab, ab_prev = S.alpha[t], S.alpha_bar[t], S.alpha_bar[t - 1]
    sigma = np.sqrt((1 - ab_prev) / (1 - ab) * (1 - a))
    e = e if t > 1 else 0 * e
    return gamma * ((x - (1 - a) / np.sqrt(1 - ab) * eh) / np.sqrt(a) + sigma * e + i)


class TestReverseStep:
    def test_zero_inputs(self):
        z = np.zeros((4, 3))
        assert np.all(reverse_step(z, 10, z, z, z, S) == 0)

    def test_algebraic_reduction(self):
        x = np.random.default_rng(0).standard_normal((4, 3))
        z = np.zeros_like(x)
        np.testing.assert_allclose(reverse_step(x, 37, z, z, z, S, gamma=0.5), 0.5 * x / np.sqrt(S.alpha[37]), rtol=1e-15)

    def test_matches_independent_formula(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            t = int(rng.integers(1, S.T + 1))
            x, eh, i, e = rng.standard_normal((4, 6, 3))
            gamma = float(rng.uniform(0.1, 1.5))
            np.testing.assert_allclose(reverse_step(x, t, eh, i, e, S, gamma), reference_step(x, t, eh, i, e, gamma), atol=1e-12, rtol=0)

    def test_denoised_guidance_and_beta_sigma(self):
        rng = np.random.default_rng(2)
        x, eh, i, e = rng.standard_normal((4, 5, 3))
        lit = reverse_step(x, 50, eh, i, e, S, 0.5)
        den = reverse_step(x, 50, eh, i, e, S, 0.5, guidance="denoised")
        np.testing.assert_allclose(den - lit, 0.5 * i, atol=1e-12)
        beta = reverse_step(x, 50, eh, i, e, S, 0.5, sigma="beta")
        np.testing.assert_allclose(beta - lit, 0.5 * (np.sqrt(S.beta[50]) - np.sqrt(S.posterior_var[50])) * e, atol=1e-12)

    def test_shape_mismatch(self):
        z = np.zeros((4, 3))
        with pytest.raises(ValidationError):
            reverse_step(z, 5, z, np.zeros((5, 3)), z, S)

    def test_reduces_to_ancestral_sampler_on_two_step_schedule(self):
        s = build_schedule(2, 0.1, 0.2)
        rng = np.random.default_rng(3)
        x = rng.standard_normal((6, 3))
        ref = x.copy()
        for t in (2, 1):
            eh, e = rng.standard_normal((2, 6, 3))
            x = reverse_step(x, t, eh, np.zeros_like(x), e, s, gamma=1.0)
            mean, var = posterior_mean_variance(x0_from_eps(ref, eh, t, s), ref, t, s)
            ref = mean + (np.sqrt(var) * e if t > 1 else 0)
            np.testing.assert_allclose(x, ref, atol=1e-12)


def test_config_validation():
    for kw in ({"gamma": 0}, {"sigma": "fixed"}, {"guidance": "outside"}):
        with pytest.raises(ValidationError):
            SamplerConfig(**kw)


def test_sampling_steps_count():
    steps, plan = sampling_steps(1000, 12)
    assert steps[0] == 1000 and len(steps) == 85 == plan.network_calls
    assert sampling_steps(1000, 1)[0] == list(range(1000, 0, -1))


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    return randomize(UpsampleDenoiser(preset("desk")), torch.Generator().manual_seed(0))


@pytest.fixture(scope="module")
def sparse():
    return generate_shape(ShapeSpec("sphere", n=32, seed=3)) * 2.0 + 5.0


@pytest.mark.parametrize("rate", range(2, 9))
def test_output_cardinality(model, sparse, rate):
    out = upsample(sparse, rate, model, S, SamplerConfig(interval=999))
    assert out.shape == (rate * 32, 3) and np.all(np.isfinite(out))


def test_interval_twelve_calls_and_steps(model, sparse):
    info = {}
    upsample(sparse, 4, model, S, SamplerConfig(interval=12), info=info)
    assert info["network_calls"] == 85 and info["steps"][-1] == 3


def test_unit_interval_equals_full_and_is_deterministic(model, sparse):
    a = upsample(sparse, 2, model, S, SamplerConfig(seed=5))
    b = upsample_strided(sparse, 2, model, S, 1, SamplerConfig(seed=5))
    assert a.tobytes() == b.tobytes()
    c = upsample(sparse, 2, model, S, SamplerConfig(seed=6, interval=100))
    d = upsample(sparse, 2, model, S, SamplerConfig(seed=6, interval=100))
    assert c.tobytes() == d.tobytes()
    assert upsample(sparse, 2, model, S, SamplerConfig(seed=7, interval=100)).tobytes() != c.tobytes()


def test_denormalize_returns_input_frame(model, sparse):
    cfg = SamplerConfig(interval=999)
    out = upsample(sparse, 2, model, S, cfg)
    raw = upsample(sparse, 2, model, S, SamplerConfig(interval=999, denormalize=False))
    np.testing.assert_allclose(out.mean(axis=0), sparse.mean(axis=0), atol=1.0)
    assert np.abs(raw.mean(axis=0)).max() < 1.0


def test_batch_matches_single(model, sparse):
    other = generate_shape(ShapeSpec("box", n=32, seed=1))
    cfg = SamplerConfig(interval=200)
    outs = upsample_batch([sparse, other], 2, model, S, cfg)
    assert [o.shape for o in outs] == [(64, 3), (64, 3)]


def test_errors(model, sparse):
    with pytest.raises(ValidationError):
        upsample(sparse, 300, model, S)
    with pytest.raises(ValidationError):
        upsample(sparse, 0, model, S)
    with pytest.raises(ValidationError):
        upsample(sparse, 2, model, build_schedule(500))
    with pytest.raises(ValidationError):
        upsample(sparse, 2, model, S, SamplerConfig(interval=1000))
    with pytest.raises(ValidationError):
        upsample(sparse[:4], 2, model, S)
