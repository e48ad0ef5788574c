"""Interpolation-guided reverse diffusion."""
from dataclasses import dataclass

import numpy as np
import torch

from . import geometry
from .errors import ValidationError
from .network import build_pair_plan, collate
from .schedule import make_stride_plan, mean_from_eps

SIGMA_KINDS = ("posterior", "beta")
GUIDANCE_KINDS = ("literal", "denoised")


@dataclass(frozen=True)
class SamplerConfig:
    gamma: float = 0.5
    interval: int = 1
    seed: int = 0
    denormalize: bool = True
    sigma: str = "posterior"
    # "literal": gamma scales the denoised term and the guidance cloud together;
    # "denoised": gamma scales only the denoised term, guidance is added unscaled
    guidance: str = "literal"
    midpoint_k: int = 8

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValidationError(f"gamma must be > 0, got {self.gamma}")
        if self.sigma not in SIGMA_KINDS:
            raise ValidationError(f"sigma must be one of {SIGMA_KINDS}")
        if self.guidance not in GUIDANCE_KINDS:
            raise ValidationError(f"guidance must be one of {GUIDANCE_KINDS}")


def reverse_step(x_t, t, eps_hat, i, eps, schedule, gamma=0.5, sigma="posterior", guidance="literal"):
    """One guided update x_t -> x_{t-1}; the fresh noise is dropped at t = 1."""
    if not (x_t.shape == eps_hat.shape == i.shape == eps.shape):
        raise ValidationError("reverse_step: x_t, eps_hat, i and eps must share one shape")
    t = int(t)
    mean = mean_from_eps(x_t, eps_hat, t, schedule)
    var = schedule.posterior_var[t] if sigma == "posterior" else schedule.beta[t]
    noise = 0.0 * eps if t == 1 else float(np.sqrt(var)) * eps
    if guidance == "literal":
        return gamma * (mean + noise + i)
    return gamma * (mean + noise) + i


def sampling_steps(T, interval):
    plan = make_stride_plan(T, interval)
    return [T] + list(plan.timesteps), plan


@torch.no_grad()
def upsample_batch(clouds, rate, model, schedule, config=SamplerConfig(), rate_label=None, info=None):
    """Upsample equally sized sparse clouds together; returns a list of arrays.

    ``rate_label`` overrides the conditioning label while geometry still
    follows ``rate`` (used to probe the rate prior).
    """
    if int(rate) != rate or rate < 1:
        raise ValidationError(f"rate must be a positive integer, got {rate}")
    rate = int(rate)
    label = rate if rate_label is None else int(rate_label)
    if not 1 <= label <= model.config.rate_rows:
        raise ValidationError(f"rate label {label} outside the embedding table (1..{model.config.rate_rows})")
    if model.config.timesteps != schedule.T:
        raise ValidationError(f"model was built for T={model.config.timesteps}, schedule has T={schedule.T}")
    normed, records = zip(*(geometry.normalize(c) for c in clouds))
    if len({len(c) for c in normed}) != 1:
        raise ValidationError("upsample_batch needs clouds of equal size")
    guides = [geometry.midpoint_interpolate(c, rate, k=config.midpoint_k) for c in normed]
    plan = collate([build_pair_plan(c, g, model.config) for c, g in zip(normed, guides)])
    dtype = next(model.parameters()).dtype
    c_t = torch.as_tensor(np.stack(normed), dtype=dtype)
    i_t = torch.as_tensor(np.stack(guides), dtype=dtype)
    labels = torch.full((len(clouds),), label, dtype=torch.long)
    gen = torch.Generator().manual_seed(config.seed)
    steps, _ = sampling_steps(schedule.T, config.interval)
    model.eval()
    cnet_out = model.cnet_forward(c_t, plan)
    x = torch.randn(i_t.shape, generator=gen, dtype=dtype)
    for t in steps:
        eps_hat = model.nnet_forward(x, i_t, t, labels, cnet_out, plan)
        eps = torch.randn(x.shape, generator=gen, dtype=dtype) if t > 1 else torch.zeros_like(x)
        x = reverse_step(x, t, eps_hat, i_t, eps, schedule, config.gamma, config.sigma, config.guidance)
    if info is not None:
        info["network_calls"] = len(steps)
        info["steps"] = steps
    out = x.double().numpy()
    if config.denormalize:
        return [rec.invert(o) for rec, o in zip(records, out)]
    return list(out)


def upsample(cloud, rate, model, schedule, config=SamplerConfig(), rate_label=None, info=None):
    return upsample_batch([cloud], rate, model, schedule, config, rate_label, info)[0]


def upsample_strided(cloud, rate, model, schedule, interval, config=SamplerConfig(), info=None):
    cfg = SamplerConfig(**{**config.__dict__, "interval": interval})
    return upsample(cloud, rate, model, schedule, cfg, info=info)
