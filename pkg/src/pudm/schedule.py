"""Linear-beta diffusion schedule and the closed-form identities built on it.

Tables are stored with a leading t = 0 entry (beta 0, alpha_bar 1) so that
``table[t]`` is the value at step ``t`` for t in 1..T.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class DiffusionSchedule:
    T: int
    beta_min: float
    beta_max: float
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    posterior_var: np.ndarray

    def check_step(self, t):
        arr = np.asarray(t)
        if arr.size == 0 or arr.min() < 1 or arr.max() > self.T:
            raise ValidationError(f"timestep out of range 1..{self.T}: {t}")

    def rows(self):
        for t in range(1, self.T + 1):
            yield t, self.beta[t], self.alpha[t], self.alpha_bar[t], self.posterior_var[t]


def build_schedule(T=1000, beta_min=1e-4, beta_max=0.02):
    if int(T) != T or T < 2:
        raise ValidationError(f"schedule needs T >= 2, got {T}")
    if not 0 < beta_min < beta_max < 1:
        raise ValidationError(f"schedule needs 0 < beta_min < beta_max < 1, got ({beta_min}, {beta_max})")
    T = int(T)
    beta = np.concatenate([[0.0], np.linspace(beta_min, beta_max, T)])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    post = np.zeros(T + 1)
    post[1:] = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta[1:]
    return DiffusionSchedule(T, float(beta_min), float(beta_max), beta, alpha, alpha_bar, post)


def _coef(table, t, like):
    """Table lookup shaped to broadcast against ``like`` (numpy or torch)."""
    if np.ndim(t) == 0:
        return float(table[int(t)])
    vals = table[np.asarray(t, dtype=np.int64)]
    shape = (-1,) + (1,) * (like.ndim - 1)
    if hasattr(like, "new_tensor"):
        return like.new_tensor(vals).reshape(shape)
    return vals.reshape(shape)


def _sqrt(v):
    return v ** 0.5


def forward_sample(x0, t, eps, s):
    """Draw x_t ~ q(x_t | x_0) given the noise ``eps``."""
    s.check_step(t)
    if tuple(x0.shape) != tuple(eps.shape):
        raise ValidationError(f"forward_sample: eps shape {tuple(eps.shape)} != x0 shape {tuple(x0.shape)}")
    ab = _coef(s.alpha_bar, t, x0)
    return _sqrt(ab) * x0 + _sqrt(1.0 - ab) * eps


def posterior_mean_variance(x0, xt, t, s):
    """Mean and variance of q(x_{t-1} | x_t, x_0)."""
    s.check_step(t)
    a = _coef(s.alpha, t, xt)
    ab = _coef(s.alpha_bar, t, xt)
    ab_prev = _coef(s.alpha_bar, np.asarray(t) - 1, xt)
    mean = (_sqrt(a) * (1.0 - ab_prev) / (1.0 - ab)) * xt + (_sqrt(ab_prev) * (1.0 - a) / (1.0 - ab)) * x0
    return mean, _coef(s.posterior_var, t, xt)


def mean_from_eps(xt, eps, t, s):
    """Posterior mean written in terms of the noise instead of x_0."""
    s.check_step(t)
    a = _coef(s.alpha, t, xt)
    ab = _coef(s.alpha_bar, t, xt)
    return (xt - ((1.0 - a) / _sqrt(1.0 - ab)) * eps) / _sqrt(a)


def x0_from_eps(xt, eps, t, s):
    s.check_step(t)
    ab = _coef(s.alpha_bar, t, xt)
    return (xt - _sqrt(1.0 - ab) * eps) / _sqrt(ab)


def score_from_eps(eps_hat, t, s):
    s.check_step(t)
    return -eps_hat / _sqrt(1.0 - _coef(s.alpha_bar, t, eps_hat))


def eps_from_score(score, t, s):
    s.check_step(t)
    return -score * _sqrt(1.0 - _coef(s.alpha_bar, t, score))


@dataclass(frozen=True)
class StridePlan:
    timesteps: tuple
    interval: int
    terminal_distance: int

    @property
    def network_calls(self):
        # one call at t = T to leave the prior, then one per retained step
        return 1 + len(self.timesteps)


def make_stride_plan(T, interval):
    """Retained steps T-1, T-1-s, ... down to the last step >= 1.

    ``terminal_distance`` is the gap between the last retained step and x_0:
    (T-1) mod s, or 1 when that residue is 0 (the sequence then ends at 1).
    """
    if int(interval) != interval or not 1 <= interval <= T - 1:
        raise ValidationError(f"sampling interval must be in 1..{T - 1}, got {interval}")
    interval = int(interval)
    steps = list(range(T - 1, -1, -interval))
    if steps[-1] == 0:
        steps[-1] = 1
        if len(steps) > 1 and steps[-2] == 1:
            steps.pop()
    return StridePlan(tuple(steps), interval, steps[-1])
