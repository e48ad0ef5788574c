"""Losses and the joint optimisation loop for both branches."""
import csv
import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from typing import NamedTuple, Optional

import numpy as np
import torch

from . import geometry
from .errors import TrainingDiverged, ValidationError
from .network import UpsampleDenoiser, build_pair_plan, collate, preset
from .schedule import build_schedule, forward_sample

log = logging.getLogger(__name__)


@dataclass
class SamplePair:
    c: np.ndarray
    x0: np.ndarray
    rate: int
    reference: Optional[np.ndarray] = None  # dense surface proxy for P2F
    name: str = ""

    def __post_init__(self):
        self.c = geometry.as_cloud(self.c, "c")
        self.x0 = geometry.as_cloud(self.x0, "x0")
        if int(self.rate) != self.rate or self.rate < 1:
            raise ValidationError(f"rate must be a positive integer, got {self.rate}")
        self.rate = int(self.rate)
        if len(self.x0) != self.rate * len(self.c):
            raise ValidationError(f"dense cloud has {len(self.x0)} points, expected {self.rate} x {len(self.c)}")


@dataclass
class TrainingConfig:
    alpha_weight: float = 1.0
    lr: float = 1e-3
    batch_size: int = 8
    steps: int = 2000
    seed: int = 0
    timesteps: int = 1000
    beta_min: float = 1e-4
    beta_max: float = 0.02
    preset: str = "desk"
    midpoint_k: int = 8

    def __post_init__(self):
        if self.alpha_weight < 0:
            raise ValidationError("alpha_weight must be >= 0")
        if self.steps < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValidationError("steps, batch_size and lr must be positive")

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]

    def schedule(self):
        return build_schedule(self.timesteps, self.beta_min, self.beta_max)


class Batch(NamedTuple):
    c: torch.Tensor
    x0: torch.Tensor
    i: torch.Tensor
    rate: torch.Tensor
    plan: object


@dataclass
class PreparedPair:
    pair: SamplePair
    i: np.ndarray
    plan: object

    @property
    def key(self):
        return (len(self.pair.c), self.pair.rate)


def prepare(pairs, config, midpoint_k=8):
    """Attach the interpolated cloud and geometry plan to every pair (computed once)."""
    out = []
    for p in pairs:
        i = geometry.midpoint_interpolate(p.c, p.rate, k=midpoint_k)
        out.append(PreparedPair(p, i, build_pair_plan(p.c, i, config)))
    return out


def make_batch(prepared, dtype=torch.float32):
    keys = {p.key for p in prepared}
    if len(keys) != 1:
        raise ValidationError(f"a batch needs one (points, rate) shape, got {sorted(keys)}")

    def t(arrs):
        return torch.as_tensor(np.stack(arrs), dtype=dtype)

    return Batch(
        t([p.pair.c for p in prepared]),
        t([p.pair.x0 for p in prepared]),
        t([p.i for p in prepared]),
        torch.tensor([p.pair.rate for p in prepared], dtype=torch.long),
        collate([p.plan for p in prepared]),
    )


def sample_timesteps(rng, T, n):
    """n steps drawn uniformly from {1, ..., T}."""
    return rng.integers(1, T + 1, size=n)


def _sq_err(a, b):
    # per-point squared norm, averaged over points and batch
    return ((a - b) ** 2).sum(dim=-1).mean()


def loss_theta(model, batch, t, eps, schedule, cnet_out=None):
    if cnet_out is None:
        cnet_out = model.cnet_forward(batch.c, batch.plan)
    x_t = forward_sample(batch.x0, t, eps, schedule)
    eps_hat = model.nnet_forward(x_t, batch.i, torch.as_tensor(t), batch.rate, cnet_out, batch.plan)
    return _sq_err(eps, eps_hat)


def loss_psi(model, batch, cnet_out=None):
    if cnet_out is None:
        cnet_out = model.cnet_forward(batch.c, batch.plan)
    return _sq_err(batch.c, cnet_out.y_c)


def total_loss(model, batch, t, eps, schedule, alpha_weight=1.0):
    """``(total, l_theta, l_psi)`` with total = l_theta + alpha_weight * l_psi."""
    cnet_out = model.cnet_forward(batch.c, batch.plan)
    lt = loss_theta(model, batch, t, eps, schedule, cnet_out)
    lp = loss_psi(model, batch, cnet_out)
    return lt + alpha_weight * lp, lt, lp


@dataclass
class TrainResult:
    model: UpsampleDenoiser
    trace: list = field(default_factory=list)  # (step, total, l_theta, l_psi)
    config: TrainingConfig = None

    def write_trace(self, fh):
        write_trace(self.trace, fh)


def write_trace(trace, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["step", "total", "l_theta", "l_psi"])
    for step, total, lt, lp in trace:
        w.writerow([step, repr(total), repr(lt), repr(lp)])


def train(pairs, config, model=None, callback=None, network=None):
    """Jointly fit both branches; a pure function of (pairs order, config).

    A fresh model is built after seeding from ``network`` (default: the
    config's preset). A caller-supplied ``model`` is trained as is.
    """
    if not pairs:
        raise ValidationError("training needs at least one sample pair")
    torch.manual_seed(config.seed)
    if model is None:
        model = UpsampleDenoiser(network or preset(config.preset))
    gen = torch.Generator().manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    schedule = config.schedule()
    dtype = next(model.parameters()).dtype
    prepared = prepare(pairs, model.config, config.midpoint_k)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    bs = min(config.batch_size, len(prepared))
    result = TrainResult(model, [], config)
    model.train()
    for step in range(1, config.steps + 1):
        chosen = rng.choice(len(prepared), size=bs, replace=False)
        groups = OrderedDict()
        for j in chosen:
            groups.setdefault(prepared[j].key, []).append(prepared[j])
        opt.zero_grad(set_to_none=True)
        sums = np.zeros(3)
        for members in groups.values():
            batch = make_batch(members, dtype)
            t = sample_timesteps(rng, schedule.T, len(members))
            eps = torch.randn(batch.x0.shape, generator=gen, dtype=dtype)
            total, lt, lp = total_loss(model, batch, t, eps, schedule, config.alpha_weight)
            share = len(members) / bs
            (total * share).backward()
            sums += share * np.array([total.item(), lt.item(), lp.item()])
        if not np.all(np.isfinite(sums)):
            raise TrainingDiverged(f"non-finite loss at step {step}: {sums.tolist()}")
        opt.step()
        result.trace.append((step, float(sums[0]), float(sums[1]), float(sums[2])))
        if callback is not None:
            callback(step, sums)
    model.eval()
    return result


def training_metadata(config):
    return {"training": asdict(config)}
