"""Central finite-difference checks of autograd gradients (float64).

Each check compares the analytic directional derivative along a random unit
direction with (f(x + h v) - f(x - h v)) / 2h, separately for every parameter
tensor and every differentiable input of the operation.

Some derivatives vanish identically (softmax is invariant to a shared score
offset, so score and key biases get no gradient); the relative error therefore
uses a denominator floor at NOISE_FACTOR times the difference quotient's
rounding level eps * |f| / h.
"""
from dataclasses import dataclass

import numpy as np
import torch

from . import geometry
from .network import (
    AttentionPool,
    FeaturePropagation,
    GlobalFeatures,
    SetAbstraction,
    TimeEmbedding,
    RateEmbedding,
    CrossAttention,
    TransferModule,
    UpsampleDenoiser,
    build_branch_plan,
    build_pair_plan,
    collate,
    preset,
)
from .schedule import build_schedule
from .training import SamplePair, make_batch, prepare, total_loss

STEP = 1e-5
TOLERANCE = 1e-3
NOISE_FACTOR = 1e4


@dataclass
class CheckResult:
    name: str
    rel_error: float
    analytic: float
    numeric: float
    floor: float = 0.0

    @property
    def passed(self):
        return self.rel_error < TOLERANCE


def rel_error(a, b, floor=0.0):
    denom = max(abs(a), abs(b), floor)
    return 0.0 if denom == 0 else abs(a - b) / denom


def directional(fn, leaf, gen, h=STEP, direction=None):
    """Analytic vs central-difference derivative of scalar ``fn()`` along ``direction`` (random if None)."""
    v = torch.randn(leaf.shape, generator=gen, dtype=leaf.dtype) if direction is None else direction
    v = v / v.norm()
    leaf.grad = None
    out = fn()
    floor = NOISE_FACTOR * np.finfo(np.float64).eps * max(1.0, abs(out.item())) / h
    (g,) = torch.autograd.grad(out, leaf, allow_unused=True)
    analytic = 0.0 if g is None else float((g * v).sum())
    with torch.no_grad():
        leaf.add_(h * v)
        fp = float(fn())
        leaf.sub_(2 * h * v)
        fm = float(fn())
        leaf.add_(h * v)
    numeric = (fp - fm) / (2 * h)
    return CheckResult("", rel_error(analytic, numeric, floor), analytic, numeric, floor)


def randomize(module, gen):
    """Replace every parameter with a random draw (zero-initialised heads included)."""
    with torch.no_grad():
        for name, p in module.named_parameters():
            if p.ndim >= 2 and "table" not in name:
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) / np.sqrt(p.shape[-1]))
            else:
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.5)
    return module


def _named(result, name):
    result.name = name
    return result


def check_all(name, fn, module, inputs, gen):
    results = []
    for pname, p in module.named_parameters():
        results.append(_named(directional(fn, p, gen), f"{name}:{pname}"))
    for iname, x in inputs.items():
        results.append(_named(directional(fn, x, gen), f"{name}:<{iname}>"))
    return results


def _leaf(gen, *shape):
    return torch.randn(*shape, generator=gen, dtype=torch.float64).requires_grad_(True)


def run_suite(preset_name="desk", seed=7, sparse_n=16, rate=4):
    """All gradient checks; returns a list of :class:`CheckResult`."""
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    cfg = preset(preset_name)
    k = cfg.knn_k
    results = []
    dd = dict(dtype=torch.float64)

    pool = randomize(AttentionPool(8).to(**dd), gen)
    g = _leaf(gen, 2, 5, k, 8)
    results += check_all("attention_pool", lambda: (pool(g)[0] ** 2).sum(), pool, {"groups": g}, gen)

    pts = rng.standard_normal((32, 3))
    bplan = collate([build_branch_plan(pts, (16, 12, 10, 8), k)[0]])
    coords = torch.tensor(pts[None], **dd).requires_grad_(True)
    feats = _leaf(gen, 1, 32, 6)
    sa = randomize(SetAbstraction(6, 12).to(**dd), gen)
    results += check_all(
        "set_abstraction",
        lambda: (sa(coords, feats, bplan.centers[0], bplan.neighbors[0])[1] ** 2).sum(),
        sa,
        {"feats": feats, "coords": coords},
        gen,
    )

    fine = torch.tensor(pts[None], **dd)
    coarse_f = _leaf(gen, 1, 16, 12)
    skip = _leaf(gen, 1, 32, 6)
    fp = randomize(FeaturePropagation(12, 6, 10).to(**dd), gen)
    j = bplan.depth - 1  # stage that lands back on the 32 input points
    results += check_all(
        "feature_propagation",
        lambda: (fp(coarse_f, fine, skip, bplan.interp_idx[j], bplan.interp_w[j], bplan.fine_neighbors[j]) ** 2).sum(),
        fp,
        {"coarse": coarse_f, "skip": skip},
        gen,
    )

    gf = randomize(GlobalFeatures(cfg.global_dim).to(**dd), gen)
    cloud = _leaf(gen, 1, 24, 3)
    results += check_all("global_features", lambda: (gf(cloud) ** 2).sum(), gf, {"cloud": cloud}, gen)

    te = randomize(TimeEmbedding(cfg.time_dim, cfg.timesteps).to(**dd), gen)
    tt = torch.tensor([1, 500, cfg.timesteps])
    results += check_all("embed_time", lambda: (te(tt) ** 2).sum(), te, {}, gen)

    re = randomize(RateEmbedding(cfg.rate_rows, cfg.rate_dim).to(**dd), gen)
    rr = torch.tensor([1, 2, 4])
    results += check_all("embed_rate", lambda: (re(rr) ** 2).sum(), re, {}, gen)

    ca = randomize(CrossAttention(12, 10, cfg.tm_latent, cfg.heads, cfg.tm_ffn).to(**dd), gen)
    q, kv = _leaf(gen, 2, 16, 12), _leaf(gen, 2, 8, 10)
    results += check_all("cross_attend", lambda: (ca(q, kv) ** 2).sum(), ca, {"query": q, "kv": kv}, gen)

    tm = randomize(TransferModule(12, 10, cfg.tm_latent, cfg.heads, cfg.tm_ffn).to(**dd), gen)
    results += check_all(
        "transfer_bidirectional",
        lambda: sum((o ** 2).sum() for o in tm(q, kv)),
        tm,
        {"fc": q, "fn": kv},
        gen,
    )

    model = randomize(UpsampleDenoiser(cfg).to(**dd), gen)
    c_small = geometry.normalize(rng.standard_normal((8, 3)))[0]
    i_small = geometry.midpoint_interpolate(c_small, 2)
    pplan = collate([build_pair_plan(c_small, i_small, cfg)])
    c_t = torch.tensor(c_small[None], **dd)
    i_t = torch.tensor(i_small[None], **dd)
    x_t = _leaf(gen, 1, 16, 3)

    def nnet_obj():
        out = model.cnet_forward(c_t, pplan)
        return (model.nnet_forward(x_t, i_t, 37, 2, out, pplan) ** 2).sum()

    results += check_all("nnet_forward", nnet_obj, model, {"x_t": x_t}, gen)
    results += check_all(
        "cnet_forward",
        lambda: (model.cnet_forward(c_t, pplan).y_c ** 2).sum(),
        model.cnet,
        {},
        gen,
    )

    schedule = build_schedule(cfg.timesteps)
    shape = rng.standard_normal((sparse_n * rate, 3))
    x0 = geometry.normalize(shape)[0]
    pair = SamplePair(x0[geometry.farthest_point_sample(x0, sparse_n)], x0, rate)
    batch = make_batch(prepare([pair], cfg), torch.float64)
    t = np.array([123])
    eps = torch.randn(batch.x0.shape, generator=gen, dtype=torch.float64)

    def total_obj():
        return total_loss(model, batch, t, eps, schedule, 1.0)[0]

    results += check_all("total_loss", total_obj, model, {}, gen)
    named = list(model.named_parameters())
    for _ in range(20):
        pname, p = named[int(rng.integers(len(named)))]
        flat = int(rng.integers(p.numel()))
        e = torch.zeros(p.numel(), dtype=p.dtype)
        e[flat] = 1.0
        results.append(_named(directional(total_obj, p, gen, direction=e.reshape(p.shape)), f"total_loss:{pname}[{flat}]"))
    return results
