from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn

from .. import geometry
from ..errors import ValidationError
from .config import NetworkConfig
from .layers import GlobalFeatures, PointUNet, RateEmbedding, TimeEmbedding, decoder_channels, interpolate, mlp
from .plan import BranchPlan, PairPlan, build_branch_plan, build_pair_plan, collate
from .transfer import TransferModule

PSI_PREFIXES = ("cnet.", "cnet_head.")


class CNetOutput(NamedTuple):
    levels: list   # [(coords, feats)] from the input level down to the bottleneck
    y_c: torch.Tensor


class UpsampleDenoiser(nn.Module):
    """Conditional branch (C-Net), noise branch (N-Net) and the transfer module.

    Parameters under ``cnet``/``cnet_head`` form the conditional set (psi);
    everything else belongs to the noise set (theta).
    """

    def __init__(self, config=None):
        super().__init__()
        self.config = config = config or NetworkConfig()
        cc, nc = config.cnet_channels, config.nnet_channels
        self.cnet = PointUNet(3, cc)
        self.cnet_head = mlp(decoder_channels(cc)[-1], cc[0], 3, zero_out=True)
        self.nnet = PointUNet(6, nc, cond_dim=config.cond_dim)
        self.nnet_head = mlp(decoder_channels(nc)[-1], nc[0], 3, zero_out=True)
        self.transfer = TransferModule(cc[3], nc[3], config.tm_latent, config.heads, config.tm_ffn)
        self.c_to_n = nn.Linear(cc[3], nc[3])
        self.global_feats = GlobalFeatures(config.global_dim)
        self.time_embed = TimeEmbedding(config.time_dim, config.timesteps)
        self.rate_embed = RateEmbedding(config.rate_rows, config.rate_dim)

    # parameter partition

    def psi_named_parameters(self):
        return [(n, p) for n, p in self.named_parameters() if n.startswith(PSI_PREFIXES)]

    def theta_named_parameters(self):
        return [(n, p) for n, p in self.named_parameters() if not n.startswith(PSI_PREFIXES)]

    # geometry plans

    def plan(self, c, i):
        """Batched plan for numpy clouds c (B, N, 3) and i (B, rN, 3)."""
        return collate([build_pair_plan(cc, ii, self.config) for cc, ii in zip(c, i)])

    def _branch_plan(self, coords):
        pts = coords.detach().cpu().numpy()
        return collate([build_branch_plan(p, self.config.level_points, self.config.knn_k)[0] for p in pts])

    # forward passes

    def cnet_forward(self, c, plan=None):
        if c.ndim != 3 or c.shape[-1] != 3:
            raise ValidationError(f"conditional branch expects (B, N, 3), got {tuple(c.shape)}")
        if c.shape[1] < self.config.min_points:
            raise ValidationError(f"sparse cloud of {c.shape[1]} points is smaller than the deepest level")
        if plan is None:
            plan = self._branch_plan(c)
        elif isinstance(plan, PairPlan):
            plan = plan.c
        levels = self.cnet.encode(c, c, plan)
        feats = self.cnet.decode(levels, levels[-1][1], plan)
        return CNetOutput(levels, self.cnet_head(feats))

    def condition(self, i, t, rate, batch):
        t = torch.as_tensor(t).reshape(-1).expand(batch)
        rate = torch.as_tensor(rate).reshape(-1).expand(batch)
        return torch.cat([self.global_feats(i), self.time_embed(t), self.rate_embed(rate)], dim=-1)

    def nnet_forward(self, x_t, i, t, rate, cnet_out, plan=None):
        """Predict the noise in ``x_t`` (B, rN, 3) given the interpolated cloud ``i``."""
        if x_t.shape != i.shape:
            raise ValidationError(f"x_t {tuple(x_t.shape)} and interpolated cloud {tuple(i.shape)} differ in shape")
        fc_coords, fc = cnet_out.levels[-1]
        if plan is None:
            plan_i = self._branch_plan(i)
        elif isinstance(plan, PairPlan):
            plan_i = plan.i
        else:
            plan_i = plan
        cond = self.condition(i, t, rate, x_t.shape[0])
        levels = self.nnet.encode(i, torch.cat([x_t, i], dim=-1), plan_i, cond)
        fn_coords, fn = levels[-1]
        fc_new, fn_new = self.transfer(fc, fn)
        if isinstance(plan, PairPlan):
            cidx, cw = plan.cross_idx, plan.cross_w
        else:
            cidx, cw = _cross_weights(fc_coords, fn_coords)
        bottleneck = fn_new + self.c_to_n(interpolate(fc_new, cidx, cw))
        feats = self.nnet.decode(levels, bottleneck, plan_i, cond)
        return self.nnet_head(feats)


def _cross_weights(src_coords, dst_coords):
    idx, w = [], []
    for s, d in zip(src_coords.detach().cpu().numpy(), dst_coords.detach().cpu().numpy()):
        a, b = geometry.interpolation_weights(s, d, k=3)
        idx.append(a)
        w.append(b)
    return torch.as_tensor(np.stack(idx)), torch.as_tensor(np.stack(w))
