import math

import torch
import torch.nn as nn

from ..errors import ValidationError


def gather(x, idx):
    """x: (B, N, C), idx: (B, ...) -> (B, ..., C)"""
    B, C = x.shape[0], x.shape[-1]
    flat = idx.reshape(B, -1)
    out = torch.gather(x, 1, flat.unsqueeze(-1).expand(-1, -1, C))
    return out.reshape(*idx.shape, C)


def mlp(in_ch, hidden, out_ch, zero_out=False):
    last = nn.Linear(hidden, out_ch)
    if zero_out:
        nn.init.zeros_(last.weight)
        nn.init.zeros_(last.bias)
    return nn.Sequential(nn.Linear(in_ch, hidden), nn.SiLU(), last)


class AttentionPool(nn.Module):
    """Softmax-weighted pooling over the neighbour axis, one weight per channel."""

    def __init__(self, channels):
        super().__init__()
        self.score = nn.Linear(channels, channels)

    def forward(self, g):
        # g: (B, M, K, C)
        w = torch.softmax(self.score(g), dim=2)
        return (w * g).sum(dim=2), w


class SetAbstraction(nn.Module):
    """Downsample by FPS, group kNN neighbourhoods, residual MLP, attention pool."""

    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.in_ch, self.out_ch = in_ch, out_ch
        self.mlp = mlp(in_ch + 3, out_ch, out_ch)
        self.lift = nn.Linear(in_ch + 3, out_ch)
        self.pool = AttentionPool(out_ch)

    def forward(self, coords, feats, centers, neighbors, return_weights=False):
        new_coords = gather(coords, centers)
        rel = gather(coords, neighbors) - new_coords.unsqueeze(2)
        g_in = torch.cat([gather(feats, neighbors), rel], dim=-1)
        g = self.mlp(g_in) + self.lift(g_in)
        out, w = self.pool(g)
        if return_weights:
            return new_coords, out, w
        return new_coords, out


def interpolate(coarse_feats, idx, w):
    """Inverse-distance blend of coarse features onto fine points."""
    return (gather(coarse_feats, idx) * w.to(coarse_feats.dtype).unsqueeze(-1)).sum(dim=2)


class FeaturePropagation(nn.Module):
    """Interpolate coarse features up, refine with neighbourhood attention, fuse the skip."""

    def __init__(self, coarse_ch, skip_ch, out_ch):
        super().__init__()
        self.coarse_ch, self.skip_ch, self.out_ch = coarse_ch, skip_ch, out_ch
        self.refine_in = nn.Linear(coarse_ch + 3, coarse_ch)
        self.pool = AttentionPool(coarse_ch)
        self.mlp = mlp(coarse_ch + skip_ch, out_ch, out_ch)

    def forward(self, coarse_feats, fine_coords, skip_feats, idx, w, fine_neighbors):
        if skip_feats.shape[:2] != fine_coords.shape[:2]:
            raise ValidationError(
                f"feature propagation: skip features {tuple(skip_feats.shape)} do not match fine level {tuple(fine_coords.shape)}"
            )
        if coarse_feats.shape[-1] != self.coarse_ch or skip_feats.shape[-1] != self.skip_ch:
            raise ValidationError("feature propagation: channel widths do not match layer")
        up = interpolate(coarse_feats, idx, w)
        rel = gather(fine_coords, fine_neighbors) - fine_coords.unsqueeze(2)
        g = self.refine_in(torch.cat([gather(up, fine_neighbors), rel], dim=-1))
        refined, _ = self.pool(g)
        return self.mlp(torch.cat([up + refined, skip_feats], dim=-1))


class GlobalFeatures(nn.Module):
    """Two-stage PointNet: per-point MLP, max-pool, re-broadcast, MLP, max-pool."""

    def __init__(self, dim):
        super().__init__()
        self.stage1 = mlp(3, dim // 8, dim // 4)
        self.stage2 = mlp(dim // 2, dim // 2, dim)

    def forward(self, points):
        f = self.stage1(points)
        g = f.max(dim=1, keepdim=True).values
        f = self.stage2(torch.cat([f, g.expand_as(f)], dim=-1))
        return f.max(dim=1).values


def sinusoidal(t, dim):
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64).unsqueeze(-1) * freqs
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class TimeEmbedding(nn.Module):
    def __init__(self, dim, timesteps):
        super().__init__()
        self.dim, self.timesteps = dim, timesteps
        self.mlp = mlp(dim, dim, dim)

    def forward(self, t):
        t = torch.as_tensor(t).reshape(-1)
        if t.min() < 1 or t.max() > self.timesteps:
            raise ValidationError(f"timestep out of range 1..{self.timesteps}")
        dtype = self.mlp[0].weight.dtype
        return self.mlp(sinusoidal(t, self.dim).to(dtype))


class RateEmbedding(nn.Module):
    """Learned row per upsampling rate; rate r lives in row r - 1."""

    def __init__(self, rows, width):
        super().__init__()
        self.rows = rows
        self.table = nn.Embedding(rows, width)

    def forward(self, rate):
        rate = torch.as_tensor(rate, dtype=torch.long).reshape(-1)
        if rate.min() < 1 or rate.max() > self.rows:
            raise ValidationError(f"upsampling rate must be in 1..{self.rows}, got {rate.tolist()}")
        return self.table(rate - 1)


def decoder_channels(channels):
    """Output width of each FP stage, deepest first."""
    return (channels[2], channels[1], channels[0], channels[0])


class PointUNet(nn.Module):
    """Four SA levels down, four FP stages back up to the input points.

    With ``cond_dim`` set, a per-stage linear projection of the conditioning
    vector is broadcast-added after every SA and FP stage.
    """

    def __init__(self, in_ch, channels, cond_dim=None):
        super().__init__()
        self.in_ch, self.channels = in_ch, tuple(channels)
        widths = (in_ch,) + self.channels
        self.sa = nn.ModuleList(SetAbstraction(widths[j], widths[j + 1]) for j in range(4))
        dec = decoder_channels(self.channels)
        coarse = (self.channels[3],) + dec[:3]
        skips = (self.channels[2], self.channels[1], self.channels[0], in_ch)
        self.fp = nn.ModuleList(FeaturePropagation(coarse[j], skips[j], dec[j]) for j in range(4))
        self.cond_dim = cond_dim
        if cond_dim:
            self.enc_cond = nn.ModuleList(nn.Linear(cond_dim, w) for w in self.channels)
            self.dec_cond = nn.ModuleList(nn.Linear(cond_dim, w) for w in dec)

    def encode(self, coords, feats, plan, cond=None):
        levels = [(coords, feats)]
        for j, sa in enumerate(self.sa):
            coords, feats = sa(coords, feats, plan.centers[j], plan.neighbors[j])
            if cond is not None:
                feats = feats + self.enc_cond[j](cond).unsqueeze(1)
            levels.append((coords, feats))
        return levels

    def decode(self, levels, bottleneck, plan, cond=None):
        feats = bottleneck
        for j, fp in enumerate(self.fp):
            fine_coords, skip = levels[3 - j]
            feats = fp(feats, fine_coords, skip, plan.interp_idx[j], plan.interp_w[j], plan.fine_neighbors[j])
            if cond is not None:
                feats = feats + self.dec_cond[j](cond).unsqueeze(1)
        return feats
