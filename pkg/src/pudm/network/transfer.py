"""Bottleneck cross-attention exchange between the two branches."""
import math

import torch
import torch.nn as nn

from ..errors import ValidationError
from .layers import mlp


class CrossAttention(nn.Module):
    """out = F + FFN(F) with F = MLP(softmax(Q K^T / sqrt(latent)) V) + query."""

    def __init__(self, q_dim, kv_dim, latent, heads, ffn):
        super().__init__()
        if latent % heads:
            raise ValidationError(f"latent width {latent} not divisible by {heads} heads")
        self.q_dim, self.kv_dim, self.latent, self.heads = q_dim, kv_dim, latent, heads
        self.to_q = nn.Linear(q_dim, latent)
        self.to_k = nn.Linear(kv_dim, latent)
        self.to_v = nn.Linear(kv_dim, latent)
        self.out = mlp(latent, latent, q_dim)
        self.ffn = mlp(q_dim, ffn, q_dim)

    def attention(self, query, kv):
        if query.shape[-1] != self.q_dim or kv.shape[-1] != self.kv_dim:
            raise ValidationError(
                f"cross attention expects widths ({self.q_dim}, {self.kv_dim}), got ({query.shape[-1]}, {kv.shape[-1]})"
            )
        B, Nq, _ = query.shape
        Nk = kv.shape[1]
        dh = self.latent // self.heads
        q = self.to_q(query).reshape(B, Nq, self.heads, dh).transpose(1, 2)
        k = self.to_k(kv).reshape(B, Nk, self.heads, dh).transpose(1, 2)
        v = self.to_v(kv).reshape(B, Nk, self.heads, dh).transpose(1, 2)
        # divisor is the full latent width, not the per-head width
        w = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.latent), dim=-1)
        mixed = (w @ v).transpose(1, 2).reshape(B, Nq, self.latent)
        return mixed, w

    def forward(self, query, kv, return_weights=False):
        mixed, w = self.attention(query, kv)
        fused = self.out(mixed) + query
        out = fused + self.ffn(fused)
        if return_weights:
            return out, w
        return out


class TransferModule(nn.Module):
    def __init__(self, c_dim, n_dim, latent, heads, ffn):
        super().__init__()
        self.c_from_n = CrossAttention(c_dim, n_dim, latent, heads, ffn)
        self.n_from_c = CrossAttention(n_dim, c_dim, latent, heads, ffn)

    def forward(self, fc, fn):
        # both directions read the original inputs
        return self.c_from_n(fc, fn), self.n_from_c(fn, fc)
