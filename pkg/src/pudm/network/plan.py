"""Precomputed sampling/grouping indices for the point U-Nets.

Grouping depends only on coordinates that stay fixed for a given sample (the
sparse cloud for the conditional branch, the interpolated cloud for the noise
branch), so it is computed once with numpy and reused for every forward pass.
"""
from dataclasses import dataclass

import numpy as np
import torch

from .. import geometry
from ..errors import ValidationError


@dataclass
class BranchPlan:
    centers: list      # per SA level: (B, M_{l+1}) indices into level l
    neighbors: list    # per SA level: (B, M_{l+1}, k)
    interp_idx: list   # per FP stage (deepest first): (B, M_fine, <=3)
    interp_w: list
    fine_neighbors: list

    @property
    def depth(self):
        return len(self.centers)


@dataclass
class PairPlan:
    c: BranchPlan
    i: BranchPlan
    cross_idx: object  # conditional bottleneck -> noise bottleneck interpolation
    cross_w: object


def build_branch_plan(coords, level_points, k, seed=0):
    pts = geometry.as_cloud(coords)
    if len(pts) < level_points[-1]:
        raise ValidationError(f"cloud of {len(pts)} points is smaller than the deepest level ({level_points[-1]})")
    levels = [pts]
    centers, neighbors = [], []
    for depth, target in enumerate(level_points):
        cur = levels[-1]
        m = min(target, len(cur))
        if k > len(cur):
            raise ValidationError(f"neighbourhood size k={k} exceeds level size {len(cur)}")
        ctr = geometry.farthest_point_sample(cur, m, seed=seed if depth == 0 else 0)
        centers.append(ctr)
        neighbors.append(geometry.knn(cur, cur[ctr], k))
        levels.append(cur[ctr])
    interp_idx, interp_w, fine_nbrs = [], [], []
    for depth in range(len(level_points) - 1, -1, -1):
        fine, coarse = levels[depth], levels[depth + 1]
        idx, w = geometry.interpolation_weights(coarse, fine, k=3)
        interp_idx.append(idx)
        interp_w.append(w)
        fine_nbrs.append(geometry.knn(fine, fine, min(k, len(fine))))
    plan = BranchPlan(centers, neighbors, interp_idx, interp_w, fine_nbrs)
    return plan, levels


def build_pair_plan(c, i, config):
    pc, lc = build_branch_plan(c, config.level_points, config.knn_k)
    pi, li = build_branch_plan(i, config.level_points, config.knn_k)
    cidx, cw = geometry.interpolation_weights(lc[-1], li[-1], k=3)
    return PairPlan(pc, pi, cidx, cw)


def _stack(arrays, dtype):
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ValidationError(f"cannot batch plans with differing shapes {sorted(shapes)}")
    return torch.as_tensor(np.stack(arrays), dtype=dtype)


def collate_branch(plans):
    def col(attr, dtype):
        return [_stack([getattr(p, attr)[j] for p in plans], dtype) for j in range(plans[0].depth)]

    return BranchPlan(
        col("centers", torch.long),
        col("neighbors", torch.long),
        col("interp_idx", torch.long),
        col("interp_w", torch.float64),
        col("fine_neighbors", torch.long),
    )


def collate(plans):
    """Stack per-sample numpy plans into one batched torch plan."""
    if isinstance(plans[0], PairPlan):
        return PairPlan(
            collate_branch([p.c for p in plans]),
            collate_branch([p.i for p in plans]),
            _stack([p.cross_idx for p in plans], torch.long),
            _stack([p.cross_w for p in plans], torch.float64),
        )
    return collate_branch(plans)
