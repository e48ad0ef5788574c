from .config import PRESETS, NetworkConfig, preset
from .layers import (
    AttentionPool,
    FeaturePropagation,
    GlobalFeatures,
    PointUNet,
    RateEmbedding,
    SetAbstraction,
    TimeEmbedding,
    interpolate,
)
from .model import CNetOutput, UpsampleDenoiser
from .plan import BranchPlan, PairPlan, build_branch_plan, build_pair_plan, collate
from .transfer import CrossAttention, TransferModule

__all__ = [
    "PRESETS",
    "NetworkConfig",
    "preset",
    "AttentionPool",
    "FeaturePropagation",
    "GlobalFeatures",
    "PointUNet",
    "RateEmbedding",
    "SetAbstraction",
    "TimeEmbedding",
    "interpolate",
    "CNetOutput",
    "UpsampleDenoiser",
    "BranchPlan",
    "PairPlan",
    "build_branch_plan",
    "build_pair_plan",
    "collate",
    "CrossAttention",
    "TransferModule",
]
