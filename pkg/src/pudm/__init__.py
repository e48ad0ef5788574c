"""Conditional diffusion model for point cloud upsampling."""
from .errors import CheckpointError, TrainingDiverged, ValidationError
from .schedule import DiffusionSchedule, StridePlan, build_schedule, make_stride_plan
from .network import NetworkConfig, UpsampleDenoiser, preset
from .training import SamplePair, TrainingConfig, train
from .sampling import SamplerConfig, upsample, upsample_strided
from .checkpoint import load_checkpoint, save_checkpoint

__version__ = "0.1.0"
