from dataclasses import asdict, dataclass, fields

from ..errors import ValidationError


@dataclass(frozen=True)
class NetworkConfig:
    level_points: tuple = (64, 32, 16, 8)
    cnet_channels: tuple = (16, 32, 32, 64)
    nnet_channels: tuple = (32, 64, 64, 64)
    knn_k: int = 8
    heads: int = 2
    tm_latent: int = 16
    tm_ffn: int = 32
    global_dim: int = 128
    time_dim: int = 64
    rate_rows: int = 256
    rate_dim: int = 32
    timesteps: int = 1000

    def __post_init__(self):
        lp = tuple(int(v) for v in self.level_points)
        if len(lp) != 4 or any(b >= a for a, b in zip(lp, lp[1:])) or lp[-1] < 1:
            raise ValidationError(f"level_points must be 4 strictly decreasing counts, got {lp}")
        for name in ("cnet_channels", "nnet_channels"):
            ch = tuple(int(v) for v in getattr(self, name))
            if len(ch) != 4 or min(ch) < 1:
                raise ValidationError(f"{name} must be 4 positive widths, got {ch}")
            object.__setattr__(self, name, ch)
        object.__setattr__(self, "level_points", lp)
        for name in ("knn_k", "heads", "tm_latent", "tm_ffn", "global_dim", "time_dim", "rate_rows", "rate_dim", "timesteps"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be positive")
        if self.tm_latent % self.heads:
            raise ValidationError(f"tm_latent ({self.tm_latent}) must be divisible by heads ({self.heads})")
        if self.global_dim % 8 or self.time_dim % 2:
            raise ValidationError("global_dim must be a multiple of 8 and time_dim even")

    @property
    def cond_dim(self):
        return self.global_dim + self.time_dim + self.rate_dim

    @property
    def min_points(self):
        return self.level_points[-1]

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


PRESETS = {
    "desk": NetworkConfig(),
    "paper": NetworkConfig(
        level_points=(1024, 256, 64, 16),
        cnet_channels=(64, 128, 256, 512),
        nnet_channels=(128, 256, 256, 512),
        knn_k=16,
        heads=4,
        tm_latent=64,
        tm_ffn=256,
        global_dim=1024,
        time_dim=512,
        rate_rows=256,
        rate_dim=128,
    ),
}


def preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
