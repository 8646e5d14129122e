from __future__ import annotations

from dataclasses import asdict, dataclass, fields


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 32
    bins: int = 5
    embed_dim: int = 256
    heads: int = 8
    depth: int = 3
    leaky_slope: float = 0.01
    # "model": divide scores by sqrt(embed_dim); "head": by sqrt(embed_dim / heads)
    attn_scale: str = "model"
    # frequency path inside each attention module: "full" (LL + HF), "ll", "hf"
    cdam_mode: str = "full"
    lstm_kernel: int = 1
    ffn_hidden: int = 0  # 0 -> embed_dim
    # hidden width of the residual block on concatenated LH/HL/HH: "feature" (= scale width) or "full"
    hf_rb_width: str = "feature"
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.depth not in (1, 2, 3, 4):
            raise ConfigError(f"depth must be in 1..4, got {self.depth}")
        if self.bins < 2:
            raise ConfigError(f"bins must be >= 2, got {self.bins}")
        if self.attn_scale not in ("model", "head"):
            raise ConfigError(f"attn_scale must be 'model' or 'head', got {self.attn_scale!r}")
        if self.cdam_mode not in ("full", "ll", "hf"):
            raise ConfigError(f"cdam_mode must be full/ll/hf, got {self.cdam_mode!r}")
        if self.hf_rb_width not in ("feature", "full"):
            raise ConfigError(f"hf_rb_width must be 'feature' or 'full', got {self.hf_rb_width!r}")
        if self.lstm_kernel % 2 == 0:
            raise ConfigError("lstm_kernel must be odd")

    @property
    def scales(self) -> tuple[int, ...]:
        return tuple(2**i for i in range(1, self.depth + 1))

    @property
    def pad_multiple(self) -> int:
        # deepest feature map is H / 2**depth and must still be even for the DWT
        return 2 ** (self.depth + 1)

    @property
    def ffn_width(self) -> int:
        return self.ffn_hidden or self.embed_dim

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    def channels(self, scale: int) -> int:
        return scale * self.base_channels

    def patch_geometry(self, scale: int) -> tuple[int, int, int]:
        """(kernel, stride, padding) mapping scale ``scale`` onto the coarsest grid."""
        stride = 2**self.depth // scale
        if stride == 1:
            return 3, 1, 1
        return 2 * stride - 1, stride, stride - 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for k, v in d.items():
            if k not in known:
                raise ConfigError(f"unknown model config key {k!r}")
            default = getattr(cls, k)
            kwargs[k] = type(default)(v) if not isinstance(v, type(default)) else v
        return cls(**kwargs)


TINY = ModelConfig(base_channels=8, embed_dim=64, heads=4)
