from __future__ import annotations

from collections import OrderedDict

import numpy as np

from ..autodiff import serialization
from ..autodiff.tensor import Tensor
from .config import ModelConfig


def architecture(cfg: ModelConfig) -> "OrderedDict[str, tuple]":
    """Parameter name -> shape table for ``cfg``, in initialisation order."""
    shapes: OrderedDict[str, tuple] = OrderedDict()
    C, D = cfg.base_channels, cfg.embed_dim

    def conv(name, cin, cout, k=3):
        shapes[f"{name}.weight"] = (cout, cin, k, k)
        shapes[f"{name}.bias"] = (cout,)

    def rb(name, c, hidden=None):
        conv(f"{name}.conv1", c, hidden or c)
        conv(f"{name}.conv2", hidden or c, c)

    def lin(name, din, dout):
        shapes[f"{name}.weight"] = (dout, din)
        shapes[f"{name}.bias"] = (dout,)

    def norm(name, d):
        shapes[f"{name}.gamma"] = (d,)
        shapes[f"{name}.beta"] = (d,)

    conv("head", cfg.bins, C)
    for i, j in enumerate(cfg.scales, start=1):
        conv(f"down{i}", cfg.channels(j) // 2, cfg.channels(j))

    for j in cfg.scales:
        c = cfg.channels(j)
        p = f"cdam{j}"
        rb(f"{p}.st_rb", c)
        conv(f"{p}.lstm", 2 * c, 4 * c, cfg.lstm_kernel)
        freq_in = 0
        if cfg.cdam_mode in ("full", "ll"):
            rb(f"{p}.ll_rb", c)
            freq_in += c
        if cfg.cdam_mode in ("full", "hf"):
            rb(f"{p}.hf_rb", 3 * c, c if cfg.hf_rb_width == "feature" else 3 * c)
            freq_in += 3 * c
        conv(f"{p}.reduce", freq_in, c)
        k, _, _ = cfg.patch_geometry(j)
        conv(f"{p}.embed_st", c, D, k)
        conv(f"{p}.embed_fr", c, D, k)
        for n in ("q", "k", "v", "o"):
            lin(f"{p}.{n}", D, D)
        norm(f"{p}.norm1", D)
        lin(f"{p}.ffn1", D, cfg.ffn_width)
        lin(f"{p}.ffn2", cfg.ffn_width, D)
        norm(f"{p}.norm2", D)

    top = cfg.channels(cfg.scales[-1])
    if top != D:
        conv("zproj", D, top, 1)

    for j in cfg.scales:
        rb(f"wsb{j}.rb", cfg.channels(j))
        rb(f"wsb{j}.hh_rb", cfg.channels(j))

    for i, j in enumerate(reversed(cfg.scales), start=1):
        c = cfg.channels(j)
        rb(f"rgd{i}.rb", c)
        conv(f"rgd{i}.adjust", c, c // 2)

    conv("pred", C, 1, 1)
    return shapes


class ModelWeights:
    """Named parameter collection plus the config that shaped it."""

    def __init__(self, config: ModelConfig, params: "OrderedDict[str, Tensor]"):
        self.config = config
        self.params = params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params.values())

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self):
        return self.params.items()

    def count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def astype(self, dtype) -> "ModelWeights":
        return ModelWeights(
            self.config,
            OrderedDict((n, Tensor(p.data, requires_grad=True, name=n, dtype=dtype)) for n, p in self.params.items()),
        )

    def copy(self) -> "ModelWeights":
        return self.astype(next(iter(self.params.values())).dtype)

    def to_arrays(self) -> dict:
        return {n: p.data for n, p in self.params.items()}

    def manifest(self) -> dict:
        return {f"model.{k}": v for k, v in self.config.to_dict().items()}

    def save(self, path, extra: dict | None = None) -> None:
        arrays = self.to_arrays()
        if extra:
            arrays.update(extra)
        serialization.save(path, arrays, self.manifest())

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: dict, dtype=np.float32) -> "ModelWeights":
        expected = architecture(config)
        params = OrderedDict()
        for name, shape in expected.items():
            if name not in arrays:
                raise KeyError(f"weights missing parameter {name!r}")
            arr = np.asarray(arrays[name])
            if tuple(arr.shape) != shape:
                raise ValueError(f"{name}: stored shape {arr.shape} != expected {shape}")
            params[name] = Tensor(arr, requires_grad=True, name=name, dtype=dtype)
        return cls(config, params)

    @classmethod
    def load(cls, path, dtype=np.float32) -> tuple["ModelWeights", dict]:
        """Load weights; returns them with any extra (non-parameter) arrays."""
        arrays, manifest = serialization.load(path)
        cfg = ModelConfig.from_dict({k[len("model."):]: v for k, v in manifest.items() if k.startswith("model.")})
        weights = cls.from_arrays(cfg, arrays, dtype)
        extra = {k: v for k, v in arrays.items() if k not in weights.params}
        return weights, extra


# layers whose output feeds a nonlinearity; every other weight is a linear output
_ACTIVATED = (".conv1.weight", ".lstm.weight", ".ffn1.weight")


def init_gain(name: str) -> float:
    """Variance gain: 2 ahead of an activation (He), 1 for linear outputs."""
    if name.startswith("down") or name.endswith(_ACTIVATED):
        return 2.0
    return 1.0


def init_weights(config: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelWeights:
    """Fan-in scaled uniform weights ``U(-sqrt(3 g / fan_in), +)``, zero biases,
    unit LayerNorm gain, ConvLSTM forget-gate bias 1."""
    rng = np.random.default_rng(seed)
    params = OrderedDict()
    for name, shape in architecture(config).items():
        if name.endswith(".weight"):
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(3.0 * init_gain(name) / fan_in)
            arr = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".gamma"):
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
            if name.endswith(".lstm.bias"):
                c = shape[0] // 4
                arr[c : 2 * c] = 1.0  # gate order: input, forget, output, cell
        params[name] = Tensor(arr, requires_grad=True, name=name, dtype=dtype)
    return ModelWeights(config, params)
