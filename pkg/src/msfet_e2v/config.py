"""Flat ``key = value`` run configuration shared by every CLI command."""
from __future__ import annotations

import logging
from pathlib import Path

from .losses import LossConfig
from .model.config import ModelConfig
from .synth import SceneConfig

log = logging.getLogger(__name__)

DEFAULTS: dict = {
    "seed": 0,
    "precision": "f32",
    "grouping": "frames",
    # model
    "model.base_channels": 32,
    "model.bins": 5,
    "model.embed_dim": 256,
    "model.heads": 8,
    "model.depth": 3,
    "model.leaky_slope": 0.01,
    "model.attn_scale": "model",
    "model.cdam_mode": "full",
    "model.lstm_kernel": 1,
    "model.ffn_hidden": 0,
    "model.hf_rb_width": "feature",
    # loss
    "loss.lambda_tc": 5.0,
    "loss.alpha": 50.0,
    "loss.l0": 2,
    "loss.distance": "l1ssim",
    "loss.occlusion": "pixel",
    # training
    "train.unroll": 8,
    "train.steps": 300,
    "train.lr": 1e-4,
    # synthetic scene
    "scene.height": 32,
    "scene.width": 32,
    "scene.fps": 50.0,
    "scene.duration": 0.2,
    "scene.theta": 0.2,
    "scene.n_objects": 2,
    "scene.max_speed": 60.0,
    "scene.static": False,
    # event files
    "events.format": "text",
    "events.time_unit": "s",
    "events.order_tolerance": 0.0,
    "sensor.height": 0,
    "sensor.width": 0,
    # evaluation
    "eval.normalize": True,
    "eval.gt_start": 0,
    # benchmarking
    "bench.resolutions": "64,128",
    "bench.repeats": 3,
    # grouping sweep
    "sweep.durations_ms": "10,20,30,40,50,60,70,80,90,100",
    "sweep.counts": "5000,10000,15000,20000,25000,30000,35000,40000,45000",
}


class RunConfigError(ValueError):
    pass


def _coerce(key: str, value, default):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        s = str(value).strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise RunConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        return type(default)(value)
    except (TypeError, ValueError):
        raise RunConfigError(f"{key}: expected {type(default).__name__}, got {value!r}") from None


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise RunConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


class RunConfig:
    def __init__(self, overrides: dict | None = None):
        self.values = dict(DEFAULTS)
        for k, v in (overrides or {}).items():
            self.set(k, v)

    def set(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise RunConfigError(f"unknown config key {key!r}")
        self.values[key] = _coerce(key, value, DEFAULTS[key])

    def __getitem__(self, key: str):
        return self.values[key]

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls(parse_config_text(Path(path).read_text(encoding="utf-8")))

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in sorted(self.values.items()))

    def log_values(self, logger=log) -> None:
        for k, v in sorted(self.values.items()):
            logger.info("config %s = %s", k, v)

    def section(self, prefix: str) -> dict:
        return {k[len(prefix) + 1 :]: v for k, v in self.values.items() if k.startswith(prefix + ".")}

    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.section("model"))

    def loss_config(self) -> LossConfig:
        s = self.section("loss")
        return LossConfig(
            lambda_tc=s["lambda_tc"], alpha=s["alpha"], unroll=max(self["train.unroll"], s["l0"]),
            l0=s["l0"], distance=s["distance"], occlusion=s["occlusion"],
        )

    def scene_config(self) -> SceneConfig:
        s = self.section("scene")
        return SceneConfig(
            height=s["height"], width=s["width"], fps=s["fps"], duration=s["duration"], theta=s["theta"],
            seed=self["seed"], n_objects=s["n_objects"], max_speed=s["max_speed"], static=s["static"],
        )

    def int_list(self, key: str) -> list[int]:
        return [int(float(v)) for v in str(self[key]).split(",") if v.strip()]


def parse_grouping(text: str) -> tuple[str, float]:
    """``frames`` | ``duration:<ms>`` | ``count:<n>``."""
    text = text.strip()
    if text == "frames":
        return "frames", 0.0
    kind, _, arg = text.partition(":")
    if kind == "duration" and arg:
        return "duration", float(arg) / 1000.0
    if kind == "count" and arg:
        return "count", int(arg)
    raise RunConfigError(f"grouping must be frames, duration:<ms> or count:<n>, got {text!r}")
