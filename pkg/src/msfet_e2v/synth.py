"""Toy scene simulator: moving textured shapes over a textured background,
with ideal log-intensity events and exact ground-truth flow."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .events import EventStream

LOG_EPS = 1e-3


@dataclass
class SceneObject:
    kind: str  # "rect" or "disc"
    position: np.ndarray  # top-left (x, y) at t=0, pixels
    velocity: np.ndarray  # (vx, vy), px/s
    size: tuple[int, int]  # (w, h)
    texture: np.ndarray  # [h, w] intensities

    def offset(self, t: float) -> np.ndarray:
        return self.position + self.velocity * t

    def contains(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        w, h = self.size
        if self.kind == "disc":
            r = min(w, h) / 2.0
            return (u - (w - 1) / 2.0) ** 2 + (v - (h - 1) / 2.0) ** 2 <= r * r
        return (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)


@dataclass
class SceneConfig:
    height: int = 32
    width: int = 32
    fps: float = 50.0
    duration: float = 0.2
    theta: float = 0.2
    seed: int = 0
    n_objects: int = 2
    max_speed: float = 60.0  # px/s
    background_velocity: tuple[float, float] = (0.0, 0.0)
    static: bool = False
    integer_motion: bool = False  # round per-frame displacements to whole pixels

    def __post_init__(self):
        if self.theta <= 0:
            raise ValueError("contrast threshold must be positive")
        if self.fps <= 0:
            raise ValueError("frame rate must be positive")


@dataclass
class Scene:
    config: SceneConfig
    background: np.ndarray  # larger than the canvas by `margin` on every side
    margin: int
    objects: list[SceneObject] = field(default_factory=list)


@dataclass
class SyntheticSequence:
    frames: list  # [1, H, W] float64 in [0, 1]
    frame_times: np.ndarray
    flows: list  # flows[k-1] maps frame k-1 onto frame k, [2, H, W]
    events: EventStream
    scene: Scene | None = None


def _texture(rng, h: int, w: int, lo: float, hi: float, blur: float) -> np.ndarray:
    tex = gaussian_filter(rng.uniform(0.0, 1.0, (h, w)), blur, mode="wrap")
    tex = (tex - tex.min()) / max(tex.max() - tex.min(), 1e-12)
    return lo + (hi - lo) * tex


def build_scene(cfg: SceneConfig) -> Scene:
    rng = np.random.default_rng(cfg.seed)
    margin = int(np.ceil(max(abs(v) for v in cfg.background_velocity) * cfg.duration)) + 2
    bg = _texture(rng, cfg.height + 2 * margin, cfg.width + 2 * margin, 0.25, 0.6, 3.0)
    objects = []
    for _ in range(cfg.n_objects):
        w = int(rng.integers(max(4, cfg.width // 5), max(5, cfg.width // 2)))
        h = int(rng.integers(max(4, cfg.height // 5), max(5, cfg.height // 2)))
        kind = "rect" if rng.uniform() < 0.5 else "disc"
        pos = np.array([rng.integers(0, max(1, cfg.width - w)), rng.integers(0, max(1, cfg.height - h))], float)
        vel = rng.uniform(-cfg.max_speed, cfg.max_speed, 2)
        if cfg.static:
            vel[:] = 0.0
        elif cfg.integer_motion:
            vel = np.round(vel / cfg.fps) * cfg.fps
        lo = rng.uniform(0.05, 0.3)
        tex = _texture(rng, h, w, lo, lo + rng.uniform(0.4, 0.65), 1.5)
        objects.append(SceneObject(kind, pos, vel, (w, h), tex))
    if cfg.static:
        cfg = SceneConfig(**{**cfg.__dict__, "background_velocity": (0.0, 0.0)})
    return Scene(cfg, bg, margin, objects)


def _sample(tex: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    h, w = tex.shape
    xs = np.clip(xs, 0.0, w - 1)
    ys = np.clip(ys, 0.0, h - 1)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx, fy = xs - x0, ys - y0
    return (
        tex[y0, x0] * (1 - fx) * (1 - fy)
        + tex[y0, x1] * fx * (1 - fy)
        + tex[y1, x0] * (1 - fx) * fy
        + tex[y1, x1] * fx * fy
    )


def _owners(scene: Scene, t: float):
    """Per-pixel index of the topmost object at time t (-1 for background) and local coords."""
    cfg = scene.config
    ys, xs = np.meshgrid(np.arange(cfg.height, dtype=float), np.arange(cfg.width, dtype=float), indexing="ij")
    owner = np.full(xs.shape, -1)
    for i, obj in enumerate(scene.objects):
        ox, oy = obj.offset(t)
        owner[obj.contains(xs - ox, ys - oy)] = i
    return owner, xs, ys


def render_frame(scene: Scene, t: float) -> np.ndarray:
    """Intensity image ``[1, H, W]`` at time ``t``."""
    bvx, bvy = scene.config.background_velocity
    owner, xs, ys = _owners(scene, t)
    img = _sample(scene.background, xs - bvx * t + scene.margin, ys - bvy * t + scene.margin)
    for i, obj in enumerate(scene.objects):
        m = owner == i
        if m.any():
            ox, oy = obj.offset(t)
            img[m] = _sample(obj.texture, xs[m] - ox, ys[m] - oy)
    return img[None]


def analytic_flow(scene: Scene, t_a: float, t_b: float) -> np.ndarray:
    """Flow ``[2, H, W]`` on the grid of the frame at ``t_b``.

    Each pixel holds where its content sat at ``t_a`` relative to itself,
    ``-v * (t_b - t_a)`` for the object (or background) owning it at ``t_b``,
    so that ``bilinear_warp(frame(t_a), flow)`` reproduces ``frame(t_b)``.
    """
    dt = t_b - t_a
    owner, _, _ = _owners(scene, t_b)
    flow = np.empty((2,) + owner.shape)
    flow[0] = -scene.config.background_velocity[0] * dt
    flow[1] = -scene.config.background_velocity[1] * dt
    for i, obj in enumerate(scene.objects):
        m = owner == i
        flow[0][m] = -obj.velocity[0] * dt
        flow[1][m] = -obj.velocity[1] * dt
    return flow


def events_between(frame_a, frame_b, t_a: float, t_b: float, theta: float) -> EventStream:
    """Ideal events for the log-intensity change from ``frame_a`` to ``frame_b``.

    A pixel whose log intensity moves by ``delta`` fires ``floor(|delta|/theta)``
    events of polarity ``sign(delta)`` at linearly interpolated times.
    """
    if theta <= 0:
        raise ValueError("contrast threshold must be positive")
    a = np.asarray(frame_a, dtype=np.float64).reshape(np.shape(frame_a)[-2:])
    b = np.asarray(frame_b, dtype=np.float64).reshape(a.shape)
    delta = np.log(b + LOG_EPS) - np.log(a + LOG_EPS)
    counts = np.floor(np.abs(delta) / theta).astype(np.int64)
    ys, xs = np.nonzero(counts)
    n = counts[ys, xs]
    if n.sum() == 0:
        return EventStream.empty(*a.shape)
    rep = np.repeat(np.arange(ys.size), n)
    k = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n) + 1
    d = np.abs(delta[ys, xs])[rep]
    t = t_a + (k * theta / d) * (t_b - t_a)
    ex, ey = xs[rep], ys[rep]
    p = np.sign(delta[ys, xs])[rep].astype(np.int64)
    order = np.lexsort((ex, ey, t))
    return EventStream(t[order], ex[order], ey[order], p[order], a.shape[0], a.shape[1])


def concat_streams(streams, height: int, width: int) -> EventStream:
    streams = list(streams)
    if not streams:
        return EventStream.empty(height, width)
    return EventStream(
        np.concatenate([s.t for s in streams]),
        np.concatenate([s.x for s in streams]),
        np.concatenate([s.y for s in streams]),
        np.concatenate([s.p for s in streams]),
        height, width,
    )


def generate_sequence(cfg: SceneConfig) -> SyntheticSequence:
    scene = build_scene(cfg)
    n = int(round(cfg.duration * cfg.fps))
    times = np.arange(n + 1) / cfg.fps
    frames = [render_frame(scene, float(t)) for t in times]
    flows = [analytic_flow(scene, float(times[k - 1]), float(times[k])) for k in range(1, n + 1)]
    streams = [
        events_between(frames[k - 1], frames[k], float(times[k - 1]), float(times[k]), cfg.theta)
        for k in range(1, n + 1)
    ]
    return SyntheticSequence(frames, times, flows, concat_streams(streams, cfg.height, cfg.width), scene)
