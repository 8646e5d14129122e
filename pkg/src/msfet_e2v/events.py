"""Event streams: parsing, temporal grouping and voxel-grid encoding."""
from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field

import numpy as np

EVENT_MAGIC = b"EVR1"
_BIN_DTYPE = np.dtype([("t", "<f8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])
_HEADER_RE = re.compile(r"#\s*H\s*=\s*(\d+)\s+W\s*=\s*(\d+)")


class EventParseError(ValueError):
    pass


class EventOrderError(ValueError):
    pass


class EventBoundsError(ValueError):
    pass


@dataclass(frozen=True)
class Event:
    t: float
    x: int
    y: int
    p: int


@dataclass
class EventStream:
    """Columnar event storage; ``t`` in seconds, ``p`` in {+1, -1}."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    height: int | None = None
    width: int | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.x = np.asarray(self.x, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.p = np.asarray(self.p, dtype=np.int64)

    @property
    def count(self) -> int:
        return int(self.t.size)

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, i: int) -> Event:
        return Event(float(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def __iter__(self):
        return (self[i] for i in range(self.count))

    def select(self, mask_or_slice) -> "EventStream":
        return EventStream(
            self.t[mask_or_slice], self.x[mask_or_slice], self.y[mask_or_slice], self.p[mask_or_slice],
            self.height, self.width,
        )

    @classmethod
    def empty(cls, height=None, width=None) -> "EventStream":
        z = np.zeros(0)
        return cls(z, z, z, z, height, width)

    @classmethod
    def from_events(cls, events, height=None, width=None) -> "EventStream":
        events = list(events)
        if not events:
            return cls.empty(height, width)
        t, x, y, p = zip(*((e.t, e.x, e.y, e.p) for e in events))
        return cls(np.array(t), np.array(x), np.array(y), np.array(p), height, width)


@dataclass
class EventGroup:
    """Events inside the half-open window ``(t_start, t_end]``."""

    events: EventStream
    t_start: float
    t_end: float
    index: int = 0

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


@dataclass
class VoxelGrid:
    values: np.ndarray  # [B, H, W], float64
    meta: dict = field(default_factory=dict)

    @property
    def bins(self) -> int:
        return self.values.shape[0]


# -- parsing -------------------------------------------------------------------

def _validate(stream: EventStream, order_tolerance: float) -> None:
    if stream.count == 0:
        return
    bad = np.flatnonzero(~np.isin(stream.p, (-1, 1)))
    if bad.size:
        raise EventParseError(f"event {bad[0]}: polarity must be +1 or -1, got {stream.p[bad[0]]}")
    if not np.isfinite(stream.t).all() or (stream.t < 0).any():
        i = int(np.flatnonzero(~np.isfinite(stream.t) | (stream.t < 0))[0])
        raise EventParseError(f"event {i}: timestamp must be finite and non-negative")
    drops = np.flatnonzero(np.diff(stream.t) < -order_tolerance)
    if drops.size:
        i = int(drops[0]) + 1
        raise EventOrderError(f"event {i}: timestamp {stream.t[i]} precedes {stream.t[i - 1]}")
    if stream.height is not None and stream.width is not None:
        oob = np.flatnonzero(
            (stream.x < 0) | (stream.x >= stream.width) | (stream.y < 0) | (stream.y >= stream.height)
        )
        if oob.size:
            i = int(oob[0])
            raise EventBoundsError(
                f"event {i}: ({stream.x[i]}, {stream.y[i]}) outside {stream.width}x{stream.height} sensor"
            )


def parse_text(text: str, height=None, width=None, time_unit: str = "s", order_tolerance: float = 0.0) -> EventStream:
    ts, xs, ys, ps = [], [], [], []
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _HEADER_RE.match(line)
            if m:
                height, width = int(m.group(1)), int(m.group(2))
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise EventParseError(f"line {lineno}: expected 't,x,y,p', got {raw!r}")
        try:
            ts.append(float(parts[0]))
            xs.append(int(parts[1]))
            ys.append(int(parts[2]))
            ps.append(int(parts[3]))
        except ValueError as exc:
            raise EventParseError(f"line {lineno}: {exc}") from None
        rows.append(lineno)
    t = np.array(ts, dtype=np.float64)
    if time_unit == "us":
        t = t * 1e-6
    stream = EventStream(t, np.array(xs), np.array(ys), np.array(ps), height, width)
    try:
        _validate(stream, order_tolerance)
    except (EventOrderError, EventBoundsError, EventParseError) as exc:
        # report the source line, not the event index
        m = re.match(r"event (\d+): (.*)", str(exc))
        if m:
            raise type(exc)(f"line {rows[int(m.group(1))]}: {m.group(2)}") from None
        raise
    return stream


def parse_binary(buf: bytes, time_unit: str = "s", order_tolerance: float = 0.0) -> EventStream:
    if len(buf) < 20 or buf[:4] != EVENT_MAGIC:
        raise EventParseError("offset 0: missing EVR1 magic")
    h, w, n = struct.unpack_from("<IIQ", buf, 4)
    need = 20 + n * _BIN_DTYPE.itemsize
    if len(buf) < need:
        raise EventParseError(f"offset {len(buf)}: truncated, expected {need} bytes for {n} events")
    rec = np.frombuffer(buf, dtype=_BIN_DTYPE, count=n, offset=20)
    t = rec["t"].astype(np.float64)
    if time_unit == "us":
        t = t * 1e-6
    stream = EventStream(t, rec["x"], rec["y"], rec["p"], h, w)
    try:
        _validate(stream, order_tolerance)
    except (EventOrderError, EventBoundsError, EventParseError) as exc:
        m = re.match(r"event (\d+): (.*)", str(exc))
        if m:
            off = 20 + int(m.group(1)) * _BIN_DTYPE.itemsize
            raise type(exc)(f"offset {off}: {m.group(2)}") from None
        raise
    return stream


def parse_events(data: bytes | str, fmt: str = "text-csv", height=None, width=None,
                 time_unit: str = "s", order_tolerance: float = 0.0) -> EventStream:
    """Parse an event file body. ``fmt`` is ``text-csv`` or ``binary``."""
    if fmt in ("text-csv", "text", "csv"):
        text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
        return parse_text(text, height, width, time_unit, order_tolerance)
    if fmt in ("binary", "bin"):
        return parse_binary(bytes(data), time_unit, order_tolerance)
    raise ValueError(f"unknown event format {fmt!r}")


def format_text(stream: EventStream) -> str:
    lines = []
    if stream.height is not None and stream.width is not None:
        lines.append(f"# H={stream.height} W={stream.width}")
    lines += [f"{float(t)!r},{x},{y},{p}" for t, x, y, p in zip(stream.t, stream.x, stream.y, stream.p)]
    return "".join(line + "\n" for line in lines)


def format_binary(stream: EventStream) -> bytes:
    rec = np.empty(stream.count, dtype=_BIN_DTYPE)
    rec["t"], rec["x"], rec["y"], rec["p"] = stream.t, stream.x, stream.y, stream.p
    return EVENT_MAGIC + struct.pack("<IIQ", stream.height or 0, stream.width or 0, stream.count) + rec.tobytes()


# -- grouping --------------------------------------------------------------------

def group_by_frames(stream: EventStream, frame_times) -> list[EventGroup]:
    """Group k holds events with ``T[k-1] < t <= T[k]``."""
    ft = np.asarray(frame_times, dtype=np.float64)
    if ft.size < 2:
        raise ValueError("group_by_frames needs at least two frame times")
    if (np.diff(ft) <= 0).any():
        raise ValueError("frame times must be strictly increasing")
    # side="right" keeps t == T[k] in window k
    edges = np.searchsorted(stream.t, ft, side="right")
    return [
        EventGroup(stream.select(slice(edges[k - 1], edges[k])), float(ft[k - 1]), float(ft[k]), k - 1)
        for k in range(1, ft.size)
    ]


def group_fixed_duration(stream: EventStream, window: float) -> list[EventGroup]:
    if window <= 0:
        raise ValueError(f"window must be positive, got {window}")
    if stream.count == 0:
        return []
    t0 = float(stream.t[0])
    n = max(1, int(np.ceil((stream.t[-1] - t0) / window - 1e-12)))
    return group_by_frames(stream, t0 + window * np.arange(n + 1))


def group_fixed_count(stream: EventStream, n: int) -> list[EventGroup]:
    """Chunks of exactly ``n`` events; a trailing partial chunk is dropped."""
    if n < 1:
        raise ValueError(f"event count per group must be >= 1, got {n}")
    groups = []
    start = float(stream.t[0]) if stream.count else 0.0
    for k in range(stream.count // n):
        sub = stream.select(slice(k * n, (k + 1) * n))
        end = float(sub.t[-1])
        # all-simultaneous chunk: keep a positive window, every t* is then 0
        groups.append(EventGroup(sub, start, max(end, start + 1e-9), k))
        start = end
    return groups


# -- voxel encoding ------------------------------------------------------------

def normalized_timestamps(group: EventGroup, bins: int) -> np.ndarray:
    return (bins - 1) * (group.events.t - group.t_start) / group.duration


def encode_voxel(group: EventGroup, bins: int, height: int, width: int) -> VoxelGrid:
    """Temporal bilinear voxel grid ``[bins, H, W]``.

    Each event adds ``p * max(0, 1 - |b - t*|)`` to the two bins around its
    normalised timestamp ``t* = (bins-1)(t - t_start)/duration``.
    """
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    if not group.duration > 0:
        raise ValueError(f"group duration must be positive, got {group.duration}")
    vox = np.zeros(bins * height * width, dtype=np.float64)
    ev = group.events
    if ev.count:
        if (ev.x < 0).any() or (ev.x >= width).any() or (ev.y < 0).any() or (ev.y >= height).any():
            raise EventBoundsError(f"events fall outside the {width}x{height} grid")
        ts = normalized_timestamps(group, bins)
        lo = np.floor(ts).astype(np.int64)
        pix = ev.y * width + ev.x
        for b in (lo, lo + 1):
            wgt = ev.p * np.maximum(0.0, 1.0 - np.abs(b - ts))
            ok = (b >= 0) & (b < bins) & (wgt != 0)
            np.add.at(vox, b[ok] * height * width + pix[ok], wgt[ok])
    return VoxelGrid(vox.reshape(bins, height, width), {"t_start": group.t_start, "t_end": group.t_end})
