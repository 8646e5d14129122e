"""``msfet-e2v`` command-line entry point."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import bench, selftest
from .autodiff.optim import Adam
from .autodiff.tensor import set_default_dtype
from .config import RunConfig, RunConfigError, parse_grouping
from .evaluation import frame_metrics, grouping_sweep
from .events import (
    EventStream, encode_voxel, format_binary, format_text, group_by_frames, group_fixed_count,
    group_fixed_duration, parse_events,
)
from .formats import read_flow, read_pgm, read_voxel, write_flow, write_metrics_csv, write_pgm, write_voxel
from .model.weights import ModelWeights, init_weights
from .synth import generate_sequence
from .training import TrainingData, reconstruct, train

log = logging.getLogger("msfet_e2v")

EVENT_FILES = {"text": "events.txt", "binary": "events.bin"}


# -- helpers ---------------------------------------------------------------------------------


def _setup_logging(out_dir: Path | None, verbose: bool) -> None:
    root = logging.getLogger()
    root.handlers.clear()
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.DEBUG if verbose else logging.WARNING)
    root.addHandler(console)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        fh = logging.FileHandler(out_dir / "run.log", mode="w", encoding="utf-8")
        fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        root.addHandler(fh)


def _dtype(cfg: RunConfig):
    return np.float64 if cfg["precision"] == "f64" else np.float32


def read_events(path, cfg: RunConfig) -> EventStream:
    path = Path(path)
    data = path.read_bytes()
    fmt = "binary" if data[:4] == b"EVR1" else "text-csv"
    h = cfg["sensor.height"] or None
    w = cfg["sensor.width"] or None
    stream = parse_events(data if fmt == "binary" else data.decode("utf-8"), fmt, h, w,
                          time_unit=cfg["events.time_unit"], order_tolerance=cfg["events.order_tolerance"])
    if stream.height is None or stream.width is None:
        raise RunConfigError(f"{path}: sensor size unknown; add a '# H=.. W=..' header or set sensor.height/width")
    return stream


def _frame_times(events_path: Path, explicit: str | None) -> np.ndarray:
    manifest = Path(explicit) if explicit else events_path.parent / "manifest.json"
    if not manifest.exists():
        raise RunConfigError(f"grouping 'frames' needs frame times; {manifest} not found (use --frames)")
    return np.asarray(json.loads(manifest.read_text())["frame_times"], dtype=np.float64)


def make_groups(stream: EventStream, grouping: str, events_path: Path, frames_manifest: str | None):
    kind, arg = parse_grouping(grouping)
    if kind == "frames":
        return group_by_frames(stream, _frame_times(events_path, frames_manifest))
    if kind == "duration":
        return group_fixed_duration(stream, arg)
    return group_fixed_count(stream, int(arg))


def _load_or_init(weights_path, cfg: RunConfig) -> tuple[ModelWeights, dict]:
    if weights_path:
        return ModelWeights.load(weights_path, _dtype(cfg))
    return init_weights(cfg.model_config(), cfg["seed"], _dtype(cfg)), {}


def _pgms(directory) -> list[Path]:
    files = sorted(Path(directory).glob("*.pgm"))
    if not files:
        raise FileNotFoundError(f"no .pgm frames in {directory}")
    return files


# -- commands --------------------------------------------------------------------------------


def cmd_gen(cfg: RunConfig, out: Path, fmt: str) -> None:
    scene_cfg = cfg.scene_config()
    seq = generate_sequence(scene_cfg)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "flows").mkdir(exist_ok=True)
    name = EVENT_FILES[fmt]
    if fmt == "text":
        (out / name).write_text(format_text(seq.events), encoding="utf-8")
    else:
        (out / name).write_bytes(format_binary(seq.events))
    for k, frame in enumerate(seq.frames):
        write_pgm(out / "frames" / f"frame_{k:05d}.pgm", frame)
    for k, flow in enumerate(seq.flows, start=1):
        write_flow(out / "flows" / f"flow_{k:05d}.flo", flow)
    manifest = {
        "height": scene_cfg.height, "width": scene_cfg.width, "events": name, "event_count": seq.events.count,
        "frame_times": [float(t) for t in seq.frame_times],
        "frames": [f"frames/frame_{k:05d}.pgm" for k in range(len(seq.frames))],
        "flows": [f"flows/flow_{k:05d}.flo" for k in range(1, len(seq.frames))],
        "scene": {k: v for k, v in cfg.values.items() if k.startswith("scene.")} | {"seed": cfg["seed"]},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(seq.frames)} frames, {seq.events.count} events to {out}")


def cmd_encode(cfg: RunConfig, events: Path, out: Path, frames: str | None) -> None:
    stream = read_events(events, cfg)
    groups = make_groups(stream, cfg["grouping"], events, frames)
    bins = cfg["model.bins"]
    out.mkdir(parents=True, exist_ok=True)
    for g in groups:
        vox = encode_voxel(g, bins, stream.height, stream.width)
        write_voxel(out / f"voxel_{g.index:05d}.vox", vox.values)
        log.info("group %d: %d events, mass %.1f", g.index, g.events.count, float(vox.values.sum()))
    print(f"wrote {len(groups)} voxel grids ({bins} bins) to {out}")


def cmd_reconstruct(cfg: RunConfig, events: Path, out: Path, weights_path: str | None, frames: str | None) -> None:
    weights, _ = _load_or_init(weights_path, cfg)
    if events.is_dir():
        voxels = [read_voxel(p) for p in sorted(events.glob("*.vox"))]
    else:
        stream = read_events(events, cfg)
        groups = make_groups(stream, cfg["grouping"], events, frames)
        voxels = [encode_voxel(g, weights.config.bins, stream.height, stream.width).values for g in groups]
    out.mkdir(parents=True, exist_ok=True)
    state, times = None, []
    for k, v in enumerate(voxels):
        t0 = time.perf_counter()
        (img,), state = reconstruct(weights, [v], state)
        times.append(time.perf_counter() - t0)
        if not np.all(np.isfinite(img)):
            raise FloatingPointError(f"frame {k}: non-finite output")
        write_pgm(out / f"frame_{k:05d}.pgm", np.clip(img, 0.0, 1.0))
    with open(out / "timing.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["frame_index", "ms"])
        wr.writerows([k, f"{t * 1000:.3f}"] for k, t in enumerate(times))
    mean_ms = 1000 * float(np.mean(times)) if times else 0.0
    print(f"reconstructed {len(voxels)} frames to {out}; mean {mean_ms:.1f} ms/frame")


def load_dataset(root: Path, bins: int) -> TrainingData:
    manifest = json.loads((root / "manifest.json").read_text())
    cfg = RunConfig({"sensor.height": manifest["height"], "sensor.width": manifest["width"]})
    stream = read_events(root / manifest["events"], cfg)
    frames = [read_pgm(root / f) for f in manifest["frames"]]
    flows = [read_flow(root / f) for f in manifest["flows"]]
    groups = group_by_frames(stream, manifest["frame_times"])
    voxels = [encode_voxel(g, bins, manifest["height"], manifest["width"]).values for g in groups]
    return TrainingData(voxels, frames[1:], [None] + flows[1:])


def cmd_train_toy(cfg: RunConfig, dataset: Path, out: Path, resume: str | None) -> None:
    if resume:
        weights, extra = ModelWeights.load(resume, _dtype(cfg))
        opt = Adam(weights.parameters(), lr=cfg["train.lr"])
        opt.load_state_arrays(extra)
    else:
        weights = init_weights(cfg.model_config(), cfg["seed"], _dtype(cfg))
        opt = None
    data = load_dataset(dataset, weights.config.bins)
    out.mkdir(parents=True, exist_ok=True)
    curve = out / "loss.csv"
    mode = "a" if resume and curve.exists() else "w"
    with open(curve, mode, newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        if mode == "w":
            wr.writerow(["step", "loss"])

        def on_step(step, value):
            if not np.isfinite(value):
                raise FloatingPointError(f"step {step}: non-finite loss")
            wr.writerow([step, f"{value:.8f}"])
            fh.flush()
            log.info("step %d loss %.6f", step, value)

        losses, opt = train(weights, data, cfg["train.steps"], cfg["train.lr"], cfg["train.unroll"],
                            cfg.loss_config(), opt, on_step)
    weights.save(out / "weights.wts", opt.state_arrays())
    print(f"trained {len(losses)} steps (total {opt.t}); loss {losses[0]:.5f} -> {losses[-1]:.5f}" if losses
          else "trained 0 steps")


def cmd_eval(cfg: RunConfig, recon: Path, gt: Path, out: Path) -> None:
    rec_files = _pgms(recon)
    gt_files = _pgms(gt)[cfg["eval.gt_start"]:]
    rows = frame_metrics([read_pgm(p) for p in rec_files], [read_pgm(p) for p in gt_files], cfg["eval.normalize"])
    mean_psnr, mean_ssim = write_metrics_csv(out, rows)
    print(f"{len(rows)} frames: mean PSNR {mean_psnr:.3f} dB, mean SSIM {mean_ssim:.4f} -> {out}")


def cmd_bench(cfg: RunConfig, weights_path: str | None) -> None:
    weights, _ = _load_or_init(weights_path, cfg)
    results = [bench.bench_resolution(weights, s, cfg["bench.repeats"], cfg["seed"]) for s in cfg.int_list("bench.resolutions")]
    print(bench.format_report(weights, results))


def cmd_sweep(cfg: RunConfig, out: Path, weights_path: str | None) -> None:
    weights, _ = _load_or_init(weights_path, cfg)
    from .evaluation import sweep_scene

    summary = grouping_sweep(weights, out, cfg.int_list("sweep.durations_ms"), cfg.int_list("sweep.counts"),
                             sweep_scene(cfg["seed"]), cfg["eval.normalize"])
    for label, (p, s) in summary.items():
        print(f"{label}: mean PSNR {p:.3f} dB, mean SSIM {s:.4f}")


# -- argument parsing ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="key = value run configuration file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--precision", choices=("f32", "f64"), default=argparse.SUPPRESS)
    common.add_argument("--set", action="append", default=argparse.SUPPRESS, metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="msfet-e2v", parents=[common], description="Event-to-video reconstruction engine")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic sequence")
    g.add_argument("--out", required=True, type=Path)
    g.add_argument("--format", choices=("text", "binary"), default=None)
    g.add_argument("--static", action="store_true", help="no motion, so no events")

    e = sub.add_parser("encode", parents=[common], help="group events and write voxel grids")
    e.add_argument("events", type=Path)
    e.add_argument("--out", required=True, type=Path)
    e.add_argument("--grouping", default=None, help="frames | duration:<ms> | count:<n>")
    e.add_argument("--bins", type=int, default=None)
    e.add_argument("--frames", default=None, help="manifest.json with frame_times (frames grouping)")

    r = sub.add_parser("reconstruct", parents=[common], help="reconstruct frames from events or voxel dumps")
    r.add_argument("events", type=Path, help="event file or a directory of .vox files")
    r.add_argument("--out", required=True, type=Path)
    r.add_argument("--weights", default=None)
    r.add_argument("--grouping", default=None)
    r.add_argument("--frames", default=None)

    t = sub.add_parser("train-toy", parents=[common], help="train on a generated dataset")
    t.add_argument("dataset", type=Path)
    t.add_argument("--out", required=True, type=Path)
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--unroll", type=int, default=None)
    t.add_argument("--resume", default=None, help="weights file written by an earlier run")

    v = sub.add_parser("eval", parents=[common], help="PSNR/SSIM of reconstructions against ground truth")
    v.add_argument("recon", type=Path)
    v.add_argument("gt", type=Path)
    v.add_argument("--out", type=Path, default=Path("metrics.csv"))
    v.add_argument("--no-normalize", action="store_true", help="skip per-sequence [0,1] normalization")
    v.add_argument("--gt-start", type=int, default=None, help="skip this many leading ground-truth frames")

    s = sub.add_parser("selftest", parents=[common], help="run the invariant suite")
    s.add_argument("--inject-fault", default=None, help=argparse.SUPPRESS)

    b = sub.add_parser("bench", parents=[common], help="forward-pass timing")
    b.add_argument("--weights", default=None)
    b.add_argument("--resolutions", default=None, help="comma separated square sizes")

    w = sub.add_parser("sweep", parents=[common], help="duration/count grouping sweep on synthetic data")
    w.add_argument("--out", required=True, type=Path)
    w.add_argument("--weights", default=None)
    return p


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise RunConfigError(f"--set expects KEY=VALUE, got {item!r}")
        cfg.set(key.strip(), value.strip())
    if getattr(args, "seed", None) is not None:
        cfg.set("seed", args.seed)
    if getattr(args, "precision", None):
        cfg.set("precision", args.precision)
    overrides = {
        "format": "events.format", "grouping": "grouping", "bins": "model.bins", "steps": "train.steps",
        "unroll": "train.unroll", "gt_start": "eval.gt_start", "resolutions": "bench.resolutions",
    }
    for attr, key in overrides.items():
        if getattr(args, attr, None) is not None:
            cfg.set(key, getattr(args, attr))
    if getattr(args, "static", False):
        cfg.set("scene.static", True)
    if getattr(args, "no_normalize", False):
        cfg.set("eval.normalize", False)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        out = getattr(args, "out", None)
        log_dir = out if args.command in ("gen", "encode", "reconstruct", "train-toy", "sweep") else None
        _setup_logging(log_dir, getattr(args, "verbose", False))
        log.info("command %s", args.command)
        cfg.log_values()
        set_default_dtype(cfg["precision"])

        if args.command == "gen":
            cmd_gen(cfg, out, cfg["events.format"])
        elif args.command == "encode":
            cmd_encode(cfg, args.events, out, args.frames)
        elif args.command == "reconstruct":
            cmd_reconstruct(cfg, args.events, out, args.weights, args.frames)
        elif args.command == "train-toy":
            cmd_train_toy(cfg, args.dataset, out, args.resume)
        elif args.command == "eval":
            cmd_eval(cfg, args.recon, args.gt, out)
        elif args.command == "selftest":
            return 0 if selftest.run(args.inject_fault) else 1
        elif args.command == "bench":
            cmd_bench(cfg, args.weights)
        elif args.command == "sweep":
            cmd_sweep(cfg, out, args.weights)
    except (RunConfigError, ValueError, FileNotFoundError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
