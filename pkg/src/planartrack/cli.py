"""Command-line front end.

One subcommand per pipeline stage; every invocation writes its outputs
atomically (temp file + rename) into --out together with a run.json
provenance record. Exit codes: 0 success, 1 domain error, 2 usage or I/O
error. PLANARTRACK_THREADS caps internal parallelism (0 or unset = auto).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, errors
from . import config as config_mod
from ._io import atomic_write_bytes as _atomic_write
from .geometry import (
    DistortionModel, estimate_distortion, estimate_homography,
    read_correspondences, read_polylines, reprojection_rms, write_calibration,
)
from .ingest import (
    attach_masks, filter_and_nms, group_by_frame, read_detections,
    read_mask_sidecar, write_detections,
)
from .metrics import evaluate_tracking
from .mosaic import (
    compose_mosaic, dedupe_canvas_detections, map_detection_to_canvas,
    read_layout, read_raster, warp_raster, write_raster,
)
from .simulate import ScenarioConfig, run_scenario
from .tracker import MultiObjectTracker

log = logging.getLogger("planartrack")


def thread_count() -> int:
    raw = os.environ.get("PLANARTRACK_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


# ---------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _require_inputs(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise FileNotFoundError(f"input not found: {p}")


def _write_run_record(args, effective_config: dict, inputs: list,
                      outputs: list[str]) -> None:
    record = {
        "subcommand": args.subcommand,
        "effective_config": effective_config,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs if p is not None},
        "outputs": sorted(outputs),
        "versions": {
            "planartrack": __version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
            "numpy": np.__version__,
        },
    }
    if not args.no_timestamp:
        record["timestamp"] = datetime.now(timezone.utc).isoformat()
    _atomic_write(Path(args.out) / "run.json",
                  (json.dumps(record, indent=2, sort_keys=True) + "\n").encode())


def _json_bytes(doc) -> bytes:
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode()


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        key, value = config_mod.parse_override(item)
        out[key] = value
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_calibrate(args) -> int:
    _require_inputs(args.correspondences, args.distortion_file)
    src, dst = read_correspondences(args.correspondences)
    h = estimate_homography(src, dst)
    rms = reprojection_rms(h, src, dst)
    if args.distortion_file:
        with open(args.distortion_file, "r", encoding="utf-8") as fh:
            distortion = DistortionModel.from_json_dict(json.load(fh))
    else:
        distortion = DistortionModel.identity()
    write_calibration(Path(args.out) / "calibration.json", args.camera_id,
                      h, distortion, rms)
    log.info("camera %s: rms %.6f", args.camera_id, rms)
    _write_run_record(args, {"camera_id": args.camera_id},
                      [args.correspondences, args.distortion_file],
                      ["calibration.json"])
    return 0


def cmd_distortion(args) -> int:
    _require_inputs(args.lines)
    lines = read_polylines(args.lines)
    center = tuple(float(v) for v in args.center.split(","))
    model, residual = estimate_distortion(lines, center, args.scale)
    doc = model.to_json_dict()
    doc["residual"] = residual
    _atomic_write(Path(args.out) / "distortion.json", _json_bytes(doc))
    log.info("k1=%.6f k2=%.6f residual=%.6g", model.k1, model.k2, residual)
    _write_run_record(args, {"center": list(center), "scale": args.scale},
                      [args.lines], ["distortion.json"])
    return 0


def cmd_mosaic(args) -> int:
    _require_inputs(args.layout)
    layout = read_layout(args.layout)
    frames_dir = Path(args.frames_dir)
    sources = {}
    for cam in layout.cameras:
        for ext in ("ppm", "pgm"):
            candidate = frames_dir / f"{cam.camera_id}.{ext}"
            if candidate.exists():
                sources[cam.camera_id] = candidate
                break
        else:
            raise FileNotFoundError(
                f"input not found: {frames_dir / (cam.camera_id + '.ppm')}")

    def warp_one(cam):
        return warp_raster(read_raster(sources[cam.camera_id]), cam, layout)

    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        warped = list(pool.map(warp_one, layout.cameras))
    mosaic = compose_mosaic(warped, layout)
    ext = "ppm" if mosaic.channels == 3 else "pgm"
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_raster(out / f"mosaic.{ext}", mosaic, out / "mosaic_validity.pgm")
    _write_run_record(args, {"threads": thread_count()},
                      [args.layout] + sorted(str(p) for p in sources.values()),
                      [f"mosaic.{ext}", "mosaic_validity.pgm"])
    return 0


def cmd_map_detections(args) -> int:
    _require_inputs(args.layout)
    layout = read_layout(args.layout)
    dets_dir = Path(args.dets_dir)
    cfg = config_mod.load_config(
        {"dedupe_iou": config_mod.MOSAIC_DEFAULTS["dedupe_iou"],
         "conf_min": config_mod.DETECTION_DEFAULTS["conf_min"],
         "nms_iou": config_mod.DETECTION_DEFAULTS["nms_iou"],
         "postprocess": False},
        args.config, _overrides(args))

    inputs = [args.layout]
    mapped = []
    canvas_size = (layout.canvas_width, layout.canvas_height)
    for cam in layout.cameras:
        path = dets_dir / f"{cam.camera_id}.csv"
        if not path.exists():
            continue
        inputs.append(str(path))
        records = read_detections(path)
        sidecar = dets_dir / f"{cam.camera_id}.masks.json"
        if sidecar.exists():
            records = attach_masks(records, read_mask_sidecar(sidecar))
            inputs.append(str(sidecar))
        if cfg["postprocess"]:
            processed = []
            for _, frame_records in sorted(group_by_frame(records).items()):
                processed.extend(filter_and_nms(
                    frame_records, cfg["conf_min"], cfg["nms_iou"]))
            records = processed
        mapped.extend(map_detection_to_canvas(r, cam, canvas_size) for r in records)
    if not mapped and not inputs[1:]:
        raise FileNotFoundError(f"input not found: no per-camera CSVs in {dets_dir}")

    mapped.sort(key=lambda r: r.frame)
    deduped = []
    for _, frame_records in sorted(group_by_frame(mapped).items()):
        if cfg["dedupe_iou"] > 0:
            frame_records = dedupe_canvas_detections(frame_records, cfg["dedupe_iou"])
        deduped.extend(frame_records)
    body = "".join(
        _format_line(r) for r in deduped
    ).encode()
    _atomic_write(Path(args.out) / "canvas_detections.csv", body)
    _write_run_record(args, cfg, inputs, ["canvas_detections.csv"])
    return 0


def _format_line(rec) -> str:
    left, top, w, h = rec.bbox
    cam = rec.camera_id or ""
    return (f"{rec.frame + 1},{rec.track_id},{left:.6f},{top:.6f},{w:.6f},"
            f"{h:.6f},{rec.confidence:.6f},-1.000000,-1.000000,-1.000000,{cam}\n")


def cmd_track(args) -> int:
    _require_inputs(args.dets, args.masks, args.config)
    cfg = config_mod.load_config(config_mod.TRACKER_DEFAULTS, args.config,
                                 _overrides(args))
    records = read_detections(args.dets)
    if args.masks:
        records = attach_masks(records, read_mask_sidecar(args.masks))
    tracker = MultiObjectTracker(**cfg)
    outputs = tracker.track_sequence(records, n_frames=args.frames)
    lines = []
    for rec in outputs:
        left, top, w, h = rec.bbox
        lines.append(f"{rec.frame + 1},{rec.track_id},{left:.6f},{top:.6f},"
                     f"{w:.6f},{h:.6f},{rec.confidence:.6f},"
                     "-1.000000,-1.000000,-1.000000\n")
    _atomic_write(Path(args.out) / "tracks.csv", "".join(lines).encode())
    _atomic_write(Path(args.out) / "summary.json", _json_bytes(tracker.summary()))
    log.info("tracked %d frames, %d output rows", tracker.frames_processed_,
             len(outputs))
    _write_run_record(args, cfg, [args.dets, args.masks, args.config],
                      ["tracks.csv", "summary.json"])
    return 0


def cmd_evaluate(args) -> int:
    _require_inputs(args.gt, args.hyp, args.config)
    cfg = config_mod.load_config(config_mod.EVALUATE_DEFAULTS, args.config,
                                 _overrides(args))
    gt = read_detections(args.gt)
    hyp = read_detections(args.hyp)
    report, per_frame = evaluate_tracking(
        gt, hyp, match_threshold=cfg["match_threshold"],
        interpolation=cfg["interpolation"])
    _atomic_write(Path(args.out) / "report.json", _json_bytes(report.to_json_dict()))
    outputs = ["report.json"]
    if args.per_frame:
        lines = ["frame,tp,fp,fn,idsw\n"]
        for frame in sorted(per_frame):
            ev = per_frame[frame]
            lines.append(f"{frame + 1},{ev['tp']},{ev['fp']},{ev['fn']},{ev['idsw']}\n")
        _atomic_write(Path(args.out) / "per_frame.csv", "".join(lines).encode())
        outputs.append("per_frame.csv")
    print(report.table())
    _write_run_record(args, cfg, [args.gt, args.hyp, args.config], outputs)
    return 0


def cmd_simulate(args) -> int:
    _require_inputs(args.scenario)
    with open(args.scenario, "r", encoding="utf-8") as fh:
        cfg = ScenarioConfig.from_json_dict(json.load(fh))
    run_scenario(cfg, args.out)
    _write_run_record(args, cfg.to_json_dict(), [args.scenario],
                      ["manifest.json"])
    return 0


def cmd_pipeline(args) -> int:
    """simulate -> track -> evaluate, equivalent to the three subcommands."""
    _require_inputs(args.scenario, args.config)
    with open(args.scenario, "r", encoding="utf-8") as fh:
        scenario = ScenarioConfig.from_json_dict(json.load(fh))
    tracker_cfg = config_mod.load_config(config_mod.TRACKER_DEFAULTS,
                                         args.config, _overrides(args))
    out = Path(args.out)
    sim_dir = out / "sim"
    manifest = run_scenario(scenario, sim_dir)

    records = read_detections(sim_dir / manifest["files"]["canvas_detections"])
    mask_file = manifest["files"].get("detection_masks")
    if mask_file and args.use_masks:
        records = attach_masks(records, read_mask_sidecar(sim_dir / mask_file))
    tracker = MultiObjectTracker(**tracker_cfg)
    outputs = tracker.track_sequence(records, n_frames=scenario.n_frames)
    track_dir = out / "track"
    track_dir.mkdir(parents=True, exist_ok=True)
    write_detections(track_dir / "tracks.csv", outputs)
    _atomic_write(track_dir / "summary.json", _json_bytes(tracker.summary()))

    gt = read_detections(sim_dir / manifest["files"]["canvas_gt"])
    report, _ = evaluate_tracking(gt, outputs)
    eval_dir = out / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write(eval_dir / "report.json", _json_bytes(report.to_json_dict()))
    print(report.table())

    _write_run_record(args, {"scenario": scenario.to_json_dict(),
                             "tracker": tracker_cfg},
                      [args.scenario, args.config],
                      ["sim", "track", "eval"])
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="planartrack",
        description="Multi-camera planar multi-object tracking pipeline.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--no-timestamp", action="store_true",
                       help="omit timestamps for byte-stable outputs")
        p.add_argument("--log-level", default="warning",
                       choices=["debug", "info", "warning", "error"])

    p = sub.add_parser("calibrate", help="homography from floor correspondences")
    p.add_argument("--correspondences", required=True)
    p.add_argument("--camera-id", required=True)
    p.add_argument("--distortion-file", default=None)
    add_common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("distortion", help="radial distortion from straight lines")
    p.add_argument("--lines", required=True)
    p.add_argument("--center", required=True, help="x,y distortion center")
    p.add_argument("--scale", type=float, required=True)
    p.add_argument("--camera-id", default="")
    add_common(p)
    p.set_defaults(func=cmd_distortion)

    p = sub.add_parser("mosaic", help="warp per-camera frames and blend")
    p.add_argument("--layout", required=True)
    p.add_argument("--frames-dir", required=True)
    add_common(p)
    p.set_defaults(func=cmd_mosaic)

    p = sub.add_parser("map-detections",
                       help="per-camera detections -> deduped canvas CSV")
    p.add_argument("--layout", required=True)
    p.add_argument("--dets-dir", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    add_common(p)
    p.set_defaults(func=cmd_map_detections)

    p = sub.add_parser("track", help="run the tracker over a detection CSV")
    p.add_argument("--dets", required=True)
    p.add_argument("--masks", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--frames", type=int, default=None,
                   help="total frame count (pads empty trailing frames)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    add_common(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("evaluate", help="score tracks against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--per-frame", action="store_true")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", help="generate a synthetic scenario")
    p.add_argument("--scenario", required=True)
    add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pipeline", help="simulate, track, and evaluate")
    p.add_argument("--scenario", required=True)
    p.add_argument("--config", default=None,
                   help="tracker config JSON")
    p.add_argument("--use-masks", action="store_true")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    add_common(p)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (errors.ConfigError, errors.ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except errors.PlanarTrackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
