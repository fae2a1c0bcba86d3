"""Deterministic scenario generator: ground-truth trajectories on the canvas,
per-camera projections, and corrupted detections.

Randomness comes from numpy's Philox counter-based generator (64-bit keys)
seeded through SeedSequence, so a (seed, config) pair reproduces output
files byte for byte. Objects are oriented rectangles wandering between
uniform waypoints inside the pen.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import errors
from ._io import atomic_write_text
from .ingest import DetectionRecord, MaskRLE, box_iou, rle_encode, write_detections, write_mask_sidecar
from .mosaic import CameraConfig, Homography, MosaicLayout, _inverse_map_to_source, map_bbox_to_camera, write_layout
from .geometry import DistortionModel

__all__ = [
    "MotionConfig", "NoiseConfig", "ScenarioConfig", "GroundTruthTrajectory",
    "generate_trajectories", "project_and_render", "corrupt", "run_scenario",
    "grid_layout",
]


@dataclass
class MotionConfig:
    max_speed: float = 4.0
    waypoint_pause_prob: float = 0.2
    smoothness: float = 0.8

    def __post_init__(self):
        if self.max_speed < 0:
            raise ValueError("max_speed must be >= 0")
        if not (0.0 <= self.waypoint_pause_prob < 1.0):
            raise ValueError("waypoint_pause_prob must lie in [0, 1)")
        if not (0.0 <= self.smoothness < 1.0):
            raise ValueError("smoothness must lie in [0, 1)")


@dataclass
class NoiseConfig:
    centroid_sigma: float = 0.0
    size_sigma_frac: float = 0.0
    miss_prob: float = 0.0
    clutter_rate: float = 0.0
    occlusion_merge_iou: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.miss_prob < 1.0):
            raise ValueError("miss_prob must lie in [0, 1)")
        if self.clutter_rate < 0 or self.centroid_sigma < 0 or self.size_sigma_frac < 0:
            raise ValueError("noise magnitudes must be >= 0")


@dataclass
class ScenarioConfig:
    seed: int
    n_objects: int
    pen: tuple[float, float, float, float]      # (x, y, w, h) canvas units
    n_frames: int
    layout: MosaicLayout
    footprint: tuple[float, float] = (60.0, 30.0)   # (length, width)
    motion: MotionConfig = field(default_factory=MotionConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    emit_masks: bool = True
    name: str = "scenario"

    def __post_init__(self):
        if self.n_objects < 1:
            raise ValueError("n_objects must be >= 1")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "n_objects": self.n_objects,
            "n_frames": self.n_frames,
            "pen": list(self.pen),
            "footprint": list(self.footprint),
            "motion": {
                "max_speed": self.motion.max_speed,
                "waypoint_pause_prob": self.motion.waypoint_pause_prob,
                "smoothness": self.motion.smoothness,
            },
            "noise": {
                "centroid_sigma": self.noise.centroid_sigma,
                "size_sigma_frac": self.noise.size_sigma_frac,
                "miss_prob": self.noise.miss_prob,
                "clutter_rate": self.noise.clutter_rate,
                "occlusion_merge_iou": self.noise.occlusion_merge_iou,
            },
            "layout": self.layout.to_json_dict(),
            "emit_masks": self.emit_masks,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ScenarioConfig":
        known = {"name", "seed", "n_objects", "n_frames", "pen", "footprint",
                 "motion", "noise", "layout", "emit_masks"}
        for key in d:
            if key not in known:
                raise errors.UnknownKey(f"/{key}")
        for sub, schema in (("motion", MotionConfig()), ("noise", NoiseConfig())):
            for key in d.get(sub, {}):
                if key not in vars(schema):
                    raise errors.UnknownKey(f"/{sub}/{key}")
        return cls(
            seed=int(d["seed"]),
            n_objects=int(d["n_objects"]),
            pen=tuple(float(v) for v in d["pen"]),
            n_frames=int(d["n_frames"]),
            layout=MosaicLayout.from_json_dict(d["layout"]),
            footprint=tuple(float(v) for v in d.get("footprint", (60.0, 30.0))),
            motion=MotionConfig(**d.get("motion", {})),
            noise=NoiseConfig(**d.get("noise", {})),
            emit_masks=bool(d.get("emit_masks", True)),
            name=str(d.get("name", "scenario")),
        )


@dataclass
class GroundTruthTrajectory:
    object_id: int
    centers: np.ndarray     # (n_frames, 2)
    headings: np.ndarray    # (n_frames,)


def _rng_streams(seed: int, count: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(count)
    return [np.random.Generator(np.random.Philox(s)) for s in children]


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def generate_trajectories(cfg: ScenarioConfig) -> list[GroundTruthTrajectory]:
    """Waypoint wander, fully determined by (seed, config).

    Each object draws uniform waypoints inside the footprint-inset pen and
    moves toward them at up to max_speed with exponentially smoothed
    heading; on arrival it may pause for a random stretch (lying cows).
    """
    length, width = cfg.footprint
    inset = math.hypot(length, width) / 2.0
    px, py, pw, ph = cfg.pen
    lo = np.array([px + inset, py + inset])
    hi = np.array([px + pw - inset, py + ph - inset])
    if np.any(hi <= lo):
        raise errors.InfeasiblePen(
            f"footprint {cfg.footprint} does not fit in pen {cfg.pen}")

    streams = _rng_streams(cfg.seed, cfg.n_objects)
    max_speed = cfg.motion.max_speed
    gain = 1.0 - cfg.motion.smoothness
    trajectories = []
    for obj in range(cfg.n_objects):
        rng = streams[obj]
        pos = rng.uniform(lo, hi)
        heading = float(rng.uniform(-math.pi, math.pi))
        waypoint = rng.uniform(lo, hi)
        pause_left = 0
        centers = np.empty((cfg.n_frames, 2))
        headings = np.empty(cfg.n_frames)
        for t in range(cfg.n_frames):
            centers[t] = pos
            headings[t] = heading
            if max_speed <= 0:
                continue
            if pause_left > 0:
                pause_left -= 1
                continue
            delta = waypoint - pos
            dist = float(np.hypot(delta[0], delta[1]))
            if dist <= max_speed:
                pos = waypoint.copy()
                waypoint = rng.uniform(lo, hi)
                if rng.random() < cfg.motion.waypoint_pause_prob:
                    pause_left = int(rng.integers(5, 40))
                continue
            desired = math.atan2(delta[1], delta[0])
            heading = _wrap_angle(heading + gain * _wrap_angle(desired - heading))
            step = max_speed
            pos = np.clip(pos + step * np.array([math.cos(heading), math.sin(heading)]), lo, hi)
        trajectories.append(GroundTruthTrajectory(
            object_id=obj + 1, centers=centers, headings=headings))
    return trajectories


def footprint_bbox(center, heading: float, footprint) -> tuple[float, float, float, float]:
    """Exact axis-aligned hull of the oriented footprint rectangle."""
    half_l, half_w = footprint[0] / 2.0, footprint[1] / 2.0
    c, s = abs(math.cos(heading)), abs(math.sin(heading))
    ex = half_l * c + half_w * s
    ey = half_l * s + half_w * c
    return (center[0] - ex, center[1] - ey, 2.0 * ex, 2.0 * ey)


def footprint_cells(center, heading: float, footprint) -> np.ndarray:
    """Centers of the grid cells covered by the oriented rectangle, (n, 2)."""
    left, top, w, h = footprint_bbox(center, heading, footprint)
    cols = np.arange(math.floor(left), math.ceil(left + w) + 1)
    rows = np.arange(math.floor(top), math.ceil(top + h) + 1)
    cx, cy = np.meshgrid(cols + 0.5, rows + 0.5)
    pts = np.column_stack([cx.ravel(), cy.ravel()])
    d = pts - np.asarray(center, dtype=float)
    u = np.array([math.cos(heading), math.sin(heading)])
    v = np.array([-math.sin(heading), math.cos(heading)])
    inside = (np.abs(d @ u) <= footprint[0] / 2.0) & (np.abs(d @ v) <= footprint[1] / 2.0)
    return pts[inside]


def _cells_to_mask(cells: np.ndarray, canvas_w: int, canvas_h: int) -> MaskRLE | None:
    cols = np.floor(cells[:, 0]).astype(int)
    rows = np.floor(cells[:, 1]).astype(int)
    keep = (cols >= 0) & (cols < canvas_w) & (rows >= 0) & (rows < canvas_h)
    if not keep.any():
        return None
    grid = np.zeros((canvas_h, canvas_w), dtype=bool)
    grid[rows[keep], cols[keep]] = True
    return rle_encode(grid)


def project_and_render(trajectories: list[GroundTruthTrajectory],
                       layout: MosaicLayout,
                       footprint: tuple[float, float],
                       emit_masks: bool = False,
                       ) -> tuple[list[DetectionRecord],
                                  dict[str, list[DetectionRecord]],
                                  dict[tuple[int, int], str],
                                  dict[tuple[int, int], MaskRLE]]:
    """Canvas ground truth plus per-camera projections.

    Each object-frame is attributed to the camera containing the larger
    share of its footprint cells (ties to the lower camera_id); per-camera
    boxes are the canvas hull corners pushed back through the camera chain.

    Returns (canvas records, per-camera records, attribution map keyed by
    (frame, object_id), gt masks keyed by (frame, det_index)).
    """
    n_frames = trajectories[0].centers.shape[0] if trajectories else 0
    cameras = layout.cameras
    canvas_records: list[DetectionRecord] = []
    per_camera: dict[str, list[DetectionRecord]] = {c.camera_id: [] for c in cameras}
    attribution: dict[tuple[int, int], str] = {}
    gt_masks: dict[tuple[int, int], MaskRLE] = {}
    single_camera = len(cameras) == 1
    need_cells = emit_masks or not single_camera

    for frame in range(n_frames):
        for det_index, traj in enumerate(trajectories):
            center = traj.centers[frame]
            heading = float(traj.headings[frame])
            bbox = footprint_bbox(center, heading, footprint)
            mask = None
            cells = footprint_cells(center, heading, footprint) if need_cells else None
            if emit_masks:
                mask = _cells_to_mask(cells, layout.canvas_width, layout.canvas_height)
                if mask is not None:
                    gt_masks[(frame, det_index)] = mask
            record = DetectionRecord(frame=frame, bbox=bbox, confidence=1.0,
                                     track_id=traj.object_id, mask=mask)
            canvas_records.append(record)

            if not cameras:
                continue
            if single_camera:
                cam = cameras[0]
            else:
                best_count = -1
                cam = None
                for candidate in cameras:
                    _, in_crop, _ = _inverse_map_to_source(cells, candidate)
                    count = int(in_crop.sum())
                    if count > best_count:
                        best_count = count
                        cam = candidate
                if best_count <= 0:
                    continue
            attribution[(frame, traj.object_id)] = cam.camera_id
            cam_bbox = map_bbox_to_camera(bbox, cam)
            per_camera[cam.camera_id].append(DetectionRecord(
                frame=frame, bbox=cam_bbox, confidence=1.0,
                track_id=traj.object_id, camera_id=cam.camera_id))
    return canvas_records, per_camera, attribution, gt_masks


def _clip_bbox_to_canvas(bbox, layout: MosaicLayout):
    left, top, w, h = bbox
    right, bottom = left + w, top + h
    left = max(left, 0.0)
    top = max(top, 0.0)
    right = min(right, float(layout.canvas_width))
    bottom = min(bottom, float(layout.canvas_height))
    if right - left <= 0 or bottom - top <= 0:
        return None
    return (left, top, right - left, bottom - top)


def corrupt(canvas_gt: list[DetectionRecord], noise: NoiseConfig, seed: int,
            pen, layout: MosaicLayout,
            attribution: dict[tuple[int, int], str] | None = None,
            footprint: tuple[float, float] = (60.0, 30.0),
            ) -> tuple[list[DetectionRecord], dict]:
    """Turn ground truth into detector-like output.

    Per frame: one member of each heavily overlapping gt pair is dropped
    (occlusion), survivors are dropped independently with miss_prob, the
    rest get centroid jitter, a common size scale, and confidence in
    [0.8, 1.0); Poisson clutter boxes with confidence in [0.25, 0.6) are
    added uniformly inside the pen. Fully determined by the seed.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    by_frame: dict[int, list[DetectionRecord]] = {}
    for rec in canvas_gt:
        by_frame.setdefault(rec.frame, []).append(rec)

    px, py, pw, ph = pen
    out: list[DetectionRecord] = []
    stats = {"dropped_occlusion": 0, "dropped_miss": 0, "dropped_clip": 0,
             "clutter": 0, "gt_boxes": len(canvas_gt)}

    for frame in sorted(by_frame):
        records = by_frame[frame]
        dropped = [False] * len(records)
        for i in range(len(records)):
            for j in range(i + 1, len(records)):
                if dropped[i] or dropped[j]:
                    continue
                if box_iou(records[i].bbox, records[j].bbox) >= noise.occlusion_merge_iou:
                    victim = i if rng.random() < 0.5 else j
                    dropped[victim] = True
                    stats["dropped_occlusion"] += 1
        for i, rec in enumerate(records):
            if dropped[i]:
                continue
            if noise.miss_prob > 0 and rng.random() < noise.miss_prob:
                stats["dropped_miss"] += 1
                continue
            left, top, w, h = rec.bbox
            dx = rng.normal(0.0, noise.centroid_sigma) if noise.centroid_sigma > 0 else 0.0
            dy = rng.normal(0.0, noise.centroid_sigma) if noise.centroid_sigma > 0 else 0.0
            scale = 1.0
            if noise.size_sigma_frac > 0:
                scale = max(0.1, 1.0 + rng.normal(0.0, noise.size_sigma_frac))
            new_w, new_h = w * scale, h * scale
            cx, cy = left + w / 2.0 + dx, top + h / 2.0 + dy
            conf = float(rng.uniform(0.8, 1.0))
            bbox = _clip_bbox_to_canvas(
                (cx - new_w / 2.0, cy - new_h / 2.0, new_w, new_h), layout)
            if bbox is None:
                stats["dropped_clip"] += 1
                continue
            camera_id = attribution.get((frame, rec.track_id)) if attribution else None
            mask = rec.mask
            out.append(DetectionRecord(
                frame=frame, bbox=bbox, confidence=conf, track_id=-1,
                mask=mask, camera_id=camera_id))
        if noise.clutter_rate > 0:
            n_clutter = int(rng.poisson(noise.clutter_rate))
            for _ in range(n_clutter):
                cw = min(footprint[0], pw)
                chh = min(footprint[1], ph)
                left = float(rng.uniform(px, px + pw - cw))
                top = float(rng.uniform(py, py + ph - chh))
                conf = float(rng.uniform(0.25, 0.6))
                bbox = _clip_bbox_to_canvas((left, top, cw, chh), layout)
                if bbox is None:
                    continue
                camera_id = _locate_camera((left + cw / 2.0, top + chh / 2.0), layout)
                out.append(DetectionRecord(frame=frame, bbox=bbox, confidence=conf,
                                           track_id=-1, camera_id=camera_id))
                stats["clutter"] += 1
    return out, stats


def _locate_camera(point, layout: MosaicLayout) -> str | None:
    pts = np.asarray([point], dtype=float)
    for cam in layout.cameras:
        _, in_crop, _ = _inverse_map_to_source(pts, cam)
        if in_crop[0]:
            return cam.camera_id
    return None


def grid_layout(canvas_width: int, canvas_height: int, n_cols: int,
                feather_px: int = 10) -> MosaicLayout:
    """Side-by-side translation cameras covering the canvas, no distortion."""
    cameras = []
    col_width = canvas_width // n_cols
    for k in range(n_cols):
        x0 = k * col_width
        w = canvas_width - x0 if k == n_cols - 1 else col_width
        h = np.array([[1.0, 0.0, float(x0)], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        cameras.append(CameraConfig(
            camera_id=f"cam{k:02d}",
            crop=(0, 0, w, canvas_height),
            distortion=DistortionModel.identity(
                center=(w / 2.0, canvas_height / 2.0),
                scale=math.hypot(w, canvas_height) / 2.0),
            homography=Homography(h)))
    return MosaicLayout(canvas_width=canvas_width, canvas_height=canvas_height,
                        cameras=cameras, feather_px=feather_px)


def run_scenario(cfg: ScenarioConfig, out_dir) -> dict:
    """Generate, project, corrupt, and write all scenario files.

    Returns the manifest dict (also written to manifest.json).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trajectories = generate_trajectories(cfg)
    canvas_gt, per_camera_gt, attribution, gt_masks = project_and_render(
        trajectories, cfg.layout, cfg.footprint, emit_masks=cfg.emit_masks)
    noise_seed = int(np.random.SeedSequence(cfg.seed).generate_state(2)[1])
    canvas_dets, stats = corrupt(canvas_gt, cfg.noise, noise_seed, cfg.pen,
                                 cfg.layout, attribution, cfg.footprint)

    files: dict = {}
    write_detections(out / "canvas_gt.csv", canvas_gt)
    files["canvas_gt"] = "canvas_gt.csv"
    write_detections(out / "canvas_detections.csv", canvas_dets, with_camera=True)
    files["canvas_detections"] = "canvas_detections.csv"

    files["per_camera_detections"] = {}
    files["per_camera_gt"] = {}
    for cam in cfg.layout.cameras:
        cam_dets = []
        for det in canvas_dets:
            if det.camera_id == cam.camera_id:
                cam_bbox = map_bbox_to_camera(det.bbox, cam)
                cam_dets.append(DetectionRecord(
                    frame=det.frame, bbox=cam_bbox, confidence=det.confidence,
                    track_id=-1, camera_id=cam.camera_id))
        name = f"detections_{cam.camera_id}.csv"
        write_detections(out / name, cam_dets)
        files["per_camera_detections"][cam.camera_id] = name
        gt_name = f"gt_{cam.camera_id}.csv"
        write_detections(out / gt_name, per_camera_gt[cam.camera_id])
        files["per_camera_gt"][cam.camera_id] = gt_name

    if cfg.emit_masks and gt_masks:
        write_mask_sidecar(out / "gt_masks.json", gt_masks)
        files["gt_masks"] = "gt_masks.json"
        det_masks: dict[tuple[int, int], MaskRLE] = {}
        index_in_frame: dict[int, int] = {}
        for det in canvas_dets:
            idx = index_in_frame.get(det.frame, 0)
            index_in_frame[det.frame] = idx + 1
            if det.mask is not None:
                det_masks[(det.frame, idx)] = det.mask
        if det_masks:
            write_mask_sidecar(out / "detection_masks.json", det_masks)
            files["detection_masks"] = "detection_masks.json"

    write_layout(out / "layout.json", cfg.layout)
    files["layout"] = "layout.json"

    manifest = {
        "name": cfg.name,
        "seed": cfg.seed,
        "n_frames": cfg.n_frames,
        "n_objects": cfg.n_objects,
        "canvas": [cfg.layout.canvas_width, cfg.layout.canvas_height],
        "files": files,
        "stats": stats,
        "config": cfg.to_json_dict(),
    }
    atomic_write_text(out / "manifest.json",
                      json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
