"""Detection/track file I/O, detector post-processing, and region arithmetic.

The record format is MOTChallenge-style CSV, one record per line:

    frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z

Frames are 1-based in files and 0-based in memory; id is -1 for raw
detections; x,y,z are unused and written as -1. Canvas-frame files carry an
extra trailing camera_id column. Numeric output uses 6 fractional digits so
write(read(f)) is byte-stable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import errors
from ._io import atomic_write_text
from ._validation import check_bbox

__all__ = [
    "DetectionRecord", "MaskRLE", "SequenceManifest",
    "read_detections", "write_detections", "write_tracks",
    "read_mask_sidecar", "write_mask_sidecar",
    "filter_and_nms", "rle_encode", "rle_decode",
    "mask_to_bbox", "region_iou", "box_iou", "box_iou_matrix",
    "select_frames",
]


@dataclass(frozen=True)
class MaskRLE:
    """Run-length encoded binary mask.

    Runs alternate 0s and 1s in column-major order, starting with the count
    of leading zeros (a leading 0 is emitted when pixel (0, 0) is set).
    """

    width: int
    height: int
    runs: tuple[int, ...]

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("mask dims must be positive")
        runs = tuple(int(r) for r in self.runs)
        if any(r < 0 for r in runs):
            raise errors.RunSumMismatch("negative run length")
        if sum(runs) != self.width * self.height:
            raise errors.RunSumMismatch(
                f"runs sum to {sum(runs)}, expected {self.width * self.height}")
        object.__setattr__(self, "runs", runs)

    def decode(self) -> np.ndarray:
        return rle_decode(self)

    def area(self) -> int:
        return int(sum(self.runs[1::2]))


@dataclass(frozen=True)
class DetectionRecord:
    """One observed object in one frame. bbox is (left, top, width, height)."""

    frame: int
    bbox: tuple[float, float, float, float]
    confidence: float = 1.0
    track_id: int = -1
    mask: MaskRLE | None = None
    camera_id: str | None = None

    def __post_init__(self):
        if self.frame < 0:
            raise ValueError(f"frame must be >= 0, got {self.frame}")
        object.__setattr__(self, "bbox", check_bbox(self.bbox))

    @property
    def centroid(self) -> tuple[float, float]:
        left, top, w, h = self.bbox
        return (left + w / 2.0, top + h / 2.0)

    def with_bbox(self, bbox) -> "DetectionRecord":
        return replace(self, bbox=tuple(float(v) for v in bbox))


@dataclass(frozen=True)
class SequenceManifest:
    name: str
    frame_count: int
    fps_source: float
    fps_target: float
    object_count_hint: int | None = None

    def __post_init__(self):
        if self.frame_count < 1:
            raise ValueError("frame_count must be >= 1")
        if self.fps_source <= 0 or self.fps_target <= 0:
            raise ValueError("fps values must be positive")


# ---------------------------------------------------------------------------
# CSV record files


def _format_record(rec: DetectionRecord, with_camera: bool) -> str:
    left, top, w, h = rec.bbox
    fields = [
        str(rec.frame + 1),
        str(rec.track_id),
        f"{left:.6f}", f"{top:.6f}", f"{w:.6f}", f"{h:.6f}",
        f"{rec.confidence:.6f}",
        "-1.000000", "-1.000000", "-1.000000",
    ]
    if with_camera:
        fields.append(rec.camera_id if rec.camera_id is not None else "")
    return ",".join(fields)


def read_detections(path) -> list[DetectionRecord]:
    """Read a record CSV; tolerates the optional camera_id column."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) not in (10, 11):
                raise errors.ParseError(
                    f"expected 10 or 11 fields, got {len(parts)}", line=lineno)
            try:
                frame = int(parts[0]) - 1
                track_id = int(parts[1])
                left, top, w, h = (float(p) for p in parts[2:6])
                conf = float(parts[6])
            except ValueError as exc:
                raise errors.ParseError(str(exc), line=lineno) from exc
            camera_id = parts[10] if len(parts) == 11 and parts[10] else None
            try:
                records.append(DetectionRecord(
                    frame=frame, bbox=(left, top, w, h), confidence=conf,
                    track_id=track_id, camera_id=camera_id))
            except ValueError as exc:
                raise errors.ParseError(str(exc), line=lineno) from exc
    return records


def write_detections(path, records: list[DetectionRecord],
                     with_camera: bool = False) -> None:
    lines = [_format_record(r, with_camera) for r in records]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def write_tracks(path, records: list[DetectionRecord]) -> None:
    """Track files are the same schema with id >= 1 filled in."""
    write_detections(path, records, with_camera=False)


def read_mask_sidecar(path) -> dict[tuple[int, int], MaskRLE]:
    """Load {(frame, det_index) -> mask} from the JSON sidecar."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    out = {}
    for item in data:
        h, w = (int(v) for v in item["size"])
        out[(int(item["frame"]) - 1, int(item["det_index"]))] = MaskRLE(
            width=w, height=h, runs=tuple(int(c) for c in item["counts"]))
    return out


def write_mask_sidecar(path, masks: dict[tuple[int, int], MaskRLE]) -> None:
    data = [
        {"frame": frame + 1, "det_index": det_index,
         "size": [m.height, m.width], "counts": list(m.runs)}
        for (frame, det_index), m in sorted(masks.items())
    ]
    atomic_write_text(path, json.dumps(data) + "\n")


def attach_masks(records: list[DetectionRecord],
                 masks: dict[tuple[int, int], MaskRLE]) -> list[DetectionRecord]:
    """Pair sidecar masks with records by (frame, index-within-frame)."""
    out = []
    index_in_frame: dict[int, int] = {}
    for rec in records:
        idx = index_in_frame.get(rec.frame, 0)
        index_in_frame[rec.frame] = idx + 1
        mask = masks.get((rec.frame, idx))
        out.append(replace(rec, mask=mask) if mask is not None else rec)
    return out


# ---------------------------------------------------------------------------
# RLE codec


def rle_encode(grid) -> MaskRLE:
    """Encode a binary raster (rows x cols) into column-major RLE."""
    arr = np.asarray(grid)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError("grid must be a non-empty 2-d array")
    flat = (arr != 0).flatten(order="F").astype(np.int8)
    change = np.flatnonzero(np.diff(flat)) + 1
    boundaries = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(boundaries).tolist()
    if flat[0] == 1:
        runs = [0] + runs
    return MaskRLE(width=arr.shape[1], height=arr.shape[0], runs=tuple(runs))


def rle_decode(mask: MaskRLE) -> np.ndarray:
    """Decode to a boolean (height, width) array."""
    values = np.zeros(len(mask.runs), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, np.asarray(mask.runs, dtype=np.int64))
    return flat.reshape((mask.height, mask.width), order="F")


def mask_to_bbox(mask: MaskRLE) -> tuple[float, float, float, float]:
    """Minimal enclosing rectangle of the set pixels, in whole pixels."""
    grid = rle_decode(mask)
    rows = np.flatnonzero(grid.any(axis=1))
    cols = np.flatnonzero(grid.any(axis=0))
    if len(rows) == 0:
        raise errors.EmptyMask("mask has no set pixels")
    return (float(cols[0]), float(rows[0]),
            float(cols[-1] - cols[0] + 1), float(rows[-1] - rows[0] + 1))


# ---------------------------------------------------------------------------
# IoU


def box_iou(a, b) -> float:
    """Continuous-coordinate IoU of two (left, top, w, h) boxes."""
    al, at, aw, ah = a
    bl, bt, bw, bh = b
    iw = min(al + aw, bl + bw) - max(al, bl)
    ih = min(at + ah, bt + bh) - max(at, bt)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return float(inter / union)


def box_iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU for (n, 4) and (m, 4) arrays of (l, t, w, h) boxes."""
    a = np.asarray(boxes_a, dtype=float).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=float).reshape(-1, 4)
    ar = a[:, :2] + a[:, 2:]
    br = b[:, :2] + b[:, 2:]
    iw = np.minimum(ar[:, None, 0], br[None, :, 0]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(ar[:, None, 1], br[None, :, 1]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / union, 0.0)
    return iou


def _rasterize_box(bbox, width: int, height: int) -> np.ndarray:
    """Cells whose centers fall inside the box; exact for integer boxes."""
    left, top, w, h = bbox
    cols = np.arange(width) + 0.5
    rows = np.arange(height) + 0.5
    in_x = (cols >= left) & (cols < left + w)
    in_y = (rows >= top) & (rows < top + h)
    return in_y[:, None] & in_x[None, :]


def region_iou(a, b) -> float:
    """IoU of two regions: boxes, masks, or a mixed pair.

    Mixed pairs rasterize the box onto the mask grid. Raises EmptyRegion
    when either region has zero area.
    """
    a_is_mask = isinstance(a, MaskRLE)
    b_is_mask = isinstance(b, MaskRLE)
    if not a_is_mask and not b_is_mask:
        al, at, aw, ah = a
        bl, bt, bw, bh = b
        if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
            raise errors.EmptyRegion("zero-area box")
        return box_iou(a, b)
    if a_is_mask and b_is_mask:
        if a.width != b.width or a.height != b.height:
            raise ValueError("masks must share one grid")
        ga, gb = rle_decode(a), rle_decode(b)
    elif a_is_mask:
        ga = rle_decode(a)
        gb = _rasterize_box(b, a.width, a.height)
    else:
        gb = rle_decode(b)
        ga = _rasterize_box(a, b.width, b.height)
    area_a = int(ga.sum())
    area_b = int(gb.sum())
    if area_a == 0 or area_b == 0:
        raise errors.EmptyRegion("empty region")
    inter = int((ga & gb).sum())
    return inter / (area_a + area_b - inter)


# ---------------------------------------------------------------------------
# detector post-processing


def filter_and_nms(dets: list[DetectionRecord], conf_min: float = 0.25,
                   nms_iou: float = 0.7) -> list[DetectionRecord]:
    """Confidence filter then greedy class-agnostic NMS on one frame.

    Repeatedly keeps the highest-confidence remaining record (file order
    breaks ties) and discards others overlapping it with IoU > nms_iou.
    Output preserves input order of the survivors.
    """
    frames = {d.frame for d in dets}
    if len(frames) > 1:
        raise ValueError("filter_and_nms expects detections from one frame")
    candidates = [(i, d) for i, d in enumerate(dets) if d.confidence >= conf_min]
    order = sorted(candidates, key=lambda item: (-item[1].confidence, item[0]))
    suppressed: set[int] = set()
    kept: set[int] = set()
    for idx, det in order:
        if idx in suppressed:
            continue
        kept.add(idx)
        for jdx, other in order:
            if jdx == idx or jdx in suppressed or jdx in kept:
                continue
            if box_iou(det.bbox, other.bbox) > nms_iou:
                suppressed.add(jdx)
    return [d for i, d in enumerate(dets) if i in kept]


def select_frames(manifest: SequenceManifest) -> list[int]:
    """Source frame indices kept by the fps_source -> fps_target downsample.

    Keeps index i whenever floor(i * fps_target / fps_source) increments;
    for 30 -> 6 that is every 5th frame starting at 0.
    """
    if manifest.fps_target > manifest.fps_source:
        raise ValueError("fps_target must not exceed fps_source")
    ratio = manifest.fps_target / manifest.fps_source
    selected = []
    prev = -1
    for i in range(manifest.frame_count):
        bucket = int(np.floor(i * ratio))
        if bucket > prev:
            selected.append(i)
            prev = bucket
    return selected


def group_by_frame(records: list[DetectionRecord]) -> dict[int, list[DetectionRecord]]:
    frames: dict[int, list[DetectionRecord]] = {}
    for rec in records:
        frames.setdefault(rec.frame, []).append(rec)
    return frames
