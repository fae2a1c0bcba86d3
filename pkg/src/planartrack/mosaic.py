"""Canvas composition: warp per-camera rasters and detections into the
shared ground-plane frame, blend overlaps with a feathered alpha ramp, and
deduplicate cross-camera detections.

Pixel convention: integer coordinates address pixel centers, so a pure
translation homography degenerates to an exact copy. Rasters are uint8,
PGM (P5) for single channel and PPM (P6) for RGB; validity masks are
companion PGMs holding 0/255.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import distance_transform_edt

from . import errors
from ._io import atomic_write_bytes, atomic_write_text
from .geometry import DistortionModel, Homography
from .ingest import DetectionRecord, MaskRLE, region_iou, rle_decode, rle_encode

__all__ = [
    "Raster", "CameraConfig", "MosaicLayout",
    "warp_raster", "compose_mosaic",
    "map_detection_to_canvas", "map_bbox_to_camera",
    "dedupe_canvas_detections",
    "read_raster", "write_raster", "read_layout", "write_layout",
]


@dataclass
class Raster:
    """uint8 image with an optional per-pixel validity mask."""

    data: np.ndarray                     # (h, w) or (h, w, 3)
    validity: np.ndarray | None = None   # (h, w) bool

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.uint8)
        if self.data.ndim == 3 and self.data.shape[2] == 1:
            self.data = self.data[:, :, 0]
        if self.data.ndim not in (2, 3) or \
                (self.data.ndim == 3 and self.data.shape[2] != 3):
            raise ValueError(f"raster must be (h, w) or (h, w, 3), got {self.data.shape}")
        if self.validity is not None:
            self.validity = np.asarray(self.validity, dtype=bool)
            if self.validity.shape != self.data.shape[:2]:
                raise ValueError("validity shape must match raster")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3


@dataclass
class CameraConfig:
    """Per-camera chain: raw frame -> undistort -> crop -> homography -> canvas."""

    camera_id: str
    crop: tuple[int, int, int, int]          # (x, y, w, h) in source pixels
    distortion: DistortionModel
    homography: Homography                    # cropped-undistorted -> canvas

    def __post_init__(self):
        x, y, w, h = (int(v) for v in self.crop)
        if w <= 0 or h <= 0:
            raise ValueError("crop extent must be positive")
        self.crop = (x, y, w, h)

    def to_json_dict(self) -> dict:
        return {
            "camera_id": self.camera_id,
            "crop": list(self.crop),
            "distortion": self.distortion.to_json_dict(),
            "H": self.homography.matrix.tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "CameraConfig":
        return cls(
            camera_id=str(d["camera_id"]),
            crop=tuple(int(v) for v in d["crop"]),
            distortion=DistortionModel.from_json_dict(d["distortion"]),
            homography=Homography(np.asarray(d["H"], dtype=float)),
        )


@dataclass
class MosaicLayout:
    canvas_width: int
    canvas_height: int
    cameras: list[CameraConfig] = field(default_factory=list)
    feather_px: int = 10
    blend_mode: str = "feather_alpha"

    def __post_init__(self):
        if self.canvas_width <= 0 or self.canvas_height <= 0:
            raise ValueError("canvas dims must be positive")
        if self.feather_px < 0:
            raise ValueError("feather_px must be >= 0")
        ids = [c.camera_id for c in self.cameras]
        if len(ids) != len(set(ids)):
            raise ValueError("camera ids must be unique")

    def camera(self, camera_id: str) -> CameraConfig:
        for cam in self.cameras:
            if cam.camera_id == camera_id:
                return cam
        raise KeyError(camera_id)

    def to_json_dict(self) -> dict:
        return {
            "canvas": [self.canvas_width, self.canvas_height],
            "feather_px": self.feather_px,
            "blend_mode": self.blend_mode,
            "cameras": [c.to_json_dict() for c in self.cameras],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "MosaicLayout":
        return cls(
            canvas_width=int(d["canvas"][0]),
            canvas_height=int(d["canvas"][1]),
            cameras=[CameraConfig.from_json_dict(c) for c in d.get("cameras", [])],
            feather_px=int(d.get("feather_px", 10)),
            blend_mode=str(d.get("blend_mode", "feather_alpha")),
        )


# ---------------------------------------------------------------------------
# raster warping


def _inverse_map_to_source(points: np.ndarray, cfg: CameraConfig,
                           ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Canvas points -> (raw source coords, in-crop flags, finite flags)."""
    h_inv = np.linalg.inv(cfg.homography.matrix)
    hom = np.hstack([points, np.ones((len(points), 1))]) @ h_inv.T
    w = hom[:, 2]
    finite = np.abs(w) >= 1e-12
    safe_w = np.where(finite, w, 1.0)
    cropped = hom[:, :2] / safe_w[:, None]
    cx, cy, cw, ch = cfg.crop
    in_crop = finite & (cropped[:, 0] >= 0) & (cropped[:, 0] < cw) & \
        (cropped[:, 1] >= 0) & (cropped[:, 1] < ch)
    undistorted = cropped + np.array([cx, cy], dtype=float)
    raw = cfg.distortion.distort(undistorted)
    return raw, in_crop, finite


def _bilinear_sample(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Edge-clamped bilinear sampling at real coordinates."""
    h, w = image.shape[:2]
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    fx = np.clip(xs - x0, 0.0, 1.0)
    fy = np.clip(ys - y0, 0.0, 1.0)
    if image.ndim == 3:
        fx = fx[:, None]
        fy = fy[:, None]
    top = image[y0, x0] * (1 - fx) + image[y0, x1] * fx
    bottom = image[y1, x0] * (1 - fx) + image[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def warp_raster(src: Raster, cfg: CameraConfig, layout: MosaicLayout) -> Raster:
    """Inverse-map the source into a canvas-sized raster.

    Every output pixel is pulled through H^-1 then the distortion model and
    sampled bilinearly; validity marks pixels whose inverse image lies
    inside the crop (and inside the source raster).
    """
    width, height = layout.canvas_width, layout.canvas_height
    xs, ys = np.meshgrid(np.arange(width, dtype=float),
                         np.arange(height, dtype=float))
    points = np.column_stack([xs.ravel(), ys.ravel()])
    raw, in_crop, _ = _inverse_map_to_source(points, cfg)
    in_raster = (raw[:, 0] >= 0) & (raw[:, 0] <= src.width - 1) & \
        (raw[:, 1] >= 0) & (raw[:, 1] <= src.height - 1)
    valid = in_crop & in_raster
    if not valid.any():
        raise errors.EmptyFootprint(
            f"camera {cfg.camera_id}: no canvas pixel maps into the crop")

    sample_x = np.where(valid, raw[:, 0], 0.0)
    sample_y = np.where(valid, raw[:, 1], 0.0)
    sampled = _bilinear_sample(src.data.astype(float), sample_x, sample_y)
    sampled = np.rint(sampled)
    if src.channels == 3:
        out = np.where(valid[:, None], sampled, 0.0).reshape(height, width, 3)
    else:
        out = np.where(valid, sampled, 0.0).reshape(height, width)
    return Raster(data=np.clip(out, 0, 255).astype(np.uint8),
                  validity=valid.reshape(height, width))


def compose_mosaic(warped: list[Raster], layout: MosaicLayout) -> Raster:
    """Blend canvas-sized views: pairwise overlaps feather the view that
    contributes fewer valid pixels (alpha ramp 1 -> 0 over feather_px
    approaching its validity boundary), then each pixel is the alpha-weighted
    mean of its valid contributors.
    """
    if not warped:
        raise ValueError("need at least one view")
    shape = (layout.canvas_height, layout.canvas_width)
    for view in warped:
        if (view.height, view.width) != shape:
            raise ValueError("all views must be canvas-sized")
        if view.validity is None:
            raise ValueError("views must carry validity masks")

    names = [c.camera_id for c in layout.cameras]
    if len(names) != len(warped):
        names = [str(i) for i in range(len(warped))]
    validity = [v.validity for v in warped]
    counts = [int(v.sum()) for v in validity]

    ramps: list[np.ndarray | None] = [None] * len(warped)

    def boundary_ramp(i: int) -> np.ndarray:
        if ramps[i] is None:
            if validity[i].all():
                dist = np.full(shape, np.inf)
            else:
                dist = distance_transform_edt(validity[i])
            if layout.feather_px > 0:
                ramps[i] = np.clip(dist / layout.feather_px, 0.0, 1.0)
            else:
                ramps[i] = np.ones(shape)
        return ramps[i]

    alphas = [np.where(v, 1.0, 0.0) for v in validity]
    for i in range(len(warped)):
        for j in range(i + 1, len(warped)):
            overlap = validity[i] & validity[j]
            if not overlap.any():
                continue
            if counts[i] != counts[j]:
                loser = i if counts[i] < counts[j] else j
            else:
                loser = i if names[i] <= names[j] else j
            ramp = boundary_ramp(loser)
            alphas[loser] = np.where(overlap,
                                     np.minimum(alphas[loser], ramp),
                                     alphas[loser])

    channels = warped[0].channels
    num = np.zeros(shape + ((3,) if channels == 3 else ()))
    den = np.zeros(shape)
    for alpha, view in zip(alphas, warped):
        if view.channels != channels:
            raise ValueError("views must share the channel count")
        weighted = alpha[:, :, None] if channels == 3 else alpha
        num += weighted * view.data
        den += alpha
    den_safe = np.where(den > 0, den, 1.0)
    blended = num / (den_safe[:, :, None] if channels == 3 else den_safe)
    out_valid = den > 0
    if channels == 3:
        blended = np.where(out_valid[:, :, None], np.rint(blended), 0.0)
    else:
        blended = np.where(out_valid, np.rint(blended), 0.0)
    return Raster(data=np.clip(blended, 0, 255).astype(np.uint8),
                  validity=out_valid)


# ---------------------------------------------------------------------------
# detection mapping


def _bbox_corners(bbox) -> np.ndarray:
    left, top, w, h = bbox
    return np.array([
        [left, top], [left + w, top], [left + w, top + h], [left, top + h],
    ])


def map_detection_to_canvas(det: DetectionRecord, cfg: CameraConfig,
                            canvas_size: tuple[int, int] | None = None,
                            ) -> DetectionRecord:
    """Raw-source detection -> canvas frame.

    The four bbox corners are undistorted, shifted by the crop origin, and
    mapped through the homography; the output bbox is their axis-aligned
    hull. Mask pixels are mapped pointwise and re-encoded on the canvas
    grid (canvas_size required for masks).
    """
    corners = _bbox_corners(det.bbox)
    undist = cfg.distortion.undistort(corners)
    cx, cy, _, _ = cfg.crop
    cropped = undist - np.array([cx, cy], dtype=float)
    mapped = cfg.homography.apply(cropped)
    left, top = mapped.min(axis=0)
    right, bottom = mapped.max(axis=0)

    mask = None
    if det.mask is not None:
        if canvas_size is None:
            raise ValueError("canvas_size is required to map masks")
        cw, ch = canvas_size
        grid = rle_decode(det.mask)
        rows, cols = np.nonzero(grid)
        if len(rows):
            centers = np.column_stack([cols + 0.5, rows + 0.5])
            pts = cfg.homography.apply(
                cfg.distortion.undistort(centers) - np.array([cx, cy], dtype=float))
            u = np.floor(pts[:, 0]).astype(int)
            v = np.floor(pts[:, 1]).astype(int)
            keep = (u >= 0) & (u < cw) & (v >= 0) & (v < ch)
            canvas_grid = np.zeros((ch, cw), dtype=bool)
            canvas_grid[v[keep], u[keep]] = True
            if canvas_grid.any():
                mask = rle_encode(canvas_grid)

    return DetectionRecord(
        frame=det.frame,
        bbox=(float(left), float(top), float(right - left), float(bottom - top)),
        confidence=det.confidence,
        track_id=det.track_id,
        mask=mask,
        camera_id=cfg.camera_id,
    )


def map_bbox_to_camera(bbox, cfg: CameraConfig) -> tuple[float, float, float, float]:
    """Canvas bbox -> raw-source frame (inverse of the corner mapping)."""
    corners = _bbox_corners(bbox)
    cropped = cfg.homography.inverse().apply(corners)
    cx, cy, _, _ = cfg.crop
    raw = cfg.distortion.distort(cropped + np.array([cx, cy], dtype=float))
    left, top = raw.min(axis=0)
    right, bottom = raw.max(axis=0)
    return (float(left), float(top), float(right - left), float(bottom - top))


def dedupe_canvas_detections(dets: list[DetectionRecord],
                             iou_threshold: float = 0.5) -> list[DetectionRecord]:
    """Suppress cross-camera duplicates of one frame.

    Greedy by descending confidence (tie: larger area, then lower
    camera_id): a kept detection removes later detections from *other*
    cameras overlapping it with IoU >= threshold. Same-camera pairs always
    survive together; output keeps input order.
    """
    frames = {d.frame for d in dets}
    if len(frames) > 1:
        raise ValueError("dedupe expects detections from one frame")

    def area(d: DetectionRecord) -> float:
        return d.bbox[2] * d.bbox[3]

    order = sorted(range(len(dets)),
                   key=lambda i: (-dets[i].confidence, -area(dets[i]),
                                  dets[i].camera_id or "", i))
    suppressed: set[int] = set()
    for pos, i in enumerate(order):
        if i in suppressed:
            continue
        for j in order[pos + 1:]:
            if j in suppressed:
                continue
            if dets[i].camera_id == dets[j].camera_id:
                continue
            a = dets[i].mask if dets[i].mask is not None else dets[i].bbox
            b = dets[j].mask if dets[j].mask is not None else dets[j].bbox
            try:
                iou = region_iou(a, b)
            except (errors.EmptyRegion, ValueError):
                iou = region_iou(dets[i].bbox, dets[j].bbox)
            if iou >= iou_threshold:
                suppressed.add(j)
    return [d for i, d in enumerate(dets) if i not in suppressed]


# ---------------------------------------------------------------------------
# raster and layout files


def write_raster(path, raster: Raster, validity_path=None) -> None:
    """Write PGM (P5) or PPM (P6); validity goes to a companion 0/255 PGM."""
    magic = b"P6" if raster.channels == 3 else b"P5"
    header = magic + f"\n{raster.width} {raster.height}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + raster.data.tobytes())
    if validity_path is not None and raster.validity is not None:
        vdata = np.where(raster.validity, 255, 0).astype(np.uint8)
        vheader = b"P5" + f"\n{raster.width} {raster.height}\n255\n".encode("ascii")
        atomic_write_bytes(validity_path, vheader + vdata.tobytes())


def read_raster(path, validity_path=None) -> Raster:
    raw = Path(path).read_bytes()
    data, width, height, channels = _parse_pnm(raw)
    validity = None
    if validity_path is not None and Path(validity_path).exists():
        vdata, vw, vh, vch = _parse_pnm(Path(validity_path).read_bytes())
        if (vw, vh) != (width, height) or vch != 1:
            raise errors.ParseError("validity mask does not match raster")
        validity = vdata.reshape(height, width) > 0
    shape = (height, width, 3) if channels == 3 else (height, width)
    return Raster(data=data.reshape(shape), validity=validity)


def _parse_pnm(raw: bytes) -> tuple[np.ndarray, int, int, int]:
    if raw[:2] not in (b"P5", b"P6"):
        raise errors.ParseError(f"not a binary PGM/PPM file (magic {raw[:2]!r})")
    channels = 3 if raw[:2] == b"P6" else 1
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        try:
            fields.append(int(raw[start:pos]))
        except ValueError as exc:
            raise errors.ParseError("bad PNM header") from exc
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise errors.ParseError(f"only maxval 255 supported, got {maxval}")
    expected = width * height * channels
    body = raw[pos:pos + expected]
    if len(body) != expected:
        raise errors.ParseError("truncated PNM body")
    return np.frombuffer(body, dtype=np.uint8).copy(), width, height, channels


def write_layout(path, layout: MosaicLayout) -> None:
    atomic_write_text(
        path, json.dumps(layout.to_json_dict(), indent=2, sort_keys=True) + "\n")


def read_layout(path) -> MosaicLayout:
    with open(path, "r", encoding="utf-8") as fh:
        return MosaicLayout.from_json_dict(json.load(fh))
