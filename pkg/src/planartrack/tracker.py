"""Two-stage multi-object tracker: constant-velocity Kalman prediction plus
Hungarian data association on 1 - IoU costs, with track lifecycle management
and an optional closed-world mode that fixes the identity set at the first
frame.

The filter state is [x, y, vx, vy] over region centroids; width/height and
the optional mask are carried outside the state and refreshed on every
accepted match.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
from sklearn.base import BaseEstimator

from . import errors
from .assignment import Assignment, hungarian_assign
from .ingest import (
    DetectionRecord, MaskRLE, box_iou_matrix, group_by_frame, region_iou,
    rle_decode, rle_encode,
)

TENTATIVE = "tentative"
CONFIRMED = "confirmed"
LOST = "lost"

# constant-velocity transition and centroid measurement model, dt = 1 frame
_F = np.array([
    [1.0, 0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0, 1.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
])
_H = np.array([
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
])


def _process_noise_matrix(q: float) -> np.ndarray:
    """Discrete white-acceleration noise for dt = 1, per-axis variance q."""
    block = np.array([[0.25, 0.5], [0.5, 1.0]]) * q
    out = np.zeros((4, 4))
    for axis in range(2):
        idx = np.ix_([axis, axis + 2], [axis, axis + 2])
        out[idx] = block
    return out


@dataclass
class KalmanState:
    mean: np.ndarray        # [x, y, vx, vy]
    covariance: np.ndarray  # 4x4 symmetric PSD

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(4)
        self.covariance = np.asarray(self.covariance, dtype=float).reshape(4, 4)
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-9):
            raise ValueError("covariance must be symmetric")
        if np.any(np.diag(self.covariance) < 0):
            raise ValueError("covariance diagonal must be non-negative")

    @property
    def position(self) -> tuple[float, float]:
        return (float(self.mean[0]), float(self.mean[1]))

    @property
    def velocity(self) -> tuple[float, float]:
        return (float(self.mean[2]), float(self.mean[3]))


def kf_init(det: DetectionRecord, measurement_noise: float = 1.0,
            initial_velocity_variance: float = 100.0) -> KalmanState:
    """State from a detection: bbox centroid, zero velocity, diagonal P."""
    cx, cy = det.centroid
    mean = np.array([cx, cy, 0.0, 0.0])
    cov = np.diag([measurement_noise, measurement_noise,
                   initial_velocity_variance, initial_velocity_variance])
    return KalmanState(mean, cov)


def kf_predict(state: KalmanState, process_noise: float = 1e-2) -> KalmanState:
    mean = _F @ state.mean
    cov = _F @ state.covariance @ _F.T + _process_noise_matrix(process_noise)
    return KalmanState(mean, 0.5 * (cov + cov.T))


def kf_update(state: KalmanState, measurement,
              measurement_noise: float = 1.0) -> KalmanState:
    """Standard Kalman correction with a centroid measurement.

    Uses the Joseph-form covariance update so the posterior stays PSD.
    """
    z = np.asarray(measurement, dtype=float).reshape(2)
    if not np.all(np.isfinite(z)):
        raise errors.NonFiniteMeasurement(f"measurement {measurement!r}")
    p = state.covariance
    r = np.eye(2) * measurement_noise
    s = _H @ p @ _H.T + r
    gain = p @ _H.T @ np.linalg.inv(s)
    innovation = z - _H @ state.mean
    mean = state.mean + gain @ innovation
    i_kh = np.eye(4) - gain @ _H
    cov = i_kh @ p @ i_kh.T + gain @ r @ gain.T
    return KalmanState(mean, 0.5 * (cov + cov.T))


# ---------------------------------------------------------------------------
# tracks


@dataclass
class Track:
    track_id: int
    state: KalmanState
    extent: tuple[float, float]
    status: str = TENTATIVE
    consecutive_hits: int = 1
    gap: int = 0
    last_mask: MaskRLE | None = None
    last_confidence: float = 1.0
    first_frame: int = 0
    last_matched_frame: int = 0
    total_hits: int = 1
    history: list[tuple[int, tuple[float, float, float, float]]] = field(default_factory=list)

    def predicted_bbox(self) -> tuple[float, float, float, float]:
        """Last accepted extent translated to the current state centroid."""
        x, y = self.state.position
        w, h = self.extent
        return (x - w / 2.0, y - h / 2.0, w, h)

    def predicted_mask(self) -> MaskRLE | None:
        """Last mask shifted (whole pixels) so its centroid hits the state."""
        if self.last_mask is None:
            return None
        grid = rle_decode(self.last_mask)
        rows, cols = np.nonzero(grid)
        if len(rows) == 0:
            return None
        cx = cols.mean() + 0.5
        cy = rows.mean() + 0.5
        px, py = self.state.position
        dx = int(round(px - cx))
        dy = int(round(py - cy))
        shifted = np.zeros_like(grid)
        h, w = grid.shape
        new_cols = cols + dx
        new_rows = rows + dy
        keep = (new_cols >= 0) & (new_cols < w) & (new_rows >= 0) & (new_rows < h)
        shifted[new_rows[keep], new_cols[keep]] = True
        if not shifted.any():
            return None
        return rle_encode(shifted)


@dataclass
class TrackerConfig:
    """Association and lifecycle parameters; defaults give IoU gating at 0.4,
    a 15-frame survival window, and 3-hit confirmation."""

    cutoff_cost: float = 0.6
    max_gap: int = 15
    min_hits: int = 3
    closed_world: bool = False
    process_noise: float = 1e-2
    measurement_noise: float = 1.0
    initial_velocity_variance: float = 100.0
    emit_coasting: bool = True

    def __post_init__(self):
        if not (0.0 < self.cutoff_cost <= 1.0):
            raise ValueError("cutoff_cost must lie in (0, 1]")
        if self.max_gap < 0:
            raise ValueError("max_gap must be >= 0")
        if self.min_hits < 1:
            raise ValueError("min_hits must be >= 1")


def build_cost_matrix(tracks: list[Track], dets: list[DetectionRecord]) -> np.ndarray:
    """C[i, j] = 1 - IoU(predicted region of track i, region of det j).

    Predicted region is the last accepted mask when one exists, else the
    bbox, translated to the predicted centroid. Entries are clamped to
    [0, 1]; disjoint pairs cost 1.
    """
    if not tracks or not dets:
        return np.zeros((len(tracks), len(dets)))
    any_masks = any(t.last_mask is not None for t in tracks) or \
        any(d.mask is not None for d in dets)
    if not any_masks:
        pred = np.array([t.predicted_bbox() for t in tracks])
        obs = np.array([d.bbox for d in dets])
        iou = box_iou_matrix(pred, obs)
        return np.clip(1.0 - iou, 0.0, 1.0)

    cost = np.ones((len(tracks), len(dets)))
    pred_regions = []
    for t in tracks:
        mask = t.predicted_mask()
        pred_regions.append(mask if mask is not None else t.predicted_bbox())
    for i, pred in enumerate(pred_regions):
        for j, det in enumerate(dets):
            obs = det.mask if det.mask is not None else det.bbox
            try:
                iou = region_iou(pred, obs)
            except errors.EmptyRegion:
                iou = 0.0
            cost[i, j] = 1.0 - iou
    return np.clip(cost, 0.0, 1.0)


@dataclass
class StepResult:
    frame: int
    matches: list[tuple[int, int, float]]   # (track_id, det_index, cost)
    new_track_ids: list[int]
    discarded_dets: list[int]
    outputs: list[DetectionRecord]


class MultiObjectTracker(BaseEstimator):
    """Sequential tracking state machine; call step() in frame order.

    In closed-world mode the identity set is fixed by the first presented
    frame: tracks never die and later unmatched detections are discarded
    (counted in ``discarded_``). In open-world mode unmatched detections
    start tentative tracks and a track is dropped once its gap exceeds
    ``max_gap``.
    """

    def __init__(self, cutoff_cost=0.6, max_gap=15, min_hits=3,
                 closed_world=False, process_noise=1e-2, measurement_noise=1.0,
                 initial_velocity_variance=100.0, emit_coasting=True):
        self.cutoff_cost = cutoff_cost
        self.max_gap = max_gap
        self.min_hits = min_hits
        self.closed_world = closed_world
        self.process_noise = process_noise
        self.measurement_noise = measurement_noise
        self.initial_velocity_variance = initial_velocity_variance
        self.emit_coasting = emit_coasting

    @classmethod
    def from_config(cls, config: TrackerConfig) -> "MultiObjectTracker":
        return cls(**asdict(config))

    def _reset(self) -> None:
        self.tracks_: list[Track] = []
        self.removed_tracks_: list[Track] = []
        self.discarded_: int = 0
        self.frames_processed_: int = 0
        self._next_id = 1
        self._last_frame: int | None = None
        self._seeded = False
        TrackerConfig(self.cutoff_cost, self.max_gap, self.min_hits,
                      self.closed_world, self.process_noise,
                      self.measurement_noise, self.initial_velocity_variance,
                      self.emit_coasting)

    def _spawn(self, frame: int, det: DetectionRecord, confirmed: bool) -> Track:
        state = kf_init(det, self.measurement_noise, self.initial_velocity_variance)
        track = Track(
            track_id=self._next_id,
            state=state,
            extent=(det.bbox[2], det.bbox[3]),
            status=CONFIRMED if confirmed else TENTATIVE,
            last_mask=det.mask,
            last_confidence=det.confidence,
            first_frame=frame,
            last_matched_frame=frame,
        )
        track.history.append((frame, det.bbox))
        self._next_id += 1
        self.tracks_.append(track)
        return track

    def step(self, frame_index: int, detections: list[DetectionRecord]) -> StepResult:
        if not hasattr(self, "tracks_"):
            self._reset()
        if self._last_frame is not None and frame_index <= self._last_frame:
            raise errors.NonMonotonicFrameIndex(
                f"frame {frame_index} after {self._last_frame}")
        self._last_frame = frame_index
        self.frames_processed_ += 1

        for track in self.tracks_:
            track.state = kf_predict(track.state, self.process_noise)

        cost = build_cost_matrix(self.tracks_, detections)
        assignment: Assignment = hungarian_assign(cost, self.cutoff_cost) \
            if self.tracks_ and detections else Assignment(
                unmatched_tracks=list(range(len(self.tracks_))),
                unmatched_dets=list(range(len(detections))))

        result = StepResult(frame=frame_index, matches=[], new_track_ids=[],
                            discarded_dets=[], outputs=[])

        for track_idx, det_idx, pair_cost in assignment.matches:
            track = self.tracks_[track_idx]
            det = detections[det_idx]
            track.state = kf_update(track.state, det.centroid,
                                    self.measurement_noise)
            track.extent = (det.bbox[2], det.bbox[3])
            track.last_mask = det.mask
            track.last_confidence = det.confidence
            track.consecutive_hits += 1
            track.total_hits += 1
            track.gap = 0
            track.last_matched_frame = frame_index
            track.history.append((frame_index, det.bbox))
            if track.status == TENTATIVE and track.consecutive_hits >= self.min_hits:
                track.status = CONFIRMED
            result.matches.append((track.track_id, det_idx, pair_cost))
            if track.status == CONFIRMED:
                result.outputs.append(DetectionRecord(
                    frame=frame_index, bbox=det.bbox, confidence=det.confidence,
                    track_id=track.track_id, mask=det.mask))

        to_remove: list[Track] = []
        for track_idx in assignment.unmatched_tracks:
            track = self.tracks_[track_idx]
            track.gap += 1
            track.consecutive_hits = 0
            if not self.closed_world and track.gap > self.max_gap:
                track.status = LOST
                to_remove.append(track)
                continue
            if track.status == CONFIRMED and self.emit_coasting:
                bbox = track.predicted_bbox()
                track.history.append((frame_index, bbox))
                result.outputs.append(DetectionRecord(
                    frame=frame_index, bbox=bbox,
                    confidence=track.last_confidence,
                    track_id=track.track_id, mask=track.predicted_mask()))
        for track in to_remove:
            self.tracks_.remove(track)
            self.removed_tracks_.append(track)

        seed_frame = self.closed_world and not self._seeded
        for det_idx in assignment.unmatched_dets:
            det = detections[det_idx]
            if self.closed_world and not seed_frame:
                self.discarded_ += 1
                result.discarded_dets.append(det_idx)
                continue
            confirmed = seed_frame or self.min_hits <= 1
            track = self._spawn(frame_index, det, confirmed)
            result.new_track_ids.append(track.track_id)
            if track.status == CONFIRMED:
                result.outputs.append(DetectionRecord(
                    frame=frame_index, bbox=det.bbox, confidence=det.confidence,
                    track_id=track.track_id, mask=det.mask))
        self._seeded = True
        return result

    def track_sequence(self, records: list[DetectionRecord],
                       n_frames: int | None = None) -> list[DetectionRecord]:
        """Run step() over all frames found in the records (plus empty frames
        up to n_frames) and return the concatenated track records."""
        by_frame = group_by_frame(records)
        last = max(by_frame) + 1 if by_frame else 0
        total = max(n_frames or 0, last)
        outputs: list[DetectionRecord] = []
        for frame in range(total):
            outputs.extend(self.step(frame, by_frame.get(frame, [])).outputs)
        return outputs

    def summary(self) -> dict:
        """Run statistics for the machine-readable report."""
        if not hasattr(self, "tracks_"):
            self._reset()
        lifespans = {}
        for track in self.tracks_ + self.removed_tracks_:
            lifespans[track.track_id] = {
                "first_frame": track.first_frame + 1,
                "last_matched_frame": track.last_matched_frame + 1,
                "hits": track.total_hits,
                "status": track.status,
            }
        return {
            "config": self.get_params(),
            "frames_processed": self.frames_processed_,
            "discarded_detections": self.discarded_,
            "tracks": {str(k): lifespans[k] for k in sorted(lifespans)},
        }
