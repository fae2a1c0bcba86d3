"""Tracking and detection metrics.

CLEAR correspondence with carry-over, identity measures under the optimal
global id mapping, detection precision/recall/AP, and a combined report.
All functions consume lists of :class:`~planartrack.ingest.DetectionRecord`
(ground truth must carry real track ids).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import errors
from .assignment import hungarian_assign, solve_square
from .ingest import DetectionRecord, box_iou, box_iou_matrix, group_by_frame

__all__ = [
    "ClearCounts", "IdCounts", "FrameMatching", "EvaluationReport",
    "match_frames", "mota", "motp", "deta", "id_metrics", "detection_pr",
    "evaluate_tracking",
]


@dataclass
class ClearCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    idsw: int = 0
    gt: int = 0


@dataclass
class IdCounts:
    idtp: int = 0
    idfp: int = 0
    idfn: int = 0


@dataclass
class FrameMatching:
    """Per-frame matched (gt_id, hyp_id, d) triples with d = 1 - IoU."""

    per_frame: dict[int, list[tuple[int, int, float]]] = field(default_factory=dict)

    @property
    def distances(self) -> list[float]:
        return [d for matches in self.per_frame.values() for (_, _, d) in matches]


def _boxes_by_id(records: list[DetectionRecord], frame: int,
                 source: str) -> dict[int, tuple]:
    out: dict[int, tuple] = {}
    for rec in records:
        if rec.track_id in out:
            raise errors.DuplicateId(
                f"id {rec.track_id} appears twice in {source} frame {frame + 1}")
        out[rec.track_id] = rec.bbox
    return out


def match_frames(gt: list[DetectionRecord], hyp: list[DetectionRecord],
                 match_threshold: float = 0.5,
                 ) -> tuple[FrameMatching, ClearCounts, dict[int, dict]]:
    """CLEAR correspondence over a sequence.

    Per frame: correspondences from the previous frame that still overlap
    at IoU >= match_threshold are kept; the remainder is matched by the
    Hungarian algorithm on 1 - IoU (pairs under the threshold are not
    matchable); leftover gt counts FN, leftover hyp counts FP. An identity
    switch is counted when a gt object matches a different hyp id than at
    its most recent previously matched frame.

    Returns (FrameMatching, ClearCounts, per-frame event counts).
    """
    gt_frames = group_by_frame(gt)
    hyp_frames = group_by_frame(hyp)
    frames = sorted(set(gt_frames) | set(hyp_frames))

    matching = FrameMatching()
    counts = ClearCounts(gt=len(gt))
    per_frame_events: dict[int, dict] = {}
    prev_pairs: dict[int, int] = {}
    last_hyp_for_gt: dict[int, int] = {}

    for frame in frames:
        gt_boxes = _boxes_by_id(gt_frames.get(frame, []), frame, "gt")
        hyp_boxes = _boxes_by_id(hyp_frames.get(frame, []), frame, "hyp")
        matches: list[tuple[int, int, float]] = []

        # carry over still-valid pairs before re-matching
        used_hyp: set[int] = set()
        remaining_gt = dict(gt_boxes)
        for g, h in prev_pairs.items():
            if g in remaining_gt and h in hyp_boxes and h not in used_hyp:
                iou = box_iou(remaining_gt[g], hyp_boxes[h])
                if iou >= match_threshold:
                    matches.append((g, h, 1.0 - iou))
                    used_hyp.add(h)
                    del remaining_gt[g]

        free_gt = sorted(remaining_gt)
        free_hyp = sorted(h for h in hyp_boxes if h not in used_hyp)
        if free_gt and free_hyp:
            iou = box_iou_matrix(
                np.array([remaining_gt[g] for g in free_gt]),
                np.array([hyp_boxes[h] for h in free_hyp]))
            cutoff = 1.0 - match_threshold
            solution = hungarian_assign(np.clip(1.0 - iou, 0.0, 1.0), cutoff)
            for gi, hi, _ in solution.matches:
                pair_iou = float(iou[gi, hi])
                if pair_iou >= match_threshold:
                    matches.append((free_gt[gi], free_hyp[hi], 1.0 - pair_iou))
                    used_hyp.add(free_hyp[hi])

        matched_gt = {g for g, _, _ in matches}
        frame_fn = len(gt_boxes) - len(matched_gt)
        frame_fp = len(hyp_boxes) - len(used_hyp)
        frame_idsw = 0
        for g, h, _ in matches:
            if g in last_hyp_for_gt and last_hyp_for_gt[g] != h:
                frame_idsw += 1
            last_hyp_for_gt[g] = h

        counts.tp += len(matches)
        counts.fn += frame_fn
        counts.fp += frame_fp
        counts.idsw += frame_idsw
        matching.per_frame[frame] = matches
        per_frame_events[frame] = {
            "tp": len(matches), "fp": frame_fp, "fn": frame_fn,
            "idsw": frame_idsw,
        }
        prev_pairs = {g: h for g, h, _ in matches}

    return matching, counts, per_frame_events


def mota(counts: ClearCounts) -> float:
    """Multi-object tracking accuracy, 1 - (FN + FP + IDSW) / GT.

    May be negative; never clamped.
    """
    if counts.gt <= 0:
        raise errors.ZeroGroundTruth("GT must be positive")
    return 1.0 - (counts.fn + counts.fp + counts.idsw) / counts.gt


def motp(matching: FrameMatching) -> float:
    """Mean matching distance d = 1 - IoU over all matched pairs (lower is
    better)."""
    distances = matching.distances
    if not distances:
        raise errors.NoMatches("no matched pairs")
    return float(np.mean(distances))


def deta(counts: ClearCounts) -> float:
    """Detection accuracy TP / (TP + FN + FP)."""
    denom = counts.tp + counts.fn + counts.fp
    if denom <= 0:
        raise errors.EmptyEvaluation("no boxes to evaluate")
    return counts.tp / denom


def id_metrics(gt: list[DetectionRecord], hyp: list[DetectionRecord],
               iou_threshold: float = 0.5) -> tuple[IdCounts, float]:
    """IDF1 under the optimal global identity mapping.

    A gt identity and a hyp identity may be paired at most once for the
    whole sequence; the mapping minimizing IDFP + IDFN is found by solving
    a square assignment over (gt ids + hyp ids), where pairing counts as
    IDTP every frame the two boxes overlap at IoU >= iou_threshold.
    """
    if not gt:
        raise ValueError("ground truth must be non-empty")
    gt_frames = group_by_frame(gt)
    hyp_frames = group_by_frame(hyp)
    gt_ids = sorted({r.track_id for r in gt})
    hyp_ids = sorted({r.track_id for r in hyp})
    g_index = {g: i for i, g in enumerate(gt_ids)}
    h_index = {h: i for i, h in enumerate(hyp_ids)}

    overlap = np.zeros((len(gt_ids), len(hyp_ids)))
    for frame in set(gt_frames) & set(hyp_frames):
        g_recs = gt_frames[frame]
        h_recs = hyp_frames[frame]
        iou = box_iou_matrix(np.array([r.bbox for r in g_recs]),
                             np.array([r.bbox for r in h_recs]))
        for i, g_rec in enumerate(g_recs):
            for j, h_rec in enumerate(h_recs):
                if iou[i, j] >= iou_threshold:
                    overlap[g_index[g_rec.track_id], h_index[h_rec.track_id]] += 1

    len_gt = np.zeros(len(gt_ids))
    for rec in gt:
        len_gt[g_index[rec.track_id]] += 1
    len_hyp = np.zeros(len(hyp_ids))
    for rec in hyp:
        len_hyp[h_index[rec.track_id]] += 1

    n_g, n_h = len(gt_ids), len(hyp_ids)
    total_gt, total_hyp = len(gt), len(hyp)
    big = float(total_gt + total_hyp + 1)
    size = n_g + n_h
    cost = np.full((size, size), big)
    cost[:n_g, :n_h] = len_gt[:, None] + len_hyp[None, :] - 2.0 * overlap
    for i in range(n_g):
        cost[i, n_h + i] = len_gt[i]        # gt left unmapped
    for j in range(n_h):
        cost[n_g + j, j] = len_hyp[j]       # hyp left unmapped
    cost[n_g:, n_h:] = 0.0

    col_of_row = solve_square(cost) if size else []
    idtp = 0
    for i in range(n_g):
        j = col_of_row[i]
        if j < n_h:
            idtp += int(overlap[i, j])
    counts = IdCounts(idtp=idtp, idfp=total_hyp - idtp, idfn=total_gt - idtp)
    denom = 2 * counts.idtp + counts.idfp + counts.idfn
    idf1 = 2.0 * counts.idtp / denom if denom > 0 else 0.0
    return counts, idf1


# ---------------------------------------------------------------------------
# detection metrics


def _greedy_detection_matching(dets: list[DetectionRecord],
                               gt: list[DetectionRecord],
                               iou_threshold: float) -> list[bool]:
    """TP/FP flag per detection in confidence-descending order."""
    gt_frames = group_by_frame(gt)
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    claimed: set[tuple[int, int]] = set()   # (frame, gt index within frame)
    flags: list[bool] = []
    for i in order:
        det = dets[i]
        candidates = gt_frames.get(det.frame, [])
        best_iou = 0.0
        best_j = -1
        for j, g in enumerate(candidates):
            if (det.frame, j) in claimed:
                continue
            iou = box_iou(det.bbox, g.bbox)
            if iou > best_iou:
                best_iou = iou
                best_j = j
        if best_j >= 0 and best_iou >= iou_threshold:
            claimed.add((det.frame, best_j))
            flags.append(True)
        else:
            flags.append(False)
    return flags


def _average_precision(flags: list[bool], n_gt: int,
                       interpolation: str = "all-point") -> float:
    """AP from ranked TP/FP flags.

    "all-point" integrates precision at every recall increase (no
    smoothing), matching the hand-walk p_k * delta_r accumulation;
    "101-point" samples the monotone precision envelope at recalls
    0.00:0.01:1.00 (COCO style).
    """
    if n_gt <= 0:
        raise errors.EmptyEvaluation("AP needs ground truth")
    if not flags:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum([not f for f in flags])
    precision = tp / (tp + fp)
    recall = tp / n_gt
    if interpolation == "all-point":
        prev_recall = np.concatenate([[0.0], recall[:-1]])
        return float(np.sum((recall - prev_recall) * precision))
    if interpolation == "101-point":
        envelope = np.maximum.accumulate(precision[::-1])[::-1]
        sample_points = np.linspace(0.0, 1.0, 101)
        sampled = np.zeros_like(sample_points)
        for k, r in enumerate(sample_points):
            valid = recall >= r
            sampled[k] = envelope[valid][0] if valid.any() else 0.0
        return float(sampled.mean())
    raise ValueError(f"unknown interpolation {interpolation!r}")


def detection_pr(dets: list[DetectionRecord], gt: list[DetectionRecord],
                 iou_threshold: float = 0.5,
                 interpolation: str = "all-point",
                 ) -> tuple[float, float, float, float]:
    """Single-class precision, recall, F1, and AP at one IoU threshold.

    Detections are matched greedily in confidence-descending order to the
    unclaimed ground-truth box of highest IoU at or above the threshold.
    """
    flags = _greedy_detection_matching(dets, gt, iou_threshold)
    n_gt = len(gt)
    tp = sum(flags)
    fp = len(flags) - tp
    fn = n_gt - tp
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / n_gt if n_gt > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    ap = _average_precision(flags, n_gt, interpolation)
    return precision, recall, f1, ap


@dataclass
class EvaluationReport:
    mota: float
    motp: float
    idf1: float
    deta: float
    precision: float
    recall: float
    f1: float
    ap_per_threshold: dict[float, float]
    map50: float
    map50_95: float
    clear: ClearCounts
    ids: IdCounts

    def to_json_dict(self) -> dict:
        return {
            "mota": self.mota,
            "motp": self.motp,
            "motp_distance": "1 - IoU",
            "idf1": self.idf1,
            "deta": self.deta,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "ap_per_threshold": {f"{t:.2f}": v for t, v in self.ap_per_threshold.items()},
            "map50": self.map50,
            "map50_95": self.map50_95,
            "counts": {
                "tp": self.clear.tp, "fp": self.clear.fp, "fn": self.clear.fn,
                "idsw": self.clear.idsw, "gt": self.clear.gt,
                "idtp": self.ids.idtp, "idfp": self.ids.idfp, "idfn": self.ids.idfn,
            },
        }

    def table(self) -> str:
        rows = [
            ("MOTA", f"{self.mota * 100:.2f}%"),
            ("MOTP", f"{self.motp:.4f}"),
            ("IDF1", f"{self.idf1 * 100:.2f}%"),
            ("DetA", f"{self.deta:.4f}"),
            ("Precision", f"{self.precision:.4f}"),
            ("Recall", f"{self.recall:.4f}"),
            ("F1", f"{self.f1:.4f}"),
            ("mAP50", f"{self.map50:.4f}"),
            ("mAP50-95", f"{self.map50_95:.4f}"),
            ("TP/FP/FN", f"{self.clear.tp}/{self.clear.fp}/{self.clear.fn}"),
            ("IDSW", str(self.clear.idsw)),
        ]
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def evaluate_tracking(gt: list[DetectionRecord], hyp: list[DetectionRecord],
                      match_threshold: float = 0.5,
                      interpolation: str = "all-point",
                      ) -> tuple[EvaluationReport, dict[int, dict]]:
    """Full scoring of a hypothesis file against ground truth.

    Returns the report plus per-frame event counts for diagnostics.
    """
    matching, clear, per_frame = match_frames(gt, hyp, match_threshold)
    ids, idf1 = id_metrics(gt, hyp)
    thresholds = [round(0.5 + 0.05 * k, 2) for k in range(10)]
    ap_per_threshold = {}
    precision = recall = f1 = 0.0
    for t in thresholds:
        p, r, f, ap = detection_pr(hyp, gt, iou_threshold=t,
                                   interpolation=interpolation)
        ap_per_threshold[t] = ap
        if t == match_threshold:
            precision, recall, f1 = p, r, f
    if match_threshold not in thresholds:
        precision, recall, f1, _ = detection_pr(
            hyp, gt, iou_threshold=match_threshold, interpolation=interpolation)
    report = EvaluationReport(
        mota=mota(clear),
        motp=motp(matching) if matching.distances else 0.0,
        idf1=idf1,
        deta=deta(clear),
        precision=precision,
        recall=recall,
        f1=f1,
        ap_per_threshold=ap_per_threshold,
        map50=ap_per_threshold[0.5],
        map50_95=float(np.mean(list(ap_per_threshold.values()))),
        clear=clear,
        ids=ids,
    )
    return report, per_frame
