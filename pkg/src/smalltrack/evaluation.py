"""One-pass evaluation: sequential tracking seeded from the first frame,
Success/Precision AUC metrics, and CSV reporting.

The search region for frame t >= 1 is the previous *predicted* box enlarged
by 2 m; the template aggregates the first-frame ground-truth crop with the
crop of the previous prediction. Both AUCs are exact integrals of the step
functions defined by the per-frame order statistics.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bev import decode_box
from .data import SEARCH_POINTS, SEARCH_MARGIN, TEMPLATE_POINTS, Sequence, resample
from .geometry import (
    Box3D, box_to_world, center_distance, enlarge_and_crop, points_in_box,
    rotated_iou_3d, world_to_box,
)
from .model import Tracker

__all__ = ["FrameResult", "TrackReport", "TrackerPredictor", "track_sequence",
           "success_auc", "precision_auc", "pooled_success", "pooled_precision",
           "success_gap", "write_report_csv", "write_summary_csv", "read_report_csv"]


@dataclass(frozen=True)
class FrameResult:
    frame: int
    iou: float
    center_err: float
    flagged: bool = False  # search region was empty; previous box carried forward


@dataclass(frozen=True)
class TrackReport:
    seq_id: str
    per_frame: tuple[FrameResult, ...]
    success: float
    precision: float


class TrackerPredictor:
    """Adapts a trained Tracker to the local-frame predict interface."""

    def __init__(self, model: Tracker):
        self.model = model

    def predict(self, search_local: np.ndarray, template: np.ndarray,
                template_size: np.ndarray) -> Box3D:
        out = self.model.forward(search_local, template)
        return decode_box(out.maps, self.model.cfg.bev, template_size)


def track_sequence(predictor, seq: Sequence, seed: int = 0) -> TrackReport:
    """Track one sequence start-to-end; frame 0 initializes from ground truth."""
    if len(seq.frames) < 2:
        raise ValueError("tracking needs at least 2 frames")
    first = seq.frames[0]
    size = first.gt.size
    base_crop = world_to_box(first.cloud[points_in_box(first.cloud, first.gt)], first.gt)

    box = first.gt
    results: list[FrameResult] = []
    for t in range(1, len(seq.frames)):
        rng = np.random.default_rng([seed, t])
        prev_box = box
        prev_crop_pts = seq.frames[t - 1].cloud
        prev_crop = world_to_box(
            prev_crop_pts[points_in_box(prev_crop_pts, prev_box)], prev_box)
        crop = enlarge_and_crop(seq.frames[t].cloud, prev_box, SEARCH_MARGIN)
        merged = np.concatenate([base_crop, prev_crop], axis=0)
        flagged = crop.shape[0] == 0 or merged.shape[0] == 0
        if not flagged:
            search = world_to_box(resample(crop, SEARCH_POINTS, rng), prev_box)
            template = resample(merged, TEMPLATE_POINTS, rng)
            local = predictor.predict(search.astype(np.float32),
                                      template.astype(np.float32), size)
            center = box_to_world(local.center, prev_box)[0]
            box = Box3D(center, size, prev_box.heading + local.heading)
        gt = seq.frames[t].gt
        results.append(FrameResult(frame=t, iou=rotated_iou_3d(box, gt),
                                   center_err=center_distance(box, gt), flagged=flagged))
    ious = [r.iou for r in results]
    errs = [r.center_err for r in results]
    return TrackReport(seq_id=seq.id, per_frame=tuple(results),
                       success=success_auc(ious), precision=precision_auc(errs))


# -- metrics ---------------------------------------------------------------------

def success_auc(ious) -> float:
    """Exact integral over thresholds 0..1 of the fraction of frames with
    IoU strictly above the threshold, scaled to [0, 100]. Analytically equal
    to 100 * mean(iou)."""
    vals = np.sort(np.asarray(ious, dtype=np.float64))
    if vals.size == 0:
        raise ValueError("success_auc needs at least one value")
    if vals[0] < 0 or vals[-1] > 1:
        raise ValueError("IoU values must lie in [0, 1]")
    breaks = np.concatenate([[0.0], vals, [1.0]])
    total = 0.0
    n = vals.size
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b > a:
            frac = (n - np.searchsorted(vals, b, side="left")) / n
            total += (b - a) * frac
    return float(100.0 * total)


def precision_auc(errs) -> float:
    """Exact integral over thresholds 0..2 m of the fraction of frames with
    center error strictly below the threshold, normalized to [0, 100]."""
    vals = np.sort(np.asarray(errs, dtype=np.float64))
    if vals.size == 0:
        raise ValueError("precision_auc needs at least one value")
    if vals[0] < 0:
        raise ValueError("center errors must be nonnegative")
    n = vals.size
    breaks = np.concatenate([[0.0], vals[vals < 2.0], [2.0]])
    total = 0.0
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b > a:
            frac = np.searchsorted(vals, a, side="right") / n
            total += (b - a) * frac
    return float(100.0 * total / 2.0)


def pooled_success(reports) -> float:
    return success_auc([r.iou for rep in reports for r in rep.per_frame])


def pooled_precision(reports) -> float:
    return precision_auc([r.center_err for rep in reports for r in rep.per_frame])


def success_gap(original_reports, scaled_reports) -> float:
    """Original-minus-scaled pooled Success: positive means degradation."""
    return pooled_success(original_reports) - pooled_success(scaled_reports)


# -- reporting --------------------------------------------------------------------

def write_report_csv(reports, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seq", "frame", "iou", "center_err"])
        for rep in reports:
            for r in rep.per_frame:
                writer.writerow([rep.seq_id, r.frame, repr(r.iou), repr(r.center_err)])


def write_summary_csv(reports, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seq", "success", "precision"])
        for rep in reports:
            writer.writerow([rep.seq_id, repr(rep.success), repr(rep.precision)])


def read_report_csv(path) -> list[TrackReport]:
    """Rebuild reports (and their AUCs) from a per-frame CSV."""
    rows_by_seq: dict[str, list[FrameResult]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["seq", "frame", "iou", "center_err"]:
            raise ValueError(f"unexpected report header: {reader.fieldnames}")
        for row in reader:
            rows_by_seq.setdefault(row["seq"], []).append(
                FrameResult(frame=int(row["frame"]), iou=float(row["iou"]),
                            center_err=float(row["center_err"])))
    reports = []
    for seq_id, rows in rows_by_seq.items():
        rows.sort(key=lambda r: r.frame)
        reports.append(TrackReport(
            seq_id=seq_id, per_frame=tuple(rows),
            success=success_auc([r.iou for r in rows]),
            precision=precision_auc([r.center_err for r in rows])))
    return reports
