"""Localization metrics and heat-map export.

Detection uses the bounding box implied by the parsed center and the
template's fixed scale; center prediction only asks whether the predicted
center falls inside the ground-truth box; normalized distance divides the
center error by the image diagonal (recorded in every report so numbers
are comparable across runs).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .features import FeatureVolume, PartAnnotation
from .model import Region
from .parsing import ParseGraph

IOU_THRESHOLD = 0.5
DISTANCE_NORMALIZER = "image-diagonal"


def iou(a: Region, b: Region) -> float:
    ax1, ay1, ax2, ay2 = a.bbox
    bx1, by1, bx2, by2 = b.bbox
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def center_prediction(pred_center: tuple[float, float], gt_box: tuple[float, float, float, float]) -> bool:
    """True iff the center lies inside the closed ground-truth box."""
    x1, y1, x2, y2 = gt_box
    return x1 <= pred_center[0] <= x2 and y1 <= pred_center[1] <= y2


def normalized_distance(
    pred_center: tuple[float, float],
    gt_center: tuple[float, float],
    image_dims: tuple[float, float],
) -> float:
    diag = math.hypot(image_dims[0], image_dims[1])
    return math.hypot(pred_center[0] - gt_center[0], pred_center[1] - gt_center[1]) / diag


@dataclass(frozen=True)
class EvalRecord:
    image_id: str
    predicted_center: tuple[float, float]
    predicted_bbox: tuple[float, float, float, float]
    gt_bbox: tuple[float, float, float, float]
    iou: float
    detected: bool
    center_correct: bool
    distance: float


@dataclass
class EvalReport:
    records: list[EvalRecord]

    @property
    def detection_rate(self) -> float:
        return sum(r.detected for r in self.records) / len(self.records)

    @property
    def center_prediction_rate(self) -> float:
        return sum(r.center_correct for r in self.records) / len(self.records)

    @property
    def mean_normalized_distance(self) -> float:
        return sum(r.distance for r in self.records) / len(self.records)

    def to_json_dict(self) -> dict:
        return {
            "distance_normalizer": DISTANCE_NORMALIZER,
            "iou_threshold": IOU_THRESHOLD,
            "detection_rate": self.detection_rate,
            "center_prediction_rate": self.center_prediction_rate,
            "mean_normalized_distance": self.mean_normalized_distance,
            "records": [
                {
                    "image": r.image_id,
                    "center": list(r.predicted_center),
                    "bbox": list(r.predicted_bbox),
                    "gt_bbox": list(r.gt_bbox),
                    "iou": r.iou,
                    "detected": r.detected,
                    "center_correct": r.center_correct,
                    "distance": r.distance,
                }
                for r in self.records
            ],
        }


def evaluate_parse(
    parse: ParseGraph, annotation: PartAnnotation, image_dims: tuple[float, float]
) -> EvalRecord:
    gt_box = annotation.bbox
    gt_region = Region(
        center=((gt_box[0] + gt_box[2]) / 2, (gt_box[1] + gt_box[3]) / 2),
        scale=(gt_box[2] - gt_box[0], gt_box[3] - gt_box[1]),
    )
    overlap = iou(parse.part_region, gt_region)
    center = parse.part_region.center
    return EvalRecord(
        image_id=parse.image_id,
        predicted_center=center,
        predicted_bbox=parse.part_region.bbox,
        gt_bbox=gt_box,
        iou=overlap,
        detected=overlap >= IOU_THRESHOLD,
        center_correct=center_prediction(center, gt_box),
        distance=normalized_distance(center, gt_region.center, image_dims),
    )


def evaluate(
    parses: list[ParseGraph],
    annotations: list[PartAnnotation],
    image_dims: tuple[float, float],
) -> EvalReport:
    by_image = {a.image_id: a for a in annotations}
    records = []
    for parse in parses:
        ann = by_image.get(parse.image_id)
        if ann is None:
            raise KeyError(f"no annotation for parsed image {parse.image_id!r}")
        records.append(evaluate_parse(parse, ann, image_dims))
    if not records:
        raise ValueError("nothing to evaluate")
    return EvalReport(records)


def save_report(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def heatmap(parse: ParseGraph, vol: FeatureVolume, layer_id: int) -> np.ndarray:
    """Sum of the chosen units' raw activations, one cell per unit.

    Patterns of the chosen template that live on other layers are ignored;
    a layer without any chosen unit yields an all-zero map.
    """
    geom, acts = vol.layer(layer_id)
    out = np.zeros((geom.height, geom.width), dtype=np.float64)
    for rec in parse.chosen.patterns:
        if rec.layer_id != layer_id:
            continue
        ix, iy = rec.unit
        out[iy, ix] += float(acts[rec.conv_slice, iy, ix])
    return out


def heatmap_export(parse: ParseGraph, vol: FeatureVolume, layer_id: int, path) -> None:
    """Write the layer heat map as a binary PGM, min-max scaled to 0..255."""
    grid = heatmap(parse, vol, layer_id)
    lo = float(grid.min())
    hi = float(grid.max())
    if hi > lo:
        scaled = np.round((grid - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        scaled = np.zeros_like(grid, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{grid.shape[1]} {grid.shape[0]}\n255\n".encode("ascii"))
        fh.write(scaled.tobytes())
