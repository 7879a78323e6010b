"""
Metrics - per-class precision, recall and IoU over pixel sets.

For class n with predicted pixels rho_n and ground-truth pixels G_n:
precision = |rho_n & G_n| / |rho_n|, recall = |rho_n & G_n| / |G_n| and
IoU = |rho_n & G_n| / |rho_n | G_n|. A ratio with a zero denominator is
undefined (None) and left out of every mean.
"""

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DataError, ShapeError
from .file_io import write_file
from .projection import CLASS_NAMES, NUM_CLASSES

FOREGROUND = (1, 2, 3)

# Full-scale results reported for this architecture (percent; car, pedestrian,
# cyclist x precision, recall, IoU). Reference targets only, never asserted.
REFERENCE_RESULTS: Dict[str, Tuple[float, ...]] = {
    "reference": (74.8, 92.3, 67.4, 41.4, 29.3, 19.2, 41.4, 59.7, 32.7),
    "reference + RANSAC": (77.2, 96.2, 67.3, 48.6, 29.4, 23.9, 46.3, 63.3, 38.7),
    "reference downsample 4": (63.7, 91.3, 62.9, 13.0, 19.5, 0.8, 20.4, 54.7, 18.9),
}
# Reported per-frame latency on a single desktop GPU, milliseconds.
REFERENCE_LATENCY_MS = {"forward": 12.0, "forward + RANSAC": 14.0}

Fraction = Optional[float]


@dataclass
class ClassCounts:
    """Pixel counts per class: true positives, predicted and ground truth."""
    tp: np.ndarray = field(default_factory=lambda: np.zeros(NUM_CLASSES, dtype=np.int64))
    pred: np.ndarray = field(default_factory=lambda: np.zeros(NUM_CLASSES, dtype=np.int64))
    gt: np.ndarray = field(default_factory=lambda: np.zeros(NUM_CLASSES, dtype=np.int64))

    @classmethod
    def empty(cls, num_classes: int = NUM_CLASSES) -> "ClassCounts":
        return cls(*(np.zeros(num_classes, dtype=np.int64) for _ in range(3)))

    @property
    def num_classes(self) -> int:
        return int(self.tp.shape[0])

    @property
    def union(self) -> np.ndarray:
        return self.pred + self.gt - self.tp

    def merge(self, other: "ClassCounts") -> "ClassCounts":
        if other.num_classes != self.num_classes:
            raise ShapeError(f"cannot merge counts over {self.num_classes} and {other.num_classes} classes")
        return ClassCounts(self.tp + other.tp, self.pred + other.pred, self.gt + other.gt)


@dataclass
class EvalReport:
    precision: List[Fraction]
    recall: List[Fraction]
    iou: List[Fraction]
    frames: int = 0
    stage_ms: Dict[str, float] = field(default_factory=dict)
    class_names: Sequence[str] = CLASS_NAMES

    def mean_iou(self, classes: Sequence[int] = FOREGROUND) -> Fraction:
        """Mean IoU over the given classes that are defined; None when none are."""
        values = [self.iou[c] for c in classes if self.iou[c] is not None]
        return float(np.mean(values)) if values else None


def accumulate(pred_map: np.ndarray, gt_map: np.ndarray, counts: ClassCounts,
               occupancy: Optional[np.ndarray] = None) -> ClassCounts:
    """
    Add one frame's pixels to ``counts``.

    Args:
        pred_map: H x W predicted class ids
        gt_map: H x W ground-truth class ids
        counts: Counts so far (not modified)
        occupancy: Optional H x W mask; only occupied pixels are counted

    Returns:
        ClassCounts: the incremented counts
    """
    pred_map = np.asarray(pred_map)
    gt_map = np.asarray(gt_map)
    if pred_map.shape != gt_map.shape:
        raise ShapeError(f"prediction shape {pred_map.shape} does not match ground truth {gt_map.shape}")
    if occupancy is not None:
        occupancy = np.asarray(occupancy, dtype=bool)
        if occupancy.shape != pred_map.shape:
            raise ShapeError(f"occupancy shape {occupancy.shape} does not match maps {pred_map.shape}")
        pred_map, gt_map = pred_map[occupancy], gt_map[occupancy]
    pred = pred_map.reshape(-1).astype(np.int64)
    gt = gt_map.reshape(-1).astype(np.int64)
    k = counts.num_classes
    for name, ids in (("prediction", pred), ("ground truth", gt)):
        if ids.size and (ids.min() < 0 or ids.max() >= k):
            raise DataError(f"{name} class ids must lie in [0, {k - 1}]")

    hits = pred[pred == gt]
    frame = ClassCounts(np.bincount(hits, minlength=k), np.bincount(pred, minlength=k),
                        np.bincount(gt, minlength=k))
    return counts.merge(frame)


def _ratio(numerator: int, denominator: int) -> Fraction:
    return float(numerator) / float(denominator) if denominator else None


def finalize(counts: ClassCounts, frames: int = 0,
             stage_ms: Optional[Dict[str, float]] = None) -> EvalReport:
    union = counts.union
    classes = range(counts.num_classes)
    return EvalReport(
        precision=[_ratio(counts.tp[c], counts.pred[c]) for c in classes],
        recall=[_ratio(counts.tp[c], counts.gt[c]) for c in classes],
        iou=[_ratio(counts.tp[c], union[c]) for c in classes],
        frames=frames,
        stage_ms=dict(stage_ms or {}),
        class_names=CLASS_NAMES[:counts.num_classes],
    )


def _percent(value: Fraction) -> str:
    return "undef" if value is None else f"{100.0 * value:.1f}"


def format_report_table(report: EvalReport, label: str = "this run", with_reference: bool = True) -> str:
    """
    Plain-text table: one row per method, precision/recall/IoU grouped per
    foreground class (car, pedestrian, cyclist), values in percent.
    """
    group = ("precision", "recall", "iou")
    width = 22
    lines = [f"{'':<{width}}" + "".join(f"{report.class_names[c]:<27}" for c in FOREGROUND),
             f"{'method':<{width}}" + "".join(f"{name:>9}" for _ in FOREGROUND for name in group)]
    ours = [getattr(report, name)[c] for c in FOREGROUND for name in group]
    lines.append(f"{label:<{width}}" + "".join(f"{_percent(v):>9}" for v in ours))
    if with_reference:
        for name, row in REFERENCE_RESULTS.items():
            lines.append(f"{name:<{width}}" + "".join(f"{v:>9.1f}" for v in row))
    lines.append("")
    lines.append(f"background  precision {_percent(report.precision[0])}  recall {_percent(report.recall[0])}"
                 f"  iou {_percent(report.iou[0])}")
    mean = report.mean_iou()
    lines.append(f"frames {report.frames}  mean foreground iou {_percent(mean)}")
    for stage, ms in report.stage_ms.items():
        lines.append(f"  {stage:<16} {ms:8.2f} ms/frame")
    return "\n".join(lines) + "\n"


def report_csv(report: EvalReport) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["class", "precision", "recall", "iou"])
    for c, name in enumerate(report.class_names):
        writer.writerow([name] + ["" if v is None else f"{v:.6f}"
                                  for v in (report.precision[c], report.recall[c], report.iou[c])])
    return buffer.getvalue()


def write_report_csv(report: EvalReport, path: Union[str, Path]) -> None:
    """class,precision,recall,iou per class; undefined values are left empty."""
    ok, message = write_file(path, report_csv(report))
    if not ok:
        raise DataError(message)
