"""
Pipeline Controller - projection, inference and the latency benchmark.
"""

import csv
import io
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from ..utilities.config import RunConfig
from ..utilities.dataio import frame_record, save_class_map_image, save_frame_array, save_labeled_cloud, \
    save_range_preview
from ..utilities.errors import DataError
from ..utilities.file_io import write_file
from ..utilities.metrics import REFERENCE_LATENCY_MS
from ..utilities.network import ModelParams, argmax_classes, model_forward
from ..utilities.projection import BACKGROUND, CLASS_NAMES, backproject, class_map_from_labels, project
from ..utilities.ransac import refine
from .common import Result, guarded, load_input, load_model, require

logger = logging.getLogger(__name__)

STAGES = ("projection", "forward", "argmax", "back-projection", "ransac")


@dataclass
class StageTiming:
    stage: str
    samples_ms: List[float]

    @property
    def count(self) -> int:
        return len(self.samples_ms)

    @property
    def median_ms(self) -> float:
        return float(np.median(self.samples_ms))

    @property
    def p95_ms(self) -> float:
        return float(np.percentile(self.samples_ms, 95))

    @property
    def mean_ms(self) -> float:
        return float(np.mean(self.samples_ms))


class PipelineController:
    """Controller for single-frame operations."""

    def __init__(self, config: RunConfig) -> None:
        self.config = config
        self.params: Optional[ModelParams] = None
        self.timings: List[StageTiming] = []

    def _model(self) -> ModelParams:
        if self.params is None:
            self.params = load_model(self.config)
        return self.params

    def project_scan(self) -> Result:
        """
        Project a scan and save the frame array plus a range preview.

        Returns:
            tuple: (success: bool, message: str, error: PointSegError | None)
        """
        def action() -> str:
            source = require(self.config.input, "--input", "project")
            out = Path(require(self.config.output, "--output", "project"))
            _, frame = load_input(source, self.config)
            frame_path, preview_path = out.with_suffix(".npy"), out.with_suffix(".png")
            save_frame_array(frame_record(frame), frame_path)
            save_range_preview(frame, preview_path)
            return (f"projected {int(frame.occupancy.sum())} occupied pixels "
                    f"({frame.height}x{frame.width}) -> {frame_path}, {preview_path}")

        return guarded(action)

    def infer(self) -> Result:
        """
        Segment one frame or scan; writes ``<output>.ppm`` and ``<output>.txt``.

        Unoccupied pixels carry no point and are always reported as background. With
        ``ransac`` the image shows the refined labels, the same ones written to the text file.

        Returns:
            tuple: (success: bool, message: str, error: PointSegError | None)
        """
        def action() -> str:
            source = require(self.config.input, "--input", "infer")
            out = Path(require(self.config.output, "--output", "infer"))
            cloud, frame = load_input(source, self.config)
            class_map = argmax_classes(model_forward(frame, self._model()).data)
            class_map[~frame.occupancy] = BACKGROUND
            labeled = backproject(frame, class_map, cloud)
            note = ""
            if self.config.ransac:
                refined, labeled, warning = refine(labeled, self.config.ransac_config())
                note = " (ransac refined)" if refined else f" (ransac skipped: {warning})"
                class_map = class_map_from_labels(frame, labeled)
            image_path, cloud_path = out.with_suffix(".ppm"), out.with_suffix(".txt")
            save_class_map_image(class_map, image_path)
            save_labeled_cloud(labeled, cloud_path)
            histogram = np.bincount(labeled.labels, minlength=len(CLASS_NAMES))
            summary = ", ".join(f"{name} {count}" for name, count in zip(CLASS_NAMES, histogram))
            return f"labelled {len(labeled)} points{note}: {summary} -> {image_path}, {cloud_path}"

        return guarded(action)

    def run_bench(self) -> List[StageTiming]:
        """
        Time ``warmup + iterations`` passes of the whole pipeline, keeping the last ``iterations``.

        A .npy frame's own points are projected for the projection timing, while the
        later stages run on the frame as stored.

        Raises:
            DataError: when the input has no occupied pixels
        """
        cfg = self.config
        source = require(cfg.input, "--input", "bench")
        cloud, loaded = load_input(source, cfg)
        if not loaded.occupancy.any():
            raise DataError(f"{source} has no occupied pixels, nothing to benchmark")
        stored_frame = Path(source).suffix.lower() == ".npy"
        params = self._model()
        projection = cfg.projection_config()
        ransac_cfg = cfg.ransac_config()
        samples: Dict[str, List[float]] = {stage: [] for stage in STAGES}

        for iteration in range(cfg.warmup + cfg.iterations):
            marks = [time.perf_counter()]
            frame = project(cloud, projection)
            marks.append(time.perf_counter())
            if stored_frame:
                frame = loaded
            probabilities = model_forward(frame, params)
            marks.append(time.perf_counter())
            class_map = argmax_classes(probabilities.data)
            marks.append(time.perf_counter())
            labeled = backproject(frame, class_map, cloud)
            marks.append(time.perf_counter())
            refine(labeled, ransac_cfg)
            marks.append(time.perf_counter())
            if iteration < cfg.warmup:
                continue
            for stage, start, stop in zip(STAGES, marks[:-1], marks[1:]):
                samples[stage].append((stop - start) * 1000.0)

        self.timings = [StageTiming(stage, samples[stage]) for stage in STAGES]
        return self.timings

    def bench(self) -> Result:
        """
        Time every pipeline stage after ``warmup`` untimed iterations.

        Returns:
            tuple: (success: bool, table: str, error: PointSegError | None)
        """
        def action() -> str:
            timings = self.run_bench()
            if self.config.output:
                ok, message = write_file(self.config.output, bench_csv(timings))
                if not ok:
                    raise DataError(message)
            return format_bench_table(timings)

        return guarded(action)


def format_bench_table(timings: List[StageTiming]) -> str:
    lines = [f"{'stage':<16}{'count':>7}{'median ms':>12}{'p95 ms':>10}{'mean ms':>10}"]
    for t in timings:
        lines.append(f"{t.stage:<16}{t.count:>7}{t.median_ms:>12.3f}{t.p95_ms:>10.3f}{t.mean_ms:>10.3f}")
    reference = ", ".join(f"{name} {ms:.0f} ms" for name, ms in REFERENCE_LATENCY_MS.items())
    lines.append(f"reference (single desktop GPU): {reference}")
    return "\n".join(lines)


def bench_csv(timings: List[StageTiming]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["stage", "count", "median_ms", "p95_ms", "mean_ms"])
    for t in timings:
        writer.writerow([t.stage, t.count, f"{t.median_ms:.4f}", f"{t.p95_ms:.4f}", f"{t.mean_ms:.4f}"])
    return buffer.getvalue()
