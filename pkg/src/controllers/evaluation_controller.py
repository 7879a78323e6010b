"""
Evaluation Controller - per-class precision, recall and IoU over a frame set.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from ..utilities.config import RunConfig
from ..utilities.dataio import build_index, load_frame
from ..utilities.errors import DataError
from ..utilities.file_io import write_file
from ..utilities.metrics import ClassCounts, EvalReport, accumulate, finalize, format_report_table, \
    write_report_csv
from ..utilities.network import ModelParams, argmax_classes, model_forward
from ..utilities.projection import BACKGROUND, SphericalFrame, backproject, class_map_from_labels, \
    cloud_from_frame
from ..utilities.ransac import RansacConfig, refine
from .common import Result, guarded, load_model, require, synthetic_frames

logger = logging.getLogger(__name__)

FrameResult = Tuple[ClassCounts, Dict[str, float]]


def evaluate_frame(frame: SphericalFrame, params: ModelParams,
                   ransac: Optional[RansacConfig] = None) -> FrameResult:
    """
    Counts for one labelled frame, restricted to its occupied pixels.

    With ``ransac`` the prediction is back-projected, refined in 3D and painted
    back onto the pixels before counting.
    """
    if frame.labels is None:
        raise DataError("evaluation frames must carry labels")
    timings: Dict[str, float] = {}
    start = time.perf_counter()
    class_map = argmax_classes(model_forward(frame, params).data)
    class_map[~frame.occupancy] = BACKGROUND
    timings["forward"] = (time.perf_counter() - start) * 1000.0
    if ransac is not None:
        start = time.perf_counter()
        cloud, indexed = cloud_from_frame(frame)
        _, refined, _ = refine(backproject(indexed, class_map, cloud), ransac)
        class_map = class_map_from_labels(indexed, refined)
        timings["ransac"] = (time.perf_counter() - start) * 1000.0
    counts = accumulate(class_map, frame.labels, ClassCounts.empty(params.num_classes), frame.occupancy)
    return counts, timings


class EvaluationController:
    """Controller for dataset evaluation."""

    def __init__(self, config: RunConfig) -> None:
        self.config = config
        self.report: Optional[EvalReport] = None

    def _items(self) -> List[Union[Path, SphericalFrame]]:
        cfg = self.config
        if cfg.synthetic:
            return list(synthetic_frames(cfg))
        index = build_index(require(cfg.input, "--input (a frame directory) or --synthetic", "eval"), cfg.seed)
        val = index.split("val")
        if not val:
            logger.warning("no validation frames in %s, evaluating all %d frames", cfg.input, len(index))
        return val or list(index.paths)

    def run(self) -> EvalReport:
        cfg = self.config
        params = load_model(cfg)
        projection = cfg.projection_config()
        ransac = cfg.ransac_config() if cfg.ransac else None

        def one(item: Union[Path, SphericalFrame]) -> FrameResult:
            frame = item if isinstance(item, SphericalFrame) else load_frame(item, projection.height,
                                                                             projection.width)
            return evaluate_frame(frame, params, ransac)

        items = self._items()
        with ThreadPoolExecutor(max_workers=cfg.threads, thread_name_prefix="pointseg-eval") as pool:
            results = list(pool.map(one, items))

        counts = ClassCounts.empty(params.num_classes)
        totals: Dict[str, float] = {}
        for frame_counts, timings in results:
            counts = counts.merge(frame_counts)
            for stage, ms in timings.items():
                totals[stage] = totals.get(stage, 0.0) + ms
        stage_ms = {stage: total / len(results) for stage, total in totals.items()}
        self.report = finalize(counts, len(results), stage_ms)
        return self.report

    def evaluate(self) -> Result:
        """
        Evaluate and write ``report.txt`` and ``report.csv`` into ``--output``.

        Returns:
            tuple: (success: bool, table: str, error: PointSegError | None)
        """
        def action() -> str:
            out_dir = Path(require(self.config.output, "--output (report directory)", "eval"))
            report = self.run()
            label = "this run + RANSAC" if self.config.ransac else "this run"
            table = format_report_table(report, label)
            ok, message = write_file(out_dir / "report.txt", table)
            if not ok:
                raise DataError(message)
            write_report_csv(report, out_dir / "report.csv")
            return table.rstrip("\n")

        return guarded(action)
