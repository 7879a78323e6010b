"""
Training Controller - Adagrad training on a frame directory or synthetic scenes.
"""

import csv
import io
import logging
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import matplotlib
matplotlib.use("Agg")
from matplotlib.figure import Figure

from ..utilities.checkpoint import load_checkpoint, save_checkpoint
from ..utilities.config import RunConfig
from ..utilities.dataio import batches, build_index, load_frame
from ..utilities.errors import DataError, UsageError
from ..utilities.file_io import write_binary, write_file
from ..utilities.network import ModelParams, init_params, train_step
from ..utilities.optim import Adagrad
from ..utilities.projection import SphericalFrame
from .common import Result, guarded, require, synthetic_frames

logger = logging.getLogger(__name__)

LossRow = Tuple[int, float]


class TrainingController:
    """Controller for model training."""

    def __init__(self, config: RunConfig) -> None:
        self.config = config
        self.params: Optional[ModelParams] = None
        self.history: List[LossRow] = []

    def _frames(self) -> Tuple[List[Union[Path, SphericalFrame]], Callable[[object], SphericalFrame]]:
        """Training items and the function turning one item into a labelled frame."""
        cfg = self.config
        if cfg.synthetic:
            return list(synthetic_frames(cfg)), lambda frame: frame
        source = require(cfg.input, "--input (a frame directory) or --synthetic", "train")
        index = build_index(source, cfg.seed)
        items = index.split("train") or list(index.paths)
        projection = cfg.projection_config()
        return items, lambda path: load_frame(path, projection.height, projection.width)

    def _initial_params(self) -> ModelParams:
        cfg = self.config
        if cfg.checkpoint and Path(cfg.checkpoint).is_file():
            logger.info("resuming from %s", cfg.checkpoint)
            return load_checkpoint(cfg.checkpoint)
        return init_params(cfg.seed, cfg.graph_config())

    def fit(self) -> ModelParams:
        """
        Run ``config.steps`` optimizer steps over shuffled batches.

        Returns:
            ModelParams: the trained parameters (also kept on ``self.params``)
        """
        cfg = self.config
        items, to_frame = self._frames()
        params = self._initial_params()
        optimizer = Adagrad(lr=cfg.lr)
        state = optimizer.init_state(params.tensors)
        self.history = []

        step, epoch = 0, 0
        while step < cfg.steps:
            for group in batches(items, cfg.batch, cfg.seed, epoch):
                if step >= cfg.steps:
                    break
                frames = [to_frame(item) for item in group]
                params, state, value = train_step(params, frames, optimizer, state, cfg.class_weights)
                step += 1
                if step == 1 or step % cfg.log_every == 0 or step == cfg.steps:
                    logger.info("step %d/%d loss %.5f", step, cfg.steps, value)
                    self.history.append((step, value))
            epoch += 1
        self.params = params
        return params

    def train(self) -> Result:
        """
        Train and save the checkpoint, a loss CSV and a loss-curve PNG.

        Returns:
            tuple: (success: bool, message: str, error: PointSegError | None)
        """
        def action() -> str:
            out = Path(require(self.config.output, "--output (checkpoint path)", "train"))
            if self.config.steps < 1:
                raise UsageError("train needs --steps >= 1")
            params = self.fit()
            save_checkpoint(params, out)
            csv_path = out.with_name(out.stem + "_loss.csv")
            plot_path = csv_path.with_suffix(".png")
            ok, message = write_file(csv_path, loss_csv(self.history))
            if not ok:
                raise DataError(message)
            save_loss_curve(self.history, plot_path)
            first, last = self.history[0][1], self.history[-1][1]
            return (f"trained {self.config.steps} steps, loss {first:.4f} -> {last:.4f}; "
                    f"saved {out}, {csv_path}, {plot_path}")

        return guarded(action)


def loss_csv(history: Sequence[LossRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["step", "loss"])
    for step, value in history:
        writer.writerow([step, f"{value:.6f}"])
    return buffer.getvalue()


def save_loss_curve(history: Sequence[LossRow], path: Union[str, Path]) -> None:
    fig = Figure(figsize=(6, 4), dpi=100)
    ax = fig.add_subplot(111)
    ax.plot([s for s, _ in history], [v for _, v in history], marker="o", markersize=3)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    buffer = io.BytesIO()
    fig.savefig(buffer, format="png")
    ok, message = write_binary(path, buffer.getvalue())
    if not ok:
        raise DataError(message)
