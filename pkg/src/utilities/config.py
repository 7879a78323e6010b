"""
Config - run configuration, profiles and the precedence between their sources.

A value comes from the first source that sets it:
explicit flag > --config file > POINTSEG_THREADS (thread count only) > default.
The config file holds one ``key = value`` per line; ``#`` starts a comment.
"""

import logging
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, Tuple, Union

from .errors import DataError, UsageError
from .file_io import read_file
from .network import DOWNSAMPLE_CHOICES, EL_RATE_PRESETS, SR_PLACEMENTS, GraphConfig
from .projection import ProjectionConfig
from .ransac import RansacConfig

logger = logging.getLogger(__name__)

THREADS_ENV = "POINTSEG_THREADS"
COMMANDS = ("project", "train", "infer", "eval", "bench")


@dataclass(frozen=True)
class Profile:
    """A projection together with the graph sized for its frames."""
    projection: ProjectionConfig
    graph: GraphConfig


PROFILES: Dict[str, Profile] = {
    "hdl64": Profile(ProjectionConfig(), GraphConfig()),
    "compact": Profile(ProjectionConfig(height=8, width=32), GraphConfig.compact()),
}


@dataclass(frozen=True)
class RunConfig:
    command: str = ""
    input: Optional[str] = None
    output: Optional[str] = None
    checkpoint: Optional[str] = None
    profile: str = "hdl64"
    steps: int = 100
    lr: float = 0.001
    batch: int = 32
    seed: int = 0
    threads: int = 1
    ransac: bool = False
    ransac_iterations: int = 100
    ransac_threshold: float = 0.15
    ransac_min_inliers: float = 0.2
    log_every: int = 10
    warmup: int = 10
    iterations: int = 50
    synthetic: int = 0
    class_weights: Tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)
    el_rates: Optional[Tuple[int, int, int]] = None
    sr_placement: Optional[str] = None
    use_enlargement: Optional[bool] = None
    downsample: Optional[int] = None

    def projection_config(self) -> ProjectionConfig:
        return PROFILES[self.profile].projection

    def graph_config(self) -> GraphConfig:
        """The profile's graph with any variant overrides applied."""
        overrides: Dict[str, Any] = {}
        if self.el_rates is not None:
            overrides["el_rates"] = tuple(self.el_rates)
        if self.sr_placement is not None:
            overrides["sr_placement"] = self.sr_placement
        if self.use_enlargement is not None:
            overrides["use_enlargement"] = self.use_enlargement
        graph = replace(PROFILES[self.profile].graph, **overrides)
        return graph if self.downsample is None else graph.with_downsample(self.downsample)

    def ransac_config(self) -> RansacConfig:
        return RansacConfig(self.ransac_iterations, self.ransac_threshold, self.ransac_min_inliers, self.seed)

    def validate(self) -> "RunConfig":
        if self.command and self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if self.profile not in PROFILES:
            raise UsageError(f"unknown profile {self.profile!r}, choose from {', '.join(PROFILES)}")
        checks = (
            (self.lr > 0, "lr must be > 0"),
            (self.batch >= 1, "batch must be >= 1"),
            (self.steps >= 0, "steps must be >= 0"),
            (self.threads >= 1, "threads must be >= 1"),
            (self.log_every >= 1, "log_every must be >= 1"),
            (self.warmup >= 0, "warmup must be >= 0"),
            (self.iterations >= 1, "iterations must be >= 1"),
            (self.synthetic >= 0, "synthetic must be >= 0"),
            (self.ransac_iterations >= 1, "ransac_iterations must be >= 1"),
            (self.ransac_threshold > 0, "ransac_threshold must be > 0"),
            (0 <= self.ransac_min_inliers <= 1, "ransac_min_inliers must lie in [0, 1]"),
            (len(self.class_weights) == 4 and min(self.class_weights) >= 0, "class_weights needs 4 values >= 0"),
            (self.sr_placement is None or self.sr_placement in SR_PLACEMENTS,
             f"sr_placement must be one of {', '.join(SR_PLACEMENTS)}"),
            (self.el_rates is None or (len(self.el_rates) == 3 and min(self.el_rates) >= 1),
             "el_rates needs three rates >= 1"),
            (self.downsample is None or self.downsample in DOWNSAMPLE_CHOICES,
             f"downsample must be one of {', '.join(map(str, DOWNSAMPLE_CHOICES))}"),
        )
        for ok, message in checks:
            if not ok:
                raise UsageError(message)
        return self


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_rates(text: str) -> Tuple[int, int, int]:
    text = text.strip()
    if text in EL_RATE_PRESETS:
        return EL_RATE_PRESETS[text]
    rates = tuple(int(part) for part in text.replace(",", " ").split())
    if len(rates) != 3:
        raise ValueError(f"expected three rates or one of {', '.join(EL_RATE_PRESETS)}")
    return rates


def _parse_floats(text: str) -> Tuple[float, ...]:
    return tuple(float(part) for part in text.replace(",", " ").split())


_PARSERS: Dict[str, Callable[[str], Any]] = {
    "input": str, "output": str, "checkpoint": str, "profile": str,
    "steps": int, "lr": float, "batch": int, "seed": int, "threads": int,
    "ransac": _parse_bool, "ransac_iterations": int, "ransac_threshold": float, "ransac_min_inliers": float,
    "log_every": int, "warmup": int, "iterations": int, "synthetic": int,
    "class_weights": _parse_floats, "el_rates": _parse_rates, "sr_placement": str,
    "use_enlargement": _parse_bool, "downsample": int,
}
CONFIG_ONLY_KEYS = ("ransac_iterations", "ransac_min_inliers", "log_every", "class_weights",
                    "el_rates", "sr_placement", "use_enlargement", "downsample")


def parse_config_text(text: str, source: str = "config") -> Dict[str, Any]:
    """
    Parse ``key = value`` lines.

    Raises:
        UsageError: naming the line of an unknown key, a missing '=' or a bad value
    """
    values: Dict[str, Any] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{number}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _PARSERS:
            raise UsageError(f"{source}:{number}: unknown key {key!r}")
        try:
            values[key] = _PARSERS[key](value)
        except ValueError as e:
            raise UsageError(f"{source}:{number}: bad value for {key}: {e}") from e
    return values


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    ok, content = read_file(path)
    if not ok:
        raise DataError(content)
    return parse_config_text(content, str(path))


def resolve_run_config(command: str, flags: Mapping[str, Any],
                       environ: Optional[Mapping[str, str]] = None) -> RunConfig:
    """
    Merge the configuration sources for one command.

    Args:
        command: Subcommand name
        flags: Parsed flags; a value of None means "not given on the command line".
            The key "config" names an optional config file.
        environ: Environment to read POINTSEG_THREADS from (defaults to os.environ);
            it only supplies the thread count when neither a flag nor the file does
    """
    environ = os.environ if environ is None else environ
    merged: Dict[str, Any] = {}
    env_threads = environ.get(THREADS_ENV)
    if env_threads not in (None, ""):
        try:
            merged["threads"] = int(env_threads)
        except ValueError as e:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env_threads!r}") from e

    config_path = flags.get("config")
    if config_path:
        from_file = load_config_file(config_path)
        logger.debug("config file %s sets %s", config_path, sorted(from_file))
        merged.update(from_file)

    known = {f.name for f in fields(RunConfig)}
    for key, value in flags.items():
        if key in known and value is not None:
            merged[key] = value
    return RunConfig(command=command, **{k: v for k, v in merged.items() if k != "command"}).validate()
