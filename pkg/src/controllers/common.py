"""
Shared controller plumbing: result tuples, input loading and model loading.
"""

import logging
from pathlib import Path
from typing import Callable, List, Optional, Tuple

from ..utilities.checkpoint import load_checkpoint
from ..utilities.config import RunConfig
from ..utilities.dataio import load_frame, load_velodyne_bin
from ..utilities.errors import DataError, PointSegError, UsageError
from ..utilities.network import ModelParams, init_params
from ..utilities.projection import PointCloud, SphericalFrame, cloud_from_frame, project
from ..utilities.synthetic import synthetic_frame

logger = logging.getLogger(__name__)

Result = Tuple[bool, str, Optional[PointSegError]]


def guarded(action: Callable[[], str]) -> Result:
    """
    Run ``action`` and fold its outcome into (success, message, error).

    Engine errors come back as they are; anything unexpected is wrapped into a
    DataError so callers only ever see PointSegError.
    """
    try:
        return True, action(), None
    except PointSegError as e:
        return False, "", e
    except Exception as e:
        logger.debug("unexpected failure", exc_info=True)
        return False, "", DataError(f"unexpected error: {e}")


def require(value: Optional[str], flag: str, command: str) -> str:
    if not value:
        raise UsageError(f"{command} needs {flag}")
    return value


def load_input(path: str, config: RunConfig) -> Tuple[PointCloud, SphericalFrame]:
    """
    Read a scan (.bin, projected here) or a converted frame (.npy).

    Returns:
        tuple: (cloud, frame) with frame.source_index pointing into cloud
    """
    suffix = Path(path).suffix.lower()
    projection = config.projection_config()
    if suffix == ".bin":
        cloud = load_velodyne_bin(path)
        return cloud, project(cloud, projection)
    if suffix == ".npy":
        frame = load_frame(path, projection.height, projection.width)
        return cloud_from_frame(frame)
    raise UsageError(f"unsupported input {path}: expected a .bin scan or a .npy frame")


def load_model(config: RunConfig) -> ModelParams:
    if config.checkpoint:
        return load_checkpoint(config.checkpoint)
    logger.warning("no checkpoint given, running with randomly initialized weights (seed %d)", config.seed)
    return init_params(config.seed, config.graph_config())


def synthetic_frames(config: RunConfig) -> List[SphericalFrame]:
    """``config.synthetic`` labelled scenes, seeded seed, seed + 1, ..."""
    projection = config.projection_config()
    return [synthetic_frame(config.seed + i, projection) for i in range(config.synthetic)]
