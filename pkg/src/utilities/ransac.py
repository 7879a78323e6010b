"""
RANSAC ground-plane fitting and the label refinement built on it.

Segmentation masks drawn on the range image bleed onto the road around the
base of every object. ``refine`` fits the dominant plane of the scene and hands
any foreground point lying on it back to the background class.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import RansacError
from .projection import BACKGROUND, LabeledCloud

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 100
    threshold: float = 0.15
    min_inlier_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise RansacError(f"iterations must be >= 1, got {self.iterations}")
        if not self.threshold > 0:
            raise RansacError(f"inlier threshold must be > 0, got {self.threshold}")
        if not 0 <= self.min_inlier_fraction <= 1:
            raise RansacError(f"min_inlier_fraction must lie in [0, 1], got {self.min_inlier_fraction}")


@dataclass(frozen=True)
class PlaneModel:
    """Plane {p : n . p + d = 0} with unit normal n, oriented so that n_z >= 0."""
    normal: Tuple[float, float, float]
    offset: float

    def __post_init__(self) -> None:
        if abs(np.linalg.norm(self.normal) - 1.0) > 1e-6:
            raise RansacError(f"plane normal {self.normal} is not unit length")

    def distances(self, points: np.ndarray) -> np.ndarray:
        """Absolute point-to-plane distance of every row of an N x 3 (or N x 4) array."""
        xyz = np.asarray(points, dtype=np.float64)[:, :3]
        return np.abs(xyz @ np.asarray(self.normal) + self.offset)


def plane_through(p1: np.ndarray, p2: np.ndarray, p3: np.ndarray) -> Optional[PlaneModel]:
    """Plane through three points, or None when they are (nearly) collinear."""
    a, b = p2 - p1, p3 - p1
    normal = np.cross(a, b)
    norm = np.linalg.norm(normal)
    if norm <= 1e-9 * max(np.linalg.norm(a) * np.linalg.norm(b), 1e-12):
        return None
    normal = normal / norm
    if normal[2] < 0 or (normal[2] == 0 and (normal[1] < 0 or (normal[1] == 0 and normal[0] < 0))):
        normal = -normal
    return PlaneModel(tuple(float(v) for v in normal), float(-normal @ p1))


def ransac_plane(points: np.ndarray, cfg: RansacConfig = RansacConfig()) -> Tuple[PlaneModel, np.ndarray]:
    """
    Fit the plane supported by the most points.

    Each iteration draws three distinct points with the seeded generator and counts
    the points within ``cfg.threshold`` of the plane they span. The plane with the
    highest count wins; ties go to the earlier iteration.

    Args:
        points: N x 3 (or N x 4) coordinates
        cfg: Iterations, threshold, acceptance fraction and seed

    Returns:
        tuple: (plane, sorted indices of its inliers)

    Raises:
        RansacError: fewer than 3 points, every sample degenerate, or the best plane
            holds less than ``cfg.min_inlier_fraction`` of the points
    """
    xyz = np.asarray(points, dtype=np.float64)
    if xyz.ndim != 2 or xyz.shape[0] < 3:
        raise RansacError("degenerate input: need at least 3 points")
    xyz = xyz[:, :3]
    n = xyz.shape[0]
    rng = np.random.default_rng(cfg.seed)

    best: Optional[PlaneModel] = None
    best_count = -1
    for _ in range(cfg.iterations):
        i, j, k = rng.choice(n, 3, replace=False)
        plane = plane_through(xyz[i], xyz[j], xyz[k])
        if plane is None:
            continue
        count = int(np.count_nonzero(plane.distances(xyz) <= cfg.threshold))
        if count > best_count:
            best, best_count = plane, count

    if best is None:
        raise RansacError("degenerate input: every sampled triple is collinear")
    if best_count < cfg.min_inlier_fraction * n:
        raise RansacError(f"best plane holds {best_count} of {n} points, "
                          f"below the {cfg.min_inlier_fraction:.0%} acceptance fraction")
    inliers = np.flatnonzero(best.distances(xyz) <= cfg.threshold)
    return best, inliers


def refine(cloud: LabeledCloud, cfg: RansacConfig = RansacConfig()) -> Tuple[bool, LabeledCloud, Optional[str]]:
    """
    Relabel foreground points that lie on the ground plane as background.

    Refinement is best-effort: when no plane can be fitted the input comes back
    unchanged together with the reason.

    Returns:
        tuple: (refined, cloud, warning); warning is None when refinement ran
    """
    try:
        plane, inliers = ransac_plane(cloud.points, cfg)
    except RansacError as e:
        logger.warning("RANSAC refinement skipped: %s", e.message)
        return False, cloud, e.message

    labels = cloud.labels.copy()
    on_ground = np.zeros(len(cloud), dtype=bool)
    on_ground[inliers] = True
    flipped = on_ground & (labels != BACKGROUND)
    labels[flipped] = BACKGROUND
    logger.debug("plane normal %s offset %.3f: %d inliers, %d foreground points relabelled",
                 plane.normal, plane.offset, len(inliers), int(flipped.sum()))
    return True, LabeledCloud(cloud.points, labels), None
