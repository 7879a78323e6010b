"""
Synthetic scenes - ray-cast a flat road and labelled boxes through pixel centres.

Every ray leaves the sensor through the centre of one projection pixel, so the
projection of the generated cloud is dense and each point falls back into the
pixel it was cast from. Used wherever no recorded dataset is available.
"""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .projection import (BACKGROUND, CAR, CYCLIST, PEDESTRIAN, LabeledCloud, ProjectionConfig,
                         SphericalFrame, class_map_from_labels, project)

SENSOR_HEIGHT = 1.73
MAX_RANGE = 70.0

# length, width, height in metres
BOX_SIZES = {
    CAR: (4.2, 1.8, 1.5),
    PEDESTRIAN: (0.7, 0.7, 1.75),
    CYCLIST: (1.8, 0.7, 1.7),
}
INTENSITY = {BACKGROUND: 0.15, CAR: 0.55, PEDESTRIAN: 0.35, CYCLIST: 0.45}


@dataclass(frozen=True)
class Box:
    label: int
    lower: Tuple[float, float, float]
    upper: Tuple[float, float, float]


def pixel_rays(cfg: ProjectionConfig) -> np.ndarray:
    """Unit direction through the centre of every pixel, H x W x 3."""
    rows, cols = np.indices((cfg.height, cfg.width), dtype=np.float64)
    alpha = np.radians(cfg.azimuth_max - (rows + 0.5) * cfg.delta_azimuth)
    beta = np.radians(cfg.zenith_min + (cols + 0.5) * cfg.delta_zenith)
    return np.stack([np.cos(alpha) * np.cos(beta),
                     np.cos(alpha) * np.sin(beta),
                     np.sin(alpha)], axis=-1)


def _ray_box(directions: np.ndarray, box: Box) -> np.ndarray:
    """Distance along each ray to the box, inf where it misses (slab method)."""
    lower = np.asarray(box.lower)
    upper = np.asarray(box.upper)
    with np.errstate(divide="ignore", invalid="ignore"):
        inverse = 1.0 / directions
        t1 = lower * inverse
        t2 = upper * inverse
    near = np.nanmax(np.minimum(t1, t2), axis=-1)
    far = np.nanmin(np.maximum(t1, t2), axis=-1)
    hit = (far >= near) & (near > 0)
    return np.where(hit, near, np.inf)


def random_boxes(rng: np.random.Generator, counts: Tuple[int, int, int] = (2, 1, 1),
                 clearance: float = 0.25) -> List[Box]:
    """Axis-aligned objects in front of the sensor, floating ``clearance`` above the road."""
    boxes: List[Box] = []
    ground = -SENSOR_HEIGHT
    for label, count in zip((CAR, PEDESTRIAN, CYCLIST), counts):
        length, width, height = BOX_SIZES[label]
        placed = 0
        attempts = 0
        while placed < count and attempts < 100:
            attempts += 1
            cx = rng.uniform(7.0, 22.0)
            cy = rng.uniform(-0.6, 0.6) * cx
            lower = (cx - length / 2, cy - width / 2, ground + clearance)
            upper = (cx + length / 2, cy + width / 2, ground + clearance + height)
            if any(_overlaps(lower, upper, other) for other in boxes):
                continue
            boxes.append(Box(label, lower, upper))
            placed += 1
    return boxes


def _overlaps(lower, upper, other: Box, margin: float = 0.5) -> bool:
    return not (upper[0] + margin < other.lower[0] or other.upper[0] + margin < lower[0]
                or upper[1] + margin < other.lower[1] or other.upper[1] + margin < lower[1])


def synthetic_scene(seed: int, cfg: ProjectionConfig = ProjectionConfig(),
                    counts: Tuple[int, int, int] = (2, 1, 1)) -> LabeledCloud:
    """
    Ray-cast a road at sensor height plus random cars, pedestrians and cyclists.

    Args:
        seed: Seed for object placement and intensity noise
        cfg: Projection whose pixel centres define the rays
        counts: Number of (cars, pedestrians, cyclists)

    Returns:
        LabeledCloud: one point per ray that hits something within range
    """
    rng = np.random.default_rng(seed)
    directions = pixel_rays(cfg).reshape(-1, 3)
    boxes = random_boxes(rng, counts)

    with np.errstate(divide="ignore"):
        road = np.where(directions[:, 2] < 0, -SENSOR_HEIGHT / directions[:, 2], np.inf)
    distance = road
    labels = np.full(len(directions), BACKGROUND, dtype=np.int64)
    for box in boxes:
        t = _ray_box(directions, box)
        closer = t < distance
        distance = np.where(closer, t, distance)
        labels[closer] = box.label

    hit = distance <= MAX_RANGE
    xyz = directions[hit] * distance[hit, None]
    base = np.array([INTENSITY[label] for label in sorted(INTENSITY)])[labels[hit]]
    intensity = np.clip(base + rng.uniform(-0.05, 0.05, size=base.shape), 0.0, 1.0)
    points = np.column_stack([xyz, intensity])
    return LabeledCloud(points, labels[hit])


def synthetic_frame(seed: int, cfg: ProjectionConfig = ProjectionConfig(),
                    counts: Tuple[int, int, int] = (2, 1, 1)) -> SphericalFrame:
    """Projected synthetic scene with per-pixel labels attached."""
    scene = synthetic_scene(seed, cfg, counts)
    frame = project(scene.cloud(), cfg)
    labels = class_map_from_labels(frame, scene)
    return SphericalFrame(frame.channels, frame.occupancy, frame.source_index, labels)
