"""
Projection - spherical range images from point clouds, and back.

A point's azimuth (vertical angle) alpha = arcsin(z / |p|) picks the row and its
zenith (horizontal angle) beta = arcsin(y / sqrt(x^2 + y^2)) picks the column.
Indices are anchored at the top of the vertical span and the left of the
horizontal span so every index is non-negative.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .errors import DataError, ShapeError
from .tensor import Tensor

logger = logging.getLogger(__name__)

BACKGROUND, CAR, PEDESTRIAN, CYCLIST = 0, 1, 2, 3
CLASS_NAMES = ("background", "car", "pedestrian", "cyclist")
NUM_CLASSES = len(CLASS_NAMES)
FRAME_CHANNELS = ("x", "y", "z", "intensity", "range")


@dataclass(frozen=True)
class ProjectionConfig:
    """Image size and angular spans (degrees) of the spherical projection."""
    height: int = 64
    width: int = 512
    azimuth_min: float = -24.9
    azimuth_max: float = 2.0
    zenith_min: float = -45.0
    zenith_max: float = 45.0

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ShapeError(f"projection size must be positive, got {self.height}x{self.width}")
        if self.azimuth_max <= self.azimuth_min or self.zenith_max <= self.zenith_min:
            raise ShapeError("projection spans must have max > min")

    @property
    def delta_azimuth(self) -> float:
        return (self.azimuth_max - self.azimuth_min) / self.height

    @property
    def delta_zenith(self) -> float:
        return (self.zenith_max - self.zenith_min) / self.width


@dataclass
class PointCloud:
    """N x 4 float32 array of (x, y, z, intensity); metres and unitless reflectance."""
    points: np.ndarray

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=np.float32)
        if points.size == 0:
            points = points.reshape(0, 4)
        if points.ndim != 2 or points.shape[1] != 4:
            raise DataError(f"point cloud must be N x 4, got shape {points.shape}")
        if not np.all(np.isfinite(points)):
            raise DataError("point cloud contains non-finite coordinates")
        self.points = points

    def __len__(self) -> int:
        return int(self.points.shape[0])


@dataclass
class LabeledCloud:
    """Points with one class id per point (0 background, 1 car, 2 pedestrian, 3 cyclist)."""
    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.points = PointCloud(self.points).points
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if labels.shape[0] != self.points.shape[0]:
            raise DataError(f"{labels.shape[0]} labels for {self.points.shape[0]} points")
        if labels.size and (labels.min() < 0 or labels.max() >= NUM_CLASSES):
            raise DataError(f"labels must lie in [0, {NUM_CLASSES - 1}]")
        self.labels = labels

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def cloud(self) -> PointCloud:
        return PointCloud(self.points)


@dataclass
class SphericalFrame:
    """
    Projected image plus bookkeeping.

    channels: H x W x 5 tensor ordered (x, y, z, intensity, range)
    occupancy: H x W booleans
    source_index: H x W index into the originating cloud, -1 where empty
    labels: optional H x W class ids
    """
    channels: Tensor
    occupancy: np.ndarray
    source_index: np.ndarray
    labels: Optional[np.ndarray] = field(default=None)

    def __post_init__(self) -> None:
        if len(self.channels.shape) != 3 or self.channels.shape[2] != len(FRAME_CHANNELS):
            raise ShapeError(f"frame channels must be H x W x 5, got {self.channels.shape}")
        spatial = self.channels.shape[:2]
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        self.source_index = np.asarray(self.source_index, dtype=np.int64)
        if self.occupancy.shape != spatial or self.source_index.shape != spatial:
            raise ShapeError(f"occupancy and source_index must be {spatial}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != spatial:
                raise ShapeError(f"labels shape {self.labels.shape} does not match frame {spatial}")

    @property
    def height(self) -> int:
        return self.channels.shape[0]

    @property
    def width(self) -> int:
        return self.channels.shape[1]


def pixel_of(points: np.ndarray, cfg: ProjectionConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Row and column of every point, plus a mask of points that land in the frame.

    Points at the origin, on the vertical axis, behind the sensor (x <= 0) or outside
    the configured spans are masked out.
    """
    pts = np.asarray(points, dtype=np.float64)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    distance = np.sqrt(x * x + y * y + z * z)
    planar = np.sqrt(x * x + y * y)
    valid = (distance > 0) & (planar > 0) & (x > 0)

    with np.errstate(invalid="ignore", divide="ignore"):
        alpha = np.degrees(np.arcsin(np.clip(z / distance, -1.0, 1.0)))
        beta = np.degrees(np.arcsin(np.clip(y / planar, -1.0, 1.0)))
    valid &= (alpha >= cfg.azimuth_min) & (alpha <= cfg.azimuth_max)
    valid &= (beta >= cfg.zenith_min) & (beta <= cfg.zenith_max)

    rows = np.zeros(len(pts), dtype=np.int64)
    cols = np.zeros(len(pts), dtype=np.int64)
    rows[valid] = np.floor((cfg.azimuth_max - alpha[valid]) / cfg.delta_azimuth)
    cols[valid] = np.floor((beta[valid] - cfg.zenith_min) / cfg.delta_zenith)
    np.clip(rows, 0, cfg.height - 1, out=rows)
    np.clip(cols, 0, cfg.width - 1, out=cols)
    return rows, cols, valid


def empty_frame(cfg: ProjectionConfig) -> SphericalFrame:
    shape = (cfg.height, cfg.width)
    return SphericalFrame(Tensor(np.zeros(shape + (len(FRAME_CHANNELS),), np.float32)),
                          np.zeros(shape, bool), np.full(shape, -1, np.int64))


def project(cloud: PointCloud, cfg: ProjectionConfig = ProjectionConfig()) -> SphericalFrame:
    """
    Bin a point cloud into a spherical frame.

    On a pixel collision the point with the smaller range wins; exact range ties go
    to the point seen first.

    Raises:
        DataError: "no projectable points" when nothing is left after origin filtering
    """
    pts = cloud.points
    if len(pts) == 0 or not np.any(np.any(pts[:, :3] != 0, axis=1)):
        raise DataError("no projectable points")

    rows, cols, valid = pixel_of(pts, cfg)
    coords = pts[:, :3].astype(np.float64)
    distance = np.sqrt((coords * coords).sum(axis=1))

    index = np.nonzero(valid)[0]
    pixel = rows[index] * cfg.width + cols[index]
    order = np.lexsort((index, distance[index], pixel))
    _, first = np.unique(pixel[order], return_index=True)
    winners = index[order[first]]

    frame_rows, frame_cols = rows[winners], cols[winners]
    channels = np.zeros((cfg.height, cfg.width, len(FRAME_CHANNELS)), dtype=np.float32)
    channels[frame_rows, frame_cols, :4] = pts[winners]
    channels[frame_rows, frame_cols, 4] = distance[winners]
    occupancy = np.zeros((cfg.height, cfg.width), dtype=bool)
    occupancy[frame_rows, frame_cols] = True
    source_index = np.full((cfg.height, cfg.width), -1, dtype=np.int64)
    source_index[frame_rows, frame_cols] = winners

    logger.debug("projected %d of %d points into %d pixels", len(index), len(pts), len(winners))
    return SphericalFrame(Tensor.wrap(channels), occupancy, source_index)


def backproject(frame: SphericalFrame, class_map: np.ndarray, cloud: PointCloud) -> LabeledCloud:
    """
    Give every point the class of the pixel it was stored in.

    Points that were discarded or lost a pixel collision stay background.
    """
    class_map = np.asarray(class_map)
    if class_map.shape != frame.occupancy.shape:
        raise ShapeError(f"class map shape {class_map.shape} does not match frame {frame.occupancy.shape}")
    labels = np.zeros(len(cloud), dtype=np.int64)
    stored = frame.source_index >= 0
    targets = frame.source_index[stored]
    if targets.size and targets.max() >= len(cloud):
        raise DataError(f"frame references point {targets.max()} of a {len(cloud)}-point cloud")
    labels[targets] = class_map[stored]
    return LabeledCloud(cloud.points, labels)


def class_map_from_labels(frame: SphericalFrame, labeled: LabeledCloud) -> np.ndarray:
    """Inverse of backproject: paint each stored pixel with its point's label."""
    class_map = np.zeros(frame.occupancy.shape, dtype=np.int64)
    stored = frame.source_index >= 0
    class_map[stored] = labeled.labels[frame.source_index[stored]]
    return class_map


def frame_from_dataset(record: np.ndarray) -> SphericalFrame:
    """
    Build a labelled frame from an H x W x 6 converted record.

    Channels 0-4 are (x, y, z, intensity, range), channel 5 the class id. Occupancy is
    range > 0; occupied pixels are numbered row-major in ``source_index`` so that
    ``cloud_from_frame`` reproduces the matching point list.
    """
    record = np.asarray(record, dtype=np.float32)
    if record.ndim != 3 or record.shape[2] != len(FRAME_CHANNELS) + 1:
        raise DataError(f"dataset record must be H x W x 6, got shape {record.shape}")
    occupancy = record[:, :, 4] > 0
    channels = np.where(occupancy[:, :, None], record[:, :, :5], 0).astype(np.float32)
    labels = np.rint(record[:, :, 5]).astype(np.int64)
    labels[~occupancy] = BACKGROUND
    if labels.min() < 0 or labels.max() >= NUM_CLASSES:
        raise DataError(f"dataset labels must lie in [0, {NUM_CLASSES - 1}]")
    source_index = np.full(occupancy.shape, -1, dtype=np.int64)
    source_index[occupancy] = np.arange(int(occupancy.sum()))
    return SphericalFrame(Tensor.wrap(channels), occupancy, source_index, labels)


def cloud_from_frame(frame: SphericalFrame) -> Tuple[PointCloud, SphericalFrame]:
    """
    Point list of the occupied pixels in row-major order.

    Returns:
        tuple: (cloud, frame) where the returned frame's source_index refers to the cloud
    """
    occupancy = frame.occupancy
    cloud = PointCloud(frame.channels.data[occupancy][:, :4])
    source_index = np.full(occupancy.shape, -1, dtype=np.int64)
    source_index[occupancy] = np.arange(len(cloud))
    return cloud, SphericalFrame(frame.channels, occupancy, source_index, frame.labels)
