"""
Dataio - scan, frame, image and point-list formats plus dataset indexing.

Loaders reject malformed input with a DataError instead of returning partial
data. All disk access goes through ``file_io``.
"""

import hashlib
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, TypeVar, Union

import matplotlib
matplotlib.use("Agg")
from matplotlib.figure import Figure

import numpy as np

from .errors import DataError
from .file_io import read_binary, read_file, write_binary, write_file
from .projection import (BACKGROUND, CAR, CYCLIST, FRAME_CHANNELS, NUM_CLASSES, PEDESTRIAN, LabeledCloud,
                         PointCloud, SphericalFrame, frame_from_dataset)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
T = TypeVar("T")

RECORD_BYTES = 16
FRAME_SHAPE = (64, 512, len(FRAME_CHANNELS) + 1)
ACCEPTED_DTYPES = ("<f4", "<f8")
VAL_FRACTION = 0.26
SPLITS = ("train", "val")

PALETTE = {
    BACKGROUND: (0, 0, 0),
    CAR: (0, 0, 255),
    PEDESTRIAN: (0, 255, 0),
    CYCLIST: (255, 0, 0),
}


def _read(path: PathLike) -> bytes:
    ok, content = read_binary(path)
    if not ok:
        raise DataError(content)
    return content


def _write(path: PathLike, data: bytes) -> None:
    ok, message = write_binary(path, data)
    if not ok:
        raise DataError(message)


# --- Velodyne scans ---------------------------------------------------------

def load_velodyne_bin(path: PathLike) -> PointCloud:
    """
    Consecutive little-endian float32 quadruples (x, y, z, intensity).

    Raises:
        DataError: file length not a multiple of 16 bytes
    """
    blob = _read(path)
    if len(blob) % RECORD_BYTES:
        offset = len(blob) - len(blob) % RECORD_BYTES
        raise DataError(f"{path}: truncated scan, incomplete record at byte offset {offset} "
                        f"({len(blob)} bytes is not a multiple of {RECORD_BYTES})")
    points = np.frombuffer(blob, dtype="<f4").reshape(-1, 4).astype(np.float32)
    logger.debug("read %d points from %s", len(points), path)
    return PointCloud(points)


def save_velodyne_bin(cloud: PointCloud, path: PathLike) -> None:
    _write(path, np.ascontiguousarray(cloud.points, dtype="<f4").tobytes())


# --- converted frames (array container, version 1.0) ------------------------

def parse_frame_array(blob: bytes, expected_shape: Optional[Tuple[int, ...]] = FRAME_SHAPE,
                      source: str = "frame") -> np.ndarray:
    stream = io.BytesIO(blob)
    try:
        version = np.lib.format.read_magic(stream)
    except ValueError as e:
        raise DataError(f"{source}: not an array container file ({e})") from e
    if version != (1, 0):
        raise DataError(f"{source}: container version {version[0]}.{version[1]} is not supported, expected 1.0")
    try:
        shape, fortran_order, dtype = np.lib.format.read_array_header_1_0(stream)
    except ValueError as e:
        raise DataError(f"{source}: malformed container header ({e})") from e

    if fortran_order:
        raise DataError(f"{source}: fortran-ordered arrays are not accepted")
    if dtype.str not in ACCEPTED_DTYPES:
        raise DataError(f"{source}: element type {dtype.str} is not accepted, expected "
                        f"little-endian float32 or float64")
    if expected_shape is not None and tuple(shape) != tuple(expected_shape):
        raise DataError(f"{source}: shape {tuple(shape)} does not match the expected shape {tuple(expected_shape)}")

    count = int(np.prod(shape))
    payload = blob[stream.tell():]
    if len(payload) != count * dtype.itemsize:
        raise DataError(f"{source}: {len(payload)} data bytes, header declares {count * dtype.itemsize}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).astype(np.float32)


def load_frame_array(path: PathLike, expected_shape: Optional[Tuple[int, ...]] = FRAME_SHAPE) -> np.ndarray:
    """H x W x 6 float32 record: (x, y, z, intensity, range, label)."""
    array = parse_frame_array(_read(path), expected_shape, str(path))
    logger.debug("read frame %s with shape %s", path, array.shape)
    return array


def load_frame(path: PathLike, height: int = FRAME_SHAPE[0], width: int = FRAME_SHAPE[1]) -> SphericalFrame:
    return frame_from_dataset(load_frame_array(path, (height, width, FRAME_SHAPE[2])))


def frame_record(frame: SphericalFrame) -> np.ndarray:
    labels = frame.labels if frame.labels is not None else np.zeros(frame.occupancy.shape, dtype=np.int64)
    return np.concatenate([frame.channels.data.astype(np.float32),
                           labels[:, :, None].astype(np.float32)], axis=-1)


def save_frame_array(array: np.ndarray, path: PathLike) -> None:
    """Write a little-endian float32 container (version 1.0)."""
    buffer = io.BytesIO()
    np.lib.format.write_array(buffer, np.ascontiguousarray(array, dtype="<f4"), version=(1, 0))
    _write(path, buffer.getvalue())


# --- images -----------------------------------------------------------------

def class_map_pixels(class_map: np.ndarray) -> np.ndarray:
    class_map = np.asarray(class_map)
    if class_map.ndim != 2:
        raise DataError(f"class map must be two-dimensional, got shape {class_map.shape}")
    if class_map.size and (class_map.min() < 0 or class_map.max() >= NUM_CLASSES):
        raise DataError(f"class ids must lie in [0, {NUM_CLASSES - 1}]")
    palette = np.array([PALETTE[c] for c in range(NUM_CLASSES)], dtype=np.uint8)
    return palette[class_map]


def save_class_map_image(class_map: np.ndarray, path: PathLike) -> None:
    """Binary portable pixmap (P6), image width = map columns, height = map rows."""
    pixels = class_map_pixels(class_map)
    height, width, _ = pixels.shape
    _write(path, f"P6\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes())


def read_ppm(path: PathLike) -> np.ndarray:
    """Rows x columns x 3 uint8 pixels of a binary (P6) pixmap with maxval 255."""
    blob = _read(path)
    tokens: List[bytes] = []
    cursor = 0
    while len(tokens) < 4:
        while cursor < len(blob) and blob[cursor:cursor + 1].isspace():
            cursor += 1
        if blob[cursor:cursor + 1] == b"#":
            cursor = blob.find(b"\n", cursor) + 1 or len(blob)
            continue
        start = cursor
        while cursor < len(blob) and not blob[cursor:cursor + 1].isspace():
            cursor += 1
        if start == cursor:
            raise DataError(f"{path}: truncated pixmap header")
        tokens.append(blob[start:cursor])
    cursor += 1
    if tokens[0] != b"P6":
        raise DataError(f"{path}: not a binary pixmap (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as e:
        raise DataError(f"{path}: malformed pixmap header") from e
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit pixmaps are supported, maxval {maxval}")
    data = blob[cursor:]
    if len(data) != width * height * 3:
        raise DataError(f"{path}: {len(data)} pixel bytes for a {width}x{height} image")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3)


def save_range_preview(frame: SphericalFrame, path: PathLike) -> None:
    """PNG of the range channel, empty pixels drawn black."""
    ranges = np.ma.masked_where(~frame.occupancy, frame.channels.data[:, :, 4])
    aspect = frame.width / max(frame.height, 1)
    fig = Figure(figsize=(min(16.0, 2.0 * aspect), 2.5), dpi=100)
    ax = fig.add_subplot(111)
    ax.set_facecolor("black")
    image = ax.imshow(ranges, cmap="viridis", aspect="auto", interpolation="nearest")
    fig.colorbar(image, ax=ax, label="range (m)")
    ax.set_xlabel("column")
    ax.set_ylabel("row")
    fig.tight_layout()
    buffer = io.BytesIO()
    fig.savefig(buffer, format="png")
    _write(path, buffer.getvalue())


# --- labelled point lists ---------------------------------------------------

def save_labeled_cloud(cloud: LabeledCloud, path: PathLike) -> None:
    """ASCII lines "x y z label"; float32 coordinates are written with enough digits to read back exactly."""
    lines = [f"{x:.9g} {y:.9g} {z:.9g} {label}"
             for (x, y, z), label in zip(cloud.points[:, :3].tolist(), cloud.labels.tolist())]
    ok, message = write_file(path, "\n".join(lines) + ("\n" if lines else ""))
    if not ok:
        raise DataError(message)


def read_labeled_cloud(path: PathLike) -> LabeledCloud:
    """Inverse of save_labeled_cloud; intensity is not stored and reads back as 0."""
    ok, content = read_file(path)
    if not ok:
        raise DataError(content)
    points: List[Tuple[float, float, float, float]] = []
    labels: List[int] = []
    for number, line in enumerate(content.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 4:
            raise DataError(f"{path}:{number}: expected 'x y z label', got {line!r}")
        try:
            x, y, z = (float(v) for v in fields[:3])
            label = int(fields[3])
        except ValueError as e:
            raise DataError(f"{path}:{number}: {e}") from e
        points.append((x, y, z, 0.0))
        labels.append(label)
    return LabeledCloud(np.array(points, dtype=np.float32).reshape(-1, 4), np.array(labels, dtype=np.int64))


# --- dataset index and batching ---------------------------------------------

@dataclass
class DatasetIndex:
    """Frame files in listing order with a train/val assignment for each."""
    paths: List[Path]
    splits: List[str]
    seed: int = 0
    source: str = "hash"

    def __post_init__(self) -> None:
        if len(self.paths) != len(self.splits):
            raise DataError("every frame needs exactly one split assignment")
        unknown = set(self.splits) - set(SPLITS)
        if unknown:
            raise DataError(f"unknown split names {sorted(unknown)}")

    def __len__(self) -> int:
        return len(self.paths)

    def split(self, name: str) -> List[Path]:
        return [path for path, split in zip(self.paths, self.splits) if split == name]


def hash_split(name: str, val_fraction: float = VAL_FRACTION) -> str:
    digest = hashlib.sha1(name.encode("utf-8")).hexdigest()
    return "val" if int(digest[:8], 16) / 0x100000000 < val_fraction else "train"


def _split_lists(directory: Path) -> Optional[dict]:
    for root in (directory / "ImageSet", directory.parent / "ImageSet"):
        train, val = root / "train.txt", root / "val.txt"
        if train.is_file() and val.is_file():
            assignment = {}
            for split, listing in (("train", train), ("val", val)):
                ok, content = read_file(listing)
                if not ok:
                    raise DataError(content)
                for line in content.split():
                    assignment.setdefault(Path(line).stem, split)
            return assignment
    return None


def build_index(directory: PathLike, seed: int = 0, val_fraction: float = VAL_FRACTION) -> DatasetIndex:
    """
    Index every ``*.npy`` frame under ``directory`` (sorted by name).

    Released ImageSet/train.txt and val.txt lists are honoured when present next
    to or inside the directory; frames they do not mention, and every frame when
    they are absent, are split by a hash of the file name.
    """
    root = Path(directory)
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")
    paths = sorted(root.glob("*.npy"))
    if not paths:
        raise DataError(f"no frame files (*.npy) in {root}")
    lists = _split_lists(root)
    splits = [lists[path.stem] if lists and path.stem in lists else hash_split(path.name, val_fraction)
              for path in paths]
    index = DatasetIndex(paths, splits, seed, "lists" if lists else "hash")
    logger.info("indexed %d frames in %s (%d train, %d val, split from %s)", len(index), root,
                splits.count("train"), splits.count("val"), index.source)
    return index


def batches(index: Union[DatasetIndex, Sequence[T]], batch_size: int, seed: int, epoch: int) -> List[List[T]]:
    """
    Shuffle with a generator seeded by (seed, epoch) and cut into groups of
    ``batch_size``; the final partial group is kept.
    """
    items = list(index.paths if isinstance(index, DatasetIndex) else index)
    if not items:
        raise DataError("cannot batch an empty index")
    if batch_size < 1:
        raise DataError(f"batch size must be >= 1, got {batch_size}")
    order = np.random.default_rng([seed, epoch]).permutation(len(items))
    shuffled = [items[i] for i in order]
    return [shuffled[start:start + batch_size] for start in range(0, len(shuffled), batch_size)]
