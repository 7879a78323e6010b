"""
Checkpoint - the "PSEG" binary parameter format.

Layout (little-endian):
    magic      4 bytes  b"PSEG"
    version    u16
    count      u32      number of named tensors
    per tensor:
        name length u16, name (UTF-8)
        rank u8, extents u32 x rank
        data float32 x prod(extents), row-major

The graph configuration travels as the tensor ``meta/graph`` so a checkpoint
can be loaded without knowing the profile it was trained with.
"""

import logging
import struct
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from .errors import DataError
from .file_io import read_binary, write_binary
from .network import GraphConfig, ModelParams
from .tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"PSEG"
VERSION = 1
GRAPH_KEY = "meta/graph"


def encode_checkpoint(params: ModelParams) -> bytes:
    entries: List[Tuple[str, np.ndarray]] = [(GRAPH_KEY, params.config.to_vector())]
    entries += [(name, tensor.data) for name, tensor in params.tensors.items()]
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(entries))]
    for name, array in entries:
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack(f"<B{array.ndim}I", array.ndim, *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, blob: bytes) -> None:
        self.blob = blob
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        end = self.offset + size
        if end > len(self.blob):
            raise DataError(f"checkpoint truncated while reading {what} at byte offset {self.offset}")
        chunk = self.blob[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str, what: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(blob: bytes) -> ModelParams:
    """
    Raises:
        DataError: wrong magic or version, truncation, or a parameter set that does
            not match the stored graph
    """
    reader = _Reader(blob)
    if reader.take(4, "magic") != MAGIC:
        raise DataError("not a PSEG checkpoint (bad magic)")
    version, count = reader.unpack("<HI", "header")
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")

    arrays: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (length,) = reader.unpack("<H", "name length")
        name = reader.take(length, "name").decode("utf-8", errors="strict")
        (rank,) = reader.unpack("<B", f"rank of {name}")
        shape = reader.unpack(f"<{rank}I", f"extents of {name}")
        size = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(reader.take(4 * size, f"data of {name}"), dtype="<f4")
        if name in arrays:
            raise DataError(f"checkpoint stores {name} twice")
        arrays[name] = data.reshape(shape).astype(np.float32)
    if reader.offset != len(blob):
        raise DataError(f"{len(blob) - reader.offset} trailing bytes after the last tensor")

    if GRAPH_KEY not in arrays:
        raise DataError(f"checkpoint has no {GRAPH_KEY} entry")
    config = GraphConfig.from_vector(arrays.pop(GRAPH_KEY))
    params = ModelParams(config, {name: Tensor(array, name=name) for name, array in arrays.items()})
    params.validate()
    return params


def save_checkpoint(params: ModelParams, path: Union[str, Path]) -> None:
    ok, message = write_binary(path, encode_checkpoint(params))
    if not ok:
        raise DataError(message)
    logger.debug("saved %d tensors to %s", len(params.tensors), path)


def load_checkpoint(path: Union[str, Path]) -> ModelParams:
    ok, content = read_binary(path)
    if not ok:
        raise DataError(content)
    params = decode_checkpoint(content)
    logger.debug("loaded %d tensors from %s", len(params.tensors), path)
    return params
