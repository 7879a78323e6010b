"""
Kernels - forward and adjoint numpy kernels over H x W x C arrays.

Convolution is computed tap by tap: for every kernel tap (i, j) the strided,
dilated slice of the padded input is multiplied by the tap's Cin x Cout weight
matrix and accumulated. The same slices, written in the other direction, give
the input gradient, which is also the forward pass of the transposed convolution.
"""

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .errors import ShapeError

logger = logging.getLogger(__name__)

SAME = "SAME"
VALID = "VALID"

_pool_lock = threading.Lock()
_pool: Optional[ThreadPoolExecutor] = None
_num_threads = 1


def set_num_threads(count: int) -> None:
    """Set how many threads conv2d may split its output rows across."""
    global _pool, _num_threads
    if count < 1:
        raise ValueError(f"thread count must be >= 1, got {count}")
    with _pool_lock:
        if _pool is not None:
            _pool.shutdown(wait=True)
            _pool = None
        _num_threads = count
        if count > 1:
            _pool = ThreadPoolExecutor(max_workers=count, thread_name_prefix="pointseg-kernel")
    logger.debug("kernel threads set to %d", count)


def get_num_threads() -> int:
    return _num_threads


@dataclass(frozen=True)
class ConvSpec:
    """Kernel, stride, dilation and padding of a (transposed) convolution."""
    kernel_h: int
    kernel_w: int
    in_channels: int
    out_channels: int
    stride_h: int = 1
    stride_w: int = 1
    dilation_h: int = 1
    dilation_w: int = 1
    padding: str = SAME

    def __post_init__(self) -> None:
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise ShapeError(f"kernel extents must be >= 1, got {self.kernel_h}x{self.kernel_w}")
        if self.stride_h < 1 or self.stride_w < 1:
            raise ShapeError(f"strides must be >= 1, got ({self.stride_h}, {self.stride_w})")
        if self.dilation_h < 1 or self.dilation_w < 1:
            raise ShapeError(f"dilations must be >= 1, got ({self.dilation_h}, {self.dilation_w})")
        if self.padding not in (SAME, VALID):
            raise ShapeError(f"padding must be SAME or VALID, got {self.padding!r}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ShapeError("channel counts must be >= 1")

    @property
    def weight_shape(self) -> Tuple[int, int, int, int]:
        return self.kernel_h, self.kernel_w, self.in_channels, self.out_channels

    @property
    def effective_kernel(self) -> Tuple[int, int]:
        return (self.dilation_h * (self.kernel_h - 1) + 1,
                self.dilation_w * (self.kernel_w - 1) + 1)

    def output_size(self, height: int, width: int) -> Tuple[int, int]:
        return (_out_extent(height, self.effective_kernel[0], self.stride_h, self.padding, "height"),
                _out_extent(width, self.effective_kernel[1], self.stride_w, self.padding, "width"))

    def pads(self, height: int, width: int) -> Tuple[Tuple[int, int], Tuple[int, int]]:
        """Zero padding ((top, bottom), (left, right)) applied before the convolution."""
        out_h, out_w = self.output_size(height, width)
        return (_pad_pair(height, out_h, self.effective_kernel[0], self.stride_h, self.padding),
                _pad_pair(width, out_w, self.effective_kernel[1], self.stride_w, self.padding))

    def transposed(self) -> "ConvSpec":
        """The forward convolution whose input gradient is this spec's transposed convolution."""
        return ConvSpec(self.kernel_h, self.kernel_w, self.out_channels, self.in_channels,
                        self.stride_h, self.stride_w, self.dilation_h, self.dilation_w, self.padding)

    def transposed_output_size(self, height: int, width: int) -> Tuple[int, int]:
        eff_h, eff_w = self.effective_kernel
        if self.padding == SAME:
            return height * self.stride_h, width * self.stride_w
        return (height - 1) * self.stride_h + eff_h, (width - 1) * self.stride_w + eff_w


def _out_extent(size: int, eff_kernel: int, stride: int, padding: str, axis: str) -> int:
    if padding == SAME:
        return math.ceil(size / stride)
    if size < eff_kernel:
        raise ShapeError(f"{axis} {size} is smaller than the effective kernel {eff_kernel} under VALID padding")
    return (size - eff_kernel) // stride + 1


def _pad_pair(size: int, out: int, eff_kernel: int, stride: int, padding: str) -> Tuple[int, int]:
    if padding == VALID:
        return 0, 0
    total = max((out - 1) * stride + eff_kernel - size, 0)
    return total // 2, total - total // 2


def _check_feature(x: np.ndarray, channels: int, what: str) -> None:
    if x.ndim != 3:
        raise ShapeError(f"{what} must be H x W x C, got rank {x.ndim}")
    if x.shape[2] != channels:
        raise ShapeError(f"{what} channel extent {x.shape[2]} does not match spec channels {channels}")


def _check_weights(w: np.ndarray, expected: Tuple[int, ...], what: str = "weights") -> None:
    names = ("kernel_h", "kernel_w", "in_channels", "out_channels")
    if w.ndim != len(expected):
        raise ShapeError(f"{what} must have rank {len(expected)}, got {w.ndim}")
    for axis, (got, want) in enumerate(zip(w.shape, expected)):
        if got != want:
            label = names[axis] if len(expected) == 4 else f"axis {axis}"
            raise ShapeError(f"{what} {label} is {got}, expected {want}")


def _check_bias(b: np.ndarray, channels: int) -> None:
    if b.shape != (channels,):
        raise ShapeError(f"bias must have shape ({channels},), got {b.shape}")


def _tap_slices(i: int, j: int, out_h: int, out_w: int, spec: ConvSpec,
                row_start: int = 0) -> Tuple[slice, slice]:
    top = (row_start * spec.stride_h) + i * spec.dilation_h
    left = j * spec.dilation_w
    return (slice(top, top + spec.stride_h * (out_h - 1) + 1, spec.stride_h),
            slice(left, left + spec.stride_w * (out_w - 1) + 1, spec.stride_w))


def _conv_rows(xp: np.ndarray, w: np.ndarray, spec: ConvSpec, row_start: int, row_stop: int,
               out_w: int) -> np.ndarray:
    rows = row_stop - row_start
    channels = xp.shape[2]
    out = np.zeros((rows * out_w, spec.out_channels), dtype=np.result_type(xp, w))
    for i in range(spec.kernel_h):
        for j in range(spec.kernel_w):
            rs, cs = _tap_slices(i, j, rows, out_w, spec, row_start)
            out += xp[rs, cs, :].reshape(-1, channels) @ w[i, j]
    return out.reshape(rows, out_w, spec.out_channels)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Dilated, strided 2D convolution of an H x W x Cin array with kh x kw x Cin x Cout weights."""
    _check_feature(x, spec.in_channels, "input")
    _check_weights(w, spec.weight_shape)
    _check_bias(b, spec.out_channels)

    height, width, _ = x.shape
    out_h, out_w = spec.output_size(height, width)
    (top, bottom), (left, right) = spec.pads(height, width)
    xp = np.pad(x, ((top, bottom), (left, right), (0, 0)))

    pool = _pool
    if pool is not None and out_h >= 2 * _num_threads:
        bounds = np.linspace(0, out_h, _num_threads + 1).astype(int)
        futures = [pool.submit(_conv_rows, xp, w, spec, int(lo), int(hi), out_w)
                   for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
        out = np.concatenate([future.result() for future in futures], axis=0)
    else:
        out = _conv_rows(xp, w, spec, 0, out_h, out_w)
    return out + b


def conv2d_backward_input(dout: np.ndarray, w: np.ndarray, in_shape: Tuple[int, int, int],
                          spec: ConvSpec) -> np.ndarray:
    """Gradient of conv2d with respect to its input (the adjoint of the forward map)."""
    height, width, channels = in_shape
    out_h, out_w = spec.output_size(height, width)
    if dout.shape != (out_h, out_w, spec.out_channels):
        raise ShapeError(f"output gradient shape {dout.shape} does not match ({out_h}, {out_w}, {spec.out_channels})")
    (top, bottom), (left, right) = spec.pads(height, width)
    dxp = np.zeros((height + top + bottom, width + left + right, channels), dtype=np.result_type(dout, w))
    flat = dout.reshape(-1, spec.out_channels)
    for i in range(spec.kernel_h):
        for j in range(spec.kernel_w):
            rs, cs = _tap_slices(i, j, out_h, out_w, spec)
            dxp[rs, cs, :] += (flat @ w[i, j].T).reshape(out_h, out_w, channels)
    return dxp[top:top + height, left:left + width, :]


def conv2d_backward_weight(x: np.ndarray, dout: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Gradient of conv2d with respect to its kh x kw x Cin x Cout weights."""
    height, width, channels = x.shape
    out_h, out_w = spec.output_size(height, width)
    (top, bottom), (left, right) = spec.pads(height, width)
    xp = np.pad(x, ((top, bottom), (left, right), (0, 0)))
    flat = dout.reshape(-1, spec.out_channels)
    dw = np.zeros(spec.weight_shape, dtype=np.result_type(x, dout))
    for i in range(spec.kernel_h):
        for j in range(spec.kernel_w):
            rs, cs = _tap_slices(i, j, out_h, out_w, spec)
            dw[i, j] = xp[rs, cs, :].reshape(-1, channels).T @ flat
    return dw


def check_deconv_spec(spec: ConvSpec) -> None:
    if spec.stride_h != 1 or spec.stride_w not in (1, 2):
        raise ShapeError(f"unsupported deconv stride ({spec.stride_h}, {spec.stride_w}); "
                         "only (1, 1) and (1, 2) upsample width alone")


def deconv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """
    Transposed convolution upsampling width by ``spec.stride_w``.

    Weights are kh x kw x Cout x Cin: the same tensor a forward convolution from
    the Cout-channel output space back to Cin would use, so that deconv2d is exactly
    the adjoint of that convolution.
    """
    check_deconv_spec(spec)
    _check_feature(x, spec.in_channels, "input")
    _check_weights(w, spec.transposed().weight_shape)
    _check_bias(b, spec.out_channels)
    out_h, out_w = spec.transposed_output_size(x.shape[0], x.shape[1])
    out = conv2d_backward_input(x, w, (out_h, out_w, spec.out_channels), spec.transposed())
    return out + b


def maxpool2d_forward(x: np.ndarray, kernel: Tuple[int, int], stride: Tuple[int, int],
                      padding: str = SAME) -> Tuple[np.ndarray, np.ndarray]:
    """
    Window maximum per channel.

    Returns:
        tuple: (output, argmax tap index per output element). Taps are numbered
        row-major, so the first maximal tap is also the lowest input linear index.
    """
    if x.ndim != 3:
        raise ShapeError(f"input must be H x W x C, got rank {x.ndim}")
    spec = ConvSpec(kernel[0], kernel[1], x.shape[2], x.shape[2], stride[0], stride[1], padding=padding)
    height, width, _ = x.shape
    out_h, out_w = spec.output_size(height, width)
    (top, bottom), (left, right) = spec.pads(height, width)
    xp = np.pad(x, ((top, bottom), (left, right), (0, 0)), constant_values=-np.inf)
    taps = [xp[_tap_slices(i, j, out_h, out_w, spec)] for i in range(kernel[0]) for j in range(kernel[1])]
    stacked = np.stack(taps, axis=-1)
    argmax = np.argmax(stacked, axis=-1)
    out = np.take_along_axis(stacked, argmax[..., None], axis=-1)[..., 0]
    return out, argmax


def maxpool2d_backward(dout: np.ndarray, argmax: np.ndarray, in_shape: Tuple[int, int, int],
                       kernel: Tuple[int, int], stride: Tuple[int, int], padding: str = SAME) -> np.ndarray:
    spec = ConvSpec(kernel[0], kernel[1], in_shape[2], in_shape[2], stride[0], stride[1], padding=padding)
    height, width, channels = in_shape
    out_h, out_w = spec.output_size(height, width)
    (top, bottom), (left, right) = spec.pads(height, width)
    dxp = np.zeros((height + top + bottom, width + left + right, channels), dtype=dout.dtype)
    tap = 0
    for i in range(kernel[0]):
        for j in range(kernel[1]):
            dxp[_tap_slices(i, j, out_h, out_w, spec)] += np.where(argmax == tap, dout, 0)
            tap += 1
    return dxp[top:top + height, left:left + width, :]


def global_avg_pool_forward(x: np.ndarray) -> np.ndarray:
    if x.ndim != 3:
        raise ShapeError(f"input must be H x W x C, got rank {x.ndim}")
    return x.mean(axis=(0, 1), keepdims=True)


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Affine map of a 1 x 1 x C descriptor with C x K weights."""
    if x.ndim != 3 or x.shape[:2] != (1, 1):
        raise ShapeError(f"dense input must be 1 x 1 x C, got {x.shape}")
    if w.ndim != 2 or w.shape[0] != x.shape[2]:
        raise ShapeError(f"dense weights rows {w.shape[0] if w.ndim == 2 else w.shape} do not match input channels {x.shape[2]}")
    _check_bias(b, w.shape[1])
    return (x.reshape(1, -1) @ w + b).reshape(1, 1, -1)


def softmax_channels_forward(x: np.ndarray) -> np.ndarray:
    if x.shape[-1] < 2:
        raise ShapeError(f"softmax needs at least 2 channels, got {x.shape[-1]}")
    shifted = x - x.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def sigmoid_forward(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    exp = np.exp(x[~positive])
    out[~positive] = exp / (1.0 + exp)
    return out


def concat_channels_forward(arrays: List[np.ndarray]) -> np.ndarray:
    if not arrays:
        raise ShapeError("concat_channels needs at least one input")
    spatial = arrays[0].shape[:2]
    for index, array in enumerate(arrays):
        if array.ndim != 3 or array.shape[:2] != spatial:
            raise ShapeError(f"concat input {index} has spatial extent {array.shape[:2]}, expected {spatial}")
    return np.concatenate(arrays, axis=2)
