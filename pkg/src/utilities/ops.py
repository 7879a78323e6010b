"""
Differentiable operations.

Every function takes Tensors, computes its result with the numpy kernels and,
when a GradTape is active, records a closure that maps the output gradient to
input gradients. Without an active tape nothing is recorded.
"""

from typing import Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .errors import ShapeError
from .kernels import SAME, ConvSpec
from .tensor import BackwardFn, Tensor, active_tape


def _emit(op: str, inputs: Sequence[Tensor], out: np.ndarray, backward_fn: BackwardFn) -> Tensor:
    result = Tensor.wrap(out)
    tape = active_tape()
    if tape is not None:
        tape.record(op, inputs, result, backward_fn)
    return result


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op} needs identical shapes, got {a.shape} and {b.shape}")


def conv2d(x: Tensor, w: Tensor, b: Tensor, spec: ConvSpec) -> Tensor:
    xd, wd = x.data, w.data
    out = kernels.conv2d_forward(xd, wd, b.data, spec)

    def grad(g: np.ndarray):
        return (kernels.conv2d_backward_input(g, wd, xd.shape, spec),
                kernels.conv2d_backward_weight(xd, g, spec),
                g.sum(axis=(0, 1)))

    return _emit("conv2d", (x, w, b), out, grad)


def deconv2d(x: Tensor, w: Tensor, b: Tensor, spec: ConvSpec) -> Tensor:
    xd, wd = x.data, w.data
    out = kernels.deconv2d_forward(xd, wd, b.data, spec)
    adjoint = spec.transposed()

    def grad(g: np.ndarray):
        zero_bias = np.zeros(spec.in_channels, dtype=g.dtype)
        return (kernels.conv2d_forward(g, wd, zero_bias, adjoint),
                kernels.conv2d_backward_weight(g, xd, adjoint),
                g.sum(axis=(0, 1)))

    return _emit("deconv2d", (x, w, b), out, grad)


def maxpool2d(x: Tensor, kernel: Tuple[int, int] = (3, 3), stride: Tuple[int, int] = (1, 2),
              padding: str = SAME) -> Tensor:
    out, argmax = kernels.maxpool2d_forward(x.data, kernel, stride, padding)
    in_shape = x.shape

    def grad(g: np.ndarray):
        return (kernels.maxpool2d_backward(g, argmax, in_shape, kernel, stride, padding),)

    return _emit("maxpool2d", (x,), out, grad)


def global_avg_pool(x: Tensor) -> Tensor:
    out = kernels.global_avg_pool_forward(x.data)
    height, width, _ = x.shape

    def grad(g: np.ndarray):
        return (np.broadcast_to(g / (height * width), x.shape).copy(),)

    return _emit("global_avg_pool", (x,), out, grad)


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    xd, wd = x.data, w.data
    out = kernels.dense_forward(xd, wd, b.data)

    def grad(g: np.ndarray):
        flat = g.reshape(1, -1)
        return ((flat @ wd.T).reshape(xd.shape),
                xd.reshape(-1, 1) @ flat,
                flat.reshape(-1))

    return _emit("dense", (x, w, b), out, grad)


def relu(x: Tensor) -> Tensor:
    xd = x.data
    out = np.maximum(xd, 0)

    def grad(g: np.ndarray):
        return (g * (xd > 0),)

    return _emit("relu", (x,), out, grad)


def sigmoid(x: Tensor) -> Tensor:
    out = kernels.sigmoid_forward(x.data)

    def grad(g: np.ndarray):
        return (g * out * (1 - out),)

    return _emit("sigmoid", (x,), out, grad)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")

    def grad(g: np.ndarray):
        return g, g

    return _emit("add", (a, b), a.data + b.data, grad)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def grad(g: np.ndarray):
        return g * bd, g * ad

    return _emit("mul", (a, b), ad * bd, grad)


def scale_channels(feature: Tensor, gate: Tensor) -> Tensor:
    """Multiply every spatial position of channel n by gate[n]."""
    channels = feature.shape[-1]
    if gate.shape != (1, 1, channels):
        raise ShapeError(f"gate must be 1 x 1 x {channels}, got {gate.shape}")
    fd, gd = feature.data, gate.data

    def grad(g: np.ndarray):
        return g * gd, (g * fd).sum(axis=(0, 1), keepdims=True)

    return _emit("scale_channels", (feature, gate), fd * gd, grad)


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    out = kernels.concat_channels_forward([t.data for t in tensors])
    offsets = np.cumsum([0] + [t.shape[2] for t in tensors])

    def grad(g: np.ndarray):
        return tuple(g[:, :, lo:hi] for lo, hi in zip(offsets[:-1], offsets[1:]))

    return _emit("concat_channels", tuple(tensors), out, grad)


def broadcast_spatial(x: Tensor, height: int, width: int) -> Tensor:
    """Repeat a 1 x 1 x C descriptor over a height x width grid."""
    if x.shape[:2] != (1, 1):
        raise ShapeError(f"broadcast_spatial needs a 1 x 1 x C input, got {x.shape}")
    out = np.broadcast_to(x.data, (height, width, x.shape[2])).copy()

    def grad(g: np.ndarray):
        return (g.sum(axis=(0, 1), keepdims=True),)

    return _emit("broadcast_spatial", (x,), out, grad)


def softmax_channels(x: Tensor) -> Tensor:
    out = kernels.softmax_channels_forward(x.data)

    def grad(g: np.ndarray):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _emit("softmax_channels", (x,), out, grad)


def sum_all(x: Tensor) -> Tensor:
    def grad(g: np.ndarray):
        return (np.full(x.shape, g, dtype=x.data.dtype),)

    return _emit("sum_all", (x,), np.asarray(x.data.sum()), grad)


def cross_entropy(probabilities: Tensor, labels: np.ndarray, class_weights: Sequence[float],
                  mask: Optional[np.ndarray] = None, eps: float = 1e-8) -> Tensor:
    """
    Weighted mean over pixels of -w[label] * log(p[label] + eps).

    Args:
        probabilities: H x W x K per-pixel class distribution
        labels: H x W integer class ids
        class_weights: K weights
        mask: optional H x W booleans; pixels outside the mask do not contribute

    Returns:
        Tensor: scalar loss
    """
    probs = probabilities.data
    height, width, classes = probs.shape
    labels = np.asarray(labels)
    if labels.shape != (height, width):
        raise ShapeError(f"labels shape {labels.shape} does not match probabilities {probs.shape[:2]}")
    weights = np.asarray(class_weights, dtype=probs.dtype)
    if weights.shape != (classes,):
        raise ShapeError(f"class_weights must have {classes} entries, got {weights.shape}")
    if labels.min() < 0 or labels.max() >= classes:
        raise ShapeError(f"labels must lie in [0, {classes - 1}]")

    pixel_weights = weights[labels]
    if mask is not None:
        pixel_weights = pixel_weights * np.asarray(mask, dtype=probs.dtype)
    total = pixel_weights.sum()
    rows, cols = np.indices((height, width))
    picked = probs[rows, cols, labels]
    value = (pixel_weights * -np.log(picked + eps)).sum() / total if total > 0 else np.zeros((), probs.dtype)

    def grad(g: np.ndarray):
        dp = np.zeros_like(probs)
        if total > 0:
            dp[rows, cols, labels] = -g * pixel_weights / (picked + eps) / total
        return (dp,)

    return _emit("cross_entropy", (probabilities,), np.asarray(value, dtype=probs.dtype), grad)

