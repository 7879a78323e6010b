"""
Naive loop reference implementations and the finite-difference gradient checker.

Everything here is deliberately written element by element, independent of the
tap-by-tap kernels under test.
"""

import math
from typing import Callable, List, Sequence, Tuple

import numpy as np

from src.utilities.tensor import GradTape, Tensor, backward, default_dtype


def same_pads(size: int, kernel: int, stride: int, dilation: int) -> Tuple[int, int]:
    effective = dilation * (kernel - 1) + 1
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + effective - size, 0)
    return total // 2, total - total // 2


def conv2d_naive(x, w, b, stride=(1, 1), dilation=(1, 1), padding="SAME"):
    height, width, cin = x.shape
    kh, kw, _, cout = w.shape
    sh, sw = stride
    dh, dw = dilation
    if padding == "SAME":
        top, _ = same_pads(height, kh, sh, dh)
        left, _ = same_pads(width, kw, sw, dw)
        out_h, out_w = math.ceil(height / sh), math.ceil(width / sw)
    else:
        top = left = 0
        out_h = (height - (dh * (kh - 1) + 1)) // sh + 1
        out_w = (width - (dw * (kw - 1) + 1)) // sw + 1
    out = np.zeros((out_h, out_w, cout), dtype=np.float64)
    for oy in range(out_h):
        for ox in range(out_w):
            for co in range(cout):
                total = float(b[co])
                for i in range(kh):
                    for j in range(kw):
                        y = oy * sh + i * dh - top
                        xx = ox * sw + j * dw - left
                        if 0 <= y < height and 0 <= xx < width:
                            for ci in range(cin):
                                total += float(x[y, xx, ci]) * float(w[i, j, ci, co])
                out[oy, ox, co] = total
    return out


def deconv2d_naive(x, w, b, stride_w):
    """Scatter-add transposed convolution, SAME cropping; w is kh x kw x Cout x Cin."""
    height, width, cin = x.shape
    kh, kw, cout, _ = w.shape
    out_h, out_w = height, width * stride_w
    top, _ = same_pads(out_h, kh, 1, 1)
    left, _ = same_pads(out_w, kw, stride_w, 1)
    full = np.zeros((out_h + kh, out_w + kw + stride_w, cout), dtype=np.float64)
    for y in range(height):
        for xx in range(width):
            for i in range(kh):
                for j in range(kw):
                    for co in range(cout):
                        for ci in range(cin):
                            full[y + i, xx * stride_w + j, co] += float(x[y, xx, ci]) * float(w[i, j, co, ci])
    return full[top:top + out_h, left:left + out_w, :] + np.asarray(b, dtype=np.float64)


def maxpool_naive(x, kernel, stride):
    height, width, channels = x.shape
    kh, kw = kernel
    sh, sw = stride
    top, _ = same_pads(height, kh, sh, 1)
    left, _ = same_pads(width, kw, sw, 1)
    out_h, out_w = math.ceil(height / sh), math.ceil(width / sw)
    out = np.full((out_h, out_w, channels), -np.inf)
    for oy in range(out_h):
        for ox in range(out_w):
            for c in range(channels):
                for i in range(kh):
                    for j in range(kw):
                        y, xx = oy * sh + i - top, ox * sw + j - left
                        if 0 <= y < height and 0 <= xx < width:
                            out[oy, ox, c] = max(out[oy, ox, c], float(x[y, xx, c]))
    return out


def mean_naive(x):
    height, width, channels = x.shape
    out = np.zeros((1, 1, channels))
    for c in range(channels):
        total = 0.0
        for y in range(height):
            for xx in range(width):
                total += float(x[y, xx, c])
        out[0, 0, c] = total / (height * width)
    return out


def dense_naive(x, w, b):
    channels, k = w.shape
    out = np.zeros((1, 1, k))
    for j in range(k):
        out[0, 0, j] = float(b[j]) + sum(float(x[0, 0, i]) * float(w[i, j]) for i in range(channels))
    return out


def argmax_naive(probabilities):
    height, width, classes = probabilities.shape
    out = np.zeros((height, width), dtype=np.int64)
    for y in range(height):
        for xx in range(width):
            best = 0
            for c in range(1, classes):
                if probabilities[y, xx, c] > probabilities[y, xx, best]:
                    best = c
            out[y, xx] = best
    return out


def set_metrics(pred, gt, cls, occupancy=None):
    """(precision, recall, iou) for one class from explicit pixel sets; None for 0/0."""
    pixels = [(y, x) for y in range(pred.shape[0]) for x in range(pred.shape[1])
              if occupancy is None or occupancy[y, x]]
    predicted = {p for p in pixels if pred[p] == cls}
    truth = {p for p in pixels if gt[p] == cls}
    both = predicted & truth
    either = predicted | truth
    ratio = lambda n, d: n / d if d else None
    return ratio(len(both), len(predicted)), ratio(len(both), len(truth)), ratio(len(both), len(either))


def gradient_check(build: Callable[[List[Tensor]], Tensor], arrays: Sequence[np.ndarray],
                   rng: np.random.Generator, samples: int = 12, eps: float = None,
                   rtol: float = 1e-2, max_rtol: float = None) -> None:
    """
    Compare backward() with central differences on sampled elements of every input.

    Each sampled element must satisfy |a - n| <= rtol * max(|a|, |n|) + 1e-3 * scale,
    where scale is the largest analytic magnitude of that input; the element with
    the largest analytic magnitude is always checked, against ``max_rtol``.
    Under float64 precision the step defaults to 1e-6, otherwise 1e-3.
    """
    wide = default_dtype() == np.float64
    eps = eps if eps is not None else (1e-6 if wide else 1e-3)
    max_rtol = max_rtol if max_rtol is not None else (1e-3 if wide else 5e-3)
    arrays = [np.array(a, dtype=default_dtype()) for a in arrays]
    tensors = [Tensor(a) for a in arrays]
    with GradTape() as tape:
        out = build(tensors)
    grads = backward(tape, out, tensors)

    def evaluate(values: List[np.ndarray]) -> float:
        return build([Tensor(v) for v in values]).item()

    for k, (array, grad) in enumerate(zip(arrays, grads)):
        scale = float(np.abs(grad).max())
        peak = int(np.argmax(np.abs(grad)))
        picks = set(rng.choice(array.size, size=min(samples, array.size), replace=False).tolist())
        picks.add(peak)
        for flat in sorted(picks):
            index = np.unravel_index(flat, array.shape)
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[k][index] += eps
            minus[k][index] -= eps
            numeric = (evaluate(plus) - evaluate(minus)) / (2 * eps)
            analytic = float(grad[index])
            error = abs(analytic - numeric)
            if flat == peak and scale > 0:
                assert error <= max_rtol * abs(analytic) + 1e-9, \
                    f"input {k} peak element {index}: analytic {analytic}, numeric {numeric}"
            else:
                bound = rtol * max(abs(analytic), abs(numeric)) + 1e-3 * scale + 1e-9
                assert error <= bound, f"input {k} element {index}: analytic {analytic}, numeric {numeric}"
