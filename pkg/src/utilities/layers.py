"""
Layers - the composite blocks of the segmentation network.

Each block has a frozen config dataclass describing its channel plan (and the
parameter shapes that plan implies), a params dataclass holding its tensors,
and a forward function built only from the differentiable ops.
"""

from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple

from . import ops
from .errors import ParameterError, ShapeError
from .kernels import ConvSpec
from .tensor import Tensor

Shape = Tuple[int, ...]


def _take(mapping: Mapping[str, Tensor], names: Tuple[str, ...], owner: str) -> List[Tensor]:
    missing = [name for name in names if name not in mapping]
    if missing:
        raise ParameterError(f"{owner}: missing parameters {', '.join(missing)}", owner)
    return [mapping[name] for name in names]


@dataclass(frozen=True)
class FireConfig:
    """Squeeze 1x1 to ``squeeze_channels``, then parallel 1x1 and 3x3 expands."""
    in_channels: int
    squeeze_channels: int
    expand1_channels: int
    expand3_channels: int

    def __post_init__(self) -> None:
        if min(self.in_channels, self.squeeze_channels, self.expand1_channels, self.expand3_channels) < 1:
            raise ShapeError(f"fire channels must be >= 1: {self}")
        if self.squeeze_channels > self.in_channels:
            raise ShapeError(f"squeeze channels {self.squeeze_channels} exceed input channels {self.in_channels}")

    @classmethod
    def for_output(cls, in_channels: int, out_channels: int) -> "FireConfig":
        """Squeeze to a quarter of the output, split the expand evenly."""
        squeeze = max(1, min(in_channels, out_channels // 4))
        return cls(in_channels, squeeze, out_channels // 2, out_channels - out_channels // 2)

    @property
    def out_channels(self) -> int:
        return self.expand1_channels + self.expand3_channels

    def param_shapes(self) -> Dict[str, Shape]:
        s = self.squeeze_channels
        return {
            "squeeze_w": (1, 1, self.in_channels, s), "squeeze_b": (s,),
            "expand1_w": (1, 1, s, self.expand1_channels), "expand1_b": (self.expand1_channels,),
            "expand3_w": (3, 3, s, self.expand3_channels), "expand3_b": (self.expand3_channels,),
        }


@dataclass(frozen=True)
class FireDeconvConfig(FireConfig):
    """Fire block whose squeezed features pass through a width-upsampling deconvolution."""
    stride_w: int = 2
    deconv_kernel: Tuple[int, int] = (1, 4)

    @classmethod
    def for_output(cls, in_channels: int, out_channels: int, stride_w: int = 2,
                   deconv_kernel: Tuple[int, int] = (1, 4)) -> "FireDeconvConfig":
        squeeze = max(1, min(in_channels, out_channels // 4))
        return cls(in_channels, squeeze, out_channels // 2, out_channels - out_channels // 2,
                   stride_w, deconv_kernel)

    def param_shapes(self) -> Dict[str, Shape]:
        shapes = super().param_shapes()
        s = self.squeeze_channels
        shapes["deconv_w"] = (self.deconv_kernel[0], self.deconv_kernel[1], s, s)
        shapes["deconv_b"] = (s,)
        return shapes


@dataclass(frozen=True)
class SqueezeReweightConfig:
    channels: int
    ratio: int = 16

    @property
    def hidden(self) -> int:
        return max(1, self.channels // self.ratio)

    def param_shapes(self) -> Dict[str, Shape]:
        return {"fc1_w": (self.channels, self.hidden), "fc1_b": (self.hidden,),
                "fc2_w": (self.hidden, self.channels), "fc2_b": (self.channels,)}


@dataclass(frozen=True)
class EnlargementConfig:
    """Three dilated 3x3 branches, a 1x1 branch and a pooled branch, fused by a 1x1 conv."""
    in_channels: int
    branch_channels: int
    rates: Tuple[int, int, int] = (6, 9, 12)

    @classmethod
    def for_input(cls, in_channels: int, rates: Tuple[int, int, int] = (6, 9, 12)) -> "EnlargementConfig":
        return cls(in_channels, max(1, in_channels // 4), tuple(rates))

    @property
    def concat_channels(self) -> int:
        return 5 * self.branch_channels

    @property
    def out_channels(self) -> int:
        return max(1, self.concat_channels // 4)

    def param_shapes(self) -> Dict[str, Shape]:
        c, b = self.in_channels, self.branch_channels
        shapes: Dict[str, Shape] = {}
        for index in range(len(self.rates)):
            shapes[f"dilated{index + 1}_w"] = (3, 3, c, b)
            shapes[f"dilated{index + 1}_b"] = (b,)
        shapes.update({
            "pointwise_w": (1, 1, c, b), "pointwise_b": (b,),
            "pooled_w": (c, b), "pooled_b": (b,),
            "fuse_w": (1, 1, self.concat_channels, self.out_channels), "fuse_b": (self.out_channels,),
        })
        return shapes


@dataclass(frozen=True)
class FireParams:
    squeeze_w: Tensor
    squeeze_b: Tensor
    expand1_w: Tensor
    expand1_b: Tensor
    expand3_w: Tensor
    expand3_b: Tensor
    deconv_w: Optional[Tensor] = None
    deconv_b: Optional[Tensor] = None

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Tensor], owner: str = "fire") -> "FireParams":
        names = ("squeeze_w", "squeeze_b", "expand1_w", "expand1_b", "expand3_w", "expand3_b")
        tensors = _take(mapping, names, owner)
        return cls(*tensors, mapping.get("deconv_w"), mapping.get("deconv_b"))


@dataclass(frozen=True)
class SqueezeReweightParams:
    fc1_w: Tensor
    fc1_b: Tensor
    fc2_w: Tensor
    fc2_b: Tensor

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Tensor], owner: str = "SR") -> "SqueezeReweightParams":
        return cls(*_take(mapping, ("fc1_w", "fc1_b", "fc2_w", "fc2_b"), owner))

    @property
    def channels(self) -> int:
        return self.fc2_w.shape[1]

    @property
    def ratio(self) -> int:
        return max(1, self.fc1_w.shape[0] // self.fc1_w.shape[1])


@dataclass(frozen=True)
class EnlargementParams:
    rates: Tuple[int, ...]
    dilated_w: Tuple[Tensor, ...]
    dilated_b: Tuple[Tensor, ...]
    pointwise_w: Tensor
    pointwise_b: Tensor
    pooled_w: Tensor
    pooled_b: Tensor
    fuse_w: Tensor
    fuse_b: Tensor

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Tensor], rates: Tuple[int, ...],
                     owner: str = "EL") -> "EnlargementParams":
        dilated = _take(mapping, tuple(f"dilated{i + 1}_{kind}" for i in range(len(rates))
                                       for kind in ("w", "b")), owner)
        rest = _take(mapping, ("pointwise_w", "pointwise_b", "pooled_w", "pooled_b", "fuse_w", "fuse_b"), owner)
        return cls(tuple(rates), tuple(dilated[0::2]), tuple(dilated[1::2]), *rest)

    @property
    def in_channels(self) -> int:
        return self.pointwise_w.shape[2]

    @property
    def branch_channels(self) -> int:
        return self.pointwise_w.shape[3]


def _conv(x: Tensor, w: Tensor, b: Tensor, stride_w: int = 1, dilation: int = 1) -> Tensor:
    spec = ConvSpec(w.shape[0], w.shape[1], w.shape[2], w.shape[3],
                    stride_w=stride_w, dilation_h=dilation, dilation_w=dilation)
    return ops.conv2d(x, w, b, spec)


def _expand(squeezed: Tensor, params: FireParams) -> Tensor:
    e1 = ops.relu(_conv(squeezed, params.expand1_w, params.expand1_b))
    e3 = ops.relu(_conv(squeezed, params.expand3_w, params.expand3_b))
    return ops.concat_channels([e1, e3])


def _check_input(x: Tensor, channels: int, owner: str) -> None:
    if len(x.shape) != 3:
        raise ShapeError(f"{owner} input must be H x W x C, got {x.shape}")
    if x.shape[2] != channels:
        raise ShapeError(f"{owner} input has {x.shape[2]} channels, config expects {channels}")


def fire_forward(x: Tensor, cfg: FireConfig, params: FireParams) -> Tensor:
    """concat(relu(1x1 expand(s)), relu(3x3 expand(s))) with s = relu(1x1 squeeze(x))."""
    _check_input(x, cfg.in_channels, "fire")
    squeezed = ops.relu(_conv(x, params.squeeze_w, params.squeeze_b))
    return _expand(squeezed, params)


def fire_deconv_forward(x: Tensor, cfg: FireDeconvConfig, params: FireParams) -> Tensor:
    """Squeeze, upsample width with a transposed convolution, then expand."""
    _check_input(x, cfg.in_channels, "fire-deconv")
    if params.deconv_w is None or params.deconv_b is None:
        raise ParameterError("fire-deconv: missing parameters deconv_w, deconv_b", "fdeconv")
    squeezed = ops.relu(_conv(x, params.squeeze_w, params.squeeze_b))
    s = cfg.squeeze_channels
    spec = ConvSpec(cfg.deconv_kernel[0], cfg.deconv_kernel[1], s, s, stride_w=cfg.stride_w)
    upsampled = ops.relu(ops.deconv2d(squeezed, params.deconv_w, params.deconv_b, spec))
    return _expand(upsampled, params)


def squeeze_reweight_forward(x: Tensor, params: SqueezeReweightParams) -> Tensor:
    """
    Channel attention.

    The descriptor chi = global_avg_pool(x) drives the gate
    s = sigmoid(fc2(relu(fc1(chi)))); every channel n of x is scaled by s[n].
    """
    _check_input(x, params.channels, "squeeze-reweight")
    descriptor = ops.global_avg_pool(x)
    hidden = ops.relu(ops.dense(descriptor, params.fc1_w, params.fc1_b))
    gate = ops.sigmoid(ops.dense(hidden, params.fc2_w, params.fc2_b))
    return ops.scale_channels(x, gate)


def enlargement_branches(x: Tensor, params: EnlargementParams) -> List[Tensor]:
    """The five branch outputs, in concatenation order: dilated (per rate), 1x1, pooled."""
    _check_input(x, params.in_channels, "enlargement")
    height, width, _ = x.shape
    branches = [ops.relu(_conv(x, w, b, dilation=rate))
                for rate, w, b in zip(params.rates, params.dilated_w, params.dilated_b)]
    branches.append(ops.relu(_conv(x, params.pointwise_w, params.pointwise_b)))
    pooled = ops.relu(ops.dense(ops.global_avg_pool(x), params.pooled_w, params.pooled_b))
    branches.append(ops.broadcast_spatial(pooled, height, width))
    return branches


def enlargement_forward(x: Tensor, params: EnlargementParams,
                        expected_extent: Optional[Tuple[int, int]] = None) -> Tensor:
    """Multi-rate dilated context, fused down to a quarter of the concatenated channels."""
    if expected_extent is not None and tuple(x.shape[:2]) != tuple(expected_extent):
        raise ShapeError(f"enlargement input spatial extent {x.shape[:2]} does not match "
                         f"the graph position {tuple(expected_extent)}")
    fused = ops.concat_channels(enlargement_branches(x, params))
    return ops.relu(_conv(fused, params.fuse_w, params.fuse_b))
