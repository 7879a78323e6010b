"""
Network - the segmentation graph, its parameter set and one training step.

The encoder downsamples width only (512 -> 256 -> 128 -> 64, height fixed; a
fourth block halves once more to 32), the enlargement layer adds multi-rate
context at the narrowest point, and a fire-deconv decoder restores full width
with additive skips.
"""

import logging
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Mapping, MutableMapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import ops
from .errors import DataError, NumericalError, ParameterError, ShapeError
from .kernels import ConvSpec
from .layers import (EnlargementConfig, EnlargementParams, FireConfig, FireDeconvConfig, FireParams,
                     SqueezeReweightConfig, SqueezeReweightParams, enlargement_forward,
                     fire_deconv_forward, fire_forward, squeeze_reweight_forward)
from .projection import FRAME_CHANNELS, NUM_CLASSES, SphericalFrame
from .tensor import GradTape, Tensor, backward

logger = logging.getLogger(__name__)

SR_PLACEMENTS = ("down", "up", "down_up", "none")
EL_RATE_PRESETS = {
    "3-5-8": (3, 5, 8),
    "4-8-12": (4, 8, 12),
    "6-9-12": (6, 9, 12),
}
DEFAULT_CLASS_WEIGHTS = (1.0, 1.0, 1.0, 1.0)
DOWNSAMPLE_CHOICES = (3, 4)

Shape = Tuple[int, ...]


@dataclass(frozen=True)
class GraphConfig:
    """
    Dimensions of the graph.

    The default reproduces the 64 x 512 wiring; ``compact()`` is a proportionally
    shrunk graph on 8 x 32 frames used where the full graph is too slow.
    """
    height: int = 64
    width: int = 512
    in_channels: int = len(FRAME_CHANNELS)
    num_classes: int = NUM_CLASSES
    conv1_channels: int = 64
    block_channels: Tuple[int, ...] = (128, 256, 512)
    fires_per_block: int = 3
    el_rates: Tuple[int, int, int] = (6, 9, 12)
    use_enlargement: bool = True
    sr_ratio: int = 16
    sr_placement: str = "down"
    deconv_kernel: Tuple[int, int] = (1, 4)
    pool_kernel: Tuple[int, int] = (3, 3)

    def __post_init__(self) -> None:
        if len(self.block_channels) not in DOWNSAMPLE_CHOICES:
            raise ShapeError(f"the encoder has 3 or 4 blocks, got {len(self.block_channels)}")
        if len(self.el_rates) != 3:
            raise ShapeError("the enlargement layer takes exactly three dilation rates")
        halvings = self.downsample
        if self.width % (1 << halvings):
            raise ShapeError(f"frame width {self.width} must be divisible by {1 << halvings} "
                             f"({halvings} width halvings)")
        if self.height < 1 or self.in_channels < 1 or self.num_classes < 2:
            raise ShapeError(f"invalid graph dimensions: {self}")
        if self.sr_placement not in SR_PLACEMENTS:
            raise ShapeError(f"sr_placement must be one of {SR_PLACEMENTS}, got {self.sr_placement!r}")
        if self.fires_per_block < 1 or self.sr_ratio < 1:
            raise ShapeError("fires_per_block and sr_ratio must be >= 1")

    @classmethod
    def compact(cls, **overrides) -> "GraphConfig":
        base = cls(height=8, width=32, conv1_channels=8, block_channels=(8, 16, 32),
                   el_rates=(1, 2, 3), sr_ratio=4)
        return replace(base, **overrides)

    def with_downsample(self, halvings: int) -> "GraphConfig":
        """
        The same graph with 3 or 4 width halvings.

        A fourth block is inserted before the widest one with the mean of its
        neighbours' channels; going back to 3 drops that block again.
        """
        if halvings not in DOWNSAMPLE_CHOICES:
            raise ShapeError(f"downsample must be one of {DOWNSAMPLE_CHOICES}, got {halvings}")
        channels = tuple(self.block_channels)
        if halvings == 4 and len(channels) == 3:
            channels = channels[:2] + ((channels[1] + channels[2]) // 2,) + channels[2:]
        elif halvings == 3 and len(channels) == 4:
            channels = channels[:2] + channels[3:]
        return replace(self, block_channels=channels)

    @property
    def downsample(self) -> int:
        """Width halvings between the input and the enlargement layer."""
        return len(self.block_channels)

    @property
    def encoder_widths(self) -> Tuple[int, ...]:
        return tuple(self.width >> k for k in range(self.downsample + 1))

    @property
    def el_extent(self) -> Tuple[int, int]:
        return self.height, self.width >> self.downsample

    def fire_configs(self) -> "OrderedDict[str, FireConfig]":
        configs: "OrderedDict[str, FireConfig]" = OrderedDict()
        channels = self.conv1_channels
        for block, out_channels in enumerate(self.block_channels):
            for position in range(self.fires_per_block):
                fire_id = f"fire{block * self.fires_per_block + position + 1}"
                configs[fire_id] = FireConfig.for_output(channels, out_channels)
                channels = out_channels
        return configs

    def fire_blocks(self) -> List[List[str]]:
        ids = list(self.fire_configs())
        n = self.fires_per_block
        return [ids[k * n:(k + 1) * n] for k in range(self.downsample)]

    def enlargement_config(self) -> Optional[EnlargementConfig]:
        if not self.use_enlargement:
            return None
        return EnlargementConfig.for_input(self.block_channels[-1], self.el_rates)

    def decoder_plan(self) -> List[Tuple[str, int, int, int, Optional[int]]]:
        """
        (layer id, in channels, out channels, width stride, skip) for every fire-deconv.

        ``skip`` is the encoder block whose output is added after the layer, -1 for
        the full-width conv1 skip and None for the stride-1 refinement.
        """
        blocks = self.block_channels
        el = self.enlargement_config()
        channels = blocks[-1] + (el.out_channels if el else 0)
        plan: List[Tuple[str, int, int, int, Optional[int]]] = []
        for block in range(self.downsample - 2, -2, -1):
            out = blocks[block] if block >= 0 else self.conv1_channels
            plan.append((f"fdeconv{len(plan) + 1}", channels, out, 2, block))
            channels = out
            if len(plan) == 1:
                plan.append(("fdeconv2", channels, channels, 1, None))
        return plan

    def fdeconv_configs(self) -> "OrderedDict[str, FireDeconvConfig]":
        return OrderedDict((layer_id, FireDeconvConfig.for_output(c_in, c_out, stride, self.deconv_kernel))
                           for layer_id, c_in, c_out, stride, _ in self.decoder_plan())

    def sr_configs(self) -> "OrderedDict[str, SqueezeReweightConfig]":
        """One SR per encoder block output (down) or per decoder merge point."""
        if self.sr_placement == "none":
            return OrderedDict()
        if self.sr_placement == "down":
            channels = tuple(self.block_channels)
        else:
            channels = tuple(c_out for _, _, c_out, _, skip in self.decoder_plan() if skip is not None)
        return OrderedDict((f"SR{k + 1}", SqueezeReweightConfig(c, self.sr_ratio))
                           for k, c in enumerate(channels))

    def param_shapes(self) -> "OrderedDict[str, Dict[str, Shape]]":
        """Every layer id with the shapes of its parameters, in graph order."""
        c_in, c1 = self.in_channels, self.conv1_channels
        plan: "OrderedDict[str, Dict[str, Shape]]" = OrderedDict()
        plan["conv1"] = {"w": (3, 3, c_in, c1), "b": (c1,), "skip_w": (1, 1, c_in, c1), "skip_b": (c1,)}
        for layer_id, cfg in self.fire_configs().items():
            plan[layer_id] = cfg.param_shapes()
        for layer_id, cfg in self.sr_configs().items():
            plan[layer_id] = cfg.param_shapes()
        el = self.enlargement_config()
        if el is not None:
            plan["EL"] = el.param_shapes()
        for layer_id, cfg in self.fdeconv_configs().items():
            plan[layer_id] = cfg.param_shapes()
        plan["head"] = {"w": (3, 3, c1, self.num_classes), "b": (self.num_classes,)}
        return plan

    def to_vector(self) -> np.ndarray:
        """Flat numeric encoding stored next to the weights in checkpoints."""
        values = asdict(self)
        flat: List[float] = []
        for name in _VECTOR_FIELDS:
            value = values[name]
            if name == "sr_placement":
                flat.append(SR_PLACEMENTS.index(value))
            elif name == "block_channels":
                flat.extend(tuple(value) + (0,) * (_FIELD_WIDTHS[name] - len(value)))
            elif isinstance(value, tuple):
                flat.extend(value)
            else:
                flat.append(float(value))
        return np.asarray(flat, dtype=np.float32)

    @classmethod
    def from_vector(cls, vector: Sequence[float]) -> "GraphConfig":
        values = [int(round(v)) for v in np.asarray(vector, dtype=np.float64).reshape(-1)]
        expected = sum(_FIELD_WIDTHS[name] for name in _VECTOR_FIELDS)
        if len(values) != expected:
            raise DataError(f"graph description has {len(values)} entries, expected {expected}")
        kwargs = {}
        cursor = 0
        for name in _VECTOR_FIELDS:
            width = _FIELD_WIDTHS[name]
            chunk = values[cursor:cursor + width]
            cursor += width
            if name == "sr_placement":
                if not 0 <= chunk[0] < len(SR_PLACEMENTS):
                    raise DataError(f"unknown SR placement code {chunk[0]}")
                kwargs[name] = SR_PLACEMENTS[chunk[0]]
            elif name == "block_channels":
                kwargs[name] = tuple(c for c in chunk if c)
            elif name == "use_enlargement":
                kwargs[name] = bool(chunk[0])
            elif width > 1:
                kwargs[name] = tuple(chunk)
            else:
                kwargs[name] = chunk[0]
        return cls(**kwargs)


_VECTOR_FIELDS = ("height", "width", "in_channels", "num_classes", "conv1_channels", "block_channels",
                  "fires_per_block", "el_rates", "use_enlargement", "sr_ratio", "sr_placement",
                  "deconv_kernel", "pool_kernel")
_FIELD_WIDTHS = {name: 1 for name in _VECTOR_FIELDS}
_FIELD_WIDTHS.update(block_channels=max(DOWNSAMPLE_CHOICES), el_rates=3, deconv_kernel=2, pool_kernel=2)


def param_name(layer_id: str, name: str) -> str:
    return f"{layer_id}/{name}"


@dataclass
class ModelParams:
    """Named parameter tensors keyed ``"<layer id>/<parameter>"``, plus the graph they belong to."""
    config: GraphConfig
    tensors: Dict[str, Tensor] = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    def layer_ids(self) -> List[str]:
        seen: "OrderedDict[str, None]" = OrderedDict()
        for name in self.tensors:
            seen[name.split("/", 1)[0]] = None
        return list(seen)

    def layer(self, layer_id: str) -> Dict[str, Tensor]:
        prefix = layer_id + "/"
        params = {name[len(prefix):]: tensor for name, tensor in self.tensors.items() if name.startswith(prefix)}
        if not params:
            raise ParameterError(f"layer {layer_id} has no parameters", layer_id)
        return params

    def validate(self) -> None:
        """
        Check the tensors against the graph's shape plan.

        Raises:
            ParameterError: naming the first inconsistent layer id in graph order
        """
        plan = self.config.param_shapes()
        for layer_id, shapes in plan.items():
            for name, shape in shapes.items():
                key = param_name(layer_id, name)
                tensor = self.tensors.get(key)
                if tensor is None:
                    raise ParameterError(f"layer {layer_id}: missing parameter {key}", layer_id)
                if tuple(tensor.shape) != tuple(shape):
                    raise ParameterError(f"layer {layer_id}: {key} has shape {tensor.shape}, "
                                         f"expected {tuple(shape)}", layer_id)
        expected = {param_name(layer_id, name) for layer_id, shapes in plan.items() for name in shapes}
        for key in self.tensors:
            if key not in expected:
                layer_id = key.split("/", 1)[0]
                raise ParameterError(f"layer {layer_id}: unexpected parameter {key}", layer_id)

    def with_tensors(self, tensors: Mapping[str, Tensor]) -> "ModelParams":
        return ModelParams(self.config, dict(tensors))

    def count(self) -> int:
        return sum(tensor.size for tensor in self.tensors.values())


def _fan_in(name: str, shape: Shape) -> int:
    if name.startswith("deconv"):
        # kh x kw x Cout x Cin: each output sums over kh * kw * Cin inputs
        return shape[0] * shape[1] * shape[3]
    return int(np.prod(shape[:-1]))


def init_params(seed: int, config: GraphConfig = GraphConfig()) -> ModelParams:
    """
    Fan-in scaled uniform initialization.

    Weights are drawn from U(-sqrt(6/fan_in), sqrt(6/fan_in)) (variance 2/fan_in),
    biases start at zero. Tensors are drawn in graph order from a single seeded
    generator, so the same seed always yields bit-identical parameters.
    """
    rng = np.random.default_rng(seed)
    tensors: Dict[str, Tensor] = {}
    for layer_id, shapes in config.param_shapes().items():
        for name, shape in shapes.items():
            if name == "b" or name.endswith("_b"):
                values = np.zeros(shape, dtype=np.float32)
            else:
                limit = math.sqrt(6.0 / _fan_in(name, shape))
                values = rng.uniform(-limit, limit, size=shape).astype(np.float32)
            tensors[param_name(layer_id, name)] = Tensor(values, name=param_name(layer_id, name))
    params = ModelParams(config, tensors)
    logger.debug("initialized %d parameters over %d layers (seed %d)", params.count(),
                 len(config.param_shapes()), seed)
    return params


def _frame_tensor(frame: Union[SphericalFrame, Tensor]) -> Tensor:
    return frame.channels if isinstance(frame, SphericalFrame) else frame


def model_forward(frame: Union[SphericalFrame, Tensor], params: ModelParams,
                  trace: Optional[MutableMapping[str, Tensor]] = None) -> Tensor:
    """
    Per-pixel class probabilities for one frame.

    Args:
        frame: SphericalFrame (or its H x W x 5 channel tensor)
        params: Parameters of the graph to run
        trace: Optional mapping that receives every named intermediate output,
            in execution order ("EL/input" is the feature entering the enlargement layer)

    Returns:
        Tensor: H x W x num_classes probabilities summing to 1 per pixel
    """
    cfg = params.config
    x = _frame_tensor(frame)
    expected = (cfg.height, cfg.width, cfg.in_channels)
    if tuple(x.shape) != expected:
        raise ShapeError(f"frame channels have shape {x.shape}, the graph expects {expected}")
    params.validate()

    def keep(name: str, tensor: Tensor) -> Tensor:
        if trace is not None:
            trace[name] = tensor
        return tensor

    def sr(layer_id: str, h: Tensor) -> Tensor:
        sr_params = SqueezeReweightParams.from_mapping(params.layer(layer_id), layer_id)
        return keep(layer_id, squeeze_reweight_forward(h, sr_params))

    conv1 = params.layer("conv1")
    c_in, c1 = cfg.in_channels, cfg.conv1_channels
    h = keep("conv1", ops.relu(ops.conv2d(x, conv1["w"], conv1["b"], ConvSpec(3, 3, c_in, c1, stride_w=2))))
    full_width = keep("conv1/skip", ops.relu(ops.conv2d(x, conv1["skip_w"], conv1["skip_b"],
                                                        ConvSpec(1, 1, c_in, c1))))

    fires = cfg.fire_configs()
    skips: List[Tensor] = []
    for block, fire_ids in enumerate(cfg.fire_blocks()):
        for fire_id in fire_ids:
            h = keep(fire_id, fire_forward(h, fires[fire_id], FireParams.from_mapping(params.layer(fire_id), fire_id)))
        if cfg.sr_placement == "down":
            h = sr(f"SR{block + 1}", h)
        if block < cfg.downsample - 1:
            skips.append(h)
            h = keep(f"pool{block + 1}", ops.maxpool2d(h, cfg.pool_kernel, (1, 2)))

    el_cfg = cfg.enlargement_config()
    if el_cfg is not None:
        keep("EL/input", h)
        el_params = EnlargementParams.from_mapping(params.layer("EL"), el_cfg.rates, "EL")
        el = keep("EL", enlargement_forward(h, el_params, expected_extent=cfg.el_extent))
        h = ops.concat_channels([el, h])

    decoder = cfg.fdeconv_configs()
    merged = 0
    for layer_id, _, _, _, block in cfg.decoder_plan():
        deconv_params = FireParams.from_mapping(params.layer(layer_id), layer_id)
        h = keep(layer_id, fire_deconv_forward(h, decoder[layer_id], deconv_params))
        if block is None:
            continue
        merged += 1
        sr_id, skip = f"SR{merged}", (skips[block] if block >= 0 else full_width)
        if cfg.sr_placement == "up":
            h = sr(sr_id, h)
        h = keep(f"{layer_id}/merge", ops.add(h, skip))
        if cfg.sr_placement == "down_up":
            h = sr(sr_id, h)

    head = params.layer("head")
    logits = keep("head", ops.conv2d(h, head["w"], head["b"], ConvSpec(3, 3, c1, cfg.num_classes)))
    return keep("softmax", ops.softmax_channels(logits))


def argmax_classes(probabilities: np.ndarray) -> np.ndarray:
    """Per-pixel argmax; np.argmax returns the first maximum, so ties go to the lower class id."""
    return np.argmax(np.asarray(probabilities), axis=-1).astype(np.int64)


def predict(frame: Union[SphericalFrame, Tensor], params: ModelParams) -> np.ndarray:
    return argmax_classes(model_forward(frame, params).data)


def loss(probabilities: Tensor, labels: np.ndarray,
         class_weights: Sequence[float] = DEFAULT_CLASS_WEIGHTS,
         mask: Optional[np.ndarray] = None) -> Tensor:
    """Class-weighted cross-entropy, averaged over the (optionally masked) pixels."""
    return ops.cross_entropy(probabilities, labels, class_weights, mask=mask)


def _first_non_finite(trace: Mapping[str, Tensor]) -> Optional[str]:
    for name, tensor in trace.items():
        if not np.all(np.isfinite(tensor.data)):
            return name.split("/", 1)[0]
    return None


def train_step(params: ModelParams, batch: Sequence[SphericalFrame], optimizer, state: Dict[str, np.ndarray],
               class_weights: Sequence[float] = DEFAULT_CLASS_WEIGHTS,
               mask_empty: bool = True) -> Tuple[ModelParams, Dict[str, np.ndarray], float]:
    """
    One optimizer update from the gradient averaged over ``batch``.

    Each frame runs its own forward/backward pass (batch emulation); the gradients
    are summed and divided by the batch size before the optimizer applies them.

    Args:
        params: Current parameters
        batch: Labelled frames
        optimizer: Object with ``apply(tensors, grads, state)`` (see optim.Adagrad)
        state: Optimizer state dimensioned like ``params``
        class_weights: Per-class loss weights
        mask_empty: Leave unoccupied pixels out of the loss

    Returns:
        tuple: (new params, new state, mean loss over the batch)

    Raises:
        NumericalError: a loss or gradient is not finite; names the offending layer
    """
    if not batch:
        raise DataError("training batch is empty")
    names = list(params.tensors)
    wrt = [params.tensors[name] for name in names]
    totals = {name: np.zeros(params.tensors[name].shape, dtype=np.float64) for name in names}
    losses = []

    for frame in batch:
        if frame.labels is None:
            raise DataError("training frames must carry labels")
        trace: "OrderedDict[str, Tensor]" = OrderedDict()
        with GradTape() as tape:
            probabilities = model_forward(frame, params, trace)
            value = loss(probabilities, frame.labels, class_weights,
                         mask=frame.occupancy if mask_empty else None)
        scalar = value.item()
        if not math.isfinite(scalar):
            layer_id = _first_non_finite(trace) or "loss"
            raise NumericalError(f"non-finite loss {scalar}; first non-finite output at layer {layer_id}",
                                 layer_id)
        for name, grad in zip(names, backward(tape, value, wrt)):
            if not np.all(np.isfinite(grad)):
                layer_id = name.split("/", 1)[0]
                raise NumericalError(f"non-finite gradient for {name}", layer_id)
            totals[name] += grad
        losses.append(scalar)

    grads = {name: (total / len(batch)).astype(params.tensors[name].data.dtype)
             for name, total in totals.items()}
    tensors, state = optimizer.apply(params.tensors, grads, state)
    return params.with_tensors(tensors), state, float(np.mean(losses))
