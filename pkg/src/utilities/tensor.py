"""
Tensor - dense, immutable float arrays and the gradient tape that records them.

Feature maps use H x W x C row-major layout throughout. A Tensor never changes
after construction, so it can be shared freely between threads. Differentiable
operations (see ``ops.py``) append a node to the active GradTape; ``backward``
replays that tape in reverse topological order.
"""

import itertools
import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np

from .errors import ShapeError

logger = logging.getLogger(__name__)

_uid_counter = itertools.count()
_state = threading.local()

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]


def default_dtype() -> np.dtype:
    """Element type used for new tensors on this thread (float32 unless overridden)."""
    return getattr(_state, "dtype", np.dtype(np.float32))


@contextmanager
def precision(dtype) -> Iterator[None]:
    """
    Temporarily change the element type of new tensors on this thread.

    The inference and training paths always run in float32; gradient verification
    of composite layers uses float64 so that rounding does not mask derivative errors.
    """
    previous = default_dtype()
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = previous


class Tensor:
    """Dense N-dimensional array with a fixed shape and read-only data."""

    __slots__ = ("data", "uid", "name")

    def __init__(self, data: ArrayLike, name: Optional[str] = None) -> None:
        array = np.array(data, dtype=default_dtype(), order="C")
        self._adopt(array, name)

    @classmethod
    def wrap(cls, array: np.ndarray, name: Optional[str] = None) -> "Tensor":
        """Take ownership of a freshly computed array without copying it."""
        tensor = cls.__new__(cls)
        array = np.ascontiguousarray(array, dtype=default_dtype())
        tensor._adopt(array, name)
        return tensor

    def _adopt(self, array: np.ndarray, name: Optional[str]) -> None:
        if any(extent < 1 for extent in array.shape):
            raise ShapeError(f"tensor extents must be >= 1, got shape {array.shape}")
        array.flags.writeable = False
        self.data = array
        self.uid = next(_uid_counter)
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        """Writable copy of the data."""
        return np.array(self.data)

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class TapeNode:
    """One executed operation: its inputs, output and the closure computing input gradients."""
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class GradTape:
    """
    Ordered record of executed operations.

    Used as a context manager; while it is active every differentiable op records a
    TapeNode. One tape per training step, single-threaded.
    """

    def __init__(self) -> None:
        self.nodes: List[TapeNode] = []

    def __enter__(self) -> "GradTape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward_fn: BackwardFn) -> None:
        self.nodes.append(TapeNode(op, tuple(inputs), output, backward_fn))

    def __len__(self) -> int:
        return len(self.nodes)


def _tape_stack() -> List[GradTape]:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def active_tape() -> Optional[GradTape]:
    """The innermost active tape on this thread, if any."""
    stack = _tape_stack()
    return stack[-1] if stack else None


def dependency_graph(tape: GradTape) -> nx.DiGraph:
    """Directed graph of tensor uids; an edge a -> b means b was computed from a."""
    graph = nx.DiGraph()
    for index, node in enumerate(tape.nodes):
        graph.add_node(node.output.uid, producer=index)
        for tensor in node.inputs:
            graph.add_edge(tensor.uid, node.output.uid)
    return graph


def backward(tape: GradTape, loss: Tensor, wrt: Sequence[Tensor]) -> List[np.ndarray]:
    """
    Reverse-mode accumulation of d(loss)/d(t) for every tensor in ``wrt``.

    Args:
        tape: Tape that recorded the computation of ``loss``
        loss: Scalar tensor (a single element)
        wrt: Tensors to differentiate with respect to

    Returns:
        list: one gradient array per entry of ``wrt``, shaped like that tensor.
        Tensors that do not influence the loss get an all-zero gradient.
    """
    if loss.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")

    graph = dependency_graph(tape)
    grads: Dict[int, np.ndarray] = {loss.uid: np.ones(loss.shape, dtype=loss.data.dtype)}

    if loss.uid in graph:
        relevant = nx.ancestors(graph, loss.uid) | {loss.uid}
        order = list(nx.topological_sort(graph.subgraph(relevant)))
        for uid in reversed(order):
            producer = graph.nodes[uid].get("producer")
            if producer is None or uid not in grads:
                continue
            node = tape.nodes[producer]
            input_grads = node.backward(grads[uid])
            for tensor, grad in zip(node.inputs, input_grads):
                if grad is None:
                    continue
                if tensor.uid in grads:
                    grads[tensor.uid] = grads[tensor.uid] + grad
                else:
                    grads[tensor.uid] = grad
        logger.debug("backward visited %d of %d tape nodes", len(order), len(tape))

    result = []
    for tensor in wrt:
        grad = grads.get(tensor.uid)
        if grad is None:
            grad = np.zeros(tensor.shape, dtype=tensor.data.dtype)
        result.append(np.asarray(grad, dtype=tensor.data.dtype).reshape(tensor.shape))
    return result
