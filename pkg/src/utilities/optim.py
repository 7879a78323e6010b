"""
Optim - Adagrad over named parameter tensors.
"""

from dataclasses import dataclass
from typing import Dict, Mapping, Tuple

import numpy as np

from .errors import ParameterError
from .tensor import Tensor

State = Dict[str, np.ndarray]


def _layer_of(name: str) -> str:
    return name.split("/", 1)[0]


@dataclass(frozen=True)
class Adagrad:
    """
    acc <- acc + g^2, theta <- theta - lr * g / (sqrt(acc) + eps)

    Args:
        lr: Learning rate
        initial_accumulator: Starting value of every squared-gradient accumulator
        eps: Added to the root of the accumulator
    """
    lr: float = 0.001
    initial_accumulator: float = 0.0
    eps: float = 1e-7

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise ParameterError(f"learning rate must be positive, got {self.lr}")
        if self.initial_accumulator < 0:
            raise ParameterError("initial accumulator must be >= 0")

    def init_state(self, params: Mapping[str, Tensor]) -> State:
        return {name: np.full(tensor.shape, self.initial_accumulator, dtype=tensor.data.dtype)
                for name, tensor in params.items()}

    def apply(self, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray],
              state: State) -> Tuple[Dict[str, Tensor], State]:
        """
        Apply one update; neither ``params`` nor ``state`` is modified.

        Returns:
            tuple: (updated tensors, updated state)

        Raises:
            ParameterError: state or gradients are not dimensioned like the parameters
        """
        updated: Dict[str, Tensor] = {}
        new_state: State = {}
        for name, tensor in params.items():
            if name not in state or state[name].shape != tensor.shape:
                raise ParameterError(f"optimizer state does not match parameter {name}", _layer_of(name))
            if name not in grads or np.shape(grads[name]) != tensor.shape:
                raise ParameterError(f"gradient does not match parameter {name}", _layer_of(name))
            grad = np.asarray(grads[name], dtype=tensor.data.dtype)
            accumulator = state[name] + grad * grad
            step = self.lr * grad / (np.sqrt(accumulator) + self.eps)
            updated[name] = Tensor.wrap(tensor.data - step, name=tensor.name)
            new_state[name] = accumulator
        return updated, new_state
