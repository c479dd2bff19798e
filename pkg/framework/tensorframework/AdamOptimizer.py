from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from config.Constants import ADAM_BETA1, ADAM_BETA2, ADAM_EPS
from framework.tensorframework.Tensor import Tensor
from utils.errors import ContractError, NonFiniteError, ParameterError


@dataclass
class AdamState:
    """
    Adam moment buffers keyed by parameter name.

    Attributes:
        step: Number of updates applied so far
        lr: Learning rate
        beta1: First-moment decay
        beta2: Second-moment decay
        eps: Denominator floor
        m: First-moment buffer per parameter
        v: Second-moment buffer per parameter
    """
    lr: float
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ParameterError(f"learning rate must be positive, got {self.lr}")


def adamStep(params: Dict[str, Tensor], state: AdamState) -> AdamState:
    """
    Apply one bias-corrected Adam update in place, then zero the gradients.

    Args:
        params: Trainable parameters by name; every one must carry a gradient
        state: Optimizer state, updated in place

    Returns:
        AdamState: The same state object
    """
    for name, param in params.items():
        if param.grad is None:
            raise ContractError(f"parameter {name} has no gradient")

    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step

    for name, param in params.items():
        grad = param.grad
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None or m.shape != param.shape:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.m[name] = m
        state.v[name] = v

        update = state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        updated = param.data - update
        if not np.all(np.isfinite(updated)):
            raise NonFiniteError(f"adam update made {name} non-finite")
        param.data = updated
        param.zeroGrad()

    return state
