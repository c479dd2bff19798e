"""
Dense float64 tensors with reverse-mode differentiation recorded on an explicit tape
"""

import threading
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.errors import ContractError, NonFiniteError

ArrayLike = Union[np.ndarray, Sequence, float, int]

_tapeState = threading.local()


class Tensor:
    """
    N-dimensional float64 array that may participate in gradient recording.

    Data is treated as immutable once written; ops always return new tensors.
    """

    __slots__ = ("data", "requiresgrad", "grad", "name")

    def __init__(self, data: ArrayLike, requiresgrad: bool = False, name: Optional[str] = None):
        array = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(array)):
            raise NonFiniteError(f"non-finite values in tensor {name or ''}".strip())
        self.data = array
        self.requiresgrad = requiresgrad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def detach(self) -> "Tensor":
        """Copy without gradient participation"""
        return Tensor(self.data.copy())

    def zeroGrad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requiresgrad={self.requiresgrad}, name={self.name})"


@dataclass
class TapeNode:
    """One executed op: its output, its inputs and the vector-Jacobian product"""

    output: Tensor
    inputs: Tuple[Tensor, ...]
    backwardFn: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]
    opname: str = ""


@dataclass
class Tape:
    """
    Ordered record of executed ops. Nodes are appended in execution order, so the
    list is already topologically sorted.

    Usage:
        with Tape() as tape:
            loss = mseMean(conv2d(x, w, b), target)
        backward(loss, tape)
    """

    nodes: List[TapeNode] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        stack = _tapeStack()
        stack.append(self)
        return self

    def __exit__(self, excType, excValue, traceback) -> None:
        stack = _tapeStack()
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, node: TapeNode) -> None:
        self.nodes.append(node)

    def __len__(self) -> int:
        return len(self.nodes)


def _tapeStack() -> List[Tape]:
    if not hasattr(_tapeState, "stack"):
        _tapeState.stack = []
    return _tapeState.stack


def currentTape() -> Optional[Tape]:
    """Innermost active tape on this thread, if any"""
    stack = _tapeStack()
    return stack[-1] if stack else None


def makeResult(
    data: np.ndarray,
    inputs: Sequence[Tensor],
    backwardFn: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]],
    opname: str,
) -> Tensor:
    """
    Wrap an op's output and record it on the active tape when any input tracks gradients.

    Args:
        data: Forward result
        inputs: Op inputs, in the order backwardFn returns their gradients
        backwardFn: Maps the output gradient to one gradient (or None) per input
        opname: Name used in error messages

    Returns:
        Tensor: The output tensor
    """
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{opname} produced non-finite values")
    tape = currentTape()
    tracks = tape is not None and any(t.requiresgrad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requiresgrad = tracks
    out.grad = None
    out.name = None
    if tracks:
        tape.record(TapeNode(output=out, inputs=tuple(inputs), backwardFn=backwardFn, opname=opname))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """
    Populate .grad on every requires-grad tensor reachable from loss through the tape.

    Gradients accumulate into existing .grad buffers, so repeated calls without a reset add up.

    Args:
        loss: Scalar tensor produced under the tape
        tape: Tape that recorded the forward computation
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")

    pending = {id(loss): np.ones_like(loss.data)}
    touched = {id(loss): loss}

    for node in reversed(tape.nodes):
        gradOut = pending.get(id(node.output))
        if gradOut is None:
            continue
        inputGrads = node.backwardFn(gradOut)
        for tensor, grad in zip(node.inputs, inputGrads):
            if grad is None or not tensor.requiresgrad:
                continue
            if grad.shape != tensor.shape:
                grad = grad.reshape(tensor.shape)
            if id(tensor) in pending:
                pending[id(tensor)] = pending[id(tensor)] + grad
            else:
                pending[id(tensor)] = grad
                touched[id(tensor)] = tensor

    for key, tensor in touched.items():
        grad = pending[key]
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError("backward produced non-finite gradients")
        if not tensor.requiresgrad:
            continue
        tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
