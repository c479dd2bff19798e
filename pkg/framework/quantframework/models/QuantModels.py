from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from config.Constants import BIT_CHOICES
from utils.errors import ContractError, ParameterError


class Granularity(Enum):
    """Scale granularity"""

    PER_TENSOR = "per-tensor"
    PER_OUTPUT_CHANNEL = "per-output-channel"


class QuantTarget(Enum):
    """What a scheme quantizes"""

    WEIGHTS = "weights"
    ACTIVATIONS = "activations"


def integerRange(bits: int, target: QuantTarget) -> Tuple[int, int]:
    """Representable integer levels: symmetric signed for weights, unsigned for activations"""
    if target == QuantTarget.WEIGHTS:
        return -(2 ** (bits - 1)), 2 ** (bits - 1) - 1
    return 0, 2 ** bits - 1


@dataclass
class QuantScheme:
    """
    Uniform affine quantization parameters for one tensor.

    Attributes:
        bits: Bit width, one of 2/3/4/8
        scale: Positive scale, shape (1,) per tensor or (C,) per output channel
        zeropoint: Integer zero point, same shape as scale (always 0 for weights)
        granularity: Per-tensor or per-output-channel
        target: Weights or activations
    """
    bits: int
    scale: np.ndarray
    zeropoint: np.ndarray
    granularity: Granularity = Granularity.PER_TENSOR
    target: QuantTarget = QuantTarget.WEIGHTS

    def __post_init__(self):
        if self.bits not in BIT_CHOICES:
            raise ParameterError(f"bit width {self.bits} not in {BIT_CHOICES}")
        self.scale = np.atleast_1d(np.asarray(self.scale, dtype=np.float64))
        self.zeropoint = np.atleast_1d(np.asarray(self.zeropoint, dtype=np.float64))
        if self.zeropoint.shape != self.scale.shape:
            self.zeropoint = np.broadcast_to(self.zeropoint, self.scale.shape).copy()
        if not np.all(np.isfinite(self.scale)) or np.any(self.scale <= 0):
            raise ParameterError("quantization scale must be positive and finite")
        if self.target == QuantTarget.WEIGHTS and np.any(self.zeropoint != 0):
            raise ParameterError("weight schemes are symmetric; zero point must be 0")

    @property
    def qmin(self) -> int:
        return integerRange(self.bits, self.target)[0]

    @property
    def qmax(self) -> int:
        return integerRange(self.bits, self.target)[1]

    def broadcastTo(self, ndim: int) -> Tuple[np.ndarray, np.ndarray]:
        """Scale and zero point shaped to broadcast against a rank-ndim tensor"""
        if self.granularity == Granularity.PER_OUTPUT_CHANNEL:
            shape = (-1,) + (1,) * (ndim - 1)
            return self.scale.reshape(shape), self.zeropoint.reshape(shape)
        return self.scale.reshape(()), self.zeropoint.reshape(())


@dataclass
class QuantBlock:
    """Conv layers k..l (1-based conv ordinals) of one network, reconstructed together"""
    networkname: str
    first: int
    last: int
    convnames: List[str] = field(default_factory=list)

    def __post_init__(self):
        if not 1 <= self.first <= self.last:
            raise ContractError(f"invalid block range [{self.first}, {self.last}]")


@dataclass
class BlockCache:
    """
    Full-precision calibration data for one block, stacked over calibration images.

    Attributes:
        inputs: Block inputs [n, Cin, H, W]
        outputs: Full-precision block outputs z [n, C, H', W']
        grads: Per-image dL/dz, same shape as outputs
    """
    inputs: np.ndarray
    outputs: np.ndarray
    grads: np.ndarray

    def __post_init__(self):
        if self.outputs.shape != self.grads.shape:
            raise ContractError(f"cached outputs {self.outputs.shape} and gradients {self.grads.shape} differ")
        if self.inputs.shape[0] != self.outputs.shape[0]:
            raise ContractError("cached inputs and outputs cover different image counts")


@dataclass
class CalibrationCache:
    """Per-block calibration caches of one network, keyed by the block's first conv name"""
    networkname: str
    blocks: Dict[str, BlockCache] = field(default_factory=dict)
    images: Optional[np.ndarray] = None

    def get(self, block: QuantBlock) -> BlockCache:
        key = block.convnames[0] if block.convnames else None
        if key is None or key not in self.blocks:
            raise ContractError(f"no calibration cache for block {block.convnames} of {self.networkname}")
        return self.blocks[key]


@dataclass
class BlockResult:
    """Outcome of reconstructing one block"""
    block: QuantBlock
    schemes: Dict[str, QuantScheme]
    snappedweights: Dict[str, np.ndarray]
    errorbefore: float
    errorafter: float


@dataclass
class LayerQuantRecord:
    """One row of the quantization report"""
    layer: str
    bits: int
    scalemin: float
    scalemean: float
    scalemax: float
    blockerrorbefore: float
    blockerrorafter: float
