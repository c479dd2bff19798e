from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

from framework.tensorframework.Tensor import Tensor


class LayerKind(Enum):
    """Layer kinds; the value is the name used in architecture summaries"""

    CONV = "conv"
    AVGPOOL = "avgpool"
    RELU = "relu"
    BILINEAR_UP = "bilinear-up"


@dataclass
class LayerSpec:
    """
    One entry of a network's layer table.

    Channel counts are carried by every layer so consecutive entries can be
    checked for compatibility; kernel/stride/padding apply to conv and avgpool,
    outsize only to bilinear-up.
    """
    kind: LayerKind
    inchannels: int
    outchannels: int
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    outsize: Optional[int] = None
    name: Optional[str] = None


@dataclass
class LayerTaps:
    """Post-activation output of every conv layer from one forward pass, plus each conv's input"""
    names: List[str] = field(default_factory=list)
    taps: List[Tensor] = field(default_factory=list)
    inputs: List[Tensor] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.taps)

    def shapes(self) -> List[Tuple[int, ...]]:
        return [tap.shape for tap in self.taps]
