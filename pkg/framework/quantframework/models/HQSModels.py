from dataclasses import dataclass, field
from typing import List, Optional, Set

from config.Constants import BIT_CHOICES, BIT_THRESHOLDS
from utils.errors import ParameterError


@dataclass
class LayerScore:
    """
    Discrepancy score of one aligned teacher/student layer

    Attributes:
        layer: Conv name
        raw: Mean squared tap discrepancy (>= 0)
        normalized: Min-max normalized score in [0, 1], None until normalized
    """
    layer: str
    raw: float
    normalized: Optional[float] = None


@dataclass
class BitPolicy:
    """
    Piecewise-constant map from normalized score to bit width.

    A score s lands in bucket bisect_right(thresholds, s), so a score equal to a
    cut point goes to the higher bucket.
    """
    thresholds: List[float] = field(default_factory=lambda: list(BIT_THRESHOLDS))
    bits: List[int] = field(default_factory=lambda: list(BIT_CHOICES))
    forcedlayers: Set[int] = field(default_factory=set)

    def __post_init__(self):
        if len(self.bits) != len(self.thresholds) + 1:
            raise ParameterError("bit policy needs one more width than thresholds")
        if any(b not in BIT_CHOICES for b in self.bits):
            raise ParameterError(f"bit widths must come from {BIT_CHOICES}")
        if list(self.bits) != sorted(self.bits) or list(self.thresholds) != sorted(self.thresholds):
            raise ParameterError("bit policy must be nondecreasing")


@dataclass
class HqsResult:
    """Scores and the shared teacher/student bit assignment, in conv order"""
    scores: List[LayerScore]
    bits: List[int]
    forced: List[bool]
    autoencoderbits: int
