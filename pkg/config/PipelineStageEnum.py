"""
Enum for pipeline stages
Defines the checkpoint each stage produces and, for evaluated stages, its report name
"""

from enum import Enum
from typing import Optional


class PipelineStage(Enum):
    """
    Pipeline stage enum with name, checkpoint file and evaluation name

    Each enum value contains:
    - stagename: Name embedded in checkpoint metadata
    - checkpoint: Checkpoint file under checkpoints/
    - evalname: Name used in reports and heatmap files, if the stage is evaluated
    """

    PRETRAINED = ("pretrained", "pretrained.ckpt", None)
    STAGE1 = ("stage1", "stage1.ckpt", "baseline")
    QUANTIZED = ("quantized", "quantized.ckpt", "quant")
    FINETUNED = ("finetuned", "finetuned.ckpt", "raad")

    def __init__(self, stagename: str, checkpoint: str, evalname: Optional[str]):
        self.stagename = stagename
        self.checkpoint = checkpoint
        self.evalname = evalname

    @classmethod
    def from_evalname(cls, evalname: str) -> "PipelineStage":
        """Get stage enum from its evaluation name (baseline / quant / raad)"""
        for stage in cls:
            if stage.evalname == evalname:
                return stage
        raise ValueError(f"No stage found for evaluation name: {evalname}")
