from dataclasses import dataclass
from typing import Dict, Optional

from framework.modelframework.Network import Network
from framework.tensorframework import Ops
from framework.tensorframework.Tensor import Tensor


@dataclass
class ModelBundle:
    """
    Teacher, student and autoencoder of one pipeline stage.

    The student's final layer has twice the teacher's channels: [:C] is the
    teacher-matching head and [C:] the autoencoder-matching head.
    """
    teacher: Network
    student: Network
    autoencoder: Network
    stage: Optional[str] = None

    @property
    def teacherChannels(self) -> int:
        return self.teacher.outChannels

    def networks(self) -> Dict[str, Network]:
        return {"teacher": self.teacher, "student": self.student, "autoencoder": self.autoencoder}

    def studentHeads(self, studentOut: Tensor):
        """Split student output into (teacher head, autoencoder head)"""
        channels = self.teacherChannels
        return (
            Ops.sliceChannels(studentOut, 0, channels),
            Ops.sliceChannels(studentOut, channels, 2 * channels),
        )

    def copy(self, stage: Optional[str] = None) -> "ModelBundle":
        return ModelBundle(
            teacher=self.teacher.copy(),
            student=self.student.copy(),
            autoencoder=self.autoencoder.copy(),
            stage=stage or self.stage,
        )
