"""
Hierarchical quantization scoring: per-layer teacher/student discrepancy mapped to bit widths
"""

from bisect import bisect_right
from typing import List, Optional

import numpy as np
import pandas as pd

from config.Constants import AUTOENCODER_BITS, FORCED_BITS
from database.operations.ArtifactStore import ArtifactStore
from framework.modelframework.models.BundleModels import ModelBundle
from framework.modelframework.models.LayerModels import LayerTaps
from framework.quantframework.models.HQSModels import BitPolicy, HqsResult, LayerScore
from framework.tensorframework.Tensor import Tensor
from logs.logger import get_logger
from utils.errors import ContractError, PipelineOrderError

logger = get_logger(__name__)

HQS_REPORT = "hqs.csv"
HQS_COLUMNS = ["layer", "raw_score", "normalized", "bits", "forced"]
TRAINED_STAGE = "stage1"


def layerScores(teacherTaps: LayerTaps, studentTaps: LayerTaps) -> List[LayerScore]:
    """
    Mean over calibration images of (cwh)^-1 sum_c ||T_c - S_c||_F^2, per aligned layer.

    At the final layer a student with twice the teacher's channels is compared
    through its teacher head (first half of the channels).

    Args:
        teacherTaps: Teacher taps over the calibration batch
        studentTaps: Student taps over the same batch

    Returns:
        List[LayerScore]: One unnormalized score per layer
    """
    if len(teacherTaps) != len(studentTaps):
        raise ContractError(f"teacher has {len(teacherTaps)} taps, student {len(studentTaps)}")
    scores = []
    last = len(teacherTaps) - 1
    for index, (name, teacherTap, studentTap) in enumerate(zip(teacherTaps.names, teacherTaps.taps, studentTaps.taps)):
        t = teacherTap.data
        s = studentTap.data
        if index == last and s.ndim == t.ndim and s.shape[1] == 2 * t.shape[1]:
            s = s[:, :t.shape[1]]
        if t.shape != s.shape:
            raise ContractError(f"layer {name}: teacher tap {t.shape} and student tap {s.shape} are not aligned")
        perImage = np.mean(np.square(t - s).reshape(t.shape[0], -1), axis=1)
        scores.append(LayerScore(layer=name, raw=float(np.mean(perImage))))
    return scores


def normalizeScores(scores: List[LayerScore]) -> List[LayerScore]:
    """Min-max normalization across layers; all-equal raw scores map to 0.5"""
    if not scores:
        raise ContractError("no layer scores to normalize")
    raws = np.array([score.raw for score in scores])
    low, high = raws.min(), raws.max()
    if high == low:
        normalized = np.full_like(raws, 0.5)
    else:
        normalized = (raws - low) / (high - low)
    return [LayerScore(layer=score.layer, raw=score.raw, normalized=float(value))
            for score, value in zip(scores, normalized)]


def assignBits(scores: List[LayerScore], policy: BitPolicy) -> List[int]:
    """
    Step function of the normalized score, then forced layers (1-based) pinned to 8 bits.

    Args:
        scores: Normalized layer scores
        policy: Cut points, widths and forced layers

    Returns:
        List[int]: Bits per layer
    """
    bits = []
    for ordinal, score in enumerate(scores, start=1):
        if score.normalized is None:
            raise ContractError(f"layer {score.layer} has no normalized score")
        if ordinal in policy.forcedlayers:
            bits.append(FORCED_BITS)
        else:
            bits.append(policy.bits[bisect_right(policy.thresholds, score.normalized)])
    return bits


def defaultForcedLayers(layerCount: int) -> set:
    return {1, layerCount}


class HQSAction:
    """Scores a trained bundle layer by layer and derives its bit assignment"""

    def __init__(self, store: Optional[ArtifactStore] = None):
        self.store = store

    def hqsPipeline(self, bundle: ModelBundle, images: np.ndarray, policy: Optional[BitPolicy] = None) -> HqsResult:
        """
        Run HQS on the calibration images.

        Args:
            bundle: Stage-1 bundle
            images: Calibration images [n, 3, H, W]
            policy: Bit policy; forced layers default to the first and last conv

        Returns:
            HqsResult: Scores, shared teacher/student bits and the autoencoder width
        """
        if bundle.stage != TRAINED_STAGE:
            raise PipelineOrderError(
                "checkpoints/stage1.ckpt",
                f"layer scoring needs a stage-1 trained bundle, got stage {bundle.stage!r}",
            )
        batch = Tensor(images)
        _, teacherTaps = bundle.teacher.forwardWithTaps(batch)
        _, studentTaps = bundle.student.forwardWithTaps(batch)
        scores = normalizeScores(layerScores(teacherTaps, studentTaps))

        policy = policy or BitPolicy()
        if not policy.forcedlayers:
            policy = BitPolicy(policy.thresholds, policy.bits, defaultForcedLayers(len(scores)))
        bits = assignBits(scores, policy)
        forced = [ordinal in policy.forcedlayers for ordinal in range(1, len(scores) + 1)]

        for score, width, pinned in zip(scores, bits, forced):
            logger.info(
                f"HQS {score.layer}: raw={score.raw:.6g} normalized={score.normalized:.4f} "
                f"bits={width}{' (forced)' if pinned else ''}"
            )
        result = HqsResult(scores=scores, bits=bits, forced=forced, autoencoderbits=AUTOENCODER_BITS)
        if self.store is not None:
            self.store.reports.writeFrame(HQS_REPORT, hqsFrame(result))
        return result


def hqsFrame(result: HqsResult) -> pd.DataFrame:
    return pd.DataFrame(
        [[s.layer, s.raw, s.normalized, b, f] for s, b, f in zip(result.scores, result.bits, result.forced)],
        columns=HQS_COLUMNS,
    )


def bitsFromReport(frame: pd.DataFrame) -> List[int]:
    """Bit assignment stored in an HQS report, in conv order"""
    missing = [c for c in HQS_COLUMNS if c not in frame.columns]
    if missing:
        raise ContractError(f"HQS report lacks columns {missing}")
    return [int(b) for b in frame["bits"]]
