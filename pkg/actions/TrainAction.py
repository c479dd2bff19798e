"""
Stage-1 training: teacher pretraining against the frozen extractor and joint
student/autoencoder training. Fine-tuning reuses the same loop.
"""

import math
import time
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from config.Constants import LOG_EVERY
from config.PipelineConfig import TrainConfig
from database.checkpoint.CheckpointHandler import bundleCheckpoint, networkCheckpoint
from database.dataset.DatasetHandler import DatasetSample
from database.operations.ArtifactStore import ArtifactStore
from framework.modelframework.Network import Network
from framework.modelframework.models.BundleModels import ModelBundle
from framework.tensorframework import Ops
from framework.tensorframework.AdamOptimizer import AdamState, adamStep
from framework.tensorframework.Random import generator
from framework.tensorframework.Tensor import Tape, Tensor, backward
from logs.logger import get_logger
from utils.errors import ConfigError, ContractError, DatasetContractError, ParameterError

logger = get_logger(__name__)

LOSS_COLUMNS = ["iter", "L_ts", "L_aes", "L_tae", "total"]
PRETRAIN_COLUMNS = ["iter", "L_pre"]


def pairLoss(a: Tensor, b: Tensor) -> Tensor:
    """(CWH)^-1 sum_c ||a_c - b_c||_F^2, averaged over the batch"""
    return Ops.mseMean(a, b)


def hardMiningCount(size: int, fraction: float) -> int:
    """ceil(fraction * size), robust to binary rounding of the product"""
    return max(1, int(math.ceil(round(fraction * size, 9))))


def hardMinedLoss(d: Tensor, fraction: float) -> Tensor:
    """
    Mean over the ceil(fraction * size) largest entries of a squared-difference cube.

    Args:
        d: Nonnegative squared differences, any shape
        fraction: Kept fraction in (0, 1]

    Returns:
        Tensor: Scalar loss; gradient reaches only the selected entries
    """
    if not 0 < fraction <= 1:
        raise ParameterError(f"hard-mining fraction must lie in (0, 1], got {fraction}")
    if d.size == 0:
        raise ContractError("hard mining over an empty difference cube")
    return Ops.topkMean(d, hardMiningCount(d.size, fraction))


@dataclass
class LossBreakdown:
    """Loss components of one joint step"""
    lts: float
    laes: float
    ltae: float
    total: float

    def toRow(self, iteration: int) -> list:
        return [iteration, self.lts, self.laes, self.ltae, self.total]


def _batch(images: np.ndarray, rng: np.random.Generator, size: int) -> Tensor:
    indices = rng.integers(0, images.shape[0], size=size)
    return Tensor(images[indices])


class TrainAction:
    """Handles teacher pretraining, joint training and fine-tuning"""

    def __init__(self, store: Optional[ArtifactStore] = None):
        """
        Initialize action with the artifact store

        Args:
            store: Output store for checkpoints and loss logs (None keeps results in memory)
        """
        self.store = store

    def pretrainTeacher(
        self,
        teacher: Network,
        extractor: Network,
        images: np.ndarray,
        cfg: TrainConfig,
        lossLogName: Optional[str] = None,
    ) -> List[float]:
        """
        Fit the teacher to the frozen extractor's features with MSE.

        Args:
            teacher: Trainable PDN
            extractor: Frozen target network
            images: Normal training images [N, 3, H, W]
            cfg: Optimization settings
            lossLogName: Per-iteration loss log to write, if any

        Returns:
            List[float]: Loss per iteration
        """
        if not extractor.frozen:
            raise ContractError("pretraining needs a frozen extractor")
        sample = images[:1]
        extractorShape = extractor.inferShapes(sample.shape[1:])[-1]
        teacherShape = teacher.inferShapes(sample.shape[1:])[-1]
        if extractorShape != teacherShape:
            raise ConfigError(
                "model.teacherchannels",
                f"extractor output {extractorShape} does not match teacher output {teacherShape}",
            )

        rng = generator(cfg.seed, "batches.pretrain")
        state = AdamState(lr=cfg.lr)
        params = teacher.trainableParameters()
        trace = []
        appendLosses = self.store is not None and lossLogName is not None
        if appendLosses:
            self.store.reports.startLog(lossLogName, PRETRAIN_COLUMNS)
        started = time.time()
        for iteration in range(1, cfg.iterations + 1):
            batch = _batch(images, rng, cfg.batch)
            target = extractor.forward(batch)
            with Tape() as tape:
                loss = Ops.mseMean(teacher.forward(batch), target)
            backward(loss, tape)
            adamStep(params, state)
            trace.append(loss.item())
            if appendLosses:
                self.store.reports.appendRow(lossLogName, PRETRAIN_COLUMNS, [iteration, trace[-1]])
            if iteration % LOG_EVERY == 0:
                logger.info(f"pretrain iter {iteration}/{cfg.iterations}: L_pre={loss.item():.6g}")
        logger.info(f"Teacher pretraining finished: {cfg.iterations} iterations in {time.time() - started:.1f}s")
        return trace

    def jointStep(
        self,
        teacher: Network,
        student: Network,
        autoencoder: Network,
        batch: Tensor,
        cfg: TrainConfig,
        state: AdamState,
    ) -> LossBreakdown:
        """
        One optimizer step on L = l_ts * L_ts + l_aes * L_ae-s + l_tae * L_t-ae.

        L_ts is hard-mined over the teacher / student teacher-head cube, L_ae-s pairs the
        autoencoder with the student's autoencoder head and L_t-ae pairs teacher and
        autoencoder (only the autoencoder learns from it). When both autoencoder weights
        are zero the autoencoder is left out of the step entirely.

        Args:
            teacher: Frozen teacher
            student: Student with 2C output channels
            autoencoder: Autoencoder with C output channels
            batch: Images [B, 3, H, W]
            cfg: Loss weights, hard-mining fraction
            state: Shared Adam state

        Returns:
            LossBreakdown: Component values and the weighted total
        """
        if not teacher.frozen:
            raise ContractError("joint training needs a frozen teacher")
        channels = teacher.outChannels
        if student.outChannels != 2 * channels:
            raise ContractError(f"student has {student.outChannels} channels, expected {2 * channels}")
        trainAutoencoder = (cfg.lambdaaes > 0 or cfg.lambdatae > 0) and not autoencoder.frozen

        teacherOut = teacher.forward(batch)
        autoencoderOut = None if trainAutoencoder else autoencoder.forward(batch)
        with Tape() as tape:
            studentOut = student.forward(batch)
            teacherHead = Ops.sliceChannels(studentOut, 0, channels)
            autoencoderHead = Ops.sliceChannels(studentOut, channels, 2 * channels)
            if autoencoderOut is None:
                autoencoderOut = autoencoder.forward(batch)
            lts = hardMinedLoss(Ops.square(Ops.sub(teacherOut, teacherHead)), cfg.hardfraction)
            laes = pairLoss(autoencoderOut, autoencoderHead)
            ltae = pairLoss(teacherOut, autoencoderOut)
            total = Ops.add(
                Ops.add(Ops.scale(lts, cfg.lambdats), Ops.scale(laes, cfg.lambdaaes)),
                Ops.scale(ltae, cfg.lambdatae),
            )
        backward(total, tape)

        params: Dict[str, Tensor] = {f"student/{k}": v for k, v in student.trainableParameters().items()}
        if trainAutoencoder:
            params.update({f"autoencoder/{k}": v for k, v in autoencoder.trainableParameters().items()})
        adamStep(params, state)
        return LossBreakdown(lts=lts.item(), laes=laes.item(), ltae=ltae.item(), total=total.item())

    def train(
        self,
        bundle: ModelBundle,
        samples: List[DatasetSample],
        cfg: TrainConfig,
        stageName: str = "stage1",
        checkpointName: Optional[str] = None,
        lossLogName: Optional[str] = None,
        metadata: Optional[Dict] = None,
        resnap: bool = False,
    ) -> List[LossBreakdown]:
        """
        Run cfg.iterations joint steps on normal training images.

        Args:
            bundle: Networks to train (teacher frozen); updated in place
            samples: Training split
            cfg: Optimization settings
            stageName: Stage recorded in the checkpoint metadata
            checkpointName: Checkpoint file to write, if any
            lossLogName: Loss log report to write, if any
            metadata: Extra checkpoint metadata (seed, confighash ...)
            resnap: Re-project quantized weights onto their grids after every step

        Returns:
            List[LossBreakdown]: One entry per iteration
        """
        anomalous = [s.entry.path for s in samples if s.anomalous]
        if anomalous:
            raise DatasetContractError(f"training split contains {len(anomalous)} anomalous images, e.g. {anomalous[0]}")
        if not samples:
            raise DatasetContractError("training split is empty")
        images = np.stack([s.image for s in samples])

        rng = generator(cfg.seed, f"batches.{stageName}")
        state = AdamState(lr=cfg.lr)
        appendLosses = self.store is not None and lossLogName is not None
        if appendLosses:
            self.store.reports.startLog(lossLogName, LOSS_COLUMNS)
        losses: List[LossBreakdown] = []
        started = time.time()
        for iteration in range(1, cfg.iterations + 1):
            breakdown = self.jointStep(bundle.teacher, bundle.student, bundle.autoencoder,
                                       _batch(images, rng, cfg.batch), cfg, state)
            if resnap:
                bundle.student.resnapWeights()
                bundle.autoencoder.resnapWeights()
            losses.append(breakdown)
            if appendLosses:
                self.store.reports.appendRow(lossLogName, LOSS_COLUMNS, breakdown.toRow(iteration))
            if iteration % LOG_EVERY == 0:
                logger.info(
                    f"{stageName} iter {iteration}/{cfg.iterations}: L_ts={breakdown.lts:.6g} "
                    f"L_aes={breakdown.laes:.6g} L_tae={breakdown.ltae:.6g} total={breakdown.total:.6g}"
                )
        bundle.stage = stageName
        logger.info(f"{stageName} training finished: {cfg.iterations} iterations in {time.time() - started:.1f}s")

        if self.store is not None and checkpointName is not None:
            meta = dict(metadata or {})
            meta["stage"] = stageName
            self.store.checkpoints.writeCheckpoint(checkpointName, bundleCheckpoint(bundle, meta))
        return losses

    def pretrainAndSave(
        self,
        teacher: Network,
        extractor: Network,
        samples: List[DatasetSample],
        cfg: TrainConfig,
        checkpointName: str,
        lossLogName: str,
        metadata: Dict,
    ) -> List[float]:
        """Pretrain on the normal samples, then persist the teacher and its loss trace"""
        normals = [s for s in samples if not s.anomalous]
        if len(normals) != len(samples):
            raise DatasetContractError("training split contains anomalous images")
        trace = self.pretrainTeacher(teacher, extractor, np.stack([s.image for s in normals]), cfg, lossLogName)
        if self.store is not None:
            meta = dict(metadata)
            meta["stage"] = "pretrained"
            self.store.checkpoints.writeCheckpoint(checkpointName, networkCheckpoint({"teacher": teacher}, meta))
        return trace

