"""
Post-training quantization of a trained bundle: calibration caches, block
reconstruction per network and the quantization report
"""

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config.PipelineConfig import QuantConfig
from database.checkpoint.CheckpointHandler import bundleCheckpoint
from database.dataset.DatasetHandler import DatasetSample
from database.operations.ArtifactStore import ArtifactStore
from framework.modelframework.NetworkFactory import ENCODER_CONVS
from framework.modelframework.models.BundleModels import ModelBundle
from framework.modelframework.models.LayerModels import LayerTaps
from framework.quantframework.Quantizer import quantizeNetwork, weightStorageBits
from framework.quantframework.models.QuantModels import BlockCache, CalibrationCache, LayerQuantRecord
from framework.tensorframework import Ops
from framework.tensorframework.Tensor import Tape, Tensor, backward
from logs.logger import get_logger
from utils.errors import ContractError

logger = get_logger(__name__)

QUANT_REPORT = "quant.csv"
QUANT_COLUMNS = ["layer", "bits", "scale_stats", "block_error_before", "block_error_after"]


def calibrationImages(samples: List[DatasetSample], size: int) -> np.ndarray:
    """The first `size` normal training images, in manifest order"""
    normals = [s.image for s in samples if not s.anomalous]
    if not normals:
        raise ContractError("no normal images available for calibration")
    if len(normals) < size:
        logger.warning(f"calibration set wants {size} images, only {len(normals)} available")
    return np.stack(normals[:size])


def _cacheFromTaps(networkName: str, taps: LayerTaps, count: int, images: np.ndarray) -> CalibrationCache:
    # the batch loss averages over images; per-image gradients are count x larger
    blocks = {}
    for name, tap, conv in zip(taps.names, taps.taps, taps.inputs):
        grad = tap.grad if tap.grad is not None else np.zeros_like(tap.data)
        blocks[name] = BlockCache(inputs=conv.data.copy(), outputs=tap.data.copy(), grads=grad * count)
    return CalibrationCache(networkname=networkName, blocks=blocks, images=images)


def pdnCaches(bundle: ModelBundle, images: np.ndarray) -> Tuple[CalibrationCache, CalibrationCache]:
    """
    Teacher and student caches from the gradient of the teacher/student pair loss.

    The student loss also carries L_ae-s (autoencoder output held constant) so the
    autoencoder-head channels of its last layer get Fisher weight too.

    Args:
        bundle: Full-precision bundle
        images: Calibration images [n, 3, H, W]

    Returns:
        Tuple[CalibrationCache, CalibrationCache]: Teacher cache, student cache
    """
    count = images.shape[0]
    aeOut = bundle.autoencoder.forward(Tensor(images))
    x = Tensor(images, requiresgrad=True)
    with Tape() as tape:
        teacherOut, teacherTaps = bundle.teacher.forwardWithTaps(x)
        studentOut, studentTaps = bundle.student.forwardWithTaps(x)
        teacherHead, aeHead = bundle.studentHeads(studentOut)
        loss = Ops.add(Ops.mseMean(teacherOut, teacherHead), Ops.mseMean(aeOut, aeHead))
    backward(loss, tape)
    bundle.student.zeroGrad()
    logger.debug(f"calibration L_t-s on {count} images: {loss.item():.6g}")
    return (
        _cacheFromTaps(bundle.teacher.name, teacherTaps, count, images),
        _cacheFromTaps(bundle.student.name, studentTaps, count, images),
    )


def autoencoderCache(bundle: ModelBundle, images: np.ndarray) -> CalibrationCache:
    """Autoencoder cache from the gradient of L_ae-s with the student head held constant"""
    count = images.shape[0]
    _, studentAeHead = bundle.studentHeads(bundle.student.forward(Tensor(images)))
    x = Tensor(images, requiresgrad=True)
    with Tape() as tape:
        aeOut, aeTaps = bundle.autoencoder.forwardWithTaps(x)
        loss = Ops.mseMean(aeOut, studentAeHead.detach())
    backward(loss, tape)
    bundle.autoencoder.zeroGrad()
    return _cacheFromTaps(bundle.autoencoder.name, aeTaps, count, images)


def quantFrame(records: List[LayerQuantRecord]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            [r.layer, r.bits, f"{r.scalemin:.17g}/{r.scalemean:.17g}/{r.scalemax:.17g}",
             r.blockerrorbefore, r.blockerrorafter]
            for r in records
        ],
        columns=QUANT_COLUMNS,
    )


class QuantizeAction:
    """Quantizes teacher, student and autoencoder of a trained bundle"""

    def __init__(self, store: Optional[ArtifactStore] = None):
        self.store = store

    def quantizeBundle(
        self,
        bundle: ModelBundle,
        images: np.ndarray,
        bits: Sequence[int],
        cfg: QuantConfig,
        checkpointName: Optional[str] = None,
        metadata: Optional[Dict] = None,
        stageName: str = "quantized",
    ) -> Tuple[ModelBundle, List[LayerQuantRecord]]:
        """
        Quantize every network of a bundle.

        Teacher and student share the per-layer widths; the autoencoder is quantized at
        cfg.autoencoderbits with activation fake-quant on its encoder only.

        Args:
            bundle: Full-precision stage-1 bundle (left untouched)
            images: Calibration images [n, 3, H, W]
            bits: Width per PDN conv layer
            cfg: Quantization settings
            checkpointName: Checkpoint to write, if any
            metadata: Extra checkpoint metadata
            stageName: Stage recorded on the result

        Returns:
            Tuple[ModelBundle, List[LayerQuantRecord]]: Quantized bundle and report rows
        """
        teacherCache, studentCache = pdnCaches(bundle, images)
        aeCache = autoencoderCache(bundle, images)

        teacher, teacherRecords = quantizeNetwork(bundle.teacher, teacherCache, bits, cfg.activationbits, sweeps=cfg.sweeps)
        student, studentRecords = quantizeNetwork(bundle.student, studentCache, bits, cfg.activationbits, sweeps=cfg.sweeps)
        aeBits = [cfg.autoencoderbits] * len(bundle.autoencoder.convNames)
        autoencoder, aeRecords = quantizeNetwork(
            bundle.autoencoder, aeCache, aeBits, cfg.autoencoderbits, ENCODER_CONVS, sweeps=cfg.sweeps
        )
        teacher.freeze()
        quantized = ModelBundle(teacher=teacher, student=student, autoencoder=autoencoder, stage=stageName)
        records = teacherRecords + studentRecords + aeRecords

        storage = sum(weightStorageBits(n) for n in quantized.networks().values())
        baseline = sum(weightStorageBits(n) for n in bundle.networks().values())
        logger.info(f"Quantized bundle: {storage / 1000:.1f} kbit of parameters (full precision {baseline / 1000:.1f} kbit)")

        if self.store is not None:
            self.store.reports.writeFrame(QUANT_REPORT, quantFrame(records))
            if checkpointName is not None:
                meta = dict(metadata or {})
                meta["stage"] = stageName
                meta["bits"] = list(bits)
                self.store.checkpoints.writeCheckpoint(checkpointName, bundleCheckpoint(quantized, meta))
        return quantized, records
