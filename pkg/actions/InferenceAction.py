"""
Test-time anomaly maps, bias mass and heatmap export
"""

import os
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence

import numpy as np

from config.Config import get_config
from config.Constants import OVERLAY_ALPHA
from database.dataset.DatasetHandler import DatasetSample
from database.operations.ArtifactStore import ArtifactStore
from framework.modelframework.models.BundleModels import ModelBundle
from framework.modelframework.models.MapModels import AnomalyMap
from framework.tensorframework import Ops
from framework.tensorframework.Tensor import Tensor
from logs.logger import get_logger
from parsers.ImageParser import encodePgm, encodePpm, toUint8
from utils.errors import DimensionError, ParameterError

logger = get_logger(__name__)


def diffCube(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise squared difference (a - b)^2"""
    return Ops.square(Ops.sub(a, b))


def channelMean(d: Tensor) -> Tensor:
    """Mean across the channel axis of a [C, H, W] cube"""
    if d.data.ndim != 3:
        raise DimensionError(f"channelMean needs a [C, H, W] cube, got shape {d.shape}", axis="rank")
    return Tensor(d.data.mean(axis=0))


def composeMaps(
    teacherOut: Tensor,
    studentTeacherHead: Tensor,
    aeOut: Tensor,
    studentAeHead: Tensor,
    inputSize: int,
) -> AnomalyMap:
    """
    Fuse the local and global maps of one image.

    Args:
        teacherOut: Teacher features [C, h, w]
        studentTeacherHead: Student channels [:C]
        aeOut: Autoencoder output [C, h, w]
        studentAeHead: Student channels [C:2C]
        inputSize: Input image side length

    Returns:
        AnomalyMap: Local, global, combined and resized maps plus the image score
    """
    local = channelMean(diffCube(teacherOut, studentTeacherHead)).data
    globalMap = channelMean(diffCube(aeOut, studentAeHead)).data
    if local.shape != globalMap.shape:
        raise DimensionError(f"local map {local.shape} and global map {globalMap.shape} differ", axis="height")
    combined = 0.5 * (local + globalMap)
    resized = Ops.bilinearResize(Tensor(combined), inputSize, inputSize).data
    return AnomalyMap(local=local, globalmap=globalMap, combined=combined, resized=resized,
                      imagescore=float(resized.max()))


def meanHeatmap(maps: Sequence[AnomalyMap]) -> np.ndarray:
    if not maps:
        raise ParameterError("no maps to average")
    return np.mean([m.resized for m in maps], axis=0)


def biasMass(maps: Sequence[AnomalyMap], regionMask: np.ndarray) -> float:
    """
    Fraction of the mean heatmap's total heat that falls inside the variable region.

    Args:
        maps: Maps of the normal test images
        regionMask: Binary variable-region mask at input resolution

    Returns:
        float: Fraction in [0, 1]; 0.0 when the mean heatmap carries no heat
    """
    region = np.asarray(regionMask, dtype=bool)
    if not region.any():
        raise ParameterError("bias mass needs a nonempty region mask")
    heat = meanHeatmap(maps)
    if heat.shape != region.shape:
        raise DimensionError(f"heatmap {heat.shape} and region mask {region.shape} differ", axis="height")
    total = heat.sum()
    if total <= 0:
        logger.warning("mean normal heatmap is identically zero; bias mass reported as 0.0")
        return 0.0
    return float(heat[region].sum() / total)


def heatLevels(values: np.ndarray) -> np.ndarray:
    """Per-image min-max scaling to 8-bit levels (constant maps become 0)"""
    low, high = values.min(), values.max()
    if high <= low:
        return np.zeros(values.shape, dtype=np.uint8)
    return toUint8((values - low) / (high - low))


def overlayPixels(image: np.ndarray, levels: np.ndarray, alpha: float = OVERLAY_ALPHA) -> np.ndarray:
    """Blend an input image [3, H, W] in [0, 1] with heat colour (h, 0, 255 - h)"""
    base = toUint8(image).transpose(1, 2, 0).astype(np.float64)
    heat = levels.astype(np.float64)
    colour = np.stack([heat, np.zeros_like(heat), 255.0 - heat], axis=-1)
    return np.clip(np.rint((1.0 - alpha) * base + alpha * colour), 0, 255).astype(np.uint8)


class InferenceAction:
    """Scores images with a bundle and writes heatmaps"""

    def __init__(self, store: Optional[ArtifactStore] = None):
        self.store = store
        self.config = get_config()

    def scoreImage(self, bundle: ModelBundle, image: np.ndarray) -> AnomalyMap:
        x = Tensor(image[np.newaxis])
        teacherHead, aeHead = bundle.studentHeads(bundle.student.forward(x))
        return composeMaps(
            Tensor(bundle.teacher.forward(x).data[0]),
            Tensor(teacherHead.data[0]),
            Tensor(bundle.autoencoder.forward(x).data[0]),
            Tensor(aeHead.data[0]),
            image.shape[-1],
        )

    def scoreSamples(self, bundle: ModelBundle, samples: Sequence[DatasetSample]) -> List[AnomalyMap]:
        """Anomaly maps for every sample, in input order"""
        workers = max(1, self.config.RAAD_THREADS)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            maps = list(pool.map(lambda sample: self.scoreImage(bundle, sample.image), samples))
        logger.info(f"Scored {len(maps)} images with the {bundle.stage} bundle ({workers} workers)")
        return maps

    def exportHeatmaps(self, samples: Sequence[DatasetSample], maps: Sequence[AnomalyMap], stageName: str) -> List[str]:
        """
        Write one PGM heatmap and one PPM overlay per image, plus the mean normal and
        mean anomalous heatmaps.

        Returns:
            List[str]: Written file names under heatmaps/
        """
        if self.store is None:
            raise ParameterError("heatmap export needs an artifact store")
        written = []
        for sample, anomalyMap in zip(samples, maps):
            stem = os.path.splitext(os.path.basename(sample.entry.path))[0]
            levels = heatLevels(anomalyMap.resized)
            for filename, data in (
                (f"{stem}_{stageName}.pgm", encodePgm(levels)),
                (f"{stem}_{stageName}.ppm", encodePpm(overlayPixels(sample.image, levels))),
            ):
                self.store.writeHeatmap(filename, data)
                written.append(filename)

        for kind, anomalous in (("normal", False), ("anomalous", True)):
            group = [m for s, m in zip(samples, maps) if s.anomalous == anomalous]
            if not group:
                continue
            filename = f"mean_{kind}_{stageName}.pgm"
            self.store.writeHeatmap(filename, encodePgm(heatLevels(meanHeatmap(group))))
            written.append(filename)
        logger.info(f"Wrote {len(written)} heatmap files for stage {stageName}")
        return written
