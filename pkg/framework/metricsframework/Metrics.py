"""
Detection and localization metrics: image AUROC / AP and pixel AU-PRO, plus
brute-force oracles used to check the fast versions
"""

from typing import List, Sequence, Tuple

import numpy as np
from skimage.measure import label
from sklearn.metrics import auc, roc_auc_score

from config.Constants import FPR_LIMIT, MAX_PRO_THRESHOLDS
from framework.metricsframework.models.MetricModels import ProCurve, ScoredSample
from logs.logger import get_logger
from utils.errors import DimensionError, ParameterError, UndefinedMetricError

logger = get_logger(__name__)


def _arrays(samples: Sequence[ScoredSample]) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.array([s.score for s in samples], dtype=np.float64)
    labels = np.array([1 if s.anomalous else 0 for s in samples], dtype=np.int64)
    return scores, labels


def auroc(samples: Sequence[ScoredSample]) -> float:
    """
    Probability that a random anomalous sample outscores a random normal one, ties counting 0.5.

    Raises:
        UndefinedMetricError: If only one label is present
    """
    scores, labels = _arrays(samples)
    if labels.sum() == 0 or labels.sum() == len(labels):
        raise UndefinedMetricError("AUROC needs both normal and anomalous samples")
    return float(roc_auc_score(labels, scores))


def averagePrecision(samples: Sequence[ScoredSample]) -> float:
    """
    Mean precision at the rank of each anomalous sample, scores descending.

    Tied samples are ordered normal first, so ties never help.

    Raises:
        UndefinedMetricError: If there are no anomalous samples
    """
    scores, labels = _arrays(samples)
    if labels.sum() == 0:
        raise UndefinedMetricError("average precision needs at least one anomalous sample")
    order = np.lexsort((labels, -scores))
    ranked = labels[order]
    hits = np.cumsum(ranked)
    ranks = np.arange(1, len(ranked) + 1)
    return float(np.mean(hits[ranked == 1] / ranks[ranked == 1]))


def oracleAuroc(samples: Sequence[ScoredSample]) -> float:
    """AUROC by explicit enumeration of every (normal, anomalous) pair"""
    normals = [s.score for s in samples if not s.anomalous]
    anomalies = [s.score for s in samples if s.anomalous]
    if not normals or not anomalies:
        raise UndefinedMetricError("AUROC needs both normal and anomalous samples")
    wins = 0.0
    for a in anomalies:
        for n in normals:
            if a > n:
                wins += 1.0
            elif a == n:
                wins += 0.5
    return wins / (len(normals) * len(anomalies))


def oracleAp(samples: Sequence[ScoredSample]) -> float:
    """Average precision by walking the ranking one sample at a time"""
    ranked = sorted(samples, key=lambda s: (-s.score, 1 if s.anomalous else 0))
    if not any(s.anomalous for s in ranked):
        raise UndefinedMetricError("average precision needs at least one anomalous sample")
    hits = 0
    precisions = []
    for rank, sample in enumerate(ranked, start=1):
        if sample.anomalous:
            hits += 1
            precisions.append(hits / rank)
    return sum(precisions) / len(precisions)


def _regions(masks: Sequence[np.ndarray], connectivity: int) -> List[np.ndarray]:
    """Flat pixel indices (into the concatenated maps) of every connected defect region"""
    regions = []
    offset = 0
    for mask in masks:
        labelled = label(np.asarray(mask, dtype=bool), connectivity=1 if connectivity == 4 else 2)
        flat = labelled.ravel()
        for region in range(1, int(labelled.max()) + 1):
            regions.append(np.flatnonzero(flat == region) + offset)
        offset += flat.size
    return regions


def proThresholds(values: np.ndarray, maxThresholds: int = MAX_PRO_THRESHOLDS) -> np.ndarray:
    """Descending thresholds: every unique value, or evenly spaced quantiles when there are too many"""
    unique = np.unique(values)
    if unique.size > maxThresholds:
        unique = np.unique(np.quantile(values, np.linspace(0.0, 1.0, maxThresholds)))
    return unique[::-1]


def proCurve(
    maps: Sequence[np.ndarray],
    masks: Sequence[np.ndarray],
    connectivity: int = 4,
    maxThresholds: int = MAX_PRO_THRESHOLDS,
) -> ProCurve:
    """
    Mean per-region overlap against false positive rate, swept over map thresholds.

    A pixel is predicted anomalous when its value is >= the threshold. The curve starts
    at (0, 0) and is ordered by ascending FPR.

    Args:
        maps: Anomaly maps at input resolution
        masks: Ground-truth masks, one per map
        connectivity: 4 or 8 for region labelling
        maxThresholds: Cap on the number of thresholds

    Returns:
        ProCurve: Curve points
    """
    if len(maps) != len(masks):
        raise DimensionError(f"{len(maps)} maps but {len(masks)} masks", axis="batch")
    for anomalyMap, mask in zip(maps, masks):
        if np.shape(anomalyMap) != np.shape(mask):
            raise DimensionError(f"map {np.shape(anomalyMap)} and mask {np.shape(mask)} differ", axis="height")
    if connectivity not in (4, 8):
        raise ParameterError(f"connectivity must be 4 or 8, got {connectivity}")

    values = np.concatenate([np.asarray(m, dtype=np.float64).ravel() for m in maps])
    defect = np.concatenate([np.asarray(m, dtype=bool).ravel() for m in masks])
    regions = _regions(masks, connectivity)
    if not regions:
        raise UndefinedMetricError("AU-PRO needs at least one anomalous pixel")
    normalValues = np.sort(values[~defect])
    if normalValues.size == 0:
        raise UndefinedMetricError("AU-PRO needs at least one normal pixel")
    regionValues = [np.sort(values[region]) for region in regions]

    thresholds = proThresholds(values, maxThresholds)
    fprs = [0.0]
    overlaps = [0.0]
    for threshold in thresholds:
        falsePositives = normalValues.size - np.searchsorted(normalValues, threshold, side="left")
        fprs.append(falsePositives / normalValues.size)
        overlaps.append(float(np.mean([
            (region.size - np.searchsorted(region, threshold, side="left")) / region.size
            for region in regionValues
        ])))
    return ProCurve(fprs=np.array(fprs), overlaps=np.array(overlaps))


def integrateCurve(curve: ProCurve, fprLimit: float) -> float:
    """Trapezoid area under the curve up to fprLimit, divided by fprLimit"""
    if not 0 < fprLimit <= 1:
        raise ParameterError(f"fpr limit must lie in (0, 1], got {fprLimit}")
    fprs, overlaps = curve.fprs, curve.overlaps
    beyond = np.flatnonzero(fprs > fprLimit)
    if beyond.size:
        cut = beyond[0]
        x0, x1 = fprs[cut - 1], fprs[cut]
        y0, y1 = overlaps[cut - 1], overlaps[cut]
        fprs = np.append(fprs[:cut], fprLimit)
        overlaps = np.append(overlaps[:cut], y0 + (y1 - y0) * (fprLimit - x0) / (x1 - x0))
    return float(auc(fprs, overlaps) / fprLimit)


def auPro(
    maps: Sequence[np.ndarray],
    masks: Sequence[np.ndarray],
    fprLimit: float = FPR_LIMIT,
    connectivity: int = 4,
    maxThresholds: int = MAX_PRO_THRESHOLDS,
) -> float:
    """
    Normalized area under the per-region-overlap curve up to fprLimit.

    Args:
        maps: Anomaly maps at input resolution
        masks: Ground-truth masks
        fprLimit: Integration limit in (0, 1]
        connectivity: Region connectivity (4 or 8)
        maxThresholds: Cap on the number of thresholds

    Returns:
        float: AU-PRO in [0, 1]
    """
    curve = proCurve(maps, masks, connectivity, maxThresholds)
    value = integrateCurve(curve, fprLimit)
    logger.debug(f"AU-PRO@{fprLimit}: {value:.6f} over {len(curve)} curve points")
    return value
