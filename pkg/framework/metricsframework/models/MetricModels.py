from dataclasses import dataclass
from typing import List, Optional

import numpy as np


@dataclass
class ScoredSample:
    """
    One test image with its image-level score

    Attributes:
        score: Image-level anomaly score
        anomalous: Ground-truth label
        mask: Optional ground-truth defect mask [H, W]
    """
    score: float
    anomalous: bool
    mask: Optional[np.ndarray] = None


@dataclass
class ProCurve:
    """Per-region-overlap curve, fpr ascending"""
    fprs: np.ndarray
    overlaps: np.ndarray

    def __len__(self) -> int:
        return len(self.fprs)


@dataclass
class EvalReport:
    """One stage row of the evaluation report"""
    stage: str
    auroc: float
    ap: float
    aupro: float
    biasmass: float
    nnormal: int
    nanom: int
    seed: int

    def toRow(self) -> List:
        return [self.stage, self.auroc, self.ap, self.aupro, self.biasmass, self.nnormal, self.nanom, self.seed]


EVAL_COLUMNS = ["stage", "auroc", "ap", "aupro", "bias_mass", "n_normal", "n_anom", "seed"]
DELTA_COLUMNS = ["stage", "d_auroc", "d_ap", "d_aupro", "d_bias_mass"]
