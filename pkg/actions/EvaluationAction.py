"""
Three-stage evaluation: detection / localization metrics and bias mass per stage
"""

from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from actions.InferenceAction import InferenceAction, biasMass
from config.PipelineConfig import EvalConfig
from database.dataset.DatasetHandler import DatasetSample
from database.operations.ArtifactStore import ArtifactStore
from framework.metricsframework.Metrics import auPro, auroc, averagePrecision
from framework.metricsframework.models.MetricModels import DELTA_COLUMNS, EVAL_COLUMNS, EvalReport, ScoredSample
from framework.modelframework.models.BundleModels import ModelBundle
from framework.modelframework.models.MapModels import AnomalyMap
from logs.logger import get_logger
from utils.errors import UndefinedMetricError

logger = get_logger(__name__)

EVAL_REPORT = "eval.csv"
DELTA_REPORT = "eval_deltas.csv"


class EvaluationAction:
    """Evaluates bundles on the test split and writes the ablation reports"""

    def __init__(self, store: Optional[ArtifactStore] = None, inference: Optional[InferenceAction] = None):
        self.store = store
        self.inference = inference or InferenceAction(store)

    def evaluateStage(
        self,
        bundle: ModelBundle,
        samples: Sequence[DatasetSample],
        variableMask,
        stageName: str,
        cfg: EvalConfig,
        seed: int,
    ) -> Tuple[EvalReport, List[AnomalyMap]]:
        """
        Score the test split with one bundle.

        Args:
            bundle: Networks of the stage
            samples: Test split
            variableMask: Variable-region mask for the bias mass
            stageName: Report name (baseline / quant / raad)
            cfg: Evaluation settings
            seed: Run seed recorded in the report

        Returns:
            Tuple[EvalReport, List[AnomalyMap]]: Report row and the per-image maps
        """
        maps = self.inference.scoreSamples(bundle, samples)
        scored = [ScoredSample(score=m.imagescore, anomalous=s.anomalous, mask=s.mask) for s, m in zip(samples, maps)]
        normalMaps = [m for s, m in zip(samples, maps) if not s.anomalous]
        nAnomalous = sum(1 for s in samples if s.anomalous)

        try:
            detection = auroc(scored)
            precision = averagePrecision(scored)
            localization = auPro([m.resized for m in maps], [s.mask for s in samples], cfg.fprlimit, cfg.connectivity)
        except UndefinedMetricError as e:
            logger.error(f"Stage {stageName}: {e}")
            raise
        bias = biasMass(normalMaps, variableMask)

        report = EvalReport(
            stage=stageName,
            auroc=detection,
            ap=precision,
            aupro=localization,
            biasmass=bias,
            nnormal=len(samples) - nAnomalous,
            nanom=nAnomalous,
            seed=seed,
        )
        logger.info(
            f"Stage {stageName}: AUROC={detection:.6f} AP={precision:.6f} AU-PRO={localization:.6f} "
            f"bias_mass={bias:.6f}"
        )
        return report, maps

    def writeReports(self, reports: Sequence[EvalReport]) -> pd.DataFrame:
        """Write eval.csv and the deltas against the baseline row; returns the deltas"""
        frame = evalFrame(reports)
        deltas = deltaFrame(reports)
        logImprovementClaims(reports)
        if self.store is not None:
            self.store.reports.writeFrame(EVAL_REPORT, frame)
            self.store.reports.writeFrame(DELTA_REPORT, deltas)
        return deltas

    def evaluate(
        self,
        bundles: Dict[str, ModelBundle],
        samples: Sequence[DatasetSample],
        variableMask,
        cfg: EvalConfig,
        seed: int,
        stages: Optional[Sequence[str]] = None,
    ) -> List[EvalReport]:
        """Evaluate the given stages (default cfg.stages) in order and write the reports"""
        reports = []
        for stageName in stages or cfg.stages:
            report, _ = self.evaluateStage(bundles[stageName], samples, variableMask, stageName, cfg, seed)
            reports.append(report)
        self.writeReports(reports)
        return reports


def evalFrame(reports: Sequence[EvalReport]) -> pd.DataFrame:
    return pd.DataFrame([r.toRow() for r in reports], columns=EVAL_COLUMNS)


def deltaFrame(reports: Sequence[EvalReport]) -> pd.DataFrame:
    baseline = next((r for r in reports if r.stage == "baseline"), reports[0])
    rows = [
        [r.stage, r.auroc - baseline.auroc, r.ap - baseline.ap, r.aupro - baseline.aupro, r.biasmass - baseline.biasmass]
        for r in reports
    ]
    return pd.DataFrame(rows, columns=DELTA_COLUMNS)


def logImprovementClaims(reports: Sequence[EvalReport]) -> None:
    byStage = {r.stage: r for r in reports}
    if not {"baseline", "raad"} <= byStage.keys():
        return
    baseline, raad = byStage["baseline"], byStage["raad"]
    observed = "observed" if raad.auroc > baseline.auroc else "not observed"
    logger.info(f"AUROC improvement over baseline {observed}: {baseline.auroc:.6f} -> {raad.auroc:.6f}")
    observed = "observed" if raad.biasmass < baseline.biasmass else "not observed"
    logger.info(f"Bias mass reduction {observed}: {baseline.biasmass:.6f} -> {raad.biasmass:.6f}")
    if "quant" in byStage:
        observed = "observed" if raad.auroc >= byStage["quant"].auroc else "not observed"
        logger.info(f"Fine-tuning recovery over quantized-only {observed}")
