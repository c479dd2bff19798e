"""
Pipeline Runner Module

Runs the pipeline stage commands (data generation, pretraining, stage-1 training,
layer scoring, quantization, fine-tuning, evaluation, heatmaps) against one output
directory. Every command checks its predecessor's artifacts through the metadata
embedded in their checkpoints.
"""

import time
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from actions.EvaluationAction import EvaluationAction
from actions.HQSAction import HQS_REPORT, HQSAction, bitsFromReport
from actions.InferenceAction import InferenceAction
from actions.QuantizeAction import QuantizeAction, calibrationImages
from actions.SynthDataAction import SynthDataAction
from actions.TrainAction import TrainAction
from config.Constants import BIT_CHOICES
from config.PipelineConfig import PipelineConfig
from config.PipelineStageEnum import PipelineStage
from database.checkpoint.CheckpointHandler import Checkpoint, restoreBundle, restoreNetwork
from database.operations.ArtifactStore import ArtifactStore
from framework.metricsframework.models.MetricModels import EVAL_COLUMNS, EvalReport
from framework.modelframework.NetworkFactory import buildBundle, buildExtractor, buildPdn
from framework.modelframework.models.BundleModels import ModelBundle
from framework.quantframework.Quantizer import weightStorageBits
from framework.quantframework.models.HQSModels import BitPolicy
from logs.logger import get_logger
from parsers.ConfigParser import trainConfigFor
from utils.errors import PipelineOrderError, RaadError

logger = get_logger(__name__)

BITSWEEP_REPORT = "bitsweep.csv"
BITSWEEP_COLUMNS = ["policy", "bits", "auroc_quant", "auroc_finetuned", "aupro_quant", "aupro_finetuned", "weight_kbits"]
SEED_SUMMARY_REPORT = "seed_summary.csv"
ARCHITECTURE_REPORT = "architecture.txt"


def with_stage_logging(commandName: str, commandFunc: Callable, *args, **kwargs):
    """Run one command, logging start, finish and elapsed time; errors are logged and re-raised."""
    logger.info(f"Starting {commandName}")
    started = time.time()
    try:
        result = commandFunc(*args, **kwargs)
    except RaadError as e:
        logger.error(f"{commandName} failed after {time.time() - started:.1f}s: {e}")
        raise
    logger.info(f"{commandName} completed in {time.time() - started:.1f}s")
    return result


def prepareFinetune(bundle: ModelBundle, mode: str) -> Tuple[ModelBundle, bool]:
    """
    Ready a quantized bundle for fine-tuning.

    "fp" trains the snapped weights in full precision: activation fake-quant is removed
    everywhere and the trainable networks drop their weight grids. "qat" keeps every
    scheme and asks the trainer to re-snap weights after each step.

    Returns:
        Tuple[ModelBundle, bool]: Bundle to train and whether to re-snap
    """
    tuned = bundle.copy()
    tuned.teacher.freeze()
    if mode == "qat":
        return tuned, True
    for network in tuned.networks().values():
        network.actschemes = {}
    tuned.student.weightschemes = {}
    tuned.autoencoder.weightschemes = {}
    return tuned, False


class PipelineRunner:
    """
    Executes pipeline commands for one config and output directory.

    Features:
    - Artifact ordering checks via checkpoint metadata (stage, seed, config hash)
    - Atomic, self-verified artifact writes through the ArtifactStore
    - Multi-seed runs into per-seed subdirectories
    """

    def __init__(self, config: PipelineConfig, outdir: str):
        """
        Initialize runner with a validated config and an output directory

        Args:
            config: Pipeline configuration
            outdir: Output root (data/, checkpoints/, reports/, heatmaps/)
        """
        config.validate()
        self.config = config
        self.store = ArtifactStore(outdir)
        self.confighash = config.configHash()
        self.trainAction = TrainAction(self.store)
        self.hqsAction = HQSAction(self.store)
        self.quantizeAction = QuantizeAction(self.store)
        self.inferenceAction = InferenceAction(self.store)
        self.evaluationAction = EvaluationAction(self.store, self.inferenceAction)
        logger.info(f"PipelineRunner ready: out={self.store.root} seed={config.seed} config={self.confighash[:12]}")

    def _metadata(self) -> Dict:
        return {"seed": self.config.seed, "confighash": self.confighash}

    def _requireCheckpoint(self, stage: PipelineStage, requiredBy: str) -> Checkpoint:
        """
        Read a predecessor checkpoint and check its embedded metadata.

        Raises:
            PipelineOrderError: If the checkpoint is missing or belongs to another stage or seed
        """
        artifact = f"checkpoints/{stage.checkpoint}"
        checkpoint = self.store.checkpoints.readCheckpoint(stage.checkpoint, requiredBy=requiredBy)
        if checkpoint.stage != stage.stagename:
            raise PipelineOrderError(artifact, f"{artifact} holds stage {checkpoint.stage!r}, expected {stage.stagename!r}")
        if checkpoint.seed != self.config.seed:
            raise PipelineOrderError(
                artifact, f"{artifact} was produced with seed {checkpoint.seed}, this run uses {self.config.seed}"
            )
        if checkpoint.metadata.get("confighash") != self.confighash:
            logger.warning(f"{artifact} was produced with a different config; continuing with the current one")
        return checkpoint

    def _freshBundle(self) -> ModelBundle:
        model = self.config.model
        return buildBundle(
            teacherChannels=model.teacherchannels,
            hidden=model.hidden,
            latent=model.latent,
            aeChannels=model.aechannels,
            imageSize=self.config.data.imagesize,
            seed=self.config.seed,
            studentMultiplier=model.studentmultiplier,
        )

    def _loadBundle(self, stage: PipelineStage, requiredBy: str) -> ModelBundle:
        return restoreBundle(self._requireCheckpoint(stage, requiredBy), self._freshBundle())

    def _trainSamples(self, requiredBy: str):
        return self.store.dataset.loadSamples("train", requiredBy=requiredBy)

    def _calibrationImages(self, requiredBy: str) -> np.ndarray:
        return calibrationImages(self._trainSamples(requiredBy), self.config.quant.calibrationsize)

    def _bitPolicy(self) -> BitPolicy:
        return BitPolicy(thresholds=list(self.config.policy.thresholds), bits=list(self.config.policy.bits))

    def cmdGenData(self) -> None:
        SynthDataAction(self.store).generate(self.config.data, self.config.seed)
        self.store.dataset.verifyDataset()

    def cmdPretrain(self) -> List[float]:
        samples = self._trainSamples("pretrain")
        model = self.config.model
        teacher = buildPdn(model.teacherchannels, 1, self.config.seed, model.hidden, name="teacher")
        extractor = buildExtractor(self.config.seed, model.teacherchannels, model.hidden)
        return self.trainAction.pretrainAndSave(
            teacher, extractor, samples, trainConfigFor(self.config, "pretrain"),
            PipelineStage.PRETRAINED.checkpoint, "loss_pretrain.csv", self._metadata(),
        )

    def cmdTrain(self):
        checkpoint = self._requireCheckpoint(PipelineStage.PRETRAINED, "train")
        bundle = self._freshBundle()
        restoreNetwork(checkpoint, bundle.teacher, "teacher")
        bundle.teacher.freeze()
        samples = self._trainSamples("train")

        inputShape = (3, self.config.data.imagesize, self.config.data.imagesize)
        self.store.reports.writeText(
            ARCHITECTURE_REPORT, "\n".join(n.summary(inputShape) for n in bundle.networks().values())
        )
        return self.trainAction.train(
            bundle, samples, trainConfigFor(self.config, "train"), PipelineStage.STAGE1.stagename,
            PipelineStage.STAGE1.checkpoint, "loss_train.csv", self._metadata(),
        )

    def cmdScoreLayers(self):
        bundle = self._loadBundle(PipelineStage.STAGE1, "score-layers")
        return self.hqsAction.hqsPipeline(bundle, self._calibrationImages("score-layers"), self._bitPolicy())

    def cmdQuantize(self):
        bundle = self._loadBundle(PipelineStage.STAGE1, "quantize")
        bits = bitsFromReport(self.store.reports.readFrame(HQS_REPORT, requiredBy="quantize"))
        return self.quantizeAction.quantizeBundle(
            bundle, self._calibrationImages("quantize"), bits, self.config.quant,
            PipelineStage.QUANTIZED.checkpoint, self._metadata(), PipelineStage.QUANTIZED.stagename,
        )

    def cmdFinetune(self):
        quantized = self._loadBundle(PipelineStage.QUANTIZED, "finetune")
        bundle, resnap = prepareFinetune(quantized, self.config.quant.finetunemode)
        logger.info(f"Fine-tuning in {self.config.quant.finetunemode} mode")
        return self.trainAction.train(
            bundle, self._trainSamples("finetune"), trainConfigFor(self.config, "finetune"),
            PipelineStage.FINETUNED.stagename, PipelineStage.FINETUNED.checkpoint, "loss_finetune.csv",
            self._metadata(), resnap=resnap,
        )

    def _stageNames(self, stage: Optional[str]) -> List[str]:
        return [stage] if stage is not None else list(self.config.eval.stages)

    def cmdEval(self, stage: Optional[str] = None) -> List[EvalReport]:
        names = self._stageNames(stage)
        bundles = {name: self._loadBundle(PipelineStage.from_evalname(name), "eval") for name in names}
        samples = self.store.dataset.loadSamples("test", requiredBy="eval")
        variableMask = self.store.dataset.loadVariableMask(requiredBy="eval")
        return self.evaluationAction.evaluate(
            bundles, samples, variableMask, self.config.eval, self.config.seed, stages=names
        )

    def cmdHeatmaps(self, stage: Optional[str] = None) -> List[str]:
        samples = self.store.dataset.loadSamples("test", requiredBy="heatmaps")
        written = []
        for name in self._stageNames(stage):
            bundle = self._loadBundle(PipelineStage.from_evalname(name), "heatmaps")
            maps = self.inferenceAction.scoreSamples(bundle, samples)
            written.extend(self.inferenceAction.exportHeatmaps(samples, maps, name))
        return written

    def cmdBitSweep(self) -> pd.DataFrame:
        """
        Quantize the stage-1 bundle under uniform widths and under the HQS assignment,
        evaluating each before and after fine-tuning.

        Returns:
            pd.DataFrame: The bitsweep report
        """
        stage1 = self._loadBundle(PipelineStage.STAGE1, "bitsweep")
        images = self._calibrationImages("bitsweep")
        samples = self.store.dataset.loadSamples("test", requiredBy="bitsweep")
        trainSamples = self._trainSamples("bitsweep")
        variableMask = self.store.dataset.loadVariableMask(requiredBy="bitsweep")
        layerCount = len(stage1.teacher.convNames)

        if self.store.reports.hasReport(HQS_REPORT):
            hqsBits = bitsFromReport(self.store.reports.readFrame(HQS_REPORT))
        else:
            hqsBits = HQSAction().hqsPipeline(stage1, images, self._bitPolicy()).bits
        policies = [(f"uniform{b}", [b] * layerCount) for b in BIT_CHOICES] + [("hqs", hqsBits)]

        quantizer = QuantizeAction()
        trainer = TrainAction()
        evaluator = EvaluationAction(None, self.inferenceAction)
        finetuneCfg = trainConfigFor(self.config, "finetune")
        rows = []
        for policyName, bits in policies:
            quantized, _ = quantizer.quantizeBundle(stage1, images, bits, self.config.quant)
            quantReport, _ = evaluator.evaluateStage(
                quantized, samples, variableMask, "quant", self.config.eval, self.config.seed
            )
            tuned, resnap = prepareFinetune(quantized, self.config.quant.finetunemode)
            trainer.train(tuned, trainSamples, finetuneCfg, f"finetuned.{policyName}", resnap=resnap)
            tunedReport, _ = evaluator.evaluateStage(
                tuned, samples, variableMask, "raad", self.config.eval, self.config.seed
            )
            kbits = sum(weightStorageBits(n) for n in quantized.networks().values()) / 1000.0
            rows.append([policyName, "/".join(str(b) for b in bits), quantReport.auroc, tunedReport.auroc,
                         quantReport.aupro, tunedReport.aupro, kbits])
            logger.info(f"bitsweep {policyName} {bits}: AUROC {quantReport.auroc:.4f} -> {tunedReport.auroc:.4f}")
        frame = pd.DataFrame(rows, columns=BITSWEEP_COLUMNS)
        self.store.reports.writeFrame(BITSWEEP_REPORT, frame)
        return frame

    def runAll(self) -> List[EvalReport]:
        """Every stage command in order, ending with evaluation and heatmaps"""
        for name, command in (
            ("gen-data", self.cmdGenData),
            ("pretrain", self.cmdPretrain),
            ("train", self.cmdTrain),
            ("score-layers", self.cmdScoreLayers),
            ("quantize", self.cmdQuantize),
            ("finetune", self.cmdFinetune),
        ):
            with_stage_logging(name, command)
        reports = with_stage_logging("eval", self.cmdEval)
        with_stage_logging("heatmaps", self.cmdHeatmaps)
        return reports

    def cmdRun(self, seeds: Sequence[int]) -> pd.DataFrame:
        """
        Full pipeline for each seed into seed_<n>/, then a per-seed summary with the
        median row of every stage.

        Returns:
            pd.DataFrame: The seed summary
        """
        rows = []
        for seed in seeds:
            runner = PipelineRunner(self.config.withSeed(seed), self.store.child(f"seed_{seed}").root)
            rows.extend(report.toRow() for report in runner.runAll())
        frame = seedSummary(pd.DataFrame(rows, columns=EVAL_COLUMNS))
        self.store.reports.writeFrame(SEED_SUMMARY_REPORT, frame)
        return frame


def seedSummary(frame: pd.DataFrame) -> pd.DataFrame:
    """Per-seed rows followed by one median row per stage (seed column "median")"""
    metrics = ["auroc", "ap", "aupro", "bias_mass", "n_normal", "n_anom"]
    stages = list(dict.fromkeys(frame["stage"]))
    medians = frame.groupby("stage", sort=False)[metrics].median().reindex(stages).reset_index()
    medians["seed"] = "median"
    summary = pd.concat([frame.astype({"seed": str}), medians[EVAL_COLUMNS]], ignore_index=True)
    return summary
