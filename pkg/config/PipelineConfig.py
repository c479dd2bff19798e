"""
Pipeline configuration document. These dataclasses are the published JSON schema:
every section and key of the document maps onto a field here.
"""

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import List, Optional

from config.Constants import (
    AUTOENCODER_BITS,
    AUTOENCODER_CHANNELS,
    BIT_CHOICES,
    BIT_THRESHOLDS,
    CALIBRATION_SIZE,
    DATASET_COUNTS,
    FPR_LIMIT,
    HARD_FRACTION,
    IMAGE_SIZE,
    LATENT_DIMS,
    PDN_HIDDEN_CHANNELS,
    RECONSTRUCTION_SWEEPS,
    STUDENT_WIDTH_MULTIPLIER,
    TEACHER_CHANNELS,
    VARIANCE_RATIO_MIN,
    EVAL_STAGES,
)
from utils.errors import ConfigError

FINETUNE_MODES = ("fp", "qat")
DEFECT_KINDS = ("patch", "scratch", "hole")


@dataclass
class DataConfig:
    """Synthetic benchmark settings"""
    imagesize: int = IMAGE_SIZE
    ntrain: int = DATASET_COUNTS[0]
    ntestnormal: int = DATASET_COUNTS[1]
    ntestanomalous: int = DATASET_COUNTS[2]
    defectkinds: List[str] = field(default_factory=lambda: list(DEFECT_KINDS))
    defectminsize: int = 3
    defectmaxsize: int = 8
    varianceratio: float = VARIANCE_RATIO_MIN

    def validate(self) -> None:
        if self.imagesize < 16:
            raise ConfigError("data.imagesize", f"must be >= 16, got {self.imagesize}")
        for key in ("ntrain", "ntestnormal"):
            if getattr(self, key) < 1:
                raise ConfigError(f"data.{key}", "must be >= 1")
        if self.ntestanomalous < 0:
            raise ConfigError("data.ntestanomalous", "must be >= 0")
        if not self.defectkinds or any(kind not in DEFECT_KINDS for kind in self.defectkinds):
            raise ConfigError("data.defectkinds", f"must be a nonempty subset of {list(DEFECT_KINDS)}")
        if not 1 <= self.defectminsize <= self.defectmaxsize:
            raise ConfigError("data.defectminsize", "must satisfy 1 <= defectminsize <= defectmaxsize")
        if self.varianceratio <= 0:
            raise ConfigError("data.varianceratio", "must be positive")


@dataclass
class ModelGeometry:
    """Network widths"""
    teacherchannels: int = TEACHER_CHANNELS
    hidden: List[int] = field(default_factory=lambda: list(PDN_HIDDEN_CHANNELS))
    studentmultiplier: int = STUDENT_WIDTH_MULTIPLIER
    latent: int = LATENT_DIMS
    aechannels: int = AUTOENCODER_CHANNELS

    def validate(self) -> None:
        if self.teacherchannels < 1:
            raise ConfigError("model.teacherchannels", "must be >= 1")
        if len(self.hidden) != 3 or any(h < 1 for h in self.hidden):
            raise ConfigError("model.hidden", "must list three positive widths")
        if self.studentmultiplier != 2:
            raise ConfigError("model.studentmultiplier", "the student carries two heads; must be 2")
        if self.latent < 1:
            raise ConfigError("model.latent", "must be >= 1")
        if self.aechannels < 1:
            raise ConfigError("model.aechannels", "must be >= 1")


@dataclass
class TrainConfig:
    """
    Optimization settings for one training stage.

    Attributes:
        lambdats: Weight of the hard-mined teacher/student loss
        lambdaaes: Weight of the autoencoder/student loss
        lambdatae: Weight of the teacher/autoencoder loss
        lr: Adam learning rate
        iterations: Optimizer steps
        batch: Images per step
        hardfraction: Fraction of D entries kept by hard mining, in (0, 1]
        seed: Seed for batch sampling
    """
    lambdats: float = 1.0
    lambdaaes: float = 1.0
    lambdatae: float = 1.0
    lr: float = 1e-4
    iterations: int = 2000
    batch: int = 1
    hardfraction: float = HARD_FRACTION
    seed: int = 0

    def validate(self, section: str = "train") -> None:
        for key in ("lambdats", "lambdaaes", "lambdatae"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{section}.{key}", "loss weights must be >= 0")
        if self.lr <= 0:
            raise ConfigError(f"{section}.lr", "must be positive")
        if self.iterations < 0:
            raise ConfigError(f"{section}.iterations", "must be >= 0")
        if self.batch < 1:
            raise ConfigError(f"{section}.batch", "must be >= 1")
        if not 0 < self.hardfraction <= 1:
            raise ConfigError(f"{section}.hardfraction", "must lie in (0, 1]")


@dataclass
class QuantConfig:
    """Post-training quantization settings"""
    calibrationsize: int = CALIBRATION_SIZE
    sweeps: int = RECONSTRUCTION_SWEEPS
    activationbits: Optional[int] = None
    autoencoderbits: int = AUTOENCODER_BITS
    finetunemode: str = "fp"

    def validate(self) -> None:
        if self.calibrationsize < 1:
            raise ConfigError("quant.calibrationsize", "must be >= 1")
        if self.sweeps < 1:
            raise ConfigError("quant.sweeps", "must be >= 1")
        if self.activationbits is not None and self.activationbits not in BIT_CHOICES:
            raise ConfigError("quant.activationbits", f"must be one of {list(BIT_CHOICES)}")
        if self.autoencoderbits not in BIT_CHOICES:
            raise ConfigError("quant.autoencoderbits", f"must be one of {list(BIT_CHOICES)}")
        if self.finetunemode not in FINETUNE_MODES:
            raise ConfigError("quant.finetunemode", f"must be one of {list(FINETUNE_MODES)}")


@dataclass
class PolicyConfig:
    """Bit policy cut points and the widths they select"""
    thresholds: List[float] = field(default_factory=lambda: list(BIT_THRESHOLDS))
    bits: List[int] = field(default_factory=lambda: list(BIT_CHOICES))

    def validate(self) -> None:
        if len(self.bits) != len(self.thresholds) + 1:
            raise ConfigError("policy.bits", "needs exactly one more width than thresholds")
        if any(b not in BIT_CHOICES for b in self.bits) or list(self.bits) != sorted(self.bits):
            raise ConfigError("policy.bits", f"must be nondecreasing widths from {list(BIT_CHOICES)}")
        if any(not 0 < t < 1 for t in self.thresholds) or list(self.thresholds) != sorted(self.thresholds):
            raise ConfigError("policy.thresholds", "must be ascending cut points in (0, 1)")


@dataclass
class EvalConfig:
    """Evaluation settings"""
    fprlimit: float = FPR_LIMIT
    connectivity: int = 4
    stages: List[str] = field(default_factory=lambda: list(EVAL_STAGES))

    def validate(self) -> None:
        if not 0 < self.fprlimit <= 1:
            raise ConfigError("eval.fprlimit", "must lie in (0, 1]")
        if self.connectivity not in (4, 8):
            raise ConfigError("eval.connectivity", "must be 4 or 8")
        if not self.stages or any(stage not in EVAL_STAGES for stage in self.stages):
            raise ConfigError("eval.stages", f"must be a nonempty subset of {list(EVAL_STAGES)}")


def defaultPretrainConfig() -> TrainConfig:
    return TrainConfig(lr=1e-3, iterations=1000)


def defaultFinetuneConfig() -> TrainConfig:
    return TrainConfig(lr=1e-5, iterations=1500)


@dataclass
class PipelineConfig:
    """Root of the pipeline configuration document"""
    seed: int = 0
    outdir: Optional[str] = None
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelGeometry = field(default_factory=ModelGeometry)
    pretrain: TrainConfig = field(default_factory=defaultPretrainConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    finetune: TrainConfig = field(default_factory=defaultFinetuneConfig)
    quant: QuantConfig = field(default_factory=QuantConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> None:
        if self.seed < 0:
            raise ConfigError("seed", "must be >= 0")
        self.data.validate()
        self.model.validate()
        self.pretrain.validate("pretrain")
        self.train.validate("train")
        self.finetune.validate("finetune")
        self.quant.validate()
        self.policy.validate()
        self.eval.validate()

    def withSeed(self, seed: int) -> "PipelineConfig":
        """Copy with the seed propagated to every training section"""
        clone = copy.deepcopy(self)
        clone.seed = seed
        for section in (clone.pretrain, clone.train, clone.finetune):
            section.seed = seed
        return clone

    def configHash(self) -> str:
        """sha256 of the canonical JSON form, output directory excluded"""
        document = asdict(self)
        document.pop("outdir", None)
        canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
