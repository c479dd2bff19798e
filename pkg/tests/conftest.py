import dataclasses

import numpy as np
import pytest

from config.PipelineConfig import (
    DataConfig,
    EvalConfig,
    ModelGeometry,
    PipelineConfig,
    QuantConfig,
    TrainConfig,
)
from framework.modelframework.NetworkFactory import buildBundle
from tests.helpers import TINY_CHANNELS, TINY_HIDDEN, TINY_SIZE


@pytest.fixture
def tinyConfig(tmp_path) -> PipelineConfig:
    config = PipelineConfig(
        seed=0,
        outdir=str(tmp_path / "run"),
        data=DataConfig(imagesize=TINY_SIZE, ntrain=6, ntestnormal=4, ntestanomalous=4,
                        defectminsize=2, defectmaxsize=4),
        model=ModelGeometry(teacherchannels=TINY_CHANNELS, hidden=list(TINY_HIDDEN), latent=3, aechannels=4),
        pretrain=TrainConfig(lr=1e-3, iterations=3),
        train=TrainConfig(lr=1e-3, iterations=3),
        finetune=TrainConfig(lr=1e-4, iterations=2),
        quant=QuantConfig(calibrationsize=3, sweeps=1),
        eval=EvalConfig(),
    )
    config.validate()
    return config


@pytest.fixture
def wideConfig(tinyConfig) -> PipelineConfig:
    """Tiny run at 32px, large enough for 6x6 feature maps"""
    config = dataclasses.replace(tinyConfig, data=dataclasses.replace(tinyConfig.data, imagesize=2 * TINY_SIZE))
    config.validate()
    return config


@pytest.fixture
def tinyBundle():
    bundle = buildBundle(teacherChannels=TINY_CHANNELS, hidden=TINY_HIDDEN, latent=3, aeChannels=4,
                         imageSize=TINY_SIZE, seed=0)
    bundle.teacher.freeze()
    return bundle


@pytest.fixture
def tinyImages() -> np.ndarray:
    rng = np.random.default_rng(7)
    return rng.uniform(0.0, 1.0, size=(4, 3, TINY_SIZE, TINY_SIZE))
