import numpy as np
import pytest
from numpy.testing import assert_array_equal

from actions.QuantizeAction import QuantizeAction
from config.PipelineConfig import QuantConfig
from database.checkpoint.CheckpointHandler import (
    MAGIC,
    Checkpoint,
    bundleCheckpoint,
    decodeCheckpoint,
    encodeCheckpoint,
    restoreBundle,
)
from database.operations.ArtifactStore import ArtifactStore
from framework.modelframework.NetworkFactory import buildBundle
from framework.quantframework.models.QuantModels import Granularity, QuantTarget
from tests.helpers import TINY_CHANNELS, TINY_HIDDEN, TINY_SIZE
from utils.errors import ParseError, PipelineOrderError


def _freshBundle(seed: int):
    return buildBundle(teacherChannels=TINY_CHANNELS, hidden=TINY_HIDDEN, latent=3, aeChannels=4,
                       imageSize=TINY_SIZE, seed=seed)


def test_codec_preserves_tensors_and_metadata():
    checkpoint = Checkpoint(
        tensors={"b/scalar": np.array(2.5), "a/matrix": np.arange(6, dtype=float).reshape(2, 3)},
        metadata={"stage": "stage1", "seed": 4, "bits": [8, 4, 4, 8]},
    )
    decoded = decodeCheckpoint(encodeCheckpoint(checkpoint))
    assert decoded.stage == "stage1" and decoded.seed == 4
    assert decoded.metadata["bits"] == [8, 4, 4, 8]
    assert_array_equal(decoded.tensors["a/matrix"], checkpoint.tensors["a/matrix"])
    assert decoded.tensors["b/scalar"].shape == ()
    assert encodeCheckpoint(decoded) == encodeCheckpoint(checkpoint)


def test_bad_magic_and_truncation_report_offsets():
    data = encodeCheckpoint(Checkpoint({"w": np.ones((2, 2))}, {"stage": "pretrained"}))
    with pytest.raises(ParseError) as excinfo:
        decodeCheckpoint(b"NOTACKPT" + data[len(MAGIC):])
    assert excinfo.value.offset == 0
    with pytest.raises(ParseError) as excinfo:
        decodeCheckpoint(data[:20])
    assert 0 < excinfo.value.offset <= 20
    with pytest.raises(ParseError):
        decodeCheckpoint(data[:-1])


def test_bundle_round_trip_through_the_store(tmp_path, tinyBundle):
    store = ArtifactStore(str(tmp_path))
    tinyBundle.stage = "stage1"
    store.checkpoints.writeCheckpoint("stage1.ckpt", bundleCheckpoint(tinyBundle, {"stage": "stage1", "seed": 0}))
    assert store.checkpoints.hasCheckpoint("stage1.ckpt")

    restored = restoreBundle(store.checkpoints.readCheckpoint("stage1.ckpt"), _freshBundle(seed=99))
    assert restored.stage == "stage1"
    assert restored.teacher.frozen
    for name, network in tinyBundle.networks().items():
        for key, value in network.stateDict().items():
            assert_array_equal(restored.networks()[name].stateDict()[key], value)


def test_restore_brings_back_quantization_schemes(tmp_path, tinyBundle, tinyImages):
    store = ArtifactStore(str(tmp_path))
    quantized, _ = QuantizeAction(store).quantizeBundle(
        tinyBundle, tinyImages, [8, 2, 3, 8], QuantConfig(calibrationsize=2, sweeps=1),
        checkpointName="quantized.ckpt", metadata={"seed": 0},
    )
    restored = restoreBundle(store.checkpoints.readCheckpoint("quantized.ckpt"), _freshBundle(seed=5))
    assert restored.stage == "quantized"
    for name, network in quantized.networks().items():
        other = restored.networks()[name]
        assert set(other.weightschemes) == set(network.weightschemes)
        assert set(other.actschemes) == set(network.actschemes)
        for conv, scheme in other.weightschemes.items():
            assert scheme.bits == network.weightschemes[conv].bits
            assert scheme.granularity == Granularity.PER_OUTPUT_CHANNEL
            assert scheme.target == QuantTarget.WEIGHTS
            assert_array_equal(scheme.scale, network.weightschemes[conv].scale)
        for scheme in other.actschemes.values():
            assert scheme.granularity == Granularity.PER_TENSOR
    assert [restored.teacher.weightschemes[c].bits for c in restored.teacher.convNames] == [8, 2, 3, 8]


def test_missing_checkpoint_is_an_order_error(tmp_path):
    store = ArtifactStore(str(tmp_path))
    assert not store.checkpoints.hasCheckpoint("stage1.ckpt")
    with pytest.raises(PipelineOrderError) as excinfo:
        store.checkpoints.readCheckpoint("stage1.ckpt", requiredBy="hqs")
    assert "stage1.ckpt" in excinfo.value.missingArtifact
