import os

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from actions.SynthDataAction import (
    DefectSpec,
    SceneSpec,
    SynthDataAction,
    generateSplit,
    injectDefect,
    renderNormal,
)
from config.PipelineConfig import DataConfig
from database.operations.ArtifactStore import ArtifactStore
from framework.tensorframework.Random import generator
from parsers.ImageParser import encodePgm, encodePpm, loadImage, parseNetpbm
from parsers.ManifestParser import encodeManifest, parseManifest
from utils.errors import ArtifactIntegrityError, ParseError, SpecError


def _tinyData(**overrides) -> DataConfig:
    settings = dict(imagesize=32, ntrain=8, ntestnormal=3, ntestanomalous=6, defectminsize=2, defectmaxsize=5)
    settings.update(overrides)
    return DataConfig(**settings)


def test_same_seed_gives_identical_files():
    first = generateSplit(_tinyData(), seed=11)
    second = generateSplit(_tinyData(), seed=11, workers=3)
    assert first.files == second.files
    assert [e.subseed for e in first.entries] == [e.subseed for e in second.entries]
    other = generateSplit(_tinyData(), seed=12)
    assert other.files["train/train_0000.ppm"] != first.files["train/train_0000.ppm"]


def test_split_layout_and_labels():
    dataset = generateSplit(_tinyData(), seed=0)
    train = [e for e in dataset.entries if e.split == "train"]
    test = [e for e in dataset.entries if e.split == "test"]
    assert len(train) == 8 and not any(e.anomalous for e in train)
    assert [e.anomalous for e in test] == [False] * 3 + [True] * 6
    assert all(e.maskpath is not None for e in test if e.anomalous)
    assert all(e.maskpath is None for e in test if not e.anomalous)
    assert "variable_mask.pgm" in dataset.files


def test_no_anomalous_images_needs_no_defect_fit():
    dataset = generateSplit(_tinyData(ntestanomalous=0, defectmaxsize=40), seed=0)
    assert not any(e.anomalous for e in dataset.entries)
    assert not any(path.startswith("masks/") for path in dataset.files)


def test_variable_region_carries_the_variance():
    dataset = generateSplit(_tinyData(), seed=3)
    assert dataset.varianceratio >= 10.0


@pytest.mark.parametrize("seed", range(20))
def test_defects_stay_inside_the_invariant_disk(seed):
    scene = SceneSpec(imagesize=32)
    defects = DefectSpec(minsize=2, maxsize=6)
    defects.validate(scene)
    base = renderNormal(scene, generator(seed, "synth.test", 0))
    generated = injectDefect(base, scene, defects, generator(seed, "synth.defect", 0))
    assert generated.mask.any()
    assert not np.any(generated.mask & scene.variableMask())
    changed = np.any(generated.image != base, axis=0)
    assert not np.any(changed & ~generated.mask)


def test_invariant_disk_is_identical_up_to_noise():
    scene = SceneSpec(imagesize=32)
    images = [renderNormal(scene, generator(0, "synth.train", i)) for i in range(6)]
    disk = scene.objectMask()
    spread = np.ptp(np.stack([image[:, disk] for image in images]), axis=0)
    assert spread.max() < 0.1


def test_defects_too_large_for_the_disk_are_rejected():
    with pytest.raises(SpecError):
        DefectSpec(minsize=2, maxsize=14).validate(SceneSpec(imagesize=32))
    with pytest.raises(SpecError):
        generateSplit(_tinyData(defectmaxsize=14), seed=0)
    with pytest.raises(SpecError):
        DefectSpec(kinds=["crack"]).validate(SceneSpec(imagesize=64))


def test_generate_writes_a_verifiable_dataset(tmp_path):
    store = ArtifactStore(str(tmp_path))
    SynthDataAction(store).generate(_tinyData(), seed=0)
    store.dataset.verifyDataset()
    test = store.dataset.loadSamples("test")
    assert [s.anomalous for s in test] == [False] * 3 + [True] * 6
    assert all(s.mask.any() == s.anomalous for s in test)
    assert test[0].image.shape == (3, 32, 32)
    variableMask = store.dataset.loadVariableMask()
    assert_array_equal(variableMask, SceneSpec(imagesize=32).variableMask())

    with open(os.path.join(store.root, "data", "train", "train_0000.ppm"), "r+b") as handle:
        handle.seek(-1, os.SEEK_END)
        last = handle.read(1)
        handle.seek(-1, os.SEEK_END)
        handle.write(bytes([(last[0] + 1) % 256]))
    with pytest.raises(ArtifactIntegrityError):
        store.dataset.verifyDataset()


def test_image_codec_round_trip():
    pixels = np.random.default_rng(0).integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
    assert_array_equal(parseNetpbm(encodePpm(pixels)), pixels)
    gray = pixels[:, :, 0]
    assert_array_equal(parseNetpbm(encodePgm(gray))[:, :, 0], gray)


def test_header_comments_and_low_maxval():
    data = b"P5\n# comment\n2 1\n# another\n15\n" + bytes([0, 15])
    assert_array_equal(parseNetpbm(data)[:, :, 0], [[0, 255]])


def test_grayscale_is_replicated_to_three_channels(tmp_path):
    gray = np.array([[0, 128], [255, 64]], dtype=np.uint8)
    path = tmp_path / "gray.pgm"
    path.write_bytes(encodePgm(gray))
    image = loadImage(str(path)).data
    assert image.shape == (3, 2, 2)
    for channel in range(3):
        assert np.allclose(image[channel], gray / 255.0)


def test_malformed_images_report_offsets():
    full = encodePpm(np.zeros((4, 4, 3), dtype=np.uint8))
    with pytest.raises(ParseError) as excinfo:
        parseNetpbm(full[:-5])
    assert excinfo.value.offset == len(full) - 5
    with pytest.raises(ParseError) as excinfo:
        parseNetpbm(b"P3\n1 1\n255\n\x00")
    assert excinfo.value.offset == 0
    with pytest.raises(ParseError):
        parseNetpbm(b"P5\n2 x\n255\n\x00\x00")
    with pytest.raises(ParseError):
        parseNetpbm(b"P5\n1 1\n300\n\x00")


def test_manifest_round_trip_and_bad_label():
    dataset = generateSplit(_tinyData(ntrain=2, ntestnormal=1, ntestanomalous=1), seed=0)
    assert parseManifest(encodeManifest(dataset.entries)) == dataset.entries
    broken = encodeManifest(dataset.entries).replace(b"anomalous", b"weird")
    with pytest.raises(ParseError):
        parseManifest(broken)
