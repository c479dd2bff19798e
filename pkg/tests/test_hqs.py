import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from actions.HQSAction import (
    HQSAction,
    assignBits,
    bitsFromReport,
    hqsFrame,
    layerScores,
    normalizeScores,
)
from database.operations.ArtifactStore import ArtifactStore
from framework.modelframework.models.LayerModels import LayerTaps
from framework.quantframework.models.HQSModels import BitPolicy, HqsResult, LayerScore
from framework.tensorframework.Tensor import Tensor
from utils.errors import ContractError, ParameterError, PipelineOrderError


def _taps(names, arrays) -> LayerTaps:
    return LayerTaps(names=list(names), taps=[Tensor(a) for a in arrays], inputs=[None] * len(arrays))


def _scored(values):
    return [LayerScore(layer=f"conv{i}", raw=v, normalized=v) for i, v in enumerate(values, start=1)]


def test_constant_offset_gives_squared_difference():
    teacher = _taps(["conv1"], [np.zeros((3, 2, 4, 4))])
    student = _taps(["conv1"], [np.full((3, 2, 4, 4), 2.0)])
    assert layerScores(teacher, student)[0].raw == pytest.approx(4.0)


def test_last_layer_compares_the_teacher_head_only():
    teacherLast = np.ones((2, 3, 2, 2))
    studentLast = np.concatenate([np.ones((2, 3, 2, 2)), np.full((2, 3, 2, 2), 9.0)], axis=1)
    scores = layerScores(
        _taps(["conv1", "conv2"], [np.zeros((2, 4, 3, 3)), teacherLast]),
        _taps(["conv1", "conv2"], [np.ones((2, 4, 3, 3)), studentLast]),
    )
    assert [s.raw for s in scores] == pytest.approx([1.0, 0.0])


def test_misaligned_taps_are_rejected():
    with pytest.raises(ContractError):
        layerScores(_taps(["conv1"], [np.zeros((1, 2, 3, 3))]), _taps(["conv1"], [np.zeros((1, 3, 3, 3))]))
    with pytest.raises(ContractError):
        layerScores(_taps(["a", "b"], [np.zeros(1), np.zeros(1)]), _taps(["a"], [np.zeros(1)]))


def test_min_max_normalization():
    scores = normalizeScores([LayerScore(f"conv{i}", raw) for i, raw in enumerate([0.0, 2.0, 4.0, 8.0])])
    assert [s.normalized for s in scores] == pytest.approx([0.0, 0.25, 0.5, 1.0])


def test_equal_scores_normalize_to_half():
    scores = normalizeScores([LayerScore(f"conv{i}", 3.0) for i in range(4)])
    assert all(s.normalized == 0.5 for s in scores)


def test_bit_assignment_with_forced_ends():
    policy = BitPolicy(forcedlayers={1, 4})
    assert assignBits(_scored([0.1, 0.3, 0.6, 0.9]), policy) == [8, 3, 4, 8]
    assert assignBits(_scored([0.5, 0.5, 0.5, 0.5]), policy) == [8, 4, 4, 8]


@pytest.mark.parametrize("score,bits", [(0.0, 2), (0.2499, 2), (0.25, 3), (0.5, 4), (0.75, 8), (1.0, 8)])
def test_cut_points_go_to_the_higher_bucket(score, bits):
    assert assignBits(_scored([score]), BitPolicy()) == [bits]


def test_bit_policy_validation():
    with pytest.raises(ParameterError):
        BitPolicy(thresholds=[0.5], bits=[2, 4, 8])
    with pytest.raises(ParameterError):
        BitPolicy(thresholds=[0.5], bits=[8, 2])
    with pytest.raises(ParameterError):
        BitPolicy(thresholds=[0.5], bits=[2, 6])


def test_unnormalized_scores_are_rejected():
    with pytest.raises(ContractError):
        assignBits([LayerScore("conv1", 1.0)], BitPolicy())


def test_pipeline_needs_a_trained_bundle(tinyBundle, tinyImages):
    with pytest.raises(PipelineOrderError):
        HQSAction().hqsPipeline(tinyBundle, tinyImages)


def test_pipeline_writes_report(tmp_path, tinyBundle, tinyImages):
    tinyBundle.stage = "stage1"
    store = ArtifactStore(str(tmp_path))
    result = HQSAction(store).hqsPipeline(tinyBundle, tinyImages)
    assert [s.layer for s in result.scores] == tinyBundle.teacher.convNames
    assert result.bits[0] == 8 and result.bits[-1] == 8
    assert result.forced == [True, False, False, True]
    assert result.autoencoderbits == 8
    normalized = [s.normalized for s in result.scores]
    assert min(normalized) >= 0.0 and max(normalized) <= 1.0

    frame = store.reports.readFrame("hqs.csv")
    assert bitsFromReport(frame) == result.bits
    assert_allclose(frame["raw_score"], [s.raw for s in result.scores], rtol=1e-15)


def test_report_frame_columns_and_missing_bits():
    result = HqsResult(scores=_scored([0.0, 1.0]), bits=[8, 8], forced=[True, True], autoencoderbits=8)
    assert list(hqsFrame(result).columns) == ["layer", "raw_score", "normalized", "bits", "forced"]
    with pytest.raises(ContractError):
        bitsFromReport(pd.DataFrame({"layer": ["conv1"]}))


def _copiedStudent(bundle):
    """Bundle whose student is an exact copy of the teacher"""
    bundle.student = bundle.teacher.copy(name="student")
    bundle.student.unfreeze()
    bundle.stage = "stage1"
    return bundle


def test_identical_student_gives_zero_scores_and_the_default_bits(tinyBundle, tinyImages):
    result = HQSAction().hqsPipeline(_copiedStudent(tinyBundle), tinyImages)
    assert [s.raw for s in result.scores] == [0.0, 0.0, 0.0, 0.0]
    assert [s.normalized for s in result.scores] == [0.5] * 4
    assert result.bits == [8, 4, 4, 8]


def test_a_perturbed_layer_gets_the_widest_free_bits(tinyBundle, tinyImages):
    bundle = _copiedStudent(tinyBundle)
    for network in (bundle.teacher, bundle.student):
        state = network.stateDict()
        state["conv4.weight"] = state["conv4.weight"] * 1e-3
        network.loadStateDict(state)
    state = bundle.student.stateDict()
    state["conv3.bias"] = state["conv3.bias"] + 2.0
    bundle.student.loadStateDict(state)

    result = HQSAction().hqsPipeline(bundle, tinyImages)
    normalized = [s.normalized for s in result.scores]
    assert normalized[0] == 0.0 and normalized[1] == 0.0
    assert normalized[2] == pytest.approx(1.0)
    assert 0.0 < normalized[3] < 0.25
    assert result.bits == [8, 2, 8, 8]


def test_higher_scores_never_get_fewer_bits():
    rng = np.random.default_rng(11)
    for _ in range(20):
        values = sorted(rng.uniform(0.0, 1.0, size=6))
        bits = assignBits(_scored(values), BitPolicy())
        assert bits == sorted(bits)


def test_scaling_raw_scores_keeps_normalized_scores_and_bits():
    rng = np.random.default_rng(12)
    raws = rng.uniform(0.0, 5.0, size=5)
    base = normalizeScores([LayerScore(f"conv{i}", float(r)) for i, r in enumerate(raws)])
    for factor in (1e-3, 0.5, 7.0, 1e4):
        scaled = normalizeScores([LayerScore(f"conv{i}", float(r * factor)) for i, r in enumerate(raws)])
        assert [s.normalized for s in scaled] == pytest.approx([s.normalized for s in base], abs=1e-12)
        assert assignBits(scaled, BitPolicy()) == assignBits(base, BitPolicy())


def test_calibration_order_does_not_change_scores(tinyBundle, tinyImages):
    tinyBundle.stage = "stage1"
    forward = HQSAction().hqsPipeline(tinyBundle, tinyImages)
    shuffled = HQSAction().hqsPipeline(tinyBundle, tinyImages[[2, 0, 3, 1]])
    assert [s.raw for s in shuffled.scores] == pytest.approx([s.raw for s in forward.scores], rel=1e-12)
    assert shuffled.bits == forward.bits
