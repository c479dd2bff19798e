import numpy as np
import pytest
from numpy.testing import assert_allclose

from actions.QuantizeAction import QuantizeAction, pdnCaches
from config.PipelineConfig import QuantConfig
from database.operations.ArtifactStore import ArtifactStore
from framework.modelframework.Network import Network
from framework.modelframework.models.LayerModels import LayerKind, LayerSpec
from framework.quantframework.Quantizer import (
    activationScheme,
    blockReconstructionError,
    calibrateScale,
    fisherDiagonal,
    networkBlocks,
    quantizeBlock,
    quantizeDequantize,
    quantizeNetwork,
    weightScheme,
    weightStorageBits,
)
from framework.quantframework.models.QuantModels import (
    BlockCache,
    CalibrationCache,
    Granularity,
    QuantScheme,
    QuantTarget,
)
from framework.tensorframework.Tensor import Tensor
from utils.errors import ContractError, ParameterError


def _pointwiseNetwork(weight: np.ndarray) -> Network:
    cout, cin = weight.shape[:2]
    layers = [LayerSpec(LayerKind.CONV, cin, cout, kernel=1, name="conv1")]
    params = {"conv1.weight": Tensor(weight), "conv1.bias": Tensor(np.zeros(cout))}
    return Network("pointwise", layers, params, frozen=True)


def _unitCache(network: Network, inputs: np.ndarray) -> CalibrationCache:
    outputs = network.forward(Tensor(inputs)).data
    block = BlockCache(inputs=inputs, outputs=outputs, grads=np.ones_like(outputs))
    return CalibrationCache(networkname=network.name, blocks={"conv1": block}, images=inputs)


@pytest.mark.parametrize("bits", [2, 3, 4, 8])
def test_round_trip_error_within_half_step(bits):
    rng = np.random.default_rng(bits)
    weight = rng.normal(size=(6, 3, 3, 3))
    scale = np.abs(weight.reshape(6, -1)).max(axis=1) / (2 ** (bits - 1) - 1)
    scheme = weightScheme(weight, bits, scale)
    restored = quantizeDequantize(weight, scheme).data
    assert np.all(np.abs(restored - weight) <= scale[:, None, None, None] / 2 + 1e-12)


def test_on_grid_values_are_recovered_exactly():
    levels = np.array([-8, -3, 0, 1, 7], dtype=np.float64)
    scheme = QuantScheme(4, np.array([0.25]), np.array([0.0]))
    assert_allclose(quantizeDequantize(levels * 0.25, scheme).data, levels * 0.25, rtol=0, atol=0)


def test_values_beyond_range_are_clamped():
    scheme = QuantScheme(2, np.array([1.0]), np.array([0.0]))
    assert_allclose(quantizeDequantize(np.array([-5.0, 5.0]), scheme).data, [-2.0, 1.0])


def test_scheme_validation():
    with pytest.raises(ParameterError):
        QuantScheme(5, np.array([1.0]), np.array([0.0]))
    with pytest.raises(ParameterError):
        QuantScheme(4, np.array([0.0]), np.array([0.0]))
    with pytest.raises(ParameterError):
        QuantScheme(4, np.array([1.0]), np.array([2.0]), target=QuantTarget.WEIGHTS)


def test_calibrate_scale_edge_cases():
    assert_allclose(calibrateScale(np.zeros((2, 3)), 4, Granularity.PER_OUTPUT_CHANNEL), [1.0, 1.0])
    with pytest.raises(ContractError):
        calibrateScale(np.zeros((0,)), 4)
    with pytest.raises(ParameterError):
        calibrateScale(np.ones(3), 6)


def test_calibrated_scale_beats_max_scaling():
    values = np.random.default_rng(0).standard_t(3, size=500)
    bits = 3
    maxScale = np.abs(values).max() / (2 ** (bits - 1) - 1)
    chosen = calibrateScale(values, bits)

    def mse(scale):
        scheme = QuantScheme(bits, np.array([scale]), np.array([0.0]))
        return float(((quantizeDequantize(values, scheme).data - values) ** 2).mean())

    assert mse(chosen[0]) <= mse(maxScale)


def test_activation_scheme_covers_zero_and_range():
    scheme = activationScheme(np.array([0.5, 2.0, 3.0]), 8)
    assert scheme.target == QuantTarget.ACTIVATIONS
    assert scheme.zeropoint[0] == 0
    assert scheme.scale[0] == pytest.approx(3.0 / 255)
    constant = activationScheme(np.zeros(4), 4)
    assert constant.scale[0] == 1.0


def test_fisher_diagonal_is_mean_squared_gradient():
    grads = np.stack([np.full((1, 2, 2), 1.0), np.full((1, 2, 2), 3.0)])
    network = _pointwiseNetwork(np.ones((1, 1, 1, 1)))
    cache = CalibrationCache("pointwise", {"conv1": BlockCache(np.zeros((2, 1, 2, 2)), np.zeros((2, 1, 2, 2)), grads)})
    assert_allclose(fisherDiagonal(cache, networkBlocks(network)[0]), np.full((1, 2, 2), 5.0))


def test_single_weight_per_channel_is_reconstructed_exactly():
    rng = np.random.default_rng(1)
    network = _pointwiseNetwork(rng.normal(size=(3, 1, 1, 1)))
    cache = _unitCache(network, rng.normal(size=(4, 1, 5, 5)))
    for bits in (2, 3, 4, 8):
        result = quantizeBlock(network, networkBlocks(network)[0], cache, {"conv1": bits}, sweeps=1)
        assert result.errorafter == pytest.approx(0.0, abs=1e-20)


def test_block_error_shrinks_with_bits_and_never_grows_during_search():
    rng = np.random.default_rng(2)
    network = _pointwiseNetwork(rng.normal(size=(4, 6, 1, 1)))
    cache = _unitCache(network, rng.normal(size=(8, 6, 4, 4)))
    block = networkBlocks(network)[0]
    errors = []
    for bits in (2, 4, 8):
        result = quantizeBlock(network, block, cache, {"conv1": bits}, sweeps=2)
        assert result.errorafter <= result.errorbefore
        schemeError = blockReconstructionError(network, block, cache, result.schemes)
        assert schemeError == pytest.approx(result.errorafter)
        errors.append(result.errorafter)
    assert errors[0] > errors[1] > errors[2]


def test_block_error_is_zero_without_quantization():
    rng = np.random.default_rng(3)
    network = _pointwiseNetwork(rng.normal(size=(2, 2, 1, 1)))
    cache = _unitCache(network, rng.normal(size=(3, 2, 3, 3)))
    assert blockReconstructionError(network, networkBlocks(network)[0], cache, {}) == pytest.approx(0.0)


def test_quantize_network_forces_first_and_last_layers(tinyBundle, tinyImages):
    teacherCache, _ = pdnCaches(tinyBundle, tinyImages)
    quantized, records = quantizeNetwork(tinyBundle.teacher, teacherCache, [2, 3, 4, 2], sweeps=1)
    assert [r.bits for r in records] == [8, 3, 4, 8]
    assert [s.bits for s in quantized.weightschemes.values()] == [8, 3, 4, 8]
    assert set(quantized.actschemes) == set(tinyBundle.teacher.convNames)
    assert tinyBundle.teacher.weightschemes == {}
    for name, scheme in quantized.weightschemes.items():
        weight = quantized.params[f"{name}.weight"].data
        assert_allclose(quantizeDequantize(weight, scheme).data, weight, atol=1e-12)


def test_quantize_network_rejects_bad_assignments(tinyBundle, tinyImages):
    teacherCache, _ = pdnCaches(tinyBundle, tinyImages)
    with pytest.raises(ContractError):
        quantizeNetwork(tinyBundle.teacher, teacherCache, [8, 8, 8])
    with pytest.raises(ParameterError):
        quantizeNetwork(tinyBundle.teacher, teacherCache, [8, 5, 4, 8])


def test_calibration_gradients_reach_both_student_heads(tinyBundle, tinyImages):
    _, studentCache = pdnCaches(tinyBundle, tinyImages)
    lastGrads = studentCache.blocks["conv4"].grads
    assert lastGrads.shape[1] == 2 * tinyBundle.teacherChannels
    channels = tinyBundle.teacherChannels
    assert np.any(lastGrads[:, :channels] != 0)
    assert np.any(lastGrads[:, channels:] != 0)


def test_quantize_bundle_reports_and_storage(tmp_path, tinyBundle, tinyImages):
    store = ArtifactStore(str(tmp_path))
    quantized, records = QuantizeAction(store).quantizeBundle(
        tinyBundle, tinyImages, [8, 4, 4, 8], QuantConfig(calibrationsize=4, sweeps=1),
        checkpointName="quantized.ckpt", metadata={"seed": 0},
    )
    assert quantized.stage == "quantized"
    assert quantized.teacher.frozen
    assert set(quantized.autoencoder.actschemes) == {"enc1", "enc2", "enc3", "latent"}
    assert all(s.bits == 8 for s in quantized.autoencoder.weightschemes.values())
    assert len(records) == 8 + len(tinyBundle.autoencoder.convNames)
    assert weightStorageBits(quantized.teacher) < weightStorageBits(tinyBundle.teacher)
    frame = store.reports.readFrame("quant.csv")
    assert list(frame["layer"])[:4] == ["teacher.conv1", "teacher.conv2", "teacher.conv3", "teacher.conv4"]
    assert store.checkpoints.readCheckpoint("quantized.ckpt").metadata["bits"] == [8, 4, 4, 8]


def test_fake_quantized_forward_differs_from_full_precision(tinyBundle, tinyImages):
    teacherCache, _ = pdnCaches(tinyBundle, tinyImages)
    quantized, _ = quantizeNetwork(tinyBundle.teacher, teacherCache, [8, 2, 2, 8], sweeps=1)
    full = tinyBundle.teacher.forward(Tensor(tinyImages)).data
    approx = quantized.forward(Tensor(tinyImages)).data
    assert approx.shape == full.shape
    assert not np.allclose(approx, full)


def _gridSearchScale(values: np.ndarray, bits: int) -> float:
    """Exhaustive search over 0.21..1.20 x max|x| / qmax by direct round-trip MSE"""
    qmax = 2 ** (bits - 1) - 1
    best, bestError = None, np.inf
    for multiplier in np.arange(21, 121) / 100.0:
        scale = multiplier * np.abs(values).max() / qmax
        scheme = QuantScheme(bits, np.array([scale]), np.array([0.0]))
        error = float(((quantizeDequantize(values, scheme).data - values) ** 2).mean())
        if error < bestError:
            best, bestError = scale, error
    return best


def _mse(values: np.ndarray, bits: int, scale: float) -> float:
    scheme = QuantScheme(bits, np.array([scale]), np.array([0.0]))
    return float(((quantizeDequantize(values, scheme).data - values) ** 2).mean())


@pytest.mark.parametrize("bits", [2, 3, 4, 8])
def test_calibrated_scale_matches_exhaustive_search(bits):
    rng = np.random.default_rng(100 + bits)
    values = rng.normal(size=(3, 40))
    perChannel = calibrateScale(values, bits, Granularity.PER_OUTPUT_CHANNEL)
    for row, chosen in zip(values, perChannel):
        expected = _gridSearchScale(row, bits)
        assert _mse(row, bits, chosen) == pytest.approx(_mse(row, bits, expected), rel=1e-12)
    whole = calibrateScale(values, bits)[0]
    assert _mse(values, bits, whole) == pytest.approx(_mse(values, bits, _gridSearchScale(values, bits)), rel=1e-12)


def test_two_bit_round_trip_on_a_half_step_grid():
    scheme = QuantScheme(2, np.array([0.5]), np.array([0.0]))
    restored = quantizeDequantize(np.array([-1.2, -0.4, 0.1, 0.6, 3.0]), scheme).data
    assert_allclose(restored, [-1.0, -0.5, 0.0, 0.5, 0.5], rtol=0, atol=0)


@pytest.mark.parametrize("bits", [2, 3, 4, 8])
def test_quantize_dequantize_is_idempotent(bits):
    values = np.random.default_rng(bits + 40).normal(size=(4, 2, 3, 3))
    scheme = weightScheme(values, bits)
    once = quantizeDequantize(values, scheme).data
    assert_allclose(quantizeDequantize(once, scheme).data, once, rtol=0, atol=0)


def test_fisher_diagonal_ignores_calibration_order():
    rng = np.random.default_rng(5)
    grads = rng.normal(size=(6, 2, 3, 3))
    network = _pointwiseNetwork(np.ones((2, 2, 1, 1)))
    block = networkBlocks(network)[0]
    zeros = np.zeros((6, 2, 3, 3))
    order = rng.permutation(6)
    forward = fisherDiagonal(CalibrationCache("pointwise", {"conv1": BlockCache(zeros, zeros, grads)}), block)
    shuffled = fisherDiagonal(CalibrationCache("pointwise", {"conv1": BlockCache(zeros, zeros, grads[order])}), block)
    assert_allclose(shuffled, forward, rtol=1e-12)


def test_block_error_matches_a_direct_weighted_mse():
    rng = np.random.default_rng(6)
    weight = rng.normal(size=(3, 5, 1, 1))
    inputs = rng.normal(size=(4, 5, 3, 3))
    network = _pointwiseNetwork(weight)
    outputs = np.einsum("oc,nchw->nohw", weight[:, :, 0, 0], inputs)
    grads = rng.uniform(0.5, 2.0, size=outputs.shape)
    cache = CalibrationCache("pointwise", {"conv1": BlockCache(inputs, outputs, grads)}, images=inputs)
    block = networkBlocks(network)[0]

    errors = []
    for bits in (2, 4, 8):
        scheme = weightScheme(weight, bits)
        snapped = quantizeDequantize(weight, scheme).data
        delta = np.einsum("oc,nchw->nohw", snapped[:, :, 0, 0], inputs) - outputs
        expected = float((grads ** 2 * delta ** 2).sum(axis=(1, 2, 3)).mean())
        actual = blockReconstructionError(network, block, cache, {"conv1": scheme})
        assert actual == pytest.approx(expected, rel=1e-9)
        errors.append(actual)
    assert errors == sorted(errors, reverse=True)


def test_reconstructed_error_falls_with_every_extra_bit():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        network = _pointwiseNetwork(rng.normal(size=(4, 8, 1, 1)))
        cache = _unitCache(network, rng.normal(size=(6, 8, 3, 3)))
        block = networkBlocks(network)[0]
        errors = [quantizeBlock(network, block, cache, {"conv1": bits}, sweeps=1).errorafter for bits in (2, 3, 4, 8)]
        assert errors[0] > errors[1] > errors[2] > errors[3], f"seed {seed}: {errors}"


def test_eight_bit_error_is_small_against_the_output_energy():
    rng = np.random.default_rng(21)
    network = _pointwiseNetwork(rng.normal(size=(4, 8, 1, 1)))
    cache = _unitCache(network, rng.normal(size=(6, 8, 3, 3)))
    energy = float((cache.blocks["conv1"].outputs ** 2).sum(axis=(1, 2, 3)).mean())
    result = quantizeBlock(network, networkBlocks(network)[0], cache, {"conv1": 8}, sweeps=1)
    assert result.errorafter <= 1e-3 * energy
