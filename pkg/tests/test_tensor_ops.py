import numpy as np
import pytest
from numpy.testing import assert_allclose

from framework.tensorframework import Ops
from framework.tensorframework.AdamOptimizer import AdamState, adamStep
from framework.tensorframework.Random import generator, subSeed
from framework.tensorframework.Tensor import Tape, Tensor, backward
from tests.helpers import analyticGradient, numericGradient, relativeError
from utils.errors import ContractError, DimensionError, NonFiniteError, ParameterError


def _weighted(out: Tensor, weights: np.ndarray) -> Tensor:
    return Ops.sumAll(Ops.square(Ops.sub(out, Tensor(weights))))


def _checkGradient(build, array: np.ndarray) -> None:
    analytic = analyticGradient(build, array)
    numeric = numericGradient(lambda a: build(Tensor(a)).item(), array.copy())
    assert relativeError(analytic, numeric) <= 1e-4


@pytest.mark.parametrize("seed", range(6))
def test_conv2d_input_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, 2))
    kernel = int(rng.integers(1, 4))
    x = rng.normal(size=(2, int(rng.integers(1, 4)), 6, 5))
    weight = Tensor(rng.normal(size=(3, x.shape[1], kernel, kernel)))
    bias = Tensor(rng.normal(size=3))
    target = Ops.conv2d(Tensor(x), weight, bias, stride, padding).data * 0.5
    _checkGradient(lambda t: _weighted(Ops.conv2d(t, weight, bias, stride, padding), target), x)


@pytest.mark.parametrize("seed", range(4))
def test_conv2d_weight_and_bias_gradients(seed):
    rng = np.random.default_rng(100 + seed)
    x = Tensor(rng.normal(size=(2, 2, 5, 5)))
    weightData = rng.normal(size=(3, 2, 3, 3))
    biasData = rng.normal(size=3)
    target = rng.normal(size=(2, 3, 3, 3))

    def lossFor(weight, bias):
        return _weighted(Ops.conv2d(x, weight, bias, stride=2, padding=1), target)

    weightGrad = analyticGradient(lambda w: lossFor(w, Tensor(biasData)), weightData)
    numeric = numericGradient(lambda w: lossFor(Tensor(w), Tensor(biasData)).item(), weightData.copy())
    assert relativeError(weightGrad, numeric) <= 1e-4

    biasGrad = analyticGradient(lambda b: lossFor(Tensor(weightData), b), biasData)
    numeric = numericGradient(lambda b: lossFor(Tensor(weightData), Tensor(b)).item(), biasData.copy())
    assert relativeError(biasGrad, numeric) <= 1e-4


@pytest.mark.parametrize("k,stride", [(2, 2), (3, 1), (2, 1)])
def test_avgpool_gradient(k, stride):
    rng = np.random.default_rng(k * 10 + stride)
    x = rng.normal(size=(1, 2, 6, 6))
    target = rng.normal(size=Ops.avgPool2d(Tensor(x), k, stride).shape)
    _checkGradient(lambda t: _weighted(Ops.avgPool2d(t, k, stride), target), x)


def test_relu_gradient_away_from_zero():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3, 4, 4))
    x[np.abs(x) < 1e-3] = 0.5
    _checkGradient(lambda t: _weighted(Ops.relu(t), np.ones_like(x)), x)


@pytest.mark.parametrize("outSize", [1, 3, 7, 9])
def test_bilinear_resize_gradient(outSize):
    rng = np.random.default_rng(outSize)
    x = rng.normal(size=(1, 2, 4, 5))
    target = rng.normal(size=(1, 2, outSize, outSize))
    _checkGradient(lambda t: _weighted(Ops.bilinearResize(t, outSize, outSize), target), x)


def test_mse_and_slice_and_scale_gradients():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(2, 4, 3, 3))
    other = Tensor(rng.normal(size=(2, 2, 3, 3)))
    _checkGradient(lambda t: Ops.scale(Ops.mseMean(Ops.sliceChannels(t, 1, 3), other), 3.0), x)


def test_topk_mean_gradient_with_distinct_values():
    rng = np.random.default_rng(5)
    x = rng.permutation(60).astype(np.float64).reshape(3, 4, 5) / 7.0
    _checkGradient(lambda t: Ops.topkMean(Ops.square(t), 9), x)


def test_fake_quantize_straight_through_inside_range():
    x = Tensor(np.array([0.1, 0.49, 2.0, -3.0]), requiresgrad=True)
    with Tape() as tape:
        out = Ops.fakeQuantize(x, np.array(0.5), np.array(0.0), -2, 1)
        loss = Ops.sumAll(out)
    backward(loss, tape)
    assert_allclose(out.data, [0.0, 0.5, 0.5, -1.0])
    assert_allclose(x.grad, [1.0, 1.0, 0.0, 0.0])


def test_conv2d_one_by_one_identity_example():
    x = Tensor(np.arange(4.0).reshape(1, 1, 2, 2))
    out = Ops.conv2d(x, Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
    assert_allclose(out.data, x.data)


def test_conv2d_rejects_channel_mismatch_naming_axis():
    with pytest.raises(DimensionError) as excinfo:
        Ops.conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 2, 3, 3))), None)
    assert excinfo.value.axis == "channel"


def test_conv2d_rejects_bad_stride():
    with pytest.raises(ParameterError):
        Ops.conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 3, 3))), None, stride=0)


def test_avgpool_example_and_constant_resize():
    pooled = Ops.avgPool2d(Tensor(np.arange(16.0).reshape(1, 1, 4, 4)), 2, 2)
    assert_allclose(pooled.data[0, 0], [[2.5, 4.5], [10.5, 12.5]])
    resized = Ops.bilinearResize(Tensor(np.full((1, 1, 3, 3), 4.2)), 8, 8)
    assert_allclose(resized.data, 4.2)


def test_pair_loss_example():
    loss = Ops.mseMean(Tensor([1.0, 3.0]), Tensor([0.0, 1.0]))
    assert loss.item() == pytest.approx(2.5)


def test_backward_requires_scalar_loss():
    x = Tensor(np.ones(3), requiresgrad=True)
    with Tape() as tape:
        out = Ops.scale(x, 2.0)
    with pytest.raises(ContractError):
        backward(out, tape)


def test_no_recording_outside_tape_or_without_grad():
    x = Tensor(np.ones(3), requiresgrad=True)
    Ops.scale(x, 2.0)
    with Tape() as tape:
        Ops.scale(Tensor(np.ones(3)), 2.0)
    assert len(tape) == 0


def test_gradients_accumulate_across_backward_calls():
    x = Tensor(np.array([1.0, 2.0]), requiresgrad=True)
    for _ in range(2):
        with Tape() as tape:
            loss = Ops.sumAll(Ops.square(x))
        backward(loss, tape)
    assert_allclose(x.grad, [4.0, 8.0])


def test_non_finite_values_are_rejected():
    with pytest.raises(NonFiniteError):
        Tensor(np.array([1.0, np.nan]))
    with pytest.raises(NonFiniteError):
        Ops.scale(Tensor(np.array([1e308])), 1e10)


def test_adam_first_step_moves_by_learning_rate():
    param = Tensor(np.array([1.0, -2.0]), requiresgrad=True)
    param.grad = np.array([0.5, -3.0])
    state = adamStep({"p": param}, AdamState(lr=0.1))
    assert state.step == 1
    assert_allclose(param.data, [0.9, -1.9], atol=1e-6)
    assert_allclose(param.grad, 0.0)


def test_adam_requires_gradients_and_positive_lr():
    with pytest.raises(ContractError):
        adamStep({"p": Tensor(np.ones(2), requiresgrad=True)}, AdamState(lr=0.1))
    with pytest.raises(ParameterError):
        AdamState(lr=0.0)


def test_random_streams_are_deterministic_and_distinct():
    a = generator(3, "init.teacher").normal(size=5)
    b = generator(3, "init.teacher").normal(size=5)
    c = generator(3, "init.student").normal(size=5)
    assert_allclose(a, b)
    assert not np.allclose(a, c)
    assert subSeed(3, "synth.train", 1) == subSeed(3, "synth.train", 1)
    assert subSeed(3, "synth.train", 1) != subSeed(3, "synth.train", 2)


@pytest.mark.parametrize("seed", range(3))
def test_conv2d_is_linear_in_its_input(seed):
    rng = np.random.default_rng(200 + seed)
    weight = Tensor(rng.normal(size=(3, 2, 3, 3)))
    first, second = rng.normal(size=(2, 2, 2, 6, 6))
    a, b = rng.normal(size=2)
    combined = Ops.conv2d(Tensor(a * first + b * second), weight, None, 1, 1).data
    separate = a * Ops.conv2d(Tensor(first), weight, None, 1, 1).data + b * Ops.conv2d(Tensor(second), weight, None, 1, 1).data
    assert_allclose(combined, separate, rtol=1e-10, atol=1e-12)


def test_gradient_of_a_sum_is_the_sum_of_gradients():
    rng = np.random.default_rng(9)
    data = rng.normal(size=(2, 3))
    targetA, targetB = rng.normal(size=(2, 2, 3))

    def gradientOf(*targets):
        x = Tensor(data.copy(), requiresgrad=True)
        with Tape() as tape:
            losses = [_weighted(x, target) for target in targets]
            total = losses[0]
            for loss in losses[1:]:
                total = Ops.add(total, loss)
        backward(total, tape)
        return x.grad

    assert_allclose(gradientOf(targetA, targetB), gradientOf(targetA) + gradientOf(targetB), rtol=1e-12)


def test_bilinear_upsampling_keeps_corners_and_averages_the_centre():
    grid = Tensor(np.array([[[[0.0, 1.0], [2.0, 3.0]]]]))
    out = Ops.bilinearResize(grid, 3, 3).data[0, 0]
    assert out[1, 1] == pytest.approx(1.5)
    assert [out[0, 0], out[0, 2], out[2, 0], out[2, 2]] == pytest.approx([0.0, 1.0, 2.0, 3.0])
    assert out[0, 1] == pytest.approx(0.5) and out[1, 0] == pytest.approx(1.0)
