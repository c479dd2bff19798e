"""
Uniform affine fake-quantization and Fisher-weighted block reconstruction
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config.Config import get_config
from config.Constants import (
    BIT_CHOICES,
    FORCED_BITS,
    RECONSTRUCTION_SWEEPS,
    SCALE_GRID_DENOMINATOR,
    SCALE_GRID_START,
    SCALE_GRID_STOP,
)
from framework.modelframework.Network import Network
from framework.modelframework.models.LayerModels import LayerKind
from framework.quantframework.models.QuantModels import (
    BlockResult,
    CalibrationCache,
    Granularity,
    LayerQuantRecord,
    QuantBlock,
    QuantScheme,
    QuantTarget,
    integerRange,
)
from framework.tensorframework import Ops
from framework.tensorframework.Tensor import Tensor
from logs.logger import get_logger
from utils.errors import ContractError, ParameterError

logger = get_logger(__name__)

ArrayOrTensor = Union[np.ndarray, Tensor]


def _data(x: ArrayOrTensor) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def scaleMultipliers() -> np.ndarray:
    """Candidate multipliers of max|x| / qmax: 0.21, 0.22, ..., 1.20"""
    return np.arange(SCALE_GRID_START, SCALE_GRID_STOP) / SCALE_GRID_DENOMINATOR


def quantizeDequantize(x: ArrayOrTensor, scheme: QuantScheme) -> Tensor:
    """
    round(x / scale) + zero_point, clamped to the scheme's integer range, mapped back.

    Args:
        x: Values to quantize
        scheme: Quantization parameters

    Returns:
        Tensor: Dequantized values, same shape as x
    """
    if np.any(scheme.scale <= 0):
        raise ParameterError("quantization scale must be positive")
    values = _data(x)
    scale, zeroPoint = scheme.broadcastTo(max(values.ndim, 1))
    levels = np.clip(np.rint(values / scale) + zeroPoint, scheme.qmin, scheme.qmax)
    return Tensor((levels - zeroPoint) * scale)


def _baseScale(values: np.ndarray, bits: int, granularity: Granularity) -> np.ndarray:
    """max|x| / qmax per tensor or per output channel; all-zero slices give 1"""
    qmax = integerRange(bits, QuantTarget.WEIGHTS)[1]
    if granularity == Granularity.PER_OUTPUT_CHANNEL:
        peak = np.abs(values.reshape(values.shape[0], -1)).max(axis=1)
    else:
        peak = np.atleast_1d(np.abs(values).max())
    base = peak / qmax
    return np.where(peak > 0, base, 1.0)


def _roundTripErrors(values: np.ndarray, scales: np.ndarray, bits: int, granularity: Granularity) -> np.ndarray:
    """Per-slice sum of squared round-trip error for candidate scales [..., slices]"""
    qmin, qmax = integerRange(bits, QuantTarget.WEIGHTS)
    if granularity == Granularity.PER_OUTPUT_CHANNEL:
        flat = values.reshape(values.shape[0], -1)
        s = scales[..., np.newaxis]
    else:
        flat = values.reshape(1, -1)
        s = scales[..., np.newaxis]
    restored = np.clip(np.rint(flat / s), qmin, qmax) * s
    return ((restored - flat) ** 2).sum(axis=-1)


def calibrateScale(x: ArrayOrTensor, bits: int, granularity: Granularity = Granularity.PER_TENSOR) -> np.ndarray:
    """
    Scale(s) minimizing mean squared quantize-dequantize error over the candidate grid.

    Args:
        x: Nonempty tensor (weights: output channels on axis 0)
        bits: Bit width
        granularity: One scale per tensor or per output channel

    Returns:
        np.ndarray: Scale per slice, shape (1,) or (C,); all-zero slices return 1
    """
    values = _data(x)
    if values.size == 0:
        raise ContractError("calibrateScale needs a nonempty tensor")
    if bits not in BIT_CHOICES:
        raise ParameterError(f"bit width {bits} not in {BIT_CHOICES}")
    base = _baseScale(values, bits, granularity)
    candidates = scaleMultipliers()[:, np.newaxis] * base[np.newaxis, :]
    errors = _roundTripErrors(values, candidates, bits, granularity)
    best = np.argmin(errors, axis=0)
    chosen = candidates[best, np.arange(base.size)]
    flat = values.reshape(values.shape[0], -1) if granularity == Granularity.PER_OUTPUT_CHANNEL else values.reshape(1, -1)
    return np.where(np.abs(flat).max(axis=1) > 0, chosen, 1.0)


def weightScheme(weight: ArrayOrTensor, bits: int, scale: Optional[np.ndarray] = None) -> QuantScheme:
    """Symmetric per-output-channel scheme for a conv weight"""
    values = _data(weight)
    if scale is None:
        scale = calibrateScale(values, bits, Granularity.PER_OUTPUT_CHANNEL)
    return QuantScheme(bits, scale, np.zeros_like(scale), Granularity.PER_OUTPUT_CHANNEL, QuantTarget.WEIGHTS)


def activationScheme(values: ArrayOrTensor, bits: int) -> QuantScheme:
    """Asymmetric per-tensor scheme from the observed range (always including 0)"""
    data = _data(values)
    low = min(float(data.min()), 0.0)
    high = max(float(data.max()), 0.0)
    qmax = integerRange(bits, QuantTarget.ACTIVATIONS)[1]
    if high == low:
        return QuantScheme(bits, np.array([1.0]), np.array([0.0]), Granularity.PER_TENSOR, QuantTarget.ACTIVATIONS)
    scale = (high - low) / qmax
    zeroPoint = float(np.clip(np.rint(-low / scale), 0, qmax))
    return QuantScheme(bits, np.array([scale]), np.array([zeroPoint]), Granularity.PER_TENSOR, QuantTarget.ACTIVATIONS)


def networkBlocks(network: Network) -> List[QuantBlock]:
    """One block per conv layer"""
    return [
        QuantBlock(networkname=network.name, first=ordinal, last=ordinal, convnames=[name])
        for ordinal, name in enumerate(network.convNames, start=1)
    ]


def fisherDiagonal(cache: CalibrationCache, block: QuantBlock) -> np.ndarray:
    """
    Diagonal Fisher weights of a block output: mean over calibration images of g^2.

    Raises:
        ContractError: If the cache has no entry for the block
    """
    blockCache = cache.get(block)
    return (blockCache.grads ** 2).mean(axis=0)


class BlockEvaluator:
    """
    Recomputes a block's output on its cached inputs for trial weights.

    The first conv's im2col matrix is built once, so each trial costs one matmul
    plus the remaining layers of the block.
    """

    def __init__(self, network: Network, block: QuantBlock, cache: CalibrationCache):
        self.network = network
        self.block = block
        blockCache = cache.get(block)
        self.reference = blockCache.outputs
        self.fisherweights = blockCache.grads ** 2
        self.startIndex = network.convIndex(block.convnames[0])
        self.stopIndex = network.tapIndex(block.convnames[-1])

        first = network.layers[self.startIndex]
        inputs = blockCache.inputs
        padding = first.padding
        padded = np.pad(inputs, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else inputs
        cols = Ops.im2col(padded, first.kernel, first.kernel, first.stride)
        self.count, self.outH, self.outW = cols.shape[0], cols.shape[1], cols.shape[2]
        self.cols = cols.reshape(self.count * self.outH * self.outW, -1)
        self.firstName = first.name

    def output(self, weights: Dict[str, np.ndarray]) -> np.ndarray:
        weight = weights[self.firstName]
        bias = self.network.params[f"{self.firstName}.bias"].data
        out = self.cols @ weight.reshape(weight.shape[0], -1).T + bias
        x = Tensor(out.reshape(self.count, self.outH, self.outW, -1).transpose(0, 3, 1, 2))
        for index in range(self.startIndex + 1, self.stopIndex + 1):
            layer = self.network.layers[index]
            if layer.kind == LayerKind.CONV and layer.name in weights:
                x = Ops.conv2d(x, Tensor(weights[layer.name]), self.network.params[f"{layer.name}.bias"],
                               stride=layer.stride, padding=layer.padding)
            else:
                x = self.network.runLayer(index, x)
        return x.data

    def channelErrors(self, weights: Dict[str, np.ndarray]) -> np.ndarray:
        """Per-output-channel share of the objective: mean over images of sum_hw g^2 dz^2"""
        delta = self.output(weights) - self.reference
        return (self.fisherweights * delta * delta).sum(axis=(2, 3)).mean(axis=0)

    def error(self, weights: Dict[str, np.ndarray]) -> float:
        return float(self.channelErrors(weights).sum())


def _snap(weight: np.ndarray, scheme: QuantScheme) -> np.ndarray:
    return quantizeDequantize(weight, scheme).data


def blockReconstructionError(
    network: Network,
    block: QuantBlock,
    cache: CalibrationCache,
    schemes: Dict[str, QuantScheme],
) -> float:
    """
    Fisher-weighted output error of a block: mean over images of sum_i g_i^2 (dz_i)^2.

    Args:
        network: Full-precision network the block belongs to
        block: Conv range
        cache: Calibration cache of that network
        schemes: Weight scheme per conv in the block (missing convs stay full precision)

    Returns:
        float: Objective value
    """
    evaluator = BlockEvaluator(network, block, cache)
    weights = {
        name: _snap(network.params[f"{name}.weight"].data, schemes[name]) if name in schemes
        else network.params[f"{name}.weight"].data
        for name in block.convnames
    }
    return evaluator.error(weights)


def quantizeBlock(
    network: Network,
    block: QuantBlock,
    cache: CalibrationCache,
    bitsPerLayer: Dict[str, int],
    sweeps: int = RECONSTRUCTION_SWEEPS,
) -> BlockResult:
    """
    Choose weight scales for every conv in a block by coordinate descent on the
    Fisher-weighted reconstruction error, starting from plain MSE calibration.

    The block's last conv is searched per output channel (the objective separates
    across its channels); inner convs share one multiplier. Each sweep only accepts
    improvements, so the objective never increases.

    Args:
        network: Full-precision network
        block: Conv range to reconstruct
        cache: Calibration cache from the full-precision network
        bitsPerLayer: Bit width per conv name in the block
        sweeps: Coordinate-descent passes

    Returns:
        BlockResult: Chosen schemes, snapped weights and the objective before/after
    """
    for name in block.convnames:
        if bitsPerLayer.get(name) not in BIT_CHOICES:
            raise ParameterError(f"bit width {bitsPerLayer.get(name)} for {name} not in {BIT_CHOICES}")

    evaluator = BlockEvaluator(network, block, cache)
    original = {name: network.params[f"{name}.weight"].data for name in block.convnames}
    schemes = {name: weightScheme(original[name], bitsPerLayer[name]) for name in block.convnames}
    snapped = {name: _snap(original[name], schemes[name]) for name in block.convnames}
    errorBefore = evaluator.error(snapped)
    multipliers = scaleMultipliers()
    lastName = block.convnames[-1]

    for sweep in range(sweeps):
        for name in block.convnames:
            bits = bitsPerLayer[name]
            base = _baseScale(original[name], bits, Granularity.PER_OUTPUT_CHANNEL)
            if name == lastName:
                currentErrors = evaluator.channelErrors(snapped)
                bestErrors = currentErrors.copy()
                bestScales = schemes[name].scale.copy()
                for multiplier in multipliers:
                    trialScale = multiplier * base
                    trial = dict(snapped)
                    trial[name] = _snap(original[name], weightScheme(original[name], bits, trialScale))
                    trialErrors = evaluator.channelErrors(trial)
                    improved = trialErrors < bestErrors
                    bestErrors = np.where(improved, trialErrors, bestErrors)
                    bestScales = np.where(improved, trialScale, bestScales)
                schemes[name] = weightScheme(original[name], bits, bestScales)
            else:
                bestError = evaluator.error(snapped)
                bestScales = schemes[name].scale
                for multiplier in multipliers:
                    trialScale = multiplier * base
                    trial = dict(snapped)
                    trial[name] = _snap(original[name], weightScheme(original[name], bits, trialScale))
                    trialError = evaluator.error(trial)
                    if trialError < bestError:
                        bestError, bestScales = trialError, trialScale
                schemes[name] = weightScheme(original[name], bits, bestScales)
            snapped[name] = _snap(original[name], schemes[name])
        logger.debug(f"{network.name} block {block.convnames} sweep {sweep + 1}: error {evaluator.error(snapped):.6g}")

    errorAfter = evaluator.error(snapped)
    return BlockResult(block=block, schemes=schemes, snappedweights=snapped,
                       errorbefore=errorBefore, errorafter=errorAfter)


def enforceForcedBits(bitAssignment: Sequence[int], forcedBits: int = FORCED_BITS) -> List[int]:
    """First and last layer pinned to the forced width"""
    bits = list(bitAssignment)
    if bits:
        bits[0] = forcedBits
        bits[-1] = forcedBits
    return bits


def quantizeNetwork(
    network: Network,
    cache: CalibrationCache,
    bitAssignment: Sequence[int],
    activationBits: Optional[int] = None,
    activationLayers: Optional[Sequence[str]] = None,
    sweeps: int = RECONSTRUCTION_SWEEPS,
) -> Tuple[Network, List[LayerQuantRecord]]:
    """
    Quantize a network block by block and insert activation fake-quant.

    Args:
        network: Full-precision network (left untouched)
        cache: Its calibration cache (images included, for activation ranges)
        bitAssignment: Bits per conv layer, in layer order
        activationBits: Fixed activation width; None uses each layer's weight width
        activationLayers: Convs whose outputs get activation fake-quant; None means all
        sweeps: Coordinate-descent passes per block

    Returns:
        Tuple[Network, List[LayerQuantRecord]]: Quantized copy and per-layer report rows
    """
    convNames = network.convNames
    if len(bitAssignment) != len(convNames):
        raise ContractError(
            f"{network.name}: bit assignment has {len(bitAssignment)} entries for {len(convNames)} layers"
        )
    for bits in bitAssignment:
        if bits not in BIT_CHOICES:
            raise ParameterError(f"bit width {bits} not in {BIT_CHOICES}")
    bits = enforceForcedBits(bitAssignment)
    if bits != list(bitAssignment):
        logger.info(f"{network.name}: first/last layers forced to {FORCED_BITS} bits ({list(bitAssignment)} -> {bits})")
    bitsByName = dict(zip(convNames, bits))

    blocks = networkBlocks(network)
    workers = max(1, get_config().RAAD_THREADS)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(
            lambda block: quantizeBlock(network, block, cache, {n: bitsByName[n] for n in block.convnames}, sweeps),
            blocks,
        ))

    quantized = network.copy()
    records = []
    for result in results:
        for name in result.block.convnames:
            quantized.params[f"{name}.weight"].data = result.snappedweights[name]
            quantized.weightschemes[name] = result.schemes[name]
            scale = result.schemes[name].scale
            records.append(LayerQuantRecord(
                layer=f"{network.name}.{name}",
                bits=bitsByName[name],
                scalemin=float(scale.min()),
                scalemean=float(scale.mean()),
                scalemax=float(scale.max()),
                blockerrorbefore=result.errorbefore,
                blockerrorafter=result.errorafter,
            ))
            logger.info(
                f"{network.name}.{name}: {bitsByName[name]} bits, scale min/mean/max "
                f"{scale.min():.4g}/{scale.mean():.4g}/{scale.max():.4g}, "
                f"block error {result.errorbefore:.4g} -> {result.errorafter:.4g}"
            )

    if cache.images is not None:
        _, taps = quantized.forwardWithTaps(Tensor(cache.images))
        targets = set(activationLayers) if activationLayers is not None else set(convNames)
        for name, tap in zip(taps.names, taps.taps):
            if name in targets:
                quantized.actschemes[name] = activationScheme(tap, activationBits or bitsByName[name])
    else:
        logger.warning(f"{network.name}: calibration cache has no images, activations left unquantized")
    return quantized, records


def weightStorageBits(network: Network) -> int:
    """Parameter storage in bits: quantized weights at their width, everything else at 32"""
    total = 0
    for key, param in network.params.items():
        convName, _, kind = key.rpartition(".")
        scheme = network.weightschemes.get(convName) if kind == "weight" else None
        total += param.size * (scheme.bits if scheme is not None else 32)
    return total
