"""
Network container: an ordered layer table with named parameters and optional quantization state
"""

import copy
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from framework.modelframework.models.LayerModels import LayerKind, LayerSpec, LayerTaps
from framework.quantframework.models.QuantModels import QuantScheme
from framework.tensorframework.Tensor import Tensor
from framework.tensorframework import Ops
from utils.errors import ContractError, DimensionError


class Network:
    """
    Ordered list of conv / pool / resize / activation layers.

    Parameters are stored as "<convname>.weight" and "<convname>.bias". A conv's tap
    point is its following ReLU when one exists, otherwise the conv itself; activation
    fake-quantization, when configured, is applied at tap points.
    """

    def __init__(self, name: str, layers: List[LayerSpec], params: Dict[str, Tensor], frozen: bool = False):
        self.name = name
        self.layers = layers
        self.params = params
        self.frozen = False
        self.weightschemes: Dict[str, QuantScheme] = {}
        self.actschemes: Dict[str, QuantScheme] = {}
        self._validateTable()
        self._tapPoints = self._findTapPoints()
        if frozen:
            self.freeze()
        else:
            self.unfreeze()

    def _validateTable(self) -> None:
        for previous, current in zip(self.layers, self.layers[1:]):
            if previous.outchannels != current.inchannels:
                raise ContractError(
                    f"{self.name}: layer {current.name or current.kind.value} expects "
                    f"{current.inchannels} channels, previous layer gives {previous.outchannels}"
                )
        for layer in self.layers:
            if layer.kind == LayerKind.CONV:
                if f"{layer.name}.weight" not in self.params or f"{layer.name}.bias" not in self.params:
                    raise ContractError(f"{self.name}: missing parameters for {layer.name}")

    def _findTapPoints(self) -> Dict[int, str]:
        points = {}
        for index, layer in enumerate(self.layers):
            if layer.kind != LayerKind.CONV:
                continue
            following = self.layers[index + 1] if index + 1 < len(self.layers) else None
            points[index + 1 if following is not None and following.kind == LayerKind.RELU else index] = layer.name
        return points

    @property
    def convNames(self) -> List[str]:
        return [layer.name for layer in self.layers if layer.kind == LayerKind.CONV]

    @property
    def outChannels(self) -> int:
        return self.layers[-1].outchannels

    def convIndex(self, convName: str) -> int:
        for index, layer in enumerate(self.layers):
            if layer.kind == LayerKind.CONV and layer.name == convName:
                return index
        raise ContractError(f"{self.name} has no conv layer {convName}")

    def tapIndex(self, convName: str) -> int:
        for index, name in self._tapPoints.items():
            if name == convName:
                return index
        raise ContractError(f"{self.name} has no conv layer {convName}")

    def freeze(self) -> None:
        self.frozen = True
        for param in self.params.values():
            param.requiresgrad = False
            param.grad = None

    def unfreeze(self) -> None:
        self.frozen = False
        for param in self.params.values():
            param.requiresgrad = True

    def trainableParameters(self) -> Dict[str, Tensor]:
        """Parameters an optimizer may update; empty for frozen networks"""
        if self.frozen:
            return {}
        return self.params

    def zeroGrad(self) -> None:
        for param in self.params.values():
            param.grad = None

    def runLayer(self, index: int, x: Tensor) -> Tensor:
        """Apply layer `index` (without activation fake-quant)"""
        layer = self.layers[index]
        if layer.kind == LayerKind.CONV:
            return Ops.conv2d(x, self.params[f"{layer.name}.weight"], self.params[f"{layer.name}.bias"],
                              stride=layer.stride, padding=layer.padding)
        if layer.kind == LayerKind.RELU:
            return Ops.relu(x)
        if layer.kind == LayerKind.AVGPOOL:
            return Ops.avgPool2d(x, layer.kernel, layer.stride)
        return Ops.bilinearResize(x, layer.outsize, layer.outsize)

    def _asBatch(self, image: Tensor) -> Tensor:
        if image.data.ndim == 3:
            return Ops.addBatchAxis(image)
        if image.data.ndim != 4:
            raise DimensionError(f"{self.name} expects [C,H,W] or [N,C,H,W] input, got {image.shape}", axis="rank")
        return image

    def forwardWithTaps(self, image: Tensor) -> Tuple[Tensor, LayerTaps]:
        """
        Forward pass that also captures every conv layer's post-activation output.

        Args:
            image: Input [N, C, H, W] (a single [C, H, W] image is batched)

        Returns:
            Tuple[Tensor, LayerTaps]: Output and per-conv taps; the output is the last tap
        """
        x = self._asBatch(image)
        if x.shape[1] != self.layers[0].inchannels:
            raise DimensionError(
                f"{self.name} expects {self.layers[0].inchannels} input channels, got shape {x.shape}", axis="channel"
            )
        taps = LayerTaps()
        pendingInput: Optional[Tensor] = None
        for index, layer in enumerate(self.layers):
            if layer.kind == LayerKind.CONV:
                pendingInput = x
            x = self.runLayer(index, x)
            convName = self._tapPoints.get(index)
            if convName is not None:
                scheme = self.actschemes.get(convName)
                if scheme is not None:
                    scale, zeroPoint = scheme.broadcastTo(x.data.ndim)
                    x = Ops.fakeQuantize(x, scale, zeroPoint, scheme.qmin, scheme.qmax)
                taps.names.append(convName)
                taps.taps.append(x)
                taps.inputs.append(pendingInput)
        return x, taps

    def forward(self, image: Tensor) -> Tensor:
        output, _ = self.forwardWithTaps(image)
        return output

    def inferShapes(self, inputShape: Sequence[int]) -> List[Tuple[int, ...]]:
        """
        Per-layer output shapes (C, H, W) for an input of shape (C, H, W).

        Raises:
            DimensionError: If any layer cannot accept its input
        """
        channels, height, width = inputShape
        if channels != self.layers[0].inchannels:
            raise DimensionError(f"{self.name} expects {self.layers[0].inchannels} input channels", axis="channel")
        shapes = []
        for layer in self.layers:
            if layer.kind in (LayerKind.CONV, LayerKind.AVGPOOL):
                padding = layer.padding if layer.kind == LayerKind.CONV else 0
                if height + 2 * padding < layer.kernel:
                    raise DimensionError(f"{self.name}: input too small for {layer.name or layer.kind.value}", axis="height")
                if width + 2 * padding < layer.kernel:
                    raise DimensionError(f"{self.name}: input too small for {layer.name or layer.kind.value}", axis="width")
                height = (height + 2 * padding - layer.kernel) // layer.stride + 1
                width = (width + 2 * padding - layer.kernel) // layer.stride + 1
            elif layer.kind == LayerKind.BILINEAR_UP:
                height = width = layer.outsize
            channels = layer.outchannels
            shapes.append((channels, height, width))
        return shapes

    def summary(self, inputShape: Sequence[int]) -> str:
        """Plain-text architecture table"""
        header = f"{'idx':>3}  {'kind':<12} {'name':<8} {'in':>4} {'out':>4} {'kernel':>6} {'stride':>6} {'pad':>4}  output"
        lines = [f"network: {self.name}", header, "-" * len(header)]
        for index, (layer, shape) in enumerate(zip(self.layers, self.inferShapes(inputShape))):
            kernel = str(layer.kernel) if layer.kind in (LayerKind.CONV, LayerKind.AVGPOOL) else "-"
            stride = str(layer.stride) if layer.kind in (LayerKind.CONV, LayerKind.AVGPOOL) else "-"
            padding = str(layer.padding) if layer.kind == LayerKind.CONV else "-"
            lines.append(
                f"{index:>3}  {layer.kind.value:<12} {layer.name or '-':<8} {layer.inchannels:>4} "
                f"{layer.outchannels:>4} {kernel:>6} {stride:>6} {padding:>4}  {'x'.join(str(d) for d in shape)}"
            )
        return "\n".join(lines) + "\n"

    def resnapWeights(self) -> None:
        """Project weights back onto their quantization grids"""
        from framework.quantframework.Quantizer import quantizeDequantize

        for convName, scheme in self.weightschemes.items():
            weight = self.params[f"{convName}.weight"]
            weight.data = quantizeDequantize(weight, scheme).data

    def copy(self, name: Optional[str] = None) -> "Network":
        clone = Network(
            name or self.name,
            copy.deepcopy(self.layers),
            {key: Tensor(param.data.copy(), name=param.name) for key, param in self.params.items()},
            frozen=self.frozen,
        )
        clone.weightschemes = copy.deepcopy(self.weightschemes)
        clone.actschemes = copy.deepcopy(self.actschemes)
        return clone

    def stateDict(self) -> Dict[str, np.ndarray]:
        return {key: param.data for key, param in self.params.items()}

    def loadStateDict(self, state: Dict[str, np.ndarray]) -> None:
        for key, param in self.params.items():
            if key not in state:
                raise ContractError(f"{self.name}: state is missing {key}")
            if state[key].shape != param.shape:
                raise DimensionError(f"{self.name}: {key} has shape {state[key].shape}, expected {param.shape}", axis="rank")
            param.data = np.array(state[key], dtype=np.float64)

    def __repr__(self) -> str:
        return f"Network(name={self.name}, layers={len(self.layers)}, frozen={self.frozen})"
