"""
Builders for the extractor, the PDN teacher/student and the autoencoder
"""

import math
from typing import Dict, List, Optional, Sequence

import numpy as np

from config.Constants import (
    AUTOENCODER_CHANNELS,
    IMAGE_SIZE,
    LATENT_DIMS,
    PDN_HIDDEN_CHANNELS,
    TEACHER_CHANNELS,
)
from framework.modelframework.Network import Network
from framework.modelframework.models.BundleModels import ModelBundle
from framework.modelframework.models.LayerModels import LayerKind, LayerSpec
from framework.tensorframework.Random import generator
from framework.tensorframework.Tensor import Tensor
from utils.errors import ParameterError

IMAGE_CHANNELS = 3


def _conv(name: str, inChannels: int, outChannels: int, kernel: int, stride: int = 1, padding: int = 0) -> LayerSpec:
    return LayerSpec(LayerKind.CONV, inChannels, outChannels, kernel=kernel, stride=stride, padding=padding, name=name)


def _relu(channels: int) -> LayerSpec:
    return LayerSpec(LayerKind.RELU, channels, channels)


def _pool(channels: int) -> LayerSpec:
    return LayerSpec(LayerKind.AVGPOOL, channels, channels, kernel=2, stride=2)


def _up(channels: int, size: int) -> LayerSpec:
    return LayerSpec(LayerKind.BILINEAR_UP, channels, channels, outsize=size)


def _initParams(layers: List[LayerSpec], seed: int, purpose: str) -> Dict[str, Tensor]:
    """He-uniform conv weights (bound sqrt(6 / fan_in)), zero biases"""
    params: Dict[str, Tensor] = {}
    ordinal = 0
    for layer in layers:
        if layer.kind != LayerKind.CONV:
            continue
        ordinal += 1
        rng = generator(seed, purpose, ordinal)
        fanIn = layer.inchannels * layer.kernel * layer.kernel
        bound = math.sqrt(6.0 / fanIn)
        shape = (layer.outchannels, layer.inchannels, layer.kernel, layer.kernel)
        params[f"{layer.name}.weight"] = Tensor(rng.uniform(-bound, bound, size=shape), name=f"{layer.name}.weight")
        params[f"{layer.name}.bias"] = Tensor(np.zeros(layer.outchannels), name=f"{layer.name}.bias")
    return params


def pdnLayers(outChannels: int, hidden: Sequence[int] = PDN_HIDDEN_CHANNELS) -> List[LayerSpec]:
    """Four-conv PDN table: conv5/p2, pool, conv5/p2, pool, conv3/valid, conv3/p1"""
    if outChannels < 1:
        raise ParameterError(f"out_channels must be >= 1, got {outChannels}")
    if len(hidden) != 3 or any(h < 1 for h in hidden):
        raise ParameterError(f"PDN needs three positive hidden widths, got {list(hidden)}")
    h1, h2, h3 = hidden
    return [
        _conv("conv1", IMAGE_CHANNELS, h1, 5, padding=2), _relu(h1), _pool(h1),
        _conv("conv2", h1, h2, 5, padding=2), _relu(h2), _pool(h2),
        _conv("conv3", h2, h3, 3), _relu(h3),
        _conv("conv4", h3, outChannels, 3, padding=1),
    ]


def pdnOutputSize(inputSize: int) -> int:
    """Spatial size of the PDN feature map for a square input"""
    size = inputSize // 2 // 2
    return size - 2


def buildPdn(
    outChannels: int,
    widthMultiplier: int = 1,
    seed: int = 0,
    hidden: Sequence[int] = PDN_HIDDEN_CHANNELS,
    name: str = "teacher",
) -> Network:
    """
    Build a patch description network.

    Only the final layer is widened, so teacher and student taps 1..3 share shapes
    and the student's last layer has exactly widthMultiplier x outChannels channels.

    Args:
        outChannels: Teacher feature channels
        widthMultiplier: 1 for the teacher, 2 for the student
        seed: Initialization seed
        hidden: Widths of the three hidden convs
        name: Network name (also keys the initialization stream)

    Returns:
        Network: Trainable PDN
    """
    if widthMultiplier < 1:
        raise ParameterError(f"width multiplier must be >= 1, got {widthMultiplier}")
    layers = pdnLayers(outChannels * widthMultiplier, hidden)
    return Network(name, layers, _initParams(layers, seed, f"init.{name}"))


def buildExtractor(
    seed: int,
    outChannels: int = TEACHER_CHANNELS,
    hidden: Sequence[int] = PDN_HIDDEN_CHANNELS,
) -> Network:
    """Frozen randomly initialized CNN with the teacher's output shape, used as the pretraining target"""
    layers = pdnLayers(outChannels, hidden)
    return Network("extractor", layers, _initParams(layers, seed, "init.extractor"), frozen=True)


def buildAutoencoder(
    latent: int = LATENT_DIMS,
    outChannels: int = TEACHER_CHANNELS,
    seed: int = 0,
    inputSize: int = IMAGE_SIZE,
    outSize: Optional[int] = None,
    hidden: int = AUTOENCODER_CHANNELS,
) -> Network:
    """
    Build the global-branch autoencoder.

    The encoder is three stride-2 4x4 convs followed by a conv that collapses the
    remaining map into a latent vector; the decoder alternates bilinear upsampling
    and 3x3 convs up to the teacher's feature map size.

    Args:
        latent: Bottleneck dimensions
        outChannels: Output channels (teacher channels)
        seed: Initialization seed
        inputSize: Square input size
        outSize: Output map size; defaults to the PDN output size for inputSize
        hidden: Hidden channel width

    Returns:
        Network: Trainable autoencoder
    """
    if latent < 1:
        raise ParameterError(f"latent must be >= 1, got {latent}")
    if outChannels < 1:
        raise ParameterError(f"out_channels must be >= 1, got {outChannels}")
    outSize = outSize if outSize is not None else pdnOutputSize(inputSize)
    encodedSize = inputSize
    for _ in range(3):
        encodedSize = (encodedSize + 2 - 4) // 2 + 1
    if encodedSize < 1 or outSize < 1:
        raise ParameterError(f"input size {inputSize} too small for the autoencoder")

    layers = [
        _conv("enc1", IMAGE_CHANNELS, hidden, 4, stride=2, padding=1), _relu(hidden),
        _conv("enc2", hidden, hidden, 4, stride=2, padding=1), _relu(hidden),
        _conv("enc3", hidden, hidden, 4, stride=2, padding=1), _relu(hidden),
        _conv("latent", hidden, latent, encodedSize),
        _up(latent, math.ceil(outSize / 4)),
        _conv("dec1", latent, hidden, 3, padding=1), _relu(hidden),
        _up(hidden, math.ceil(outSize / 2)),
        _conv("dec2", hidden, hidden, 3, padding=1), _relu(hidden),
        _up(hidden, outSize),
        _conv("dec3", hidden, hidden, 3, padding=1), _relu(hidden),
        _conv("dec4", hidden, outChannels, 3, padding=1),
    ]
    return Network("autoencoder", layers, _initParams(layers, seed, "init.autoencoder"))


ENCODER_CONVS = ("enc1", "enc2", "enc3", "latent")


def buildBundle(
    teacherChannels: int = TEACHER_CHANNELS,
    hidden: Sequence[int] = PDN_HIDDEN_CHANNELS,
    latent: int = LATENT_DIMS,
    aeChannels: int = AUTOENCODER_CHANNELS,
    imageSize: int = IMAGE_SIZE,
    seed: int = 0,
    studentMultiplier: int = 2,
) -> ModelBundle:
    """Fresh teacher (trainable), student and autoencoder for one seed"""
    return ModelBundle(
        teacher=buildPdn(teacherChannels, 1, seed, hidden, name="teacher"),
        student=buildPdn(teacherChannels, studentMultiplier, seed, hidden, name="student"),
        autoencoder=buildAutoencoder(latent, teacherChannels, seed, imageSize, hidden=aeChannels),
    )
