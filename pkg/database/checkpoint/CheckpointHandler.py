"""
Binary checkpoint codec.

Layout (little-endian): magic "RAADCKPT", u32 version, u32 tensor count, then per tensor
u32 name length + UTF-8 name, u32 rank, rank x u64 dims, raw f64 payload; version 1 then
appends u32 metadata length + UTF-8 JSON metadata.
"""

import json
import struct
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from database.operations.BaseArtifactHandler import BaseArtifactHandler
from framework.modelframework.Network import Network
from framework.modelframework.models.BundleModels import ModelBundle
from framework.quantframework.models.QuantModels import Granularity, QuantScheme, QuantTarget
from logs.logger import get_logger
from utils.errors import ParseError

logger = get_logger(__name__)

MAGIC = b"RAADCKPT"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """Named tensors plus embedded metadata (stage, seed, confighash, networks ...)"""
    tensors: Dict[str, np.ndarray]
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def stage(self) -> Optional[str]:
        return self.metadata.get("stage")

    @property
    def seed(self) -> Optional[int]:
        return self.metadata.get("seed")


def encodeCheckpoint(checkpoint: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(checkpoint.tensors))]
    for name in sorted(checkpoint.tensors):
        array = np.ascontiguousarray(checkpoint.tensors[name], dtype="<f8")
        encodedName = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encodedName)))
        parts.append(encodedName)
        parts.append(struct.pack("<I", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        parts.append(array.tobytes())
    metadata = json.dumps(checkpoint.metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts.append(struct.pack("<I", len(metadata)))
    parts.append(metadata)
    return b"".join(parts)


def decodeCheckpoint(data: bytes) -> Checkpoint:
    """
    Decode checkpoint bytes.

    Raises:
        ParseError: Bad magic, unknown version or truncated content, with the byte offset
    """
    offset = 0

    def take(count: int, what: str) -> bytes:
        nonlocal offset
        if offset + count > len(data):
            raise ParseError(f"truncated checkpoint while reading {what}", offset)
        chunk = data[offset:offset + count]
        offset += count
        return chunk

    if take(len(MAGIC), "magic") != MAGIC:
        raise ParseError("not a checkpoint (bad magic)", 0)
    version, count = struct.unpack("<II", take(8, "header"))
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", len(MAGIC))

    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (nameLength,) = struct.unpack("<I", take(4, "name length"))
        nameOffset = offset
        try:
            name = take(nameLength, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError("tensor name is not valid UTF-8", nameOffset)
        (rank,) = struct.unpack("<I", take(4, "rank"))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank, "dims")) if rank else ()
        size = int(np.prod(dims)) if rank else 1
        payload = take(8 * size, f"payload of {name}")
        tensors[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)

    (metadataLength,) = struct.unpack("<I", take(4, "metadata length"))
    metadataOffset = offset
    try:
        metadata = json.loads(take(metadataLength, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ParseError("metadata block is not valid JSON", metadataOffset)
    return Checkpoint(tensors=tensors, metadata=metadata)


class CheckpointHandler(BaseArtifactHandler):
    """Handler for checkpoints/ under the output root"""

    DIRECTORY = "checkpoints"

    def relativePath(self, filename: str) -> str:
        return f"{self.DIRECTORY}/{filename}"

    def writeCheckpoint(self, filename: str, checkpoint: Checkpoint) -> str:
        digest = self.writeAtomic(self.relativePath(filename), encodeCheckpoint(checkpoint))
        logger.info(
            f"Saved checkpoint {filename}: {len(checkpoint.tensors)} tensors, "
            f"stage={checkpoint.stage}, seed={checkpoint.seed}"
        )
        return digest

    def readCheckpoint(self, filename: str, requiredBy: Optional[str] = None) -> Checkpoint:
        relative = self.relativePath(filename)
        data = self.readBytes(relative, requiredBy=requiredBy)
        try:
            return decodeCheckpoint(data)
        except ParseError as e:
            logger.error(f"Failed to decode {relative}: {e}")
            raise

    def hasCheckpoint(self, filename: str) -> bool:
        return self.exists(self.relativePath(filename))


def networkCheckpoint(networks: Dict[str, Network], metadata: Dict[str, Any]) -> Checkpoint:
    """
    Flatten networks into one checkpoint.

    Parameters are stored as "<net>/<param>"; quantization schemes as
    "<net>/<conv>.wscale", "<net>/<conv>.ascale" and "<net>/<conv>.azero", with the
    bit widths listed under metadata["quant"].
    """
    tensors: Dict[str, np.ndarray] = {}
    quant: Dict[str, Dict[str, Dict[str, int]]] = {}
    for netName, network in networks.items():
        for key, value in network.stateDict().items():
            tensors[f"{netName}/{key}"] = value
        weights = {}
        for convName, scheme in network.weightschemes.items():
            tensors[f"{netName}/{convName}.wscale"] = scheme.scale
            weights[convName] = scheme.bits
        activations = {}
        for convName, scheme in network.actschemes.items():
            tensors[f"{netName}/{convName}.ascale"] = scheme.scale
            tensors[f"{netName}/{convName}.azero"] = scheme.zeropoint
            activations[convName] = scheme.bits
        if weights or activations:
            quant[netName] = {"weights": weights, "activations": activations}
    meta = dict(metadata)
    meta["networks"] = sorted(networks)
    if quant:
        meta["quant"] = quant
    return Checkpoint(tensors=tensors, metadata=meta)


def bundleCheckpoint(bundle: ModelBundle, metadata: Dict[str, Any]) -> Checkpoint:
    return networkCheckpoint(bundle.networks(), metadata)


def restoreNetwork(checkpoint: Checkpoint, network: Network, netName: Optional[str] = None) -> Network:
    """
    Load parameters and quantization schemes of one network from a checkpoint.

    Args:
        checkpoint: Decoded checkpoint
        network: Freshly built network with the matching layer table; updated in place
        netName: Key prefix, defaults to network.name

    Returns:
        Network: The same network
    """
    prefix = f"{netName or network.name}/"
    state = {key[len(prefix):]: value for key, value in checkpoint.tensors.items() if key.startswith(prefix)}
    network.loadStateDict(state)

    quant = checkpoint.metadata.get("quant", {}).get(netName or network.name, {})
    network.weightschemes = {
        convName: QuantScheme(
            bits=bits,
            scale=state[f"{convName}.wscale"],
            zeropoint=np.zeros_like(state[f"{convName}.wscale"]),
            granularity=Granularity.PER_OUTPUT_CHANNEL,
            target=QuantTarget.WEIGHTS,
        )
        for convName, bits in quant.get("weights", {}).items()
    }
    network.actschemes = {
        convName: QuantScheme(
            bits=bits,
            scale=state[f"{convName}.ascale"],
            zeropoint=state[f"{convName}.azero"],
            granularity=Granularity.PER_TENSOR,
            target=QuantTarget.ACTIVATIONS,
        )
        for convName, bits in quant.get("activations", {}).items()
    }
    return network


def restoreBundle(checkpoint: Checkpoint, template: ModelBundle) -> ModelBundle:
    """Fill a freshly built bundle from a checkpoint; the teacher comes back frozen"""
    for netName, network in template.networks().items():
        restoreNetwork(checkpoint, network, netName)
    template.teacher.freeze()
    template.stage = checkpoint.stage
    return template
