"""Parsers and encoders for binary PGM (P5) and PPM (P6) images"""

from typing import Tuple

import numpy as np

from framework.tensorframework.Tensor import Tensor
from logs.logger import get_logger
from utils.errors import ParseError

logger = get_logger(__name__)

_WHITESPACE = b" \t\n\r\v\f"


def _readToken(data: bytes, offset: int) -> Tuple[bytes, int]:
    """Next header token after skipping whitespace and '#' comments"""
    length = len(data)
    while offset < length:
        if data[offset:offset + 1] in (b"#",):
            while offset < length and data[offset:offset + 1] not in (b"\n", b"\r"):
                offset += 1
        elif data[offset] in _WHITESPACE:
            offset += 1
        else:
            break
    start = offset
    while offset < length and data[offset] not in _WHITESPACE and data[offset:offset + 1] != b"#":
        offset += 1
    if start == offset:
        raise ParseError("unexpected end of header", start)
    return data[start:offset], offset


def _readInt(data: bytes, offset: int, what: str) -> Tuple[int, int]:
    token, end = _readToken(data, offset)
    start = end - len(token)
    if not token.isdigit():
        raise ParseError(f"{what} is not a decimal integer: {token[:16]!r}", start)
    return int(token), end


def parseNetpbm(data: bytes) -> np.ndarray:
    """
    Decode a binary P5/P6 image.

    Args:
        data: File contents

    Returns:
        np.ndarray: uint8 array [H, W, C] with C = 1 (P5) or 3 (P6)

    Raises:
        ParseError: Malformed header or truncated payload, with the byte offset
    """
    if len(data) < 2:
        raise ParseError("file too short for a magic number", 0)
    magic = data[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise ParseError(f"unsupported magic {magic!r}, expected P5 or P6", 0)

    offset = 2
    if offset < len(data) and data[offset] not in _WHITESPACE and data[offset:offset + 1] != b"#":
        raise ParseError("magic number must be followed by whitespace", offset)
    width, offset = _readInt(data, offset, "width")
    height, offset = _readInt(data, offset, "height")
    maxval, offset = _readInt(data, offset, "maxval")
    if width < 1 or height < 1:
        raise ParseError(f"invalid dimensions {width}x{height}", offset)
    if not 1 <= maxval <= 255:
        raise ParseError(f"maxval {maxval} outside 1..255 (only 8-bit data is supported)", offset)
    if offset >= len(data) or data[offset] not in _WHITESPACE:
        raise ParseError("header must end with a single whitespace byte", offset)
    offset += 1

    expected = width * height * channels
    payload = data[offset:offset + expected]
    if len(payload) < expected:
        raise ParseError(f"truncated payload: expected {expected} bytes, found {len(payload)}", len(data))
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    if np.any(pixels > maxval):
        raise ParseError(f"pixel value exceeds maxval {maxval}", offset)
    if maxval != 255:
        pixels = np.rint(pixels.astype(np.float64) * (255.0 / maxval)).astype(np.uint8)
    return pixels


def loadImage(path: str) -> Tensor:
    """
    Read a P5/P6 file as a channel-major float tensor in [0, 1].

    Grayscale input is replicated to three channels.

    Args:
        path: Image file

    Returns:
        Tensor: [3, H, W] with values v / 255
    """
    with open(path, "rb") as handle:
        data = handle.read()
    try:
        pixels = parseNetpbm(data)
    except ParseError as e:
        logger.error(f"Failed to parse {path}: {e}")
        raise
    if pixels.shape[2] == 1:
        pixels = np.repeat(pixels, 3, axis=2)
    return Tensor(pixels.transpose(2, 0, 1).astype(np.float64) / 255.0)


def loadMask(path: str) -> np.ndarray:
    """Binary mask from a PGM file (nonzero = set)"""
    with open(path, "rb") as handle:
        pixels = parseNetpbm(handle.read())
    return pixels[:, :, 0] > 0


def encodePgm(pixels: np.ndarray) -> bytes:
    """Encode a 2D uint8 array as P5"""
    if pixels.ndim != 2:
        raise ValueError(f"PGM needs a 2D array, got shape {pixels.shape}")
    height, width = pixels.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(pixels, dtype=np.uint8).tobytes()


def encodePpm(pixels: np.ndarray) -> bytes:
    """Encode an [H, W, 3] uint8 array as P6"""
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError(f"PPM needs an [H, W, 3] array, got shape {pixels.shape}")
    height, width = pixels.shape[:2]
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(pixels, dtype=np.uint8).tobytes()


def toUint8(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to 8-bit levels"""
    return np.clip(np.rint(values * 255.0), 0, 255).astype(np.uint8)
