"""
Differentiable ops over Tensor: convolution, pooling, activation, resizing and losses.

Every op validates shapes, computes the forward result with numpy and registers a
vector-Jacobian product on the active tape.
"""

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from framework.tensorframework.Tensor import Tensor, makeResult
from utils.errors import DimensionError, ParameterError, ContractError


def _requireRank(x: Tensor, rank: int, what: str) -> None:
    if x.data.ndim != rank:
        raise DimensionError(f"{what} must be rank {rank}, got shape {x.shape}", axis="rank")


def _requireSameShape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        mismatched = [i for i, (p, q) in enumerate(zip(a.shape, b.shape)) if p != q]
        axis = str(mismatched[0]) if mismatched else "rank"
        raise DimensionError(f"{what}: shapes {a.shape} and {b.shape} differ", axis=axis)


def im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Padded NCHW input -> (N, Ho, Wo, C, kh, kw) window view"""
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    return windows.transpose(0, 2, 3, 1, 4, 5)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor], stride: int = 1, padding: int = 0) -> Tensor:
    """
    2D cross-correlation over NCHW input.

    Args:
        x: Input [N, Cin, H, W]
        weight: Kernel [Cout, Cin, kh, kw]
        bias: Bias [Cout] or None
        stride: Step between windows, >= 1
        padding: Zero padding on every spatial border

    Returns:
        Tensor: Output [N, Cout, H', W'] with H' = floor((H + 2p - kh) / stride) + 1
    """
    _requireRank(x, 4, "conv2d input")
    _requireRank(weight, 4, "conv2d weight")
    if stride < 1 or padding < 0:
        raise ParameterError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if kh < 1 or kw < 1:
        raise ParameterError(f"conv2d kernel must be at least 1x1, got {kh}x{kw}")
    if wcin != cin:
        raise DimensionError(f"conv2d input has {cin} channels, weight expects {wcin}", axis="channel")
    if h + 2 * padding < kh:
        raise DimensionError(f"conv2d input height {h} (+2*{padding}) smaller than kernel {kh}", axis="height")
    if w + 2 * padding < kw:
        raise DimensionError(f"conv2d input width {w} (+2*{padding}) smaller than kernel {kw}", axis="width")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d bias shape {bias.shape} does not match {cout} output channels", axis="channel")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = im2col(xp, kh, kw, stride)
    ho, wo = cols.shape[1], cols.shape[2]
    colsMat = cols.reshape(n * ho * wo, cin * kh * kw)
    wMat = weight.data.reshape(cout, -1)
    out = colsMat @ wMat.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)

    def backwardFn(gradOut: np.ndarray):
        g = gradOut.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        gradW = (g.T @ colsMat).reshape(weight.shape) if weight.requiresgrad else None
        gradB = g.sum(axis=0) if bias is not None and bias.requiresgrad else None
        gradX = None
        if x.requiresgrad:
            dcols = (g @ wMat).reshape(n, ho, wo, cin, kh, kw)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gradX = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
        return gradX, gradW, gradB

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    if bias is None:
        return makeResult(out, inputs, lambda g: backwardFn(g)[:2], "conv2d")
    return makeResult(out, inputs, backwardFn, "conv2d")


def avgPool2d(x: Tensor, k: int, stride: int) -> Tensor:
    """
    Mean over k x k windows taken every `stride` pixels.

    Args:
        x: Input [N, C, H, W]
        k: Window size
        stride: Step between windows

    Returns:
        Tensor: Pooled tensor
    """
    _requireRank(x, 4, "avgPool2d input")
    if k < 1 or stride < 1:
        raise ParameterError(f"avgPool2d needs k >= 1 and stride >= 1, got k={k}, stride={stride}")
    n, c, h, w = x.shape
    if k > h:
        raise DimensionError(f"avgPool2d window {k} exceeds height {h}", axis="height")
    if k > w:
        raise DimensionError(f"avgPool2d window {k} exceeds width {w}", axis="width")
    windows = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = windows.mean(axis=(4, 5))
    ho, wo = out.shape[2], out.shape[3]

    def backwardFn(gradOut: np.ndarray):
        gradX = np.zeros_like(x.data)
        share = gradOut / float(k * k)
        for i in range(k):
            for j in range(k):
                gradX[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += share
        return (gradX,)

    return makeResult(out, (x,), backwardFn, "avgPool2d")


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at 0 is 0"""
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0)
    return makeResult(out, (x,), lambda g: (g * mask,), "relu")


def _resizeMatrix(inSize: int, outSize: int) -> np.ndarray:
    """Align-corners linear interpolation weights, shape (outSize, inSize)"""
    if outSize == 1 or inSize == 1:
        coords = np.zeros(outSize)
    else:
        coords = np.arange(outSize) * ((inSize - 1) / (outSize - 1))
    lower = np.clip(np.floor(coords).astype(np.int64), 0, inSize - 1)
    upper = np.minimum(lower + 1, inSize - 1)
    frac = coords - lower
    matrix = np.zeros((outSize, inSize))
    rows = np.arange(outSize)
    np.add.at(matrix, (rows, lower), 1.0 - frac)
    np.add.at(matrix, (rows, upper), frac)
    return matrix


def bilinearResize(x: Tensor, outH: int, outW: int) -> Tensor:
    """
    Align-corners bilinear resize of the two trailing axes.

    Args:
        x: Input [..., H, W] (usually [N, C, H, W])
        outH: Output height, >= 1
        outW: Output width, >= 1

    Returns:
        Tensor: Resized tensor [..., outH, outW]
    """
    if outH < 1 or outW < 1:
        raise ParameterError(f"bilinearResize needs output size >= 1, got {outH}x{outW}")
    if x.data.ndim < 2:
        raise DimensionError(f"bilinearResize needs at least 2 axes, got shape {x.shape}", axis="rank")
    ry = _resizeMatrix(x.shape[-2], outH)
    rx = _resizeMatrix(x.shape[-1], outW)
    out = ry @ x.data @ rx.T

    def backwardFn(gradOut: np.ndarray):
        return (ry.T @ gradOut @ rx,)

    return makeResult(out, (x,), backwardFn, "bilinearResize")


def mseMean(a: Tensor, b: Tensor) -> Tensor:
    """Mean over all elements of (a - b)^2"""
    _requireSameShape(a, b, "mseMean")
    diff = a.data - b.data
    count = float(diff.size)
    out = np.array((diff * diff).sum() / count)

    def backwardFn(gradOut: np.ndarray):
        g = gradOut * (2.0 / count) * diff
        return g, -g

    return makeResult(out, (a, b), backwardFn, "mseMean")


def add(a: Tensor, b: Tensor) -> Tensor:
    _requireSameShape(a, b, "add")
    return makeResult(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _requireSameShape(a, b, "sub")
    return makeResult(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def scale(x: Tensor, factor: float) -> Tensor:
    return makeResult(x.data * factor, (x,), lambda g: (g * factor,), "scale")


def square(x: Tensor) -> Tensor:
    return makeResult(x.data * x.data, (x,), lambda g: (2.0 * x.data * g,), "square")


def sumAll(x: Tensor) -> Tensor:
    return makeResult(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sumAll")


def sliceChannels(x: Tensor, start: int, stop: int) -> Tensor:
    """Channel range [start, stop) of an NCHW tensor"""
    _requireRank(x, 4, "sliceChannels input")
    if not 0 <= start < stop <= x.shape[1]:
        raise DimensionError(f"channel range [{start}, {stop}) outside {x.shape[1]} channels", axis="channel")
    out = x.data[:, start:stop].copy()

    def backwardFn(gradOut: np.ndarray):
        gradX = np.zeros_like(x.data)
        gradX[:, start:stop] = gradOut
        return (gradX,)

    return makeResult(out, (x,), backwardFn, "sliceChannels")


def topkMean(x: Tensor, k: int) -> Tensor:
    """
    Mean of the k largest entries; ties resolve to the lowest linear index.
    The gradient reaches only the selected entries.
    """
    if x.size == 0:
        raise ContractError("topkMean of an empty tensor")
    if not 1 <= k <= x.size:
        raise ParameterError(f"topkMean needs 1 <= k <= {x.size}, got {k}")
    flat = x.data.reshape(-1)
    selected = np.argsort(-flat, kind="stable")[:k]
    out = np.array(flat[selected].sum() / k)

    def backwardFn(gradOut: np.ndarray):
        gradX = np.zeros(flat.shape)
        gradX[selected] = gradOut / k
        return (gradX.reshape(x.shape),)

    return makeResult(out, (x,), backwardFn, "topkMean")


def fakeQuantize(x: Tensor, scale: np.ndarray, zeroPoint: np.ndarray, qmin: int, qmax: int) -> Tensor:
    """
    Quantize-dequantize with a straight-through gradient inside the representable range.

    Args:
        x: Input tensor
        scale: Scale broadcastable to x
        zeroPoint: Integer zero point broadcastable to x
        qmin: Lowest integer level
        qmax: Highest integer level

    Returns:
        Tensor: Dequantized tensor
    """
    levels = np.rint(x.data / scale) + zeroPoint
    inside = (levels >= qmin) & (levels <= qmax)
    out = (np.clip(levels, qmin, qmax) - zeroPoint) * scale
    return makeResult(out, (x,), lambda g: (g * inside,), "fakeQuantize")


def addBatchAxis(x: Tensor) -> Tensor:
    """[C, H, W] -> [1, C, H, W]"""
    return makeResult(x.data[np.newaxis].copy(), (x,), lambda g: (g[0],), "addBatchAxis")

